"""Light-probe creation, averaging, and persistence.

A light probe is a small image of a shaded sphere summarizing incident
illumination.  Probes here are rendered in closed form (Lambertian diffuse
plus optional Blinn-Phong specular) from a :class:`ProbeSpec`, so any light
direction/intensity combination can be produced deterministically without a
renderer.  Per-illumination averaging across scenes produces "scene-agnostic"
probe sets used to guide relighting.

Coordinate convention (camera frame, y up): azimuth 0 points toward the
viewer (+z), positive azimuth toward image right (+x); positive elevation is
light from above (+y).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import imgio

PROBE_FILE_FMT = "probe_{id:02d}.png"


@dataclass(frozen=True)
class ProbeSpec:
    """Parameters of a synthetic sphere probe.

    azimuth_deg in [-180, 180), elevation_deg in [-90, 90]; intensity is the
    diffuse strength, ambient a constant floor, and the specular pair adds an
    optional Blinn-Phong highlight (disabled by default).
    """

    azimuth_deg: float
    elevation_deg: float
    intensity: float = 1.0
    ambient: float = 0.1
    specular_strength: float = 0.0
    specular_exponent: float = 32.0
    size: int = 64
    background: float = 0.02

    def validate(self) -> None:
        checks = [
            ("azimuth_deg", -180.0 <= self.azimuth_deg < 180.0),
            ("elevation_deg", -90.0 <= self.elevation_deg <= 90.0),
            ("intensity", self.intensity >= 0.0),
            ("ambient", 0.0 <= self.ambient <= 1.0),
            ("specular_strength", self.specular_strength >= 0.0),
            ("specular_exponent", self.specular_exponent > 0.0),
            ("size", isinstance(self.size, int) and self.size >= 8),
            ("background", 0.0 <= self.background <= 1.0),
        ]
        for name, ok in checks:
            value = getattr(self, name)
            if name != "size" and not math.isfinite(float(value)):
                raise ValueError(f"ProbeSpec.{name} must be finite, got {value!r}")
            if not ok:
                raise ValueError(f"ProbeSpec.{name} out of range: {value!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeSpec":
        spec = cls(**d)
        spec.validate()
        return spec


@dataclass
class LightProbe:
    """SxSx3 probe image in [0, 1] with optional provenance metadata."""

    pixels: np.ndarray
    spec: Optional[ProbeSpec] = None
    illumination_id: Optional[int] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"probe pixels must be SxSx3, got {self.pixels.shape}")
        if self.pixels.shape[0] != self.pixels.shape[1]:
            raise ValueError(f"probe must be square, got {self.pixels.shape}")
        if not np.isfinite(self.pixels).all():
            raise ValueError("probe pixels contain NaN/Inf")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("probe pixels must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ProbeSet:
    """Ordered collection of same-size probes (one per illumination)."""

    probes: list[LightProbe] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        sizes = {p.size for p in self.probes}
        if len(sizes) > 1:
            raise ValueError(f"probes in a set must share size, got {sorted(sizes)}")
        ids = [p.illumination_id for p in self.probes if p.illumination_id is not None]
        if len(ids) != len(set(ids)):
            raise ValueError("illumination_ids must be unique within a ProbeSet")

    def __len__(self) -> int:
        return len(self.probes)

    def __iter__(self):
        return iter(self.probes)

    def __getitem__(self, i: int) -> LightProbe:
        return self.probes[i]

    def by_id(self, illumination_id: int) -> LightProbe:
        for p in self.probes:
            if p.illumination_id == illumination_id:
                return p
        raise KeyError(f"no probe with illumination_id {illumination_id}")

    @property
    def size(self) -> int:
        if not self.probes:
            raise ValueError("empty ProbeSet has no size")
        return self.probes[0].size

    def ids(self) -> list[int]:
        out = []
        for k, p in enumerate(self.probes):
            out.append(p.illumination_id if p.illumination_id is not None else k)
        return out

    def save_dir(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, probe in enumerate(self.probes):
            pid = probe.illumination_id if probe.illumination_id is not None else k
            save_probe(probe, out / PROBE_FILE_FMT.format(id=pid))

    @classmethod
    def load_dir(cls, in_dir, name: str = "") -> "ProbeSet":
        paths = sorted(Path(in_dir).glob("probe_*.png"))
        if not paths:
            raise FileNotFoundError(f"no probe_*.png files in {in_dir}")
        return cls(probes=[load_probe(p) for p in paths], name=name or Path(in_dir).name)


def light_direction(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit light vector for the stated camera-frame angle convention."""
    phi = math.radians(azimuth_deg)
    theta = math.radians(elevation_deg)
    return np.array(
        [math.cos(theta) * math.sin(phi), math.sin(theta), math.cos(theta) * math.cos(phi)],
        dtype=np.float64,
    )


def render_probe(spec: ProbeSpec) -> LightProbe:
    """Render the shaded-sphere probe for ``spec``.

    Pixel (u, v) maps to disk coordinates x=(u-c)/r, y=(c-v)/r with
    c=(size-1)/2 and r=0.45*size; points outside the unit disk get the
    background value.  Inside, the sphere normal n=(x, y, sqrt(1-x^2-y^2))
    is shaded as ambient + intensity*max(0, n.L) plus an optional
    Blinn-Phong term toward the viewer, clamped to [0, 1], equal across
    the three channels.
    """
    spec.validate()
    size = spec.size
    c = (size - 1) / 2.0
    r = 0.45 * size

    u = np.arange(size, dtype=np.float64)
    v = np.arange(size, dtype=np.float64)
    x = (u[None, :] - c) / r
    y = (c - v[:, None]) / r
    rho2 = x * x + y * y
    inside = rho2 <= 1.0

    nz = np.sqrt(np.clip(1.0 - rho2, 0.0, None))
    L = light_direction(spec.azimuth_deg, spec.elevation_deg)

    ndotl = x * L[0] + y * L[1] + nz * L[2]
    value = spec.ambient + spec.intensity * np.maximum(0.0, ndotl)

    if spec.specular_strength > 0.0:
        h = L + np.array([0.0, 0.0, 1.0])
        h = h / np.linalg.norm(h)
        ndoth = x * h[0] + y * h[1] + nz * h[2]
        value = value + spec.specular_strength * np.maximum(0.0, ndoth) ** spec.specular_exponent

    value = np.clip(value, 0.0, 1.0)
    value = np.where(inside, value, spec.background)
    pixels = np.repeat(value[:, :, None], 3, axis=2)
    return LightProbe(pixels=pixels, spec=spec)


def average_probes(probes: Sequence[LightProbe]) -> LightProbe:
    """Per-pixel arithmetic mean of same-size probes.

    ``illumination_id`` (and spec) are carried over only when all inputs
    agree on them.
    """
    if len(probes) == 0:
        raise ValueError("average_probes requires a non-empty probe list")
    size = probes[0].size
    for p in probes:
        if p.size != size:
            raise ValueError(f"probe size mismatch: {p.size} vs {size}")
    stack = np.stack([p.pixels for p in probes], axis=0)
    # anchored mean: exact when all inputs are identical (deviations are 0),
    # and within float rounding of the plain sum/n otherwise
    anchor = stack.min(axis=0)
    mean = anchor + (stack - anchor).sum(axis=0) / len(probes)

    ids = {p.illumination_id for p in probes}
    ill = ids.pop() if len(ids) == 1 else None
    specs = {p.spec for p in probes}
    spec = specs.pop() if len(specs) == 1 else None
    return LightProbe(pixels=mean, spec=spec, illumination_id=ill)


def build_scene_agnostic_set(manifest) -> ProbeSet:
    """Average each illumination's probes across all scenes of a manifest.

    With per-scene probes present, every illumination id must be covered by
    every scene; missing files are reported with their (scene, id) pair.
    A manifest that only carries already scene-agnostic probes is returned
    as-is (single-scene degenerate case).
    """
    if manifest.scene_probes:
        ill_ids = sorted(next(iter(manifest.scene_probes.values())).keys())
        missing = []
        for scene_id, per_ill in manifest.scene_probes.items():
            for ill_id in ill_ids:
                path = per_ill.get(ill_id)
                if path is None or not manifest.resolve(path).exists():
                    missing.append((scene_id, ill_id))
        if missing:
            raise FileNotFoundError(f"missing scene probes for (scene, id): {missing}")
        averaged = []
        for ill_id in ill_ids:
            members = [
                load_probe(manifest.resolve(manifest.scene_probes[s][ill_id]))
                for s in sorted(manifest.scene_probes)
            ]
            probe = average_probes(members)
            probe.illumination_id = ill_id
            averaged.append(probe)
        return ProbeSet(probes=averaged, name="scene-agnostic")

    if manifest.probes:
        probes = []
        for ill_id in sorted(manifest.probes):
            path = manifest.resolve(manifest.probes[ill_id])
            if not path.exists():
                raise FileNotFoundError(f"missing probe file for illumination {ill_id}: {path}")
            probe = load_probe(path)
            probe.illumination_id = ill_id
            probes.append(probe)
        return ProbeSet(probes=probes, name="scene-agnostic")

    raise ValueError("manifest carries no probes to average")


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def save_probe(probe: LightProbe, path) -> None:
    """Persist as 8-bit PNG plus a JSON sidecar holding spec/id metadata."""
    path = Path(path)
    imgio.save_png(probe.pixels, path)
    meta = {
        "illumination_id": probe.illumination_id,
        "spec": probe.spec.to_dict() if probe.spec is not None else None,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def load_probe(path) -> LightProbe:
    """Load a probe PNG; sidecar metadata is restored when present."""
    path = Path(path)
    try:
        pixels = imgio.load_png(path)
    except OSError as exc:
        raise OSError(f"cannot decode probe image {path}: {exc}") from exc
    spec = None
    ill = None
    sidecar = _sidecar(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        ill = meta.get("illumination_id")
        if meta.get("spec") is not None:
            spec = ProbeSpec.from_dict(meta["spec"])
    return LightProbe(pixels=pixels, spec=spec, illumination_id=ill)
