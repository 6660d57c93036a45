"""Procedural toy scenes with analytic ground-truth relighting.

Each scene is an albedo map plus a per-pixel normal field, shaded in closed
form under any :class:`~relight_aug.probes.ProbeSpec`.  Geometry is a gentle
convex dome perturbed by smoothed random gradients, so directional lighting
produces the expected left/right (and top/bottom) brightness structure while
still varying per scene.  Shading is Lambertian only; ground truth for any
(scene, illumination) pair is therefore exact and cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imgio
from .manifest import DatasetManifest
from .probes import PROBE_FILE_FMT, ProbeSpec, light_direction, render_probe, save_probe

ALBEDO_LO = 0.2
ALBEDO_HI = 0.9

# Convex-dome tilt magnitude at the image edge; keeps nz dominant while making
# oblique lighting spatially asymmetric (the disentanglement oracle relies on it).
DOME_TILT = 0.45
NOISE_TILT = 0.35


@dataclass
class SceneGeometry:
    """Albedo in [0.2, 0.9] and unit normals (z > 0) on an HxW grid."""

    albedo: np.ndarray
    normals: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        if self.albedo.ndim != 3 or self.albedo.shape[2] != 3:
            raise ValueError(f"albedo must be HxWx3, got {self.albedo.shape}")
        if self.normals.shape != self.albedo.shape:
            raise ValueError(
                f"normals shape {self.normals.shape} != albedo shape {self.albedo.shape}"
            )
        if self.albedo.min() < ALBEDO_LO - 1e-12 or self.albedo.max() > ALBEDO_HI + 1e-12:
            raise ValueError("albedo outside construction bounds [0.2, 0.9]")
        norms = np.linalg.norm(self.normals, axis=2)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("normals must be unit length within 1e-6")
        if self.normals[:, :, 2].min() <= 0.0:
            raise ValueError("normals must have z > 0")

    @property
    def size(self) -> int:
        return self.albedo.shape[0]


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    return gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="reflect")


def generate_scene(seed: int, size: int = 128) -> SceneGeometry:
    """Deterministic toy scene for ``seed``: color blobs + dome-like geometry."""
    if size < 16:
        raise ValueError(f"scene size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)

    sigma = size / 12.0
    blobs = np.stack([_smooth_noise(rng, size, sigma) for _ in range(3)], axis=2)
    lo, hi = blobs.min(), blobs.max()
    if hi - lo < 1e-12:
        blobs = np.zeros_like(blobs)
        albedo = np.full_like(blobs, 0.5 * (ALBEDO_LO + ALBEDO_HI))
    else:
        albedo = ALBEDO_LO + (ALBEDO_HI - ALBEDO_LO) * (blobs - lo) / (hi - lo)

    # Dome tilt: outward-leaning normals toward the image border.
    half = (size - 1) / 2.0
    x = (np.arange(size, dtype=np.float64)[None, :] - half) / half
    y_up = (half - np.arange(size, dtype=np.float64)[:, None]) / half

    height = _smooth_noise(rng, size, sigma=size / 10.0)
    gy, gx = np.gradient(height)
    grad_scale = max(np.abs(gx).max(), np.abs(gy).max(), 1e-12)
    gx = gx / grad_scale
    gy = gy / grad_scale

    nx = DOME_TILT * x + NOISE_TILT * gx
    ny = DOME_TILT * y_up - NOISE_TILT * gy
    tilt = np.sqrt(nx * nx + ny * ny)
    cap = 1.5
    shrink = np.where(tilt > cap, cap / np.maximum(tilt, 1e-12), 1.0)
    nx = nx * shrink
    ny = ny * shrink

    nz = np.ones_like(nx)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    normals = np.stack([nx / norm, ny / norm, nz / norm], axis=2)
    return SceneGeometry(albedo=albedo, normals=normals, seed=seed)


def shade_scene(scene: SceneGeometry, spec: ProbeSpec) -> np.ndarray:
    """Lambertian shading: clamp(albedo * (ambient + intensity * max(0, n.L)))."""
    spec.validate()
    L = light_direction(spec.azimuth_deg, spec.elevation_deg)
    n = scene.normals
    ndotl = n[:, :, 0] * L[0] + n[:, :, 1] * L[1] + n[:, :, 2] * L[2]
    shading = spec.ambient + spec.intensity * np.maximum(0.0, ndotl)
    return np.clip(scene.albedo * shading[:, :, None], 0.0, 1.0)


def mirror_scene(scene: SceneGeometry) -> SceneGeometry:
    """Horizontal mirror: flip columns and negate the normal x component."""
    albedo = scene.albedo[:, ::-1].copy()
    normals = scene.normals[:, ::-1].copy()
    normals[:, :, 0] = -normals[:, :, 0]
    return SceneGeometry(albedo=albedo, normals=normals, seed=scene.seed)


def default_toy_specs(n_lights: int = 8, probe_size: int = 64) -> list[ProbeSpec]:
    """Evenly spread azimuths with alternating elevation/intensity levels."""
    specs = []
    for k in range(n_lights):
        azimuth = -180.0 + 360.0 * k / n_lights
        specs.append(
            ProbeSpec(
                azimuth_deg=azimuth,
                elevation_deg=15.0 if k % 2 == 0 else 35.0,
                intensity=1.0 if k % 2 == 0 else 0.9,
                size=probe_size,
            )
        )
    return specs


def build_toy_dataset(
    n_scenes: int,
    specs: Sequence[ProbeSpec],
    out_dir,
    seed: int = 0,
    size: int = 128,
) -> DatasetManifest:
    """Render n_scenes x len(specs) shaded images plus one probe per spec.

    Fully seed-deterministic (per-scene seeds are seed + scene index); writes
    ``manifest.json`` in ``out_dir`` and returns the loaded manifest.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if len(specs) == 0:
        raise ValueError("specs must be non-empty")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "probes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    probes = {}
    for ill_id, spec in enumerate(specs):
        probe = render_probe(spec)
        probe.illumination_id = ill_id
        rel = f"probes/{PROBE_FILE_FMT.format(id=ill_id)}"
        save_probe(probe, out / rel)
        probes[ill_id] = rel

    scenes = {}
    for k in range(n_scenes):
        scene_id = f"scene_{k:03d}"
        scene = generate_scene(seed + k, size=size)
        scene_dir = out / "images" / scene_id
        scene_dir.mkdir(parents=True, exist_ok=True)
        per_ill = {}
        for ill_id, spec in enumerate(specs):
            rel = f"images/{scene_id}/ill_{ill_id:02d}.png"
            imgio.save_png(shade_scene(scene, spec), out / rel)
            per_ill[ill_id] = rel
        scenes[scene_id] = per_ill

    manifest = DatasetManifest(
        scenes=scenes,
        probes=probes,
        meta={
            "image_size": size,
            "probe_size": specs[0].size,
            "seed": seed,
        },
        root=out,
    )
    manifest.save(out / "manifest.json")
    return manifest
