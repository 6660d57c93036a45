"""Training losses: probe L1, image L1, and multi-layer perceptual distance.

The perceptual term compares feature activations of a fixed convolutional
extractor at several scales.  Two extractor kinds exist: a pretrained
classifier backbone (default for real training; requires downloadable
weights) and a frozen randomly-initialized stack that is hermetic and fully
seeded, used wherever reproducibility without downloads matters.  All norms
are element-count-normalized means, so loss magnitudes are resolution
independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .probes import LightProbe

KIND_PRETRAINED = "pretrained-classifier"
KIND_FROZEN_RANDOM = "frozen-random"


class ExtractorWeightsError(RuntimeError):
    """Raised when pretrained extractor weights cannot be obtained."""


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Which feature extractor backs the perceptual loss.

    ``layer_count`` feature maps are produced; map j (0-indexed) has spatial
    side input/2^j.  ``layer_weights`` default to all ones.
    """

    kind: str = KIND_PRETRAINED
    layer_count: int = 4
    layer_weights: Optional[tuple[float, ...]] = None
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in (KIND_PRETRAINED, KIND_FROZEN_RANDOM):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.layer_count < 0:
            raise ValueError("layer_count must be >= 0")
        if self.kind == KIND_PRETRAINED and self.layer_count > 5:
            raise ValueError("pretrained extractor provides at most 5 layers")
        if self.layer_weights is not None:
            if len(self.layer_weights) != self.layer_count:
                raise ValueError(
                    f"layer_weights length {len(self.layer_weights)} != layer_count "
                    f"{self.layer_count}"
                )
            for w in self.layer_weights:
                if not (math.isfinite(w) and w >= 0):
                    raise ValueError(f"layer weights must be finite and >= 0, got {w}")

    def weights(self) -> tuple[float, ...]:
        return self.layer_weights if self.layer_weights is not None else (1.0,) * self.layer_count

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "layer_count": self.layer_count,
            "layer_weights": list(self.layer_weights) if self.layer_weights else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureExtractorSpec":
        spec = cls(
            kind=d.get("kind", KIND_PRETRAINED),
            layer_count=d.get("layer_count", 4),
            layer_weights=tuple(d["layer_weights"]) if d.get("layer_weights") else None,
            seed=d.get("seed", 0),
        )
        spec.validate()
        return spec


@dataclass(frozen=True)
class LossBreakdown:
    probe: float
    image_l1: float
    perceptual: float
    total: float

    @classmethod
    def from_parts(cls, probe: float, image_l1: float, perceptual: float) -> "LossBreakdown":
        return cls(probe=probe, image_l1=image_l1, perceptual=perceptual,
                   total=probe + image_l1 + perceptual)

    def to_dict(self) -> dict:
        return {"probe": self.probe, "image_l1": self.image_l1,
                "perceptual": self.perceptual, "total": self.total}


class FeatureExtractor(nn.Module):
    """Fixed (non-trainable) stack producing a pyramid of feature maps."""

    def __init__(self, stages: Sequence[nn.Module], spec: FeatureExtractorSpec):
        super().__init__()
        self.stages = nn.ModuleList(stages)
        self.spec = spec
        for p in self.parameters():
            p.requires_grad_(False)

    def features_t(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        h = x
        for stage in self.stages:
            h = stage(h)
            out.append(h)
        return out


def _frozen_random_stages(spec: FeatureExtractorSpec) -> list[nn.Module]:
    rng = np.random.default_rng(spec.seed)
    stages = []
    cin = 3
    for j in range(spec.layer_count):
        cout = 16 if j == 0 else min(cin * 2, 128)
        stride = 1 if j == 0 else 2
        conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        bound = 1.0 / math.sqrt(cin * 9)
        with torch.no_grad():
            conv.weight.copy_(
                torch.from_numpy(
                    rng.uniform(-bound, bound, size=tuple(conv.weight.shape)).astype(np.float32)
                )
            )
            conv.bias.zero_()
        stages.append(nn.Sequential(conv, nn.ELU()))
        cin = cout
    return stages


# VGG16 feature indices after which block j has spatial side input/2^j.
_VGG16_TAPS = [3, 8, 15, 22, 29]


def _pretrained_stages(spec: FeatureExtractorSpec) -> list[nn.Module]:
    try:
        from torchvision.models import VGG16_Weights, vgg16

        backbone = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
    except Exception as exc:
        raise ExtractorWeightsError(
            "pretrained classifier weights unavailable (download failed or torchvision "
            "missing); use FeatureExtractorSpec(kind='frozen-random') for a hermetic, "
            f"seeded fallback. Cause: {exc}"
        ) from exc
    stages = []
    start = 0
    for j in range(spec.layer_count):
        end = _VGG16_TAPS[j] + 1
        stages.append(nn.Sequential(*[backbone[i] for i in range(start, end)]))
        start = end
    return stages


@lru_cache(maxsize=8)
def _cached_extractor(spec: FeatureExtractorSpec, dtype: torch.dtype) -> FeatureExtractor:
    spec.validate()
    builder = _pretrained_stages if spec.kind == KIND_PRETRAINED else _frozen_random_stages
    extractor = FeatureExtractor(builder(spec), spec)
    extractor.eval()
    return extractor.to(dtype)


def build_extractor(
    spec: FeatureExtractorSpec, dtype: torch.dtype = torch.float32
) -> FeatureExtractor:
    return _cached_extractor(spec, dtype)


def perceptual_features(spec: FeatureExtractorSpec, image) -> list[np.ndarray]:
    """Feature maps (HxWxC numpy, float64) of an image under ``spec``."""
    spec.validate()
    if spec.layer_count == 0:
        return []
    extractor = build_extractor(spec, dtype=torch.float64)
    x = _to_chw_tensor(image, torch.float64)
    with torch.no_grad():
        feats = extractor.features_t(x)
    return [f[0].permute(1, 2, 0).numpy() for f in feats]


# ---- tensor-path losses (autograd-capable) ----


def probe_loss_t(p: torch.Tensor, p_hat: torch.Tensor) -> torch.Tensor:
    if p.shape != p_hat.shape:
        raise ValueError(f"probe shape mismatch: {tuple(p.shape)} vs {tuple(p_hat.shape)}")
    return (p - p_hat).abs().mean()


def image_loss_t(
    i: torch.Tensor,
    i_hat: torch.Tensor,
    extractor: Optional[FeatureExtractor],
) -> tuple[torch.Tensor, torch.Tensor]:
    if i.shape != i_hat.shape:
        raise ValueError(f"image shape mismatch: {tuple(i.shape)} vs {tuple(i_hat.shape)}")
    l1 = (i - i_hat).abs().mean()
    perceptual = torch.zeros((), dtype=i.dtype)
    if extractor is not None and extractor.spec.layer_count > 0:
        feats_true = extractor.features_t(i)
        feats_hat = extractor.features_t(i_hat)
        for w, ft, fh in zip(extractor.spec.weights(), feats_true, feats_hat):
            perceptual = perceptual + w * ((ft - fh) ** 2).mean()
    return l1, perceptual


def total_loss_t(
    p, p_hat, i, i_hat, extractor: Optional[FeatureExtractor]
) -> dict[str, torch.Tensor]:
    probe = probe_loss_t(p, p_hat)
    l1, perceptual = image_loss_t(i, i_hat, extractor)
    return {"probe": probe, "image_l1": l1, "perceptual": perceptual,
            "total": probe + l1 + perceptual}


# ---- numpy-facing API ----


def probe_loss(p, p_hat) -> float:
    """Mean absolute per-element difference between two probes."""
    a = _as_array(p)
    b = _as_array(p_hat)
    if a.shape != b.shape:
        raise ValueError(f"probe shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def image_loss(i, i_hat, extractor_spec: FeatureExtractorSpec) -> tuple[float, float]:
    """(mean-L1, weighted per-layer feature MSE sum) between two images."""
    a = _as_array(i)
    b = _as_array(i_hat)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    l1 = float(np.abs(a - b).mean())
    extractor_spec.validate()
    perceptual = 0.0
    if extractor_spec.layer_count > 0:
        extractor = build_extractor(extractor_spec, dtype=torch.float64)
        with torch.no_grad():
            _, p = image_loss_t(
                _to_chw_tensor(a, torch.float64), _to_chw_tensor(b, torch.float64), extractor
            )
        perceptual = float(p)
    return l1, perceptual


def total_loss(p, p_hat, i, i_hat, extractor_spec: FeatureExtractorSpec) -> LossBreakdown:
    """Probe loss plus image loss; total is their exact sum."""
    probe = probe_loss(p, p_hat)
    l1, perceptual = image_loss(i, i_hat, extractor_spec)
    return LossBreakdown.from_parts(probe, l1, perceptual)


def _as_array(x) -> np.ndarray:
    if isinstance(x, LightProbe):
        return x.pixels
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _to_chw_tensor(image, dtype: torch.dtype) -> torch.Tensor:
    arr = np.asarray(_as_array(image))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {arr.shape}")
    return torch.from_numpy(arr).permute(2, 0, 1)[None].to(dtype)
