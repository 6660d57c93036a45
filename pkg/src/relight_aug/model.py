"""Probe-guided encoder-decoder relighting network.

The encoder compresses an image into a bottleneck whose channels split into
geometry features and a lighting block; the lighting block pools into a
compact lighting code from which a light probe can be decoded.  The image
decoder consumes geometry features, per-stage encoder skips, and a lighting
code -- normally the code of a guide probe, fully replacing the input's own
lighting -- and emits the relit image.  Blocks: DualConv (two 3x3 convs with
instance norm + ELU), DBPN-style up/down projection blocks for resampling,
and a ResBlock chain at the bottleneck.  Everything downstream of the code
injection runs without normalization (the code is a per-channel constant
over space and instance norm would cancel it), and the code reaches every
decoder stage twice: broadcast next to the encoder skip, and as a
per-channel scale/shift inside the merge block, so relighting has a
multiplicative route to the output as short as the skips' own.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from .probes import LightProbe


def _log2_exact(n: int) -> int:
    k = int(round(math.log2(n)))
    if 2**k != n:
        raise ValueError(f"{n} is not a power of two")
    return k


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``lighting_channels`` is the lighting-code dimension; the bottleneck
    splits into (bottleneck - lighting) geometry channels and a lighting
    block that is average-pooled into the code.
    """

    input_size: int = 256
    base_channels: int = 32
    stages: int = 4
    bottleneck_channels: int = 256
    lighting_channels: int = 128
    res_blocks: int = 4
    probe_size: int = 64

    def validate(self) -> None:
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        if self.input_size % (2**self.stages) != 0:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2^stages={2**self.stages}"
            )
        if not (0 < self.lighting_channels < self.bottleneck_channels):
            raise ValueError(
                f"need 0 < lighting_channels < bottleneck_channels, got "
                f"{self.lighting_channels} vs {self.bottleneck_channels}"
            )
        if self.base_channels < 1 or self.res_blocks < 0:
            raise ValueError("base_channels must be >= 1 and res_blocks >= 0")
        if self.probe_size < 8:
            raise ValueError(f"probe_size must be >= 8, got {self.probe_size}")
        _log2_exact(self.probe_size // 4)
        if self.probe_size % 4 != 0:
            raise ValueError("probe_size must be 4 * power-of-two")

    def encoder_channels(self) -> list[int]:
        """Channels after the stem and after each downsampling stage."""
        chans = [self.base_channels]
        for k in range(1, self.stages):
            chans.append(self.base_channels * 2 ** (k - 1))
        chans.append(self.bottleneck_channels)
        return chans

    @property
    def geometry_channels(self) -> int:
        return self.bottleneck_channels - self.lighting_channels

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // 2**self.stages

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


def probe_decoder_channels(probe_size: int) -> list[int]:
    n_up = _log2_exact(probe_size // 4)
    return [64] + [max(64 >> i, 8) for i in range(1, n_up + 1)]


def probe_encoder_channels(probe_size: int) -> list[int]:
    n_down = _log2_exact(probe_size // 4)
    return [min(16 * 2**i, 64) for i in range(n_down)]


def _inorm(ch: int) -> nn.InstanceNorm2d:
    return nn.InstanceNorm2d(ch, affine=True, track_running_stats=False)


class DualConv(nn.Module):
    """Two 3x3 convolutions, each followed by instance norm and ELU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            _inorm(out_ch),
            nn.ELU(),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            _inorm(out_ch),
            nn.ELU(),
        )

    def forward(self, x):
        return self.net(x)


class DownProjection(nn.Module):
    """2x downsampling with back-projection residual correction."""

    def __init__(self, ch: int):
        super().__init__()
        self.down1 = nn.Conv2d(ch, ch, 6, stride=2, padding=2)
        self.up1 = nn.ConvTranspose2d(ch, ch, 6, stride=2, padding=2)
        self.down2 = nn.Conv2d(ch, ch, 6, stride=2, padding=2)
        self.act = nn.ELU()

    def forward(self, x):
        low = self.act(self.down1(x))
        high = self.act(self.up1(low))
        residual = self.act(self.down2(high - x))
        return low + residual


class UpProjection(nn.Module):
    """2x upsampling, mirror of :class:`DownProjection`."""

    def __init__(self, ch: int):
        super().__init__()
        self.up1 = nn.ConvTranspose2d(ch, ch, 6, stride=2, padding=2)
        self.down1 = nn.Conv2d(ch, ch, 6, stride=2, padding=2)
        self.up2 = nn.ConvTranspose2d(ch, ch, 6, stride=2, padding=2)
        self.act = nn.ELU()

    def forward(self, x):
        high = self.act(self.up1(x))
        low = self.act(self.down1(high))
        residual = self.act(self.up2(low - x))
        return high + residual


class ResBlock(nn.Module):
    """Residual pair of 3x3 convolutions, no normalization.

    Sits downstream of the lighting-code injection, so channel means must
    survive: the code enters as a spatially constant block and instance norm
    would subtract exactly that constant again.
    """

    def __init__(self, ch: int):
        super().__init__()
        self.branch = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1),
            nn.ELU(),
            nn.Conv2d(ch, ch, 3, padding=1),
        )
        self.act = nn.ELU()

    def forward(self, x):
        return self.act(x + self.branch(x))


class SkipFuse(nn.Module):
    """Decoder-stage merge: two 3x3 convolutions with ELU, no normalization.

    Merges upsampled features with the encoder skip at the same scale, with
    a per-channel scale and shift predicted from the lighting code applied
    between the convolutions.  The multiplicative path is the point: shading
    is geometry times light, and a concatenated code enters only additively,
    leaving the product to be approximated by the nonlinearity.  Like
    :class:`ResBlock` the block stays norm-free so the guide code's mean
    shifts propagate to the output.
    """

    def __init__(self, in_ch: int, out_ch: int, code_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.gain = nn.Linear(code_dim, 2 * out_ch)
        self.act = nn.ELU()

    def forward(self, x, code):
        scale, shift = self.gain(code)[:, :, None, None].chunk(2, dim=1)
        h = self.conv1(x)
        h = self.act(h * (1.0 + scale) + shift)
        return self.act(self.conv2(h))


class ProbeDecoder(nn.Module):
    """Lighting code -> probe image through transposed convolutions.

    No normalization here: the probe's absolute brightness is signal the
    decoder must reproduce, so channel means stay untouched.
    """

    def __init__(self, code_dim: int, probe_size: int):
        super().__init__()
        chans = probe_decoder_channels(probe_size)
        self.fc = nn.Linear(code_dim, chans[0] * 4 * 4)
        self.start_ch = chans[0]
        ups = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            ups += [nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1), nn.ELU()]
        self.ups = nn.Sequential(*ups)
        self.head = nn.Conv2d(chans[-1], 3, 3, padding=1)

    def forward(self, code):
        h = self.fc(code).reshape(code.shape[0], self.start_ch, 4, 4)
        h = self.ups(h)
        return torch.sigmoid(self.head(h))


class ProbeEncoder(nn.Module):
    """Probe image -> lighting code via strided convolutions + pooling.

    Deliberately unnormalized: instance norm would zero every channel's
    spatial mean, and the global pool right after would then wash out the
    probe's lighting content entirely.
    """

    def __init__(self, code_dim: int, probe_size: int):
        super().__init__()
        chans = probe_encoder_channels(probe_size)
        layers = []
        cin = 3
        for cout in chans:
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.ELU()]
            cin = cout
        self.net = nn.Sequential(*layers)
        self.fc = nn.Linear(chans[-1], code_dim)

    def forward(self, probe):
        h = self.net(probe)
        return self.fc(h.mean(dim=(2, 3)))


class EncodedScene(NamedTuple):
    """Result of encoding an image: geometry block, lighting code, skips."""

    geometry: np.ndarray  # H x W x C_geometry
    code: np.ndarray  # lighting-code vector
    skips: tuple  # torch tensors, finest first (internal; reused by decoding)
    geometry_t: torch.Tensor


class RelightingModel(nn.Module):
    """Encoder-decoder relighting network with a probe bottleneck.

    The module doubles as the network state: named parameter tensors plus
    ``config`` and a ``train_steps`` counter.  Immutable during inference;
    training mutates it under a single-writer contract.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.train_steps = 0

        chans = config.encoder_channels()
        self.stem = DualConv(3, chans[0])
        self.enc_downs = nn.ModuleList(DownProjection(chans[k]) for k in range(config.stages))
        self.enc_convs = nn.ModuleList(
            DualConv(chans[k], chans[k + 1]) for k in range(config.stages)
        )

        # 1x1 mixing conv, unnormalized on purpose: it restores per-channel
        # mean freedom after the instance-normed stages so the pooled
        # lighting code can carry absolute shading levels
        self.mix = nn.Sequential(
            nn.Conv2d(config.bottleneck_channels, config.bottleneck_channels, 1), nn.ELU()
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(config.bottleneck_channels, config.bottleneck_channels, 1), nn.ELU()
        )
        self.res_chain = nn.Sequential(
            *[ResBlock(config.bottleneck_channels) for _ in range(config.res_blocks)]
        )
        self.dec_ups = nn.ModuleList(
            UpProjection(chans[k + 1]) for k in reversed(range(config.stages))
        )
        # the lighting code rides along at every decoder scale, concatenated
        # next to the encoder skip; injected only once at the bottleneck its
        # influence dilutes to float noise before reaching the head
        self.dec_convs = nn.ModuleList(
            SkipFuse(
                chans[k + 1] + chans[k] + config.lighting_channels,
                chans[k],
                config.lighting_channels,
            )
            for k in reversed(range(config.stages))
        )
        self.head = nn.Conv2d(chans[0], 3, 3, padding=1)

        self.probe_decoder = ProbeDecoder(config.lighting_channels, config.probe_size)
        self.probe_encoder = ProbeEncoder(config.lighting_channels, config.probe_size)

    # ---- torch-tensor paths (used by training; batch dim required) ----

    def encode_t(self, x: torch.Tensor):
        self._check_image_t(x)
        h = self.stem(x)
        skips = [h]
        for down, conv in zip(self.enc_downs, self.enc_convs):
            h = conv(down(h))
            skips.append(h)
        skips = skips[:-1]
        h = self.mix(h)
        geometry = h[:, : self.config.geometry_channels]
        light_block = h[:, self.config.geometry_channels :]
        code = light_block.mean(dim=(2, 3))
        return geometry, code, skips

    def decode_probe_t(self, code: torch.Tensor) -> torch.Tensor:
        self._check_code_t(code)
        return self.probe_decoder(code)

    def encode_probe_t(self, probe: torch.Tensor) -> torch.Tensor:
        self._check_probe_t(probe)
        return self.probe_encoder(probe)

    def decode_image_t(self, geometry, skips, code) -> torch.Tensor:
        b, _, h, w = geometry.shape
        cast = code[:, :, None, None]
        x = self.fuse(torch.cat([geometry, cast.expand(-1, -1, h, w)], dim=1))
        x = self.res_chain(x)
        for up, conv, skip in zip(self.dec_ups, self.dec_convs, reversed(skips)):
            x = up(x)
            tiled = cast.expand(-1, -1, skip.shape[2], skip.shape[3])
            x = conv(torch.cat([x, skip, tiled], dim=1), code)
        return torch.sigmoid(self.head(x))

    def relight_t(self, image: torch.Tensor, guide: torch.Tensor):
        """Full training-path forward: predicted probe + relit image."""
        self._check_image_t(image)
        self._check_probe_t(guide)
        geometry, code, skips = self.encode_t(image)
        predicted_probe = self.decode_probe_t(code)
        guide_code = self.encode_probe_t(guide)
        relit = self.decode_image_t(geometry, skips, guide_code)
        return predicted_probe, relit

    # ---- numpy convenience API (single image, no grad) ----

    def encode(self, image: np.ndarray) -> EncodedScene:
        x = self._image_to_tensor(image)
        with torch.no_grad():
            geometry, code, skips = self.encode_t(x)
        return EncodedScene(
            geometry=geometry[0].permute(1, 2, 0).cpu().numpy(),
            code=code[0].cpu().numpy(),
            skips=tuple(skips),
            geometry_t=geometry,
        )

    def decode_probe(self, code: np.ndarray) -> LightProbe:
        t = self._code_to_tensor(code)
        with torch.no_grad():
            probe = self.decode_probe_t(t)
        return LightProbe(pixels=self._to_hwc64(probe))

    def encode_probe(self, probe) -> np.ndarray:
        t = self._probe_to_tensor(probe)
        with torch.no_grad():
            code = self.encode_probe_t(t)
        return code[0].cpu().numpy()

    def relight(self, image: np.ndarray, guide) -> tuple[LightProbe, np.ndarray]:
        x = self._image_to_tensor(image)
        g = self._probe_to_tensor(guide)
        with torch.no_grad():
            predicted, relit = self.relight_t(x, g)
        return LightProbe(pixels=self._to_hwc64(predicted)), self._to_hwc64(relit)

    # ---- validation / conversion helpers ----

    @property
    def _dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _check_image_t(self, x: torch.Tensor) -> None:
        n = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != n or x.shape[3] != n:
            raise ValueError(f"expected image tensor (B,3,{n},{n}), got {tuple(x.shape)}")

    def _check_probe_t(self, p: torch.Tensor) -> None:
        s = self.config.probe_size
        if p.ndim != 4 or p.shape[1] != 3 or p.shape[2] != s or p.shape[3] != s:
            raise ValueError(f"expected probe tensor (B,3,{s},{s}), got {tuple(p.shape)}")

    def _check_code_t(self, c: torch.Tensor) -> None:
        d = self.config.lighting_channels
        if c.ndim != 2 or c.shape[1] != d:
            raise ValueError(f"expected code tensor (B,{d}), got {tuple(c.shape)}")

    def _image_to_tensor(self, image: np.ndarray) -> torch.Tensor:
        arr = np.asarray(image, dtype=np.float64)
        n = self.config.input_size
        if arr.shape != (n, n, 3):
            raise ValueError(f"expected {n}x{n}x3 image, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        return torch.from_numpy(arr).permute(2, 0, 1)[None].to(self._dtype)

    def _probe_to_tensor(self, probe) -> torch.Tensor:
        arr = probe.pixels if isinstance(probe, LightProbe) else np.asarray(probe)
        s = self.config.probe_size
        if arr.shape != (s, s, 3):
            raise ValueError(f"expected {s}x{s}x3 probe, got {arr.shape}")
        return torch.from_numpy(np.asarray(arr, dtype=np.float64)).permute(2, 0, 1)[None].to(
            self._dtype
        )

    def _code_to_tensor(self, code: np.ndarray) -> torch.Tensor:
        arr = np.asarray(code, dtype=np.float64).reshape(-1)
        if arr.shape[0] != self.config.lighting_channels:
            raise ValueError(
                f"expected code of dim {self.config.lighting_channels}, got {arr.shape[0]}"
            )
        return torch.from_numpy(arr)[None].to(self._dtype)

    @staticmethod
    def _to_hwc64(t: torch.Tensor) -> np.ndarray:
        return t[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)


def deterministic_fill_(module: nn.Module, seed: int) -> None:
    """Fill parameters in sorted-name order from a seeded numpy generator.

    Weight matrices/kernels get fan-in-scaled uniform values at the
    variance-preserving bound sqrt(6/fan_in) (the norm-free decoder path
    needs activations that neither decay nor explode with depth), norm
    gains 1, everything else 0, so the same (module shape, seed) yields
    byte-identical parameters on any platform.
    """
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if param.ndim >= 2:
                fan_in = param.shape[1] * int(np.prod(param.shape[2:]))
                bound = math.sqrt(6.0 / fan_in)
                values = rng.uniform(-bound, bound, size=tuple(param.shape))
                param.copy_(torch.from_numpy(values.astype(np.float32)))
            elif name.endswith(".weight"):
                param.fill_(1.0)
            else:
                param.zero_()


def init_model(config: ModelConfig, seed: int = 0) -> RelightingModel:
    """Build a model with deterministic fan-in-scaled uniform initialization."""
    config.validate()
    model = RelightingModel(config)
    deterministic_fill_(model, seed)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
