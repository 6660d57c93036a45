"""Variational autoencoder over light probes.

A trained decoder turns an 8-dim latent vector into a plausible probe, so
guide probes can be synthesized on the fly instead of rendered or captured.
The KL term is weighted by beta to push the latent axes toward independent,
interpretable factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import CheckpointData, CheckpointError, load_checkpoint, save_checkpoint
from .model import deterministic_fill_
from .probes import LightProbe, ProbeSpec, render_probe

VAE_KIND = "probe-vae"


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 8
    beta: float = 4.0
    probe_size: int = 64
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")
        size = self.probe_size
        if size < 8 or size & (size - 1):
            raise ValueError("probe_size must be a power of two >= 8")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "VaeConfig":
        cfg = cls(**data)
        cfg.validate()
        return cfg


class ProbeVae(nn.Module):
    def __init__(self, config: VaeConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.train_steps = 0

        downs = int(math.log2(config.probe_size // 4))
        enc_channels = [min(16 * 2**i, 64) for i in range(downs)]
        layers: list[nn.Module] = []
        ch = 3
        for out_ch in enc_channels:
            layers += [nn.Conv2d(ch, out_ch, 3, stride=2, padding=1), nn.ELU()]
            ch = out_ch
        self.encoder = nn.Sequential(*layers)
        flat = ch * 4 * 4
        self.fc_mu = nn.Linear(flat, config.latent_dim)
        self.fc_logvar = nn.Linear(flat, config.latent_dim)

        self.fc_z = nn.Linear(config.latent_dim, 64 * 4 * 4)
        dec_channels = list(reversed(enc_channels))
        layers = []
        ch = 64
        for out_ch in dec_channels:
            layers += [nn.ConvTranspose2d(ch, out_ch, 4, stride=2, padding=1), nn.ELU()]
            ch = out_ch
        self.decoder = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, 3, 3, padding=1)

    def encode_t(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.encoder(x).flatten(1)
        return self.fc_mu(h), self.fc_logvar(h)

    def decode_t(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc_z(z).reshape(z.shape[0], 64, 4, 4)
        return torch.sigmoid(self.head(self.decoder(h)))

    def forward_t(
        self, x: torch.Tensor, eps: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mu, logvar = self.encode_t(x)
        z = mu if eps is None else mu + torch.exp(0.5 * logvar) * eps
        return self.decode_t(z), mu, logvar

    def _probe_to_tensor(self, probe) -> torch.Tensor:
        arr = probe.pixels if isinstance(probe, LightProbe) else np.asarray(probe, float)
        s = self.config.probe_size
        if arr.shape != (s, s, 3):
            raise ValueError(f"expected {s}x{s}x3 probe, got {arr.shape}")
        return torch.from_numpy(arr.transpose(2, 0, 1)[None].astype(np.float32))


def vae_forward(
    model: ProbeVae,
    probe,
    mode: str = "mean",
    rng: np.random.Generator | None = None,
) -> tuple[LightProbe, np.ndarray, np.ndarray]:
    """Encode-decode one probe. `mode="mean"` uses z = mu (deterministic);
    `mode="sample"` draws z = mu + exp(logvar/2) * eps with eps from `rng`."""
    if mode not in ("mean", "sample"):
        raise ValueError(f"mode must be 'mean' or 'sample', got {mode!r}")
    x = model._probe_to_tensor(probe)
    model.eval()
    with torch.no_grad():
        mu, logvar = model.encode_t(x)
        if mode == "sample":
            if rng is None:
                raise ValueError("sampled mode needs an rng")
            eps = torch.from_numpy(
                rng.standard_normal(mu.shape[1]).astype(np.float32)
            )[None]
            z = mu + torch.exp(0.5 * logvar) * eps
        else:
            z = mu
        recon = model.decode_t(z)
    pixels = recon[0].permute(1, 2, 0).numpy().astype(np.float64)
    return (
        LightProbe(pixels=pixels),
        mu[0].numpy().astype(np.float64),
        logvar[0].numpy().astype(np.float64),
    )


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over latent dims."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have the same shape")
    return float(0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar))


def vae_loss(recon, probe, mu, logvar, beta: float) -> float:
    """Mean-L1 reconstruction plus beta-weighted KL."""
    a = recon.pixels if isinstance(recon, LightProbe) else np.asarray(recon, float)
    b = probe.pixels if isinstance(probe, LightProbe) else np.asarray(probe, float)
    if a.shape != b.shape:
        raise ValueError("recon and probe shapes differ")
    return float(np.mean(np.abs(a - b))) + beta * kl_divergence(mu, logvar)


def sample_probe(model: ProbeVae, z) -> LightProbe:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != model.config.latent_dim:
        raise ValueError(
            f"latent vector must have dim {model.config.latent_dim}, got {z.shape[0]}"
        )
    model.eval()
    with torch.no_grad():
        out = model.decode_t(torch.from_numpy(z.astype(np.float32))[None])
    return LightProbe(pixels=out[0].permute(1, 2, 0).numpy().astype(np.float64))


def latent_traverse(
    model: ProbeVae, dim: int, lo: float, hi: float, steps: int
) -> list[LightProbe]:
    """Decode along one latent axis, everything else held at 0."""
    if not 0 <= dim < model.config.latent_dim:
        raise ValueError(f"dim must be in [0, {model.config.latent_dim}), got {dim}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"bad traverse range [{lo}, {hi}]")
    probes = []
    for value in np.linspace(lo, hi, steps):
        z = np.zeros(model.config.latent_dim)
        z[dim] = value
        probes.append(sample_probe(model, z))
    return probes


def random_probe_specs(n: int, seed: int, size: int = 64) -> list[ProbeSpec]:
    """Synthetic probe specs to pad out small training corpora."""
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n):
        specs.append(
            ProbeSpec(
                azimuth_deg=float(rng.uniform(-180.0, 180.0)),
                elevation_deg=float(rng.uniform(5.0, 70.0)),
                intensity=float(rng.uniform(0.7, 1.1)),
                ambient=float(rng.uniform(0.05, 0.15)),
                size=size,
            )
        )
    return specs


def _corpus_tensor(probes: Sequence, size: int) -> torch.Tensor:
    arrays = []
    for probe in probes:
        arr = probe.pixels if isinstance(probe, LightProbe) else np.asarray(probe, float)
        if arr.shape != (size, size, 3):
            raise ValueError(f"corpus probe has shape {arr.shape}, expected ({size},{size},3)")
        arrays.append(arr.transpose(2, 0, 1))
    return torch.from_numpy(np.stack(arrays).astype(np.float32))


def train_vae(
    probes: Sequence,
    config: VaeConfig,
    progress: Callable[[dict], None] | None = None,
) -> tuple[ProbeVae, list[dict]]:
    """Fit the VAE on a probe corpus.

    The optimized objective scales reconstruction as a per-pixel likelihood
    sum (element count times the mean L1) so that a beta of a few units
    balances against the summed KL instead of swamping it; the reported
    metric stays the mean-scale `vae_loss`.
    """
    config.validate()
    if len(probes) == 0:
        raise ValueError("empty probe corpus")
    x_all = _corpus_tensor(probes, config.probe_size)
    n_elements = float(x_all[0].numel())

    model = ProbeVae(config)
    deterministic_fill_(model, config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    history = []
    n = x_all.shape[0]
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        model.train()
        epoch_recon, epoch_kl, batches = 0.0, 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = x_all[torch.from_numpy(idx)]
            eps = torch.from_numpy(
                rng.standard_normal((len(idx), config.latent_dim)).astype(np.float32)
            )
            recon, mu, logvar = model.forward_t(x, eps)
            recon_l1 = torch.mean(torch.abs(recon - x))
            kl = 0.5 * torch.sum(mu**2 + torch.exp(logvar) - 1.0 - logvar, dim=1).mean()
            loss = n_elements * recon_l1 + config.beta * kl
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite vae loss at epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            model.train_steps += 1
            epoch_recon += float(recon_l1.item())
            epoch_kl += float(kl.item())
            batches += 1
        record = {
            "epoch": epoch,
            "recon_l1": epoch_recon / batches,
            "kl": epoch_kl / batches,
            "loss": epoch_recon / batches + config.beta * epoch_kl / batches,
        }
        history.append(record)
        if progress is not None:
            progress(record)
    model.eval()
    return model, history


def save_vae(path, model: ProbeVae, extra: dict | None = None) -> Path:
    tensors = {name: t.detach().numpy() for name, t in model.state_dict().items()}
    return save_checkpoint(
        path,
        kind=VAE_KIND,
        config=model.config.to_dict(),
        train_steps=model.train_steps,
        tensors=tensors,
        extra=extra or {},
    )


def load_vae(path) -> tuple[ProbeVae, CheckpointData]:
    data = load_checkpoint(path)
    if data.kind != VAE_KIND:
        raise CheckpointError(f"{path} holds a '{data.kind}' checkpoint, not a probe VAE")
    model = ProbeVae(VaeConfig.from_dict(data.config))
    state = {
        name: torch.from_numpy(data.tensors[name].copy()) for name in model.state_dict()
    }
    model.load_state_dict(state)
    model.train_steps = data.train_steps
    model.eval()
    return model, data


def probe_corpus(probe_set, n_synthetic: int = 200, seed: int = 0) -> list[LightProbe]:
    """Averaged probes from a set plus synthetic renders, the default
    training corpus for desk-scale runs."""
    corpus = [probe_set.by_id(i) for i in probe_set.ids()]
    size = probe_set.size
    for spec in random_probe_specs(n_synthetic, seed=seed, size=size):
        corpus.append(render_probe(spec))
    return corpus
