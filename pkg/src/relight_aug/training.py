"""Training loop for the relighting network.

Sampling draws (scene, source illumination, target illumination) triples
uniformly with replacement. Epoch randomness comes from a per-epoch
generator seeded as [seed, epoch], so a run resumed from the last epoch
checkpoint replays exactly the steps an uninterrupted run would have taken.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import CheckpointData, CheckpointError, load_checkpoint, save_checkpoint
from .imgio import load_png, resize_image
from .losses import FeatureExtractorSpec, LossBreakdown, build_extractor, total_loss_t
from .manifest import DatasetManifest
from .model import ModelConfig, RelightingModel, init_model
from .probes import ProbeSet

METRICS_FILE = "metrics.jsonl"
LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"
MODEL_KIND = "relighting-model"

# relative improvement below this fraction counts as stagnation
PLATEAU_THRESHOLD = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 45
    samples_per_epoch: int = 10000
    batch_size: int = 1
    lr: float = 2e-4
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    min_lr: float = 1e-6
    image_size: int = 256
    validation_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.samples_per_epoch <= 0:
            raise ValueError("samples_per_epoch must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        for name in ("lr", "plateau_factor", "min_lr"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite")
        if self.plateau_factor >= 1.0:
            raise ValueError("plateau_factor must be < 1")
        if self.plateau_patience <= 0:
            raise ValueError("plateau_patience must be positive")
        if self.image_size <= 0 or self.image_size % 16:
            raise ValueError("image_size must be a positive multiple of 16")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class TrainingSample:
    scene_id: str
    source_id: int
    target_id: int
    input_image: np.ndarray
    guide_probe: np.ndarray
    target_image: np.ndarray
    target_probe: np.ndarray


class DatasetCache:
    """All manifest images resized to the training resolution, in memory."""

    def __init__(self, manifest: DatasetManifest, probe_set: ProbeSet, image_size: int):
        manifest.validate(check_paths=True)
        self.image_size = image_size
        self.scene_ids = sorted(manifest.scenes)
        self.illumination_ids = manifest.illumination_ids
        if len(self.illumination_ids) < 2:
            raise ValueError("training needs at least two illuminations per scene")
        for ill in self.illumination_ids:
            probe_set.by_id(ill)  # raises KeyError when a probe is missing
        self.probes = {
            ill: probe_set.by_id(ill).pixels.astype(np.float64)
            for ill in self.illumination_ids
        }
        self.images: dict[tuple[str, int], np.ndarray] = {}
        for scene in self.scene_ids:
            for ill in self.illumination_ids:
                img = load_png(manifest.resolve(manifest.scenes[scene][ill]))
                if img.shape[0] != image_size or img.shape[1] != image_size:
                    img = resize_image(img, image_size)
                self.images[(scene, ill)] = img


def split_scenes(
    scene_ids: Sequence[str], fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Scene-disjoint train/validation split. Validation may be empty only
    when a single scene makes a disjoint split impossible."""
    ids = sorted(scene_ids)
    if not ids:
        raise ValueError("no scenes to split")
    if len(ids) == 1 or fraction == 0.0:
        return ids, []
    rng = np.random.default_rng([seed, 0x5EED])
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_val = min(max(1, round(fraction * len(ids))), len(ids) - 1)
    val = sorted(order[:n_val])
    train = sorted(order[n_val:])
    return train, val


def sample_batch(
    cache: DatasetCache,
    rng: np.random.Generator,
    scene_ids: Sequence[str],
    batch_size: int,
) -> list[TrainingSample]:
    ills = cache.illumination_ids
    samples = []
    for _ in range(batch_size):
        scene = scene_ids[int(rng.integers(len(scene_ids)))]
        source = ills[int(rng.integers(len(ills)))]
        target = ills[int(rng.integers(len(ills)))]
        samples.append(
            TrainingSample(
                scene_id=scene,
                source_id=source,
                target_id=target,
                input_image=cache.images[(scene, source)],
                guide_probe=cache.probes[target],
                target_image=cache.images[(scene, target)],
                target_probe=cache.probes[source],
            )
        )
    return samples


def _stack(arrays: Sequence[np.ndarray]) -> torch.Tensor:
    batch = np.stack([a.transpose(2, 0, 1) for a in arrays]).astype(np.float32)
    return torch.from_numpy(batch)


def train_step(
    model: RelightingModel,
    optimizer: torch.optim.Optimizer,
    samples: Sequence[TrainingSample],
    extractor_spec: FeatureExtractorSpec,
) -> LossBreakdown:
    model.train()
    image = _stack([s.input_image for s in samples])
    guide = _stack([s.guide_probe for s in samples])
    target_image = _stack([s.target_image for s in samples])
    target_probe = _stack([s.target_probe for s in samples])

    probe_hat, output_image = model.relight_t(image, guide)
    extractor = build_extractor(extractor_spec)
    terms = total_loss_t(target_probe, probe_hat, target_image, output_image, extractor)
    for name, term in terms.items():
        if not torch.isfinite(term):
            raise RuntimeError(
                f"non-finite {name} loss at train step {model.train_steps}"
            )

    optimizer.zero_grad(set_to_none=True)
    terms["total"].backward()
    optimizer.step()
    model.train_steps += 1
    return LossBreakdown.from_parts(
        probe=float(terms["probe"].item()),
        image_l1=float(terms["image_l1"].item()),
        perceptual=float(terms["perceptual"].item()),
    )


class PlateauScheduler:
    """Multiplies the lr by `factor` after `patience` epochs without relative
    validation improvement of at least PLATEAU_THRESHOLD, floored at min_lr."""

    def __init__(self, lr: float, factor: float, patience: int, min_lr: float):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best * (1.0 - PLATEAU_THRESHOLD):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "factor": self.factor,
            "patience": self.patience,
            "min_lr": self.min_lr,
            "best": None if math.isinf(self.best) else self.best,
            "bad_epochs": self.bad_epochs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlateauScheduler":
        sched = cls(data["lr"], data["factor"], data["patience"], data["min_lr"])
        sched.best = math.inf if data["best"] is None else data["best"]
        sched.bad_epochs = data["bad_epochs"]
        return sched


def make_optimizer(model: RelightingModel, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _optimizer_tensors(model: RelightingModel, optimizer: torch.optim.Adam):
    tensors: dict[str, np.ndarray] = {}
    steps: dict[str, float] = {}
    for name, param in model.named_parameters():
        state = optimizer.state.get(param)
        if not state:
            continue
        tensors[f"opt.{name}.exp_avg"] = state["exp_avg"].detach().numpy()
        tensors[f"opt.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().numpy()
        steps[name] = float(state["step"])
    return tensors, steps


def _restore_optimizer(
    model: RelightingModel,
    optimizer: torch.optim.Adam,
    tensors: dict[str, np.ndarray],
    steps: dict[str, float],
) -> None:
    for name, param in model.named_parameters():
        if name not in steps:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(steps[name]),
            "exp_avg": torch.from_numpy(tensors[f"opt.{name}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(tensors[f"opt.{name}.exp_avg_sq"].copy()),
        }


def save_model(
    path,
    model: RelightingModel,
    optimizer: torch.optim.Adam | None = None,
    extra: dict | None = None,
) -> Path:
    tensors = {
        name: param.detach().numpy() for name, param in model.state_dict().items()
    }
    extra = dict(extra or {})
    if optimizer is not None:
        opt_tensors, steps = _optimizer_tensors(model, optimizer)
        tensors.update(opt_tensors)
        extra["optimizer_steps"] = steps
    return save_checkpoint(
        path,
        kind=MODEL_KIND,
        config=model.config.to_dict(),
        train_steps=model.train_steps,
        tensors=tensors,
        extra=extra,
    )


def load_model(path) -> tuple[RelightingModel, CheckpointData]:
    data = load_checkpoint(path)
    if data.kind != MODEL_KIND:
        raise CheckpointError(f"{path} holds a '{data.kind}' checkpoint, not a model")
    config = ModelConfig.from_dict(data.config)
    model = RelightingModel(config)
    state = {
        name: torch.from_numpy(data.tensors[name].copy())
        for name in model.state_dict()
        if name in data.tensors
    }
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"{path} is missing tensors: {sorted(missing)[:4]}")
    model.load_state_dict(state)
    model.train_steps = data.train_steps
    model.eval()
    return model, data


@dataclass
class FitResult:
    model: RelightingModel
    out_dir: Path
    metrics_path: Path
    last_path: Path
    best_path: Path
    history: list[dict] = field(default_factory=list)


def _validation_pairs(cache: DatasetCache, val_scenes: Sequence[str], seed: int):
    """Fixed (scene, source, target) triples, derived deterministically."""
    rng = np.random.default_rng([seed, 0x7A1])
    ills = cache.illumination_ids
    pairs = []
    for scene in sorted(val_scenes):
        for target in ills:
            source = ills[int(rng.integers(len(ills)))]
            pairs.append((scene, source, target))
    return pairs


def validation_loss(
    model: RelightingModel,
    cache: DatasetCache,
    pairs: Sequence[tuple[str, int, int]],
    extractor_spec: FeatureExtractorSpec,
) -> float:
    model.eval()
    extractor = build_extractor(extractor_spec)
    totals = []
    with torch.no_grad():
        for scene, source, target in pairs:
            image = _stack([cache.images[(scene, source)]])
            guide = _stack([cache.probes[target]])
            target_image = _stack([cache.images[(scene, target)]])
            target_probe = _stack([cache.probes[source]])
            probe_hat, out_image = model.relight_t(image, guide)
            terms = total_loss_t(target_probe, probe_hat, target_image, out_image, extractor)
            totals.append(float(terms["total"].item()))
    return float(np.mean(totals)) if totals else math.nan


def _append_metrics(path: Path, record: dict) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _truncate_metrics(path: Path, keep_below_epoch: int) -> None:
    if not path.exists():
        return
    kept = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if json.loads(line).get("epoch", -1) < keep_below_epoch:
            kept.append(line)
    path.write_text("".join(l + "\n" for l in kept), encoding="utf-8")


def fit(
    manifest: DatasetManifest,
    probe_set: ProbeSet,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir,
    extractor_spec: FeatureExtractorSpec | None = None,
    resume: bool = False,
    log_every: int = 0,
    progress: Callable[[dict], None] | None = None,
) -> FitResult:
    model_config.validate()
    train_config.validate()
    if extractor_spec is None:
        extractor_spec = FeatureExtractorSpec()
    extractor_spec.validate()
    if probe_set.size != model_config.probe_size:
        raise ValueError(
            f"probe set size {probe_set.size} does not match model probe size "
            f"{model_config.probe_size}"
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / METRICS_FILE
    last_path = out_dir / LAST_CHECKPOINT
    best_path = out_dir / BEST_CHECKPOINT

    cache = DatasetCache(manifest, probe_set, train_config.image_size)
    train_scenes, val_scenes = split_scenes(
        cache.scene_ids, train_config.validation_fraction, train_config.seed
    )
    val_pairs = _validation_pairs(cache, val_scenes, train_config.seed)

    start_epoch = 0
    best_val = math.inf
    if resume and last_path.exists():
        model, data = load_model(last_path)
        if model.config != model_config:
            raise CheckpointError("resume checkpoint was trained with a different model config")
        optimizer = make_optimizer(model, train_config.lr)
        _restore_optimizer(
            model, optimizer, data.tensors, data.extra.get("optimizer_steps", {})
        )
        scheduler = PlateauScheduler.from_dict(data.extra["scheduler"])
        _set_lr(optimizer, scheduler.lr)
        start_epoch = int(data.extra["epoch"]) + 1
        best_val = data.extra.get("best_val")
        best_val = math.inf if best_val is None else float(best_val)
        _truncate_metrics(metrics_path, start_epoch)
    else:
        model = init_model(model_config, seed=train_config.seed)
        optimizer = make_optimizer(model, train_config.lr)
        scheduler = PlateauScheduler(
            train_config.lr,
            train_config.plateau_factor,
            train_config.plateau_patience,
            train_config.min_lr,
        )
        metrics_path.write_text("", encoding="utf-8")

    history: list[dict] = []
    steps_per_epoch = max(1, train_config.samples_per_epoch // train_config.batch_size)

    for epoch in range(start_epoch, train_config.epochs):
        rng = np.random.default_rng([train_config.seed, epoch])
        for step in range(steps_per_epoch):
            samples = sample_batch(cache, rng, train_scenes, train_config.batch_size)
            breakdown = train_step(model, optimizer, samples, extractor_spec)
            if log_every and (step % log_every == 0):
                _append_metrics(
                    metrics_path,
                    {
                        "epoch": epoch,
                        "step": model.train_steps,
                        "probe": breakdown.probe,
                        "image_l1": breakdown.image_l1,
                        "perceptual": breakdown.perceptual,
                        "total": breakdown.total,
                        "lr": scheduler.lr,
                    },
                )

        val_total = validation_loss(model, cache, val_pairs, extractor_spec)
        lr_after = scheduler.step(val_total) if val_pairs else scheduler.lr
        _set_lr(optimizer, lr_after)

        record = {
            "epoch": epoch,
            "step": model.train_steps,
            "probe": breakdown.probe,
            "image_l1": breakdown.image_l1,
            "perceptual": breakdown.perceptual,
            "total": breakdown.total,
            "lr": lr_after,
            "val_total": None if math.isnan(val_total) else val_total,
        }
        _append_metrics(metrics_path, record)
        history.append(record)
        if progress is not None:
            progress(record)

        extra = {
            "epoch": epoch,
            "scheduler": scheduler.to_dict(),
            "best_val": None if math.isinf(best_val) else best_val,
            "train_config": train_config.to_dict(),
            "extractor": extractor_spec.to_dict(),
        }
        if not math.isnan(val_total) and val_total < best_val:
            best_val = val_total
            extra["best_val"] = best_val
            save_model(best_path, model, extra={"epoch": epoch, "val_total": val_total})
        save_model(last_path, model, optimizer=optimizer, extra=extra)

    return FitResult(
        model=model,
        out_dir=out_dir,
        metrics_path=metrics_path,
        last_path=last_path,
        best_path=best_path,
        history=history,
    )


def psnr(image: np.ndarray, reference: np.ndarray) -> float:
    """Peak signal-to-noise ratio for [0, 1] images, peak fixed at 1.0."""
    if image.shape != reference.shape:
        raise ValueError("psnr needs same-shape images")
    mse = float(np.mean((np.asarray(image, float) - np.asarray(reference, float)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def evaluate_holdout(
    model: RelightingModel,
    cache: DatasetCache,
    scene_ids: Sequence[str],
) -> dict:
    """Mean relit-image PSNR and predicted-probe L1 over all ordered
    (source, target) illumination pairs of the given scenes."""
    psnrs = []
    probe_l1s = []
    for scene in scene_ids:
        for source in cache.illumination_ids:
            encoded = model.encode(cache.images[(scene, source)])
            probe_hat = model.decode_probe(encoded.code)
            probe_l1s.append(
                float(np.mean(np.abs(probe_hat.pixels - cache.probes[source])))
            )
            for target in cache.illumination_ids:
                _, out = model.relight(
                    cache.images[(scene, source)], cache.probes[target]
                )
                psnrs.append(psnr(out, cache.images[(scene, target)]))
    return {
        "mean_psnr": float(np.mean(psnrs)),
        "mean_probe_l1": float(np.mean(probe_l1s)),
        "n_pairs": len(psnrs),
    }
