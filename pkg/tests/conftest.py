import numpy as np
import pytest
import torch

from relight_aug.losses import FeatureExtractorSpec
from relight_aug.manifest import DatasetManifest
from relight_aug.model import ModelConfig
from relight_aug.probes import ProbeSet
from relight_aug.synth import build_toy_dataset, default_toy_specs
from relight_aug.training import TrainConfig

# single-threaded torch keeps reductions deterministic, which the
# bit-reproducibility tests rely on
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory) -> tuple[DatasetManifest, ProbeSet]:
    """3 scenes x 4 illuminations at 64x64 with 32x32 probes."""
    root = tmp_path_factory.mktemp("toy")
    specs = default_toy_specs(n_lights=4, probe_size=32)
    manifest = build_toy_dataset(3, specs, root, seed=11, size=64)
    return manifest, ProbeSet.load_dir(root / "probes")


@pytest.fixture()
def mini_model_config() -> ModelConfig:
    return ModelConfig(
        input_size=64,
        base_channels=8,
        stages=3,
        bottleneck_channels=32,
        lighting_channels=16,
        res_blocks=1,
        probe_size=32,
    )


@pytest.fixture()
def mini_train_config() -> TrainConfig:
    return TrainConfig(
        epochs=1,
        samples_per_epoch=6,
        batch_size=2,
        image_size=64,
        validation_fraction=0.34,
        seed=3,
    )


@pytest.fixture()
def fast_extractor() -> FeatureExtractorSpec:
    return FeatureExtractorSpec(kind="frozen-random", layer_count=2, seed=0)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
