"""Training loop: sampling, scheduler, persistence, and reproducibility."""

import json
import math

import numpy as np
import pytest
import torch
from scipy.stats import chi2

from relight_aug import (
    BEST_CHECKPOINT,
    CheckpointError,
    DatasetCache,
    LAST_CHECKPOINT,
    METRICS_FILE,
    PlateauScheduler,
    ProbeSet,
    ProbeSpec,
    TrainConfig,
    build_toy_dataset,
    evaluate_holdout,
    fit,
    init_model,
    load_model,
    make_optimizer,
    psnr,
    sample_batch,
    save_checkpoint,
    save_model,
    split_scenes,
    train_step,
)
from relight_aug.training import _validation_pairs

METRIC_KEYS = {"epoch", "step", "probe", "image_l1", "perceptual", "total", "lr", "val_total"}


@pytest.fixture(scope="module")
def toy_cache(toy_dataset):
    manifest, probes = toy_dataset
    return DatasetCache(manifest, probes, 64)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs,match",
        [
            (dict(epochs=-1), "epochs"),
            (dict(samples_per_epoch=0), "samples_per_epoch"),
            (dict(batch_size=0), "batch_size"),
            (dict(lr=0.0), "lr"),
            (dict(plateau_factor=1.0), "plateau_factor"),
            (dict(plateau_patience=0), "patience"),
            (dict(image_size=100), "image_size"),
            (dict(validation_fraction=1.0), "validation_fraction"),
        ],
    )
    def test_invalid(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            TrainConfig(**kwargs).validate()

    def test_roundtrip(self):
        cfg = TrainConfig(epochs=2, samples_per_epoch=10, batch_size=2, seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestSplitScenes:
    def test_disjoint_and_complete(self):
        ids = [f"s{k}" for k in range(10)]
        train, val = split_scenes(ids, 0.3, seed=1)
        assert not set(train) & set(val)
        assert sorted(train + val) == sorted(ids)
        assert len(val) == 3

    def test_deterministic(self):
        ids = [f"s{k}" for k in range(8)]
        assert split_scenes(ids, 0.25, seed=4) == split_scenes(ids, 0.25, seed=4)

    def test_single_scene_keeps_training(self):
        train, val = split_scenes(["only"], 0.5, seed=0)
        assert train == ["only"]
        assert val == []

    def test_zero_fraction(self):
        train, val = split_scenes(["a", "b"], 0.0, seed=0)
        assert val == []
        assert train == ["a", "b"]

    def test_val_never_swallows_all(self):
        train, val = split_scenes(["a", "b"], 0.99, seed=0)
        assert len(train) >= 1 and len(val) == 1

    def test_empty_error(self):
        with pytest.raises(ValueError, match="scenes"):
            split_scenes([], 0.5, seed=0)


class TestSampleBatch:
    def test_support(self, tmp_path):
        specs = [
            ProbeSpec(azimuth_deg=-90.0, elevation_deg=20.0, size=16),
            ProbeSpec(azimuth_deg=90.0, elevation_deg=20.0, size=16),
        ]
        manifest = build_toy_dataset(1, specs, tmp_path, seed=0, size=16)
        cache = DatasetCache(manifest, ProbeSet.load_dir(tmp_path / "probes"), 16)
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(64):
            (s,) = sample_batch(cache, rng, cache.scene_ids, 1)
            assert s.scene_id == "scene_000"
            seen.add((s.source_id, s.target_id))
        assert seen == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_deterministic_sequence(self, toy_cache):
        a = [
            (s.scene_id, s.source_id, s.target_id)
            for s in sample_batch(toy_cache, np.random.default_rng(7), toy_cache.scene_ids, 32)
        ]
        b = [
            (s.scene_id, s.source_id, s.target_id)
            for s in sample_batch(toy_cache, np.random.default_rng(7), toy_cache.scene_ids, 32)
        ]
        assert a == b

    def test_uniformity_chi_squared(self, tmp_path):
        # 10,000 draws over 4 scenes x 4 target ids: accept at p > 0.01
        specs = [
            ProbeSpec(azimuth_deg=az, elevation_deg=25.0, size=16)
            for az in (-135.0, -45.0, 45.0, 135.0)
        ]
        manifest = build_toy_dataset(4, specs, tmp_path, seed=2, size=16)
        cache = DatasetCache(manifest, ProbeSet.load_dir(tmp_path / "probes"), 16)
        rng = np.random.default_rng(123)
        counts = np.zeros((4, 4))
        scene_index = {s: k for k, s in enumerate(cache.scene_ids)}
        for sample in sample_batch(cache, rng, cache.scene_ids, 10000):
            counts[scene_index[sample.scene_id], sample.target_id] += 1
        expected = 10000 / 16
        stat = float(((counts - expected) ** 2 / expected).sum())
        assert stat < chi2.ppf(0.99, df=15)

    def test_guide_is_target_probe_and_label_is_source_probe(self, toy_cache):
        rng = np.random.default_rng(5)
        for s in sample_batch(toy_cache, rng, toy_cache.scene_ids, 16):
            assert np.array_equal(s.guide_probe, toy_cache.probes[s.target_id])
            assert np.array_equal(s.target_probe, toy_cache.probes[s.source_id])
            assert np.array_equal(s.input_image, toy_cache.images[(s.scene_id, s.source_id)])
            assert np.array_equal(s.target_image, toy_cache.images[(s.scene_id, s.target_id)])


class TestDatasetCache:
    def test_requires_two_illuminations(self, tmp_path):
        manifest = build_toy_dataset(
            1, [ProbeSpec(azimuth_deg=0.0, elevation_deg=30.0, size=16)], tmp_path, size=16
        )
        with pytest.raises(ValueError, match="two illuminations"):
            DatasetCache(manifest, ProbeSet.load_dir(tmp_path / "probes"), 16)

    def test_resizes_to_requested_size(self, toy_dataset):
        manifest, probes = toy_dataset
        cache = DatasetCache(manifest, probes, 32)
        assert all(img.shape == (32, 32, 3) for img in cache.images.values())


class TestTrainStep:
    def test_overfits_single_sample(self, toy_cache, mini_model_config, fast_extractor):
        model = init_model(mini_model_config, seed=1)
        optimizer = make_optimizer(model, lr=1e-3)
        rng = np.random.default_rng(2)
        samples = sample_batch(toy_cache, rng, toy_cache.scene_ids, 1)
        first = train_step(model, optimizer, samples, fast_extractor)
        last = None
        for _ in range(49):
            last = train_step(model, optimizer, samples, fast_extractor)
        assert last.total <= 0.5 * first.total

    def test_zero_lr_keeps_parameters(self, toy_cache, mini_model_config, fast_extractor):
        model = init_model(mini_model_config, seed=1)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        optimizer = make_optimizer(model, lr=0.0)
        rng = np.random.default_rng(3)
        train_step(model, optimizer, sample_batch(toy_cache, rng, toy_cache.scene_ids, 1),
                   fast_extractor)
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, before[name]), name

    def test_increments_step_counter(self, toy_cache, mini_model_config, fast_extractor):
        model = init_model(mini_model_config, seed=1)
        optimizer = make_optimizer(model, lr=1e-4)
        rng = np.random.default_rng(4)
        train_step(model, optimizer, sample_batch(toy_cache, rng, toy_cache.scene_ids, 2),
                   fast_extractor)
        assert model.train_steps == 1

    def test_non_finite_loss_names_term(self, toy_cache, mini_model_config, fast_extractor):
        model = init_model(mini_model_config, seed=1)
        with torch.no_grad():
            model.head.weight[0, 0, 0, 0] = float("nan")
        optimizer = make_optimizer(model, lr=1e-4)
        rng = np.random.default_rng(5)
        with pytest.raises(RuntimeError, match="non-finite"):
            train_step(model, optimizer, sample_batch(toy_cache, rng, toy_cache.scene_ids, 1),
                       fast_extractor)


class TestPlateauScheduler:
    def test_improving_keeps_lr(self):
        sched = PlateauScheduler(lr=2e-4, factor=0.1, patience=5, min_lr=1e-6)
        for loss in (1.0, 0.9, 0.8, 0.7, 0.6, 0.5):
            assert sched.step(loss) == 2e-4

    def test_six_equal_losses_drop_once(self):
        # patience 5: five stagnant epochs after the first trigger one decay
        sched = PlateauScheduler(lr=2e-4, factor=0.1, patience=5, min_lr=1e-6)
        lrs = [sched.step(0.5) for _ in range(6)]
        assert lrs[-1] == pytest.approx(2e-5)
        assert all(lr == 2e-4 for lr in lrs[:-1])

    def test_sub_threshold_improvement_counts_as_stagnation(self):
        sched = PlateauScheduler(lr=1e-3, factor=0.1, patience=1, min_lr=1e-6)
        sched.step(1.0)
        assert sched.step(1.0 - 5e-5) == pytest.approx(1e-4)

    def test_clamps_at_min_lr(self):
        sched = PlateauScheduler(lr=1e-3, factor=0.1, patience=1, min_lr=1e-5)
        sched.step(1.0)
        for _ in range(10):
            lr = sched.step(1.0)
        assert lr == 1e-5

    def test_roundtrip(self):
        sched = PlateauScheduler(lr=2e-4, factor=0.1, patience=5, min_lr=1e-6)
        sched.step(0.8)
        sched.step(0.8)
        restored = PlateauScheduler.from_dict(sched.to_dict())
        assert restored.to_dict() == sched.to_dict()
        assert restored.step(0.8) == sched.step(0.8)


@pytest.fixture(scope="module")
def fitted(toy_dataset, tmp_path_factory):
    manifest, probes = toy_dataset
    from relight_aug import FeatureExtractorSpec, ModelConfig

    out = tmp_path_factory.mktemp("fit")
    model_config = ModelConfig(
        input_size=64, base_channels=8, stages=3, bottleneck_channels=32,
        lighting_channels=16, res_blocks=1, probe_size=32,
    )
    train_config = TrainConfig(
        epochs=2, samples_per_epoch=6, batch_size=2, image_size=64,
        validation_fraction=0.34, seed=3,
    )
    extractor = FeatureExtractorSpec(kind="frozen-random", layer_count=2, seed=0)
    result = fit(manifest, probes, model_config, train_config, out,
                 extractor_spec=extractor)
    return result, model_config, train_config, extractor


class TestFit:

    def test_metrics_schema(self, fitted):
        result = fitted[0]
        lines = result.metrics_path.read_text().splitlines()
        assert len(lines) == 2
        for line in lines:
            record = json.loads(line)
            assert set(record) == METRIC_KEYS
            for key in METRIC_KEYS - {"val_total"}:
                assert math.isfinite(record[key]), key
            assert math.isfinite(record["val_total"])

    def test_checkpoints_written(self, fitted):
        result = fitted[0]
        assert (result.out_dir / LAST_CHECKPOINT).exists()
        assert (result.out_dir / BEST_CHECKPOINT).exists()
        assert (result.out_dir / METRICS_FILE) == result.metrics_path

    def test_best_checkpoint_records_min_val(self, fitted):
        result = fitted[0]
        _, data = load_model(result.best_path)
        logged = [json.loads(l)["val_total"] for l in result.metrics_path.read_text().splitlines()]
        assert data.extra["val_total"] == min(logged)

    def test_last_checkpoint_matches_final_model(self, fitted):
        result = fitted[0]
        loaded, _ = load_model(result.last_path)
        for name, tensor in result.model.state_dict().items():
            assert torch.equal(loaded.state_dict()[name], tensor), name

    def test_epochs_zero_returns_initial_state(self, toy_dataset, tmp_path,
                                               mini_model_config, fast_extractor):
        manifest, probes = toy_dataset
        config = TrainConfig(epochs=0, samples_per_epoch=4, batch_size=1,
                             image_size=64, validation_fraction=0.34, seed=3)
        result = fit(manifest, probes, mini_model_config, config, tmp_path,
                     extractor_spec=fast_extractor)
        reference = init_model(mini_model_config, seed=3)
        for name, tensor in result.model.state_dict().items():
            assert torch.equal(tensor, reference.state_dict()[name]), name
        assert result.metrics_path.read_text() == ""

    def test_probe_size_mismatch_rejected(self, toy_dataset, tmp_path, fast_extractor):
        manifest, probes = toy_dataset
        from relight_aug import ModelConfig

        bad = ModelConfig(input_size=64, base_channels=8, stages=3,
                          bottleneck_channels=32, lighting_channels=16,
                          res_blocks=1, probe_size=64)
        with pytest.raises(ValueError, match="probe"):
            fit(manifest, probes, bad, TrainConfig(epochs=1, samples_per_epoch=2,
                batch_size=1, image_size=64, seed=0), tmp_path,
                extractor_spec=fast_extractor)


class TestResume:
    def test_resume_matches_uninterrupted(self, toy_dataset, tmp_path,
                                          mini_model_config, fast_extractor):
        manifest, probes = toy_dataset

        def config(epochs):
            return TrainConfig(epochs=epochs, samples_per_epoch=6, batch_size=2,
                               image_size=64, validation_fraction=0.34, seed=3)

        straight = fit(manifest, probes, mini_model_config, config(2),
                       tmp_path / "straight", extractor_spec=fast_extractor)

        fit(manifest, probes, mini_model_config, config(1),
            tmp_path / "resumed", extractor_spec=fast_extractor)
        resumed = fit(manifest, probes, mini_model_config, config(2),
                      tmp_path / "resumed", extractor_spec=fast_extractor, resume=True)

        for name, tensor in straight.model.state_dict().items():
            assert torch.equal(tensor, resumed.model.state_dict()[name]), name
        assert straight.metrics_path.read_text() == resumed.metrics_path.read_text()

    def test_resume_rejects_config_change(self, toy_dataset, tmp_path,
                                          mini_model_config, fast_extractor):
        manifest, probes = toy_dataset
        config = TrainConfig(epochs=1, samples_per_epoch=4, batch_size=2,
                             image_size=64, validation_fraction=0.34, seed=3)
        fit(manifest, probes, mini_model_config, config, tmp_path,
            extractor_spec=fast_extractor)
        from dataclasses import replace

        changed = replace(mini_model_config, res_blocks=2)
        with pytest.raises(CheckpointError, match="config"):
            fit(manifest, probes, changed,
                TrainConfig(epochs=2, samples_per_epoch=4, batch_size=2,
                            image_size=64, validation_fraction=0.34, seed=3),
                tmp_path, extractor_spec=fast_extractor, resume=True)


class TestModelPersistence:
    def test_roundtrip_with_optimizer(self, toy_cache, mini_model_config,
                                      fast_extractor, tmp_path):
        model = init_model(mini_model_config, seed=1)
        optimizer = make_optimizer(model, lr=1e-4)
        rng = np.random.default_rng(6)
        for _ in range(3):
            train_step(model, optimizer, sample_batch(toy_cache, rng,
                       toy_cache.scene_ids, 1), fast_extractor)
        path = save_model(tmp_path / "m.ckpt", model, optimizer=optimizer)
        loaded, data = load_model(path)
        assert loaded.train_steps == 3
        for name, tensor in model.state_dict().items():
            assert torch.equal(loaded.state_dict()[name], tensor), name
        assert data.extra["optimizer_steps"]
        for name in model.state_dict():
            if f"opt.{name}.exp_avg" in data.tensors:
                assert np.isfinite(data.tensors[f"opt.{name}.exp_avg"]).all()

    def test_load_rejects_wrong_kind(self, tmp_path):
        save_checkpoint(tmp_path / "w.ckpt", "probe-vae", {}, 0,
                        {"t": np.zeros(1, np.float32)})
        with pytest.raises(CheckpointError, match="not a model"):
            load_model(tmp_path / "w.ckpt")

    def test_load_rejects_missing_tensors(self, mini_model_config, tmp_path):
        from relight_aug import load_checkpoint

        model = init_model(mini_model_config, seed=0)
        path = save_model(tmp_path / "full.ckpt", model)
        data = load_checkpoint(path)
        name = sorted(data.tensors)[0]
        del data.tensors[name]
        save_checkpoint(tmp_path / "partial.ckpt", data.kind, data.config,
                        data.train_steps, data.tensors, data.extra)
        with pytest.raises(CheckpointError, match="missing"):
            load_model(tmp_path / "partial.ckpt")


class TestEvaluation:
    def test_psnr_closed_forms(self):
        a = np.zeros((8, 8, 3))
        assert psnr(a, a) == math.inf
        b = np.full((8, 8, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_psnr_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            psnr(np.zeros((4, 4, 3)), np.zeros((8, 8, 3)))

    def test_evaluate_holdout_counts(self, toy_cache, mini_model_config):
        model = init_model(mini_model_config, seed=0)
        report = evaluate_holdout(model, toy_cache, toy_cache.scene_ids[:2])
        n_ills = len(toy_cache.illumination_ids)
        assert report["n_pairs"] == 2 * n_ills * n_ills
        assert math.isfinite(report["mean_psnr"])
        assert math.isfinite(report["mean_probe_l1"])

    def test_validation_pairs_deterministic(self, toy_cache):
        a = _validation_pairs(toy_cache, ["scene_000"], seed=5)
        b = _validation_pairs(toy_cache, ["scene_000"], seed=5)
        assert a == b
        assert len(a) == len(toy_cache.illumination_ids)
