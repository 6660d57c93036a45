"""Loss terms: probe L1, image L1 + perceptual distance, and their sum."""

import sys

import numpy as np
import pytest
import torch

from relight_aug import (
    ExtractorWeightsError,
    FeatureExtractorSpec,
    KIND_FROZEN_RANDOM,
    KIND_PRETRAINED,
    LossBreakdown,
    build_extractor,
    image_loss,
    image_loss_t,
    perceptual_features,
    probe_loss,
    total_loss,
    total_loss_t,
)

FROZEN = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=2, seed=3)


def l1_oracle(a, b):
    total = 0.0
    fa, fb = np.asarray(a).ravel(), np.asarray(b).ravel()
    for x, y in zip(fa, fb):
        total += abs(x - y)
    return total / fa.size


class TestProbeLoss:
    def test_identity_is_zero(self, rng):
        p = rng.uniform(0.0, 1.0, (16, 16, 3))
        assert probe_loss(p, p.copy()) == 0.0

    def test_constant_offset(self, rng):
        p = rng.uniform(0.0, 0.5, (16, 16, 3))
        assert probe_loss(p, p + 0.1) == pytest.approx(0.1, abs=1e-12)

    def test_matches_oracle(self, rng):
        a = rng.uniform(0.0, 1.0, (8, 8, 3))
        b = rng.uniform(0.0, 1.0, (8, 8, 3))
        assert abs(probe_loss(a, b) - l1_oracle(a, b)) <= 1e-12

    def test_symmetric(self, rng):
        a = rng.uniform(0.0, 1.0, (8, 8, 3))
        b = rng.uniform(0.0, 1.0, (8, 8, 3))
        assert probe_loss(a, b) == probe_loss(b, a)

    def test_triangle_inequality(self, rng):
        for _ in range(20):
            a, b, c = (rng.uniform(0.0, 1.0, (6, 6, 3)) for _ in range(3))
            assert probe_loss(a, c) <= probe_loss(a, b) + probe_loss(b, c) + 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            probe_loss(np.zeros((8, 8, 3)), np.zeros((16, 16, 3)))


class TestPerceptualFeatures:
    def test_zero_layers_empty(self):
        spec = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=0)
        assert perceptual_features(spec, np.zeros((16, 16, 3))) == []

    def test_layer_spatial_sides(self, rng):
        # layer j has spatial side input / 2^j
        spec = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=3, seed=0)
        feats = perceptual_features(spec, rng.uniform(0.0, 1.0, (32, 32, 3)))
        assert [f.shape[0] for f in feats] == [32, 16, 8]
        assert [f.shape[2] for f in feats] == [16, 32, 64]

    def test_deterministic_across_runs(self, rng):
        image = rng.uniform(0.0, 1.0, (16, 16, 3))
        spec_a = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=2, seed=7)
        spec_b = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=2, seed=7)
        for fa, fb in zip(perceptual_features(spec_a, image), perceptual_features(spec_b, image)):
            assert np.array_equal(fa, fb)

    def test_seed_changes_features(self, rng):
        image = rng.uniform(0.0, 1.0, (16, 16, 3))
        a = perceptual_features(FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=1, seed=0), image)
        b = perceptual_features(FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=1, seed=1), image)
        assert np.abs(a[0] - b[0]).max() > 0.0

    def test_missing_pretrained_weights_error(self, monkeypatch):
        # simulate an environment without the classifier backbone
        monkeypatch.setitem(sys.modules, "torchvision", None)
        monkeypatch.setitem(sys.modules, "torchvision.models", None)
        spec = FeatureExtractorSpec(kind=KIND_PRETRAINED, layer_count=2)
        with pytest.raises(ExtractorWeightsError, match="frozen-random"):
            perceptual_features(spec, np.zeros((16, 16, 3)))


class TestImageLoss:
    def test_identity_is_zero(self, rng):
        i = rng.uniform(0.0, 1.0, (16, 16, 3))
        l1, perceptual = image_loss(i, i.copy(), FROZEN)
        assert l1 == 0.0
        assert perceptual == 0.0

    def test_zero_layers_reduces_to_l1(self, rng):
        i = rng.uniform(0.0, 1.0, (16, 16, 3))
        j = rng.uniform(0.0, 1.0, (16, 16, 3))
        spec = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=0)
        l1, perceptual = image_loss(i, j, spec)
        assert perceptual == 0.0
        assert abs(l1 - l1_oracle(i, j)) <= 1e-12

    def test_layer_weights_scale_perceptual(self, rng):
        i = rng.uniform(0.0, 1.0, (16, 16, 3))
        j = rng.uniform(0.0, 1.0, (16, 16, 3))
        ones = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=2, seed=3)
        halved = FeatureExtractorSpec(
            kind=KIND_FROZEN_RANDOM, layer_count=2, seed=3, layer_weights=(0.5, 0.5)
        )
        _, p_ones = image_loss(i, j, ones)
        _, p_half = image_loss(i, j, halved)
        assert p_half == pytest.approx(0.5 * p_ones, rel=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        extractor = build_extractor(FROZEN, dtype=torch.float64)
        i = torch.from_numpy(rng.uniform(0.1, 0.9, (1, 3, 16, 16)))
        i_hat_np = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
        i_hat = torch.from_numpy(i_hat_np.copy()).requires_grad_(True)

        l1, perceptual = image_loss_t(i, i_hat, extractor)
        (l1 + perceptual).backward()
        grad = i_hat.grad.detach().numpy().ravel()

        def loss_at(flat):
            t = torch.from_numpy(flat.reshape(1, 3, 16, 16))
            with torch.no_grad():
                a, b = image_loss_t(i, t, extractor)
            return float(a + b)

        flat = i_hat_np.ravel()
        # avoid coordinates near the L1 kink
        eligible = np.where(np.abs(i.numpy().ravel() - flat) > 1e-3)[0]
        coords = rng.choice(eligible, size=30, replace=False)
        h = 1e-6
        for k in coords:
            plus = flat.copy()
            plus[k] += h
            minus = flat.copy()
            minus[k] -= h
            fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h)
            assert abs(fd - grad[k]) <= 1e-3 * max(abs(fd), abs(grad[k]), 1e-8), k

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            image_loss(np.zeros((8, 8, 3)), np.zeros((16, 16, 3)), FROZEN)


class TestTotalLoss:
    def test_identical_inputs_all_zero(self, rng):
        p = rng.uniform(0.0, 1.0, (8, 8, 3))
        i = rng.uniform(0.0, 1.0, (16, 16, 3))
        result = total_loss(p, p.copy(), i, i.copy(), FROZEN)
        assert result == LossBreakdown(0.0, 0.0, 0.0, 0.0)

    def test_total_is_exact_sum(self, rng):
        p = rng.uniform(0.0, 1.0, (8, 8, 3))
        q = rng.uniform(0.0, 1.0, (8, 8, 3))
        i = rng.uniform(0.0, 1.0, (16, 16, 3))
        j = rng.uniform(0.0, 1.0, (16, 16, 3))
        result = total_loss(p, q, i, j, FROZEN)
        assert result.total == result.probe + result.image_l1 + result.perceptual

    def test_matches_components_recomputed(self, rng):
        p = rng.uniform(0.0, 1.0, (8, 8, 3))
        q = rng.uniform(0.0, 1.0, (8, 8, 3))
        i = rng.uniform(0.0, 1.0, (16, 16, 3))
        j = rng.uniform(0.0, 1.0, (16, 16, 3))
        result = total_loss(p, q, i, j, FROZEN)
        assert result.probe == probe_loss(p, q)
        l1, perceptual = image_loss(i, j, FROZEN)
        assert result.image_l1 == l1
        assert result.perceptual == perceptual

    def test_total_bounds_components(self, rng):
        spec = FeatureExtractorSpec(kind=KIND_FROZEN_RANDOM, layer_count=1, seed=0)
        for _ in range(100):
            p = rng.uniform(0.0, 1.0, (8, 8, 3))
            q = rng.uniform(0.0, 1.0, (8, 8, 3))
            i = rng.uniform(0.0, 1.0, (8, 8, 3))
            j = rng.uniform(0.0, 1.0, (8, 8, 3))
            r = total_loss(p, q, i, j, spec)
            assert r.total >= max(r.probe, r.image_l1, r.perceptual)
            assert min(r.probe, r.image_l1, r.perceptual) >= 0.0

    def test_tensor_path_matches_numpy_path(self, rng):
        p = rng.uniform(0.0, 1.0, (8, 8, 3))
        q = rng.uniform(0.0, 1.0, (8, 8, 3))
        i = rng.uniform(0.0, 1.0, (16, 16, 3))
        j = rng.uniform(0.0, 1.0, (16, 16, 3))
        extractor = build_extractor(FROZEN, dtype=torch.float64)

        def chw(a):
            return torch.from_numpy(a.transpose(2, 0, 1)[None].copy())

        terms = total_loss_t(chw(p), chw(q), chw(i), chw(j), extractor)
        reference = total_loss(p, q, i, j, FROZEN)
        assert float(terms["probe"]) == pytest.approx(reference.probe, rel=1e-12)
        assert float(terms["image_l1"]) == pytest.approx(reference.image_l1, rel=1e-12)
        assert float(terms["perceptual"]) == pytest.approx(reference.perceptual, rel=1e-9)


class TestLossBreakdown:
    def test_from_parts(self):
        r = LossBreakdown.from_parts(probe=0.1, image_l1=0.2, perceptual=0.3)
        assert r.total == pytest.approx(0.6, abs=1e-12)
        assert r.to_dict() == {
            "probe": 0.1, "image_l1": 0.2, "perceptual": 0.3, "total": r.total,
        }


class TestFeatureExtractorSpec:
    @pytest.mark.parametrize(
        "kwargs,match",
        [
            (dict(kind="vgg"), "kind"),
            (dict(layer_count=-1), "layer_count"),
            (dict(kind=KIND_PRETRAINED, layer_count=6), "at most 5"),
            (dict(layer_count=2, layer_weights=(1.0,)), "length"),
            (dict(layer_count=1, layer_weights=(-1.0,)), "weights"),
            (dict(layer_count=1, layer_weights=(float("nan"),)), "weights"),
        ],
    )
    def test_invalid(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            FeatureExtractorSpec(**kwargs).validate()

    def test_default_weights_are_ones(self):
        spec = FeatureExtractorSpec(layer_count=3)
        assert spec.weights() == (1.0, 1.0, 1.0)

    def test_roundtrip(self):
        spec = FeatureExtractorSpec(
            kind=KIND_FROZEN_RANDOM, layer_count=2, layer_weights=(0.5, 2.0), seed=9
        )
        assert FeatureExtractorSpec.from_dict(spec.to_dict()) == spec
