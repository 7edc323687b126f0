"""Focal loss, the combined cross-attention loss, and config validation."""

import dataclasses
import math

import numpy as np
import pytest

from scribbleguide import (
    GuidanceConfig,
    Scribble,
    ScribbleGeometry,
    ScribbleSet,
    cross_loss,
    focal_loss,
    grad_cross_loss,
    grad_focal_loss,
    moment_loss,
    rasterize,
)

from conftest import finite_difference, max_rel_error

# frozen single-cell values, computed from the per-cell formula by hand:
# p = sigma(A); (1-p)^beta * (alpha*M + (1-alpha)*(1-M)) * BCE
FOCAL_POS_A2 = 0.0004508907088100953     # A=2.0, M=1, alpha=.25, beta=2
FOCAL_NEG_A13 = 0.11162365958225251      # A=-1.3, M=0, alpha=.25, beta=2


def stroke_set(points, n=16, tokens=("tok",)):
    g = ScribbleGeometry(kind="polyline", points=tuple(points))
    return ScribbleSet(n, n, (Scribble(g, tokens, rasterize(g, n, n)),))


def oracle_focal(a, m, alpha=0.25, beta=2.0):
    """Direct (unstable) per-cell formula; fine for moderate logits."""
    a = np.asarray(a, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    p = 1.0 / (1.0 + np.exp(-a))
    bce = -(m * np.log(p) + (1 - m) * np.log(1 - p))
    w = alpha * m + (1 - alpha) * (1 - m)
    return float(np.mean((1 - p) ** beta * w * bce))


class TestFocalLoss:
    def test_frozen_single_cell_positive(self):
        v = focal_loss(np.array([[2.0]]), np.array([[1.0]]))
        assert v == pytest.approx(FOCAL_POS_A2, rel=1e-12)

    def test_frozen_single_cell_negative(self):
        v = focal_loss(np.array([[-1.3]]), np.array([[0.0]]))
        assert v == pytest.approx(FOCAL_NEG_A13, rel=1e-12)

    def test_matches_direct_formula_on_random_grids(self):
        rng = np.random.default_rng(5)
        a = rng.normal(0.0, 3.0, size=(9, 7))
        m = (rng.uniform(size=(9, 7)) < 0.3).astype(float)
        assert focal_loss(a, m) == pytest.approx(oracle_focal(a, m), rel=1e-10)

    def test_stable_at_extreme_logits(self):
        a = np.array([[800.0, -800.0]])
        m = np.array([[0.0, 1.0]])
        v = focal_loss(a, m)
        assert np.isfinite(v)
        # both cells are maximally wrong: heavy but finite penalty
        assert v > 10.0

    def test_perfect_confident_prediction_is_near_zero(self):
        a = np.array([[30.0, -30.0]])
        m = np.array([[1.0, 0.0]])
        assert focal_loss(a, m) < 1e-10

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            focal_loss(np.zeros((2, 2)), np.zeros((3, 3)))


class TestGradFocalLoss:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0.0, 2.0, size=(12, 12))
        m = (rng.uniform(size=(12, 12)) < 0.25).astype(float)
        analytic = grad_focal_loss(a, m)
        numeric = finite_difference(lambda g: focal_loss(g, m), a.copy())
        assert max_rel_error(analytic, numeric) <= 1e-6

    def test_gradient_sign_pushes_toward_mask(self):
        # start negatives confidently low: the focal modulator makes the
        # negative-cell loss non-monotone above p ~ 0.39, so probe at p << 0.39
        a = np.full((4, 4), -2.0)
        m = np.zeros((4, 4))
        m[1, 1] = 1.0
        g = grad_focal_loss(a, m)
        assert g[1, 1] < 0          # raise the logit inside the scribble
        assert g[0, 0] > 0          # push confident negatives further down

    def test_negative_cell_loss_peaks_then_decays(self):
        # the (1-p)^beta modulator beats BCE growth for p above 1 - e^(-1/2)
        losses = [
            focal_loss(np.array([[a]]), np.array([[0.0]]))
            for a in (-2.0, -0.43, 2.0)
        ]
        assert losses[1] > losses[0]
        assert losses[1] > losses[2]


class TestCrossLoss:
    def test_total_combines_terms_with_weights(self):
        cfg = GuidanceConfig()
        scribbles = stroke_set([(3.0, 4.0), (11.0, 4.0)])
        rng = np.random.default_rng(2)
        amap = rng.normal(size=(16, 16))
        terms = cross_loss({"tok": amap}, scribbles, cfg)
        m_total, _, _ = moment_loss({"tok": amap}, scribbles, cfg.lambda1, cfg.lambda2)
        assert terms.total == pytest.approx(
            cfg.w_focal * terms.focal + cfg.w_moment * terms.moment, rel=1e-12
        )
        assert terms.moment == pytest.approx(m_total, rel=1e-12)

    def test_token_map_missing_rejected(self):
        cfg = GuidanceConfig()
        scribbles = stroke_set([(3.0, 4.0), (11.0, 4.0)])
        with pytest.raises(ValueError):
            cross_loss({"other": np.zeros((16, 16))}, scribbles, cfg)

    def test_two_scribbles_average(self):
        cfg = GuidanceConfig(w_moment=0.0)
        g1 = ScribbleGeometry(kind="polyline", points=((1.0, 2.0), (6.0, 2.0)))
        g2 = ScribbleGeometry(kind="polyline", points=((9.0, 12.0), (14.0, 12.0)))
        ss = ScribbleSet(
            16, 16,
            (
                Scribble(g1, ("tok",), rasterize(g1, 16, 16)),
                Scribble(g2, ("tok",), rasterize(g2, 16, 16)),
            ),
        )
        rng = np.random.default_rng(8)
        amap = rng.normal(size=(16, 16))
        terms = cross_loss({"tok": amap}, ss, cfg)
        f1 = focal_loss(amap, ss.scribbles[0].mask, cfg.alpha, cfg.beta)
        f2 = focal_loss(amap, ss.scribbles[1].mask, cfg.alpha, cfg.beta)
        assert terms.focal == pytest.approx(0.5 * (f1 + f2), rel=1e-12)


class TestGradCrossLoss:
    def test_matches_finite_differences(self):
        cfg = GuidanceConfig()
        scribbles = stroke_set([(2.0, 3.0), (12.0, 10.0)])
        rng = np.random.default_rng(21)
        amap = rng.normal(0.0, 2.0, size=(16, 16))
        analytic = grad_cross_loss({"tok": amap}, scribbles, cfg)["tok"]
        numeric = finite_difference(
            lambda a: cross_loss({"tok": a}, scribbles, cfg).total, amap.copy()
        )
        assert max_rel_error(analytic, numeric) <= 1e-4

    def test_weight_scaling_is_linear(self):
        cfg = GuidanceConfig(w_moment=0.0)
        cfg2 = dataclasses.replace(cfg, w_focal=2 * cfg.w_focal)
        scribbles = stroke_set([(2.0, 3.0), (12.0, 10.0)])
        rng = np.random.default_rng(13)
        amap = rng.normal(size=(16, 16))
        g1 = grad_cross_loss({"tok": amap}, scribbles, cfg)["tok"]
        g2 = grad_cross_loss({"tok": amap}, scribbles, cfg2)["tok"]
        np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-12)


class TestGuidanceConfigValidation:
    def test_alpha_range(self):
        with pytest.raises(ValueError):
            GuidanceConfig(alpha=1.5)

    def test_tau_positive(self):
        with pytest.raises(ValueError):
            GuidanceConfig(tau=0.0)

    def test_window_order(self):
        with pytest.raises(ValueError):
            GuidanceConfig(k1=9, k2=3)

    def test_resolutions_must_divide_target(self):
        with pytest.raises(ValueError):
            GuidanceConfig(agg_resolutions=(7, 32))

    def test_agg_weights_length(self):
        with pytest.raises(ValueError):
            GuidanceConfig(agg_resolutions=(8, 16), agg_weights=(1.0,))

    def test_shift_clip_positive_or_none(self):
        with pytest.raises(ValueError):
            GuidanceConfig(shift_clip=0.0)
        GuidanceConfig(shift_clip=None)   # allowed: disables the cap

    def test_defaults_are_documented_values(self):
        cfg = GuidanceConfig()
        assert (cfg.alpha, cfg.beta) == (0.25, 2.0)
        assert (cfg.lambda1, cfg.lambda2) == (0.6, 0.6)
        assert (cfg.w_focal, cfg.w_moment) == (5.0, 3.0)
        assert (cfg.tau, cfg.top_k) == (0.001, 20)
        assert (cfg.k1, cfg.k2) == (5, 15)
        assert cfg.agg_resolutions == (8, 16, 32)
