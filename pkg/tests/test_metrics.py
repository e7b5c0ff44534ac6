"""Threshold rule, norm triples, loss decomposition, and the gap bound."""

import numpy as np
import pytest

from lipquant.linalg import DenseMatrix, NormOrder, apply
from lipquant.metrics import (
    LayerNorms,
    decompose_loss,
    layer_norms,
    norm_summary,
    setting_gap_lower_bound,
    thresholds_for,
)
from lipquant.quantizers import quantize_linear, quantize_log


class TestThresholds:
    def test_below_three(self):
        t = thresholds_for(2.0)
        assert t.threshold_q == pytest.approx(2.2)
        assert t.threshold_delta == 0.3

    def test_boundary_is_greater_equal(self):
        t = thresholds_for(3.0)
        assert t.threshold_q == pytest.approx(3.3)
        assert t.threshold_delta == 1.5

    def test_zero_operator(self):
        t = thresholds_for(0.0)
        assert t.threshold_q == 0.0
        assert t.threshold_delta == 0.3

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            thresholds_for(float("nan"))
        with pytest.raises(ValueError):
            thresholds_for(float("inf"))
        with pytest.raises(ValueError):
            thresholds_for(-1.0)


class TestLayerNorms:
    def test_exact_quantization(self):
        rng = np.random.default_rng(301)
        w = rng.standard_normal((6, 6)).astype(np.float32)
        n = layer_norms(DenseMatrix(w), DenseMatrix(w.copy()), NormOrder.TWO)
        assert n.L_dW == 0.0
        assert n.L_Wq == pytest.approx(n.L_W, rel=1e-9)

    def test_diagonal_example(self):
        w = np.diag([1.0, 2.0, 3.0]).astype(np.float32)
        wq = np.diag([1.0, 2.0, 0.0]).astype(np.float32)
        n = layer_norms(DenseMatrix(w), DenseMatrix(wq), NormOrder.TWO, tol=1e-10)
        assert n.L_W == pytest.approx(3.0, rel=1e-6)
        assert n.L_Wq == pytest.approx(2.0, rel=1e-6)
        assert n.L_dW == pytest.approx(3.0, rel=1e-6)

    def test_matches_svd_oracle_after_quantization(self):
        rng = np.random.default_rng(307)
        w = rng.standard_normal((20, 20)).astype(np.float32)
        wq = quantize_linear(w, bits=3).w_q
        n = layer_norms(
            DenseMatrix(w), DenseMatrix(wq), NormOrder.TWO, tol=1e-10, max_iter=20000
        )
        want = float(np.linalg.svd((w - wq).astype(np.float64), compute_uv=False)[0])
        assert n.L_dW == pytest.approx(want, rel=1e-5)

    def test_triangle_sanity_holds(self):
        rng = np.random.default_rng(311)
        for _ in range(20):
            w = rng.standard_normal((8, 8)).astype(np.float32)
            wq = quantize_log(w, bits=3).w_q
            for p in (NormOrder.TWO, NormOrder.INF):
                n = layer_norms(DenseMatrix(w), DenseMatrix(wq), p)
                assert n.L_Wq <= n.L_W + n.L_dW + 1e-5

    def test_kind_mismatch(self):
        with pytest.raises(ValueError):
            layer_norms(
                DenseMatrix(np.eye(3, dtype=np.float32)),
                DenseMatrix(np.eye(4, dtype=np.float32)),
                NormOrder.TWO,
            )


class TestDecomposeLoss:
    def test_zero_quantization_error(self):
        rng = np.random.default_rng(313)
        w = DenseMatrix(rng.standard_normal((5, 4)).astype(np.float32))
        zero = DenseMatrix(np.zeros((5, 4), dtype=np.float32))
        x = rng.standard_normal(4)
        dx = rng.standard_normal(4) * 0.1
        d = decompose_loss(w, zero, x, dx, NormOrder.TWO)
        assert d.quant_loss == 0.0
        assert d.mutual_loss == 0.0
        assert d.adv_loss == pytest.approx(np.linalg.norm(apply(w, dx)), rel=1e-9)

    def test_clean_input(self):
        rng = np.random.default_rng(317)
        w = DenseMatrix(rng.standard_normal((5, 4)).astype(np.float32))
        dw = DenseMatrix((rng.standard_normal((5, 4)) * 0.01).astype(np.float32))
        x = rng.standard_normal(4)
        d = decompose_loss(w, dw, x, np.zeros(4), NormOrder.TWO)
        assert d.adv_loss == 0.0
        assert d.mutual_loss == 0.0
        assert d.epsilon == 0.0

    def test_identity_behind_decomposition(self):
        # (W+dW)(x+dx) - Wx must equal the sum of the three loss vectors
        rng = np.random.default_rng(331)
        for _ in range(50):
            m, n = int(rng.integers(2, 10)), int(rng.integers(2, 10))
            w = rng.standard_normal((m, n))
            dw = rng.standard_normal((m, n)) * 0.1
            x = rng.standard_normal(n)
            dx = rng.standard_normal(n) * 0.05
            total = (w + dw) @ (x + dx) - w @ x
            parts = w @ dx + dw @ x + dw @ dx
            np.testing.assert_allclose(total, parts, atol=1e-5)

    def test_mutual_bound_holds_both_orders(self):
        rng = np.random.default_rng(337)
        for _ in range(100):
            m, n = int(rng.integers(2, 12)), int(rng.integers(2, 12))
            w = DenseMatrix(rng.standard_normal((m, n)).astype(np.float32))
            dw = DenseMatrix((rng.standard_normal((m, n)) * 0.3).astype(np.float32))
            x = rng.standard_normal(n)
            dx = rng.standard_normal(n) * 0.2
            for p in (NormOrder.TWO, NormOrder.INF):
                d = decompose_loss(w, dw, x, dx, p, tol=1e-10, max_iter=20000)
                assert d.mutual_loss <= d.mutual_bound * (1 + 1e-5)

    def test_shape_mismatch(self):
        w = DenseMatrix(np.eye(3, dtype=np.float32))
        with pytest.raises(ValueError):
            decompose_loss(w, w, np.zeros(3), np.zeros(4), NormOrder.TWO)


class TestGapLowerBound:
    def test_arithmetic(self):
        assert setting_gap_lower_bound(2.0, 0.5) == pytest.approx(1.5)

    def test_identical_settings(self):
        assert setting_gap_lower_bound(1.234, 1.234) == 0.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            setting_gap_lower_bound(-1.0, 0.0)

    def test_triangle_inequality_over_setting_pairs(self):
        # 200 random (weight, setting pair) draws; p=inf is exact, p=2 uses
        # a tight power-iteration tolerance
        rng = np.random.default_rng(347)
        for trial in range(200):
            w = rng.standard_normal((10, 10)).astype(np.float32)
            bits1, bits2 = rng.integers(2, 7, size=2)
            d1 = quantize_linear(w, int(bits1)).delta_w
            d2 = quantize_log(w, int(bits2)).delta_w
            p = NormOrder.TWO if trial % 2 == 0 else NormOrder.INF
            kw = {"tol": 1e-10, "max_iter": 20000} if p is NormOrder.TWO else {}
            from lipquant.linalg import operator_norm

            l1 = operator_norm(DenseMatrix(d1), p, **kw)
            l2 = operator_norm(DenseMatrix(d2), p, **kw)
            gap = operator_norm(DenseMatrix(d1 - d2), p, **kw)
            assert gap >= setting_gap_lower_bound(l1, l2) - 1e-6


class TestActivationMonotonicity:
    def test_relu_elementwise_direction(self):
        # sign(relu(u + d) - relu(u)) is 0 or sign(d), elementwise
        rng = np.random.default_rng(353)
        u = rng.standard_normal(2000)
        d = rng.standard_normal(2000) * 0.5
        out = np.sign(np.maximum(u + d, 0) - np.maximum(u, 0))
        assert np.all((out == 0) | (out == np.sign(d)))


class TestNormSummary:
    def _mk(self, idx, l_wq, l_dw):
        return LayerNorms(layer_index=idx, p=NormOrder.TWO, L_W=1.0, L_Wq=l_wq, L_dW=l_dw)

    def test_single_layer_zero_std(self):
        s = norm_summary([self._mk(0, 2.0, 0.5)], {0})
        assert s.l_wq_std == 0.0
        assert s.l_wq_mean == 2.0

    def test_two_layer_population_std(self):
        s = norm_summary([self._mk(0, 1.0, 1.0), self._mk(1, 3.0, 3.0)], {0, 1})
        assert s.l_wq_mean == pytest.approx(2.0)
        assert s.l_wq_std == pytest.approx(1.0)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(359)
        rows = [self._mk(i, float(rng.uniform(0, 5)), float(rng.uniform(0, 2))) for i in range(12)]
        picked = {1, 3, 4, 9, 11}
        s = norm_summary(rows, picked)
        vals = [r.L_dW for r in rows if r.layer_index in picked]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert s.l_dw_mean == pytest.approx(mean, rel=1e-12)
        assert s.l_dw_std == pytest.approx(var ** 0.5, rel=1e-12)

    def test_empty_selection(self):
        with pytest.raises(ValueError):
            norm_summary([self._mk(0, 1.0, 1.0)], {5})
