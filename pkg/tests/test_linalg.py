"""Operator arithmetic and norm estimation against independent oracles.

Oracles here never share code with the implementation: dense apply is checked
against explicit per-row dot products, convolution against a naive quadruple
loop, and spectral norms against LAPACK SVD of the materialized matrix.
"""

import numpy as np
import pytest

from lipquant.linalg import (
    Conv2d,
    DenseMatrix,
    NormOrder,
    SpectralNormResult,
    apply,
    apply_adjoint,
    difference,
    frobenius_norm,
    infinity_norm,
    operator_norm,
    spectral_norm,
    vector_norm,
)


from oracles import materialize_conv as materialize, naive_conv, naive_matvec


def random_conv_op(rng, max_ch=2, max_hw=6, max_k=3):
    ic = int(rng.integers(1, max_ch + 1))
    oc = int(rng.integers(1, max_ch + 1))
    kh = int(rng.integers(1, max_k + 1))
    kw = int(rng.integers(1, max_k + 1))
    h = int(rng.integers(kh, max_hw + 1))
    w = int(rng.integers(kw, max_hw + 1))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    kernel = rng.standard_normal((oc, ic, kh, kw)).astype(np.float32)
    return Conv2d(kernel=kernel, input_shape=(ic, h, w), stride=stride, padding=padding)


class TestApply:
    def test_dense_identity(self):
        op = DenseMatrix(np.eye(3, dtype=np.float32))
        x = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        np.testing.assert_array_equal(apply(op, x), x)

    def test_conv_all_ones_sums_input(self):
        kernel = np.ones((1, 1, 2, 2), dtype=np.float32)
        op = Conv2d(kernel=kernel, input_shape=(1, 2, 2), stride=1, padding=0)
        out = apply(op, np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32))
        assert out.shape == (1, 1, 1)
        assert out.ravel()[0] == pytest.approx(10.0)

    def test_dense_matches_handrolled_dots(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((6, 4)).astype(np.float32)
        x = rng.standard_normal(4).astype(np.float32)
        got = apply(DenseMatrix(w), x)
        np.testing.assert_allclose(got, naive_matvec(w, x), rtol=1e-5)

    def test_conv_matches_naive_loops(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            op = random_conv_op(rng)
            x = rng.standard_normal(op.input_shape).astype(np.float32)
            got = apply(op, x)
            want = naive_conv(x, op.kernel, op.stride, op.padding)
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_shape_mismatch_reports_expected_and_actual(self):
        op = DenseMatrix(np.eye(3, dtype=np.float32))
        with pytest.raises(ValueError, match=r"\(3,\)"):
            apply(op, np.zeros(4, dtype=np.float32))


class TestApplyAdjoint:
    def test_dense_identity(self):
        op = DenseMatrix(np.eye(3, dtype=np.float32))
        y = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        np.testing.assert_array_equal(apply_adjoint(op, y), y)

    def test_first_row_extraction(self):
        op = DenseMatrix(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
        np.testing.assert_allclose(
            apply_adjoint(op, np.array([1.0, 0.0], dtype=np.float32)), [1.0, 2.0]
        )

    @pytest.mark.parametrize("kind", ["dense", "conv"])
    def test_inner_product_identity(self, kind):
        rng = np.random.default_rng(23)
        for _ in range(100):
            if kind == "dense":
                m, n = int(rng.integers(1, 9)), int(rng.integers(1, 9))
                op = DenseMatrix(rng.standard_normal((m, n)).astype(np.float32))
            else:
                op = random_conv_op(rng)
            x = rng.standard_normal(op.input_shape)
            y = rng.standard_normal(op.output_shape)
            ax_y = float(np.dot(apply(op, x).ravel(), y.ravel()))
            x_aty = float(np.dot(x.ravel(), apply_adjoint(op, y).ravel()))
            ax_norm = np.linalg.norm(apply(op, x).ravel())
            assert abs(ax_y - x_aty) <= 1e-5 * (ax_norm * np.linalg.norm(y.ravel()) + 1.0)


class TestSpectralNorm:
    def test_identity(self):
        res = spectral_norm(DenseMatrix(np.eye(3, dtype=np.float32)))
        assert res.converged
        assert res.sigma == pytest.approx(1.0, rel=1e-6)

    def test_diagonal(self):
        op = DenseMatrix(np.diag([1.0, 2.0, 3.0]).astype(np.float32))
        res = spectral_norm(op)
        assert res.sigma == pytest.approx(3.0, rel=1e-6)

    def test_matches_svd_oracle_on_random_dense(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            w = rng.standard_normal((50, 30)).astype(np.float32)
            res = spectral_norm(DenseMatrix(w), tol=1e-9, max_iter=20000, seed=5)
            want = float(np.linalg.svd(w.astype(np.float64), compute_uv=False)[0])
            assert res.sigma == pytest.approx(want, rel=1e-5)

    def test_witness_invariants(self):
        rng = np.random.default_rng(37)
        w = rng.standard_normal((12, 9)).astype(np.float32)
        res = spectral_norm(DenseMatrix(w), tol=1e-9, max_iter=5000)
        assert res.converged
        assert np.linalg.norm(res.witness) == pytest.approx(1.0, abs=1e-6)
        achieved = np.linalg.norm(apply(DenseMatrix(w), res.witness.astype(np.float64)))
        assert achieved >= res.sigma - 1e-9

    def test_zero_operator(self):
        res = spectral_norm(DenseMatrix(np.zeros((4, 4), dtype=np.float32)), seed=3)
        assert res.sigma == 0.0
        assert res.converged
        np.testing.assert_allclose(np.linalg.norm(res.witness), 1.0, atol=1e-6)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(41)
        w = rng.standard_normal((20, 20)).astype(np.float32)
        a = spectral_norm(DenseMatrix(w), seed=9)
        b = spectral_norm(DenseMatrix(w), seed=9)
        assert a.sigma == b.sigma
        assert a.iterations == b.iterations
        assert a.converged == b.converged
        assert a.witness.tobytes() == b.witness.tobytes()

    def test_conv_matches_unrolled_matrix(self):
        rng = np.random.default_rng(43)
        for _ in range(10):
            op = random_conv_op(rng)
            m = materialize(op.kernel, op.input_shape, op.stride, op.padding)
            want = float(np.linalg.svd(m, compute_uv=False)[0])
            res = spectral_norm(op, tol=1e-10, max_iter=20000, seed=1)
            assert res.sigma == pytest.approx(want, rel=1e-4)

    def test_rejects_bad_parameters(self):
        op = DenseMatrix(np.eye(2, dtype=np.float32))
        with pytest.raises(ValueError):
            spectral_norm(op, tol=0.0)
        with pytest.raises(ValueError):
            spectral_norm(op, max_iter=0)


class TestInfinityNorm:
    def test_row_sums(self):
        op = DenseMatrix(np.array([[1.0, -2.0], [3.0, 4.0]], dtype=np.float32))
        assert infinity_norm(op) == pytest.approx(7.0)

    def test_identity(self):
        assert infinity_norm(DenseMatrix(np.eye(5, dtype=np.float32))) == pytest.approx(1.0)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(47)
        w = rng.standard_normal((5, 5)).astype(np.float32)
        want = max(sum(abs(float(v)) for v in row) for row in w)
        assert infinity_norm(DenseMatrix(w)) == pytest.approx(want, rel=1e-6)

    def test_conv_interior_rows_equal_kernel_sums(self):
        # without padding every row of the unrolled matrix sums a full kernel
        rng = np.random.default_rng(53)
        kernel = rng.standard_normal((2, 1, 2, 2)).astype(np.float32)
        op = Conv2d(kernel=kernel, input_shape=(1, 4, 4), stride=1, padding=0)
        m = materialize(kernel, (1, 4, 4), 1, 0)
        assert infinity_norm(op) == pytest.approx(np.max(np.sum(np.abs(m), axis=1)), rel=1e-6)

    def test_conv_bound_dominates_padded_rows(self):
        rng = np.random.default_rng(59)
        kernel = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        op = Conv2d(kernel=kernel, input_shape=(2, 5, 5), stride=1, padding=1)
        m = materialize(kernel, (2, 5, 5), 1, 1)
        exact = np.max(np.sum(np.abs(m), axis=1))
        assert infinity_norm(op) >= exact - 1e-8


class TestFrobeniusNorm:
    def test_zeros(self):
        assert frobenius_norm(np.zeros((3, 3), dtype=np.float32)) == 0.0

    def test_three_four_five(self):
        assert frobenius_norm(np.array([[3.0, 4.0]], dtype=np.float32)) == pytest.approx(5.0)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(61)
        t = rng.standard_normal((4, 7)).astype(np.float32)
        want = float(np.sqrt(sum(float(v) ** 2 for v in t.ravel())))
        assert frobenius_norm(t) == pytest.approx(want, rel=1e-6)


class TestNormProperties:
    @pytest.mark.parametrize("p", [NormOrder.TWO, NormOrder.INF])
    @pytest.mark.parametrize("kind", ["dense", "conv"])
    def test_supremum_property(self, p, kind):
        # ||A z||_p <= (1 + 1e-4) * norm_p(A) over 1000 seeded unit vectors
        rng = np.random.default_rng(67)
        if kind == "dense":
            op = DenseMatrix(rng.standard_normal((9, 7)).astype(np.float32))
        else:
            op = Conv2d(
                kernel=rng.standard_normal((2, 2, 3, 3)).astype(np.float32),
                input_shape=(2, 6, 6),
                stride=1,
                padding=1,
            )
        bound = operator_norm(op, p, **({"tol": 1e-10, "max_iter": 20000} if p is NormOrder.TWO else {}))
        n = int(np.prod(op.input_shape))
        for _ in range(1000):
            z = rng.standard_normal(n)
            z /= vector_norm(z, p)
            assert vector_norm(apply(op, z.reshape(op.input_shape)), p) <= (1 + 1e-4) * bound

    def test_submultiplicativity(self):
        rng = np.random.default_rng(71)
        for p in (NormOrder.TWO, NormOrder.INF):
            for _ in range(30):
                a = rng.standard_normal((5, 6)).astype(np.float32)
                b = rng.standard_normal((6, 4)).astype(np.float32)
                x = rng.standard_normal(4)
                na = operator_norm(DenseMatrix(a), p, **({"tol": 1e-9} if p is NormOrder.TWO else {}))
                nb = operator_norm(DenseMatrix(b), p, **({"tol": 1e-9} if p is NormOrder.TWO else {}))
                lhs = vector_norm(a @ (b @ x), p)
                assert lhs <= na * nb * vector_norm(x, p) * (1 + 1e-6) + 1e-9


class TestOperatorConstruction:
    def test_rejects_nonfinite_weights(self):
        w = np.eye(3, dtype=np.float32)
        w[0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            DenseMatrix(w)

    def test_rejects_empty_conv_output(self):
        kernel = np.ones((1, 1, 5, 5), dtype=np.float32)
        with pytest.raises(ValueError, match="empty"):
            Conv2d(kernel=kernel, input_shape=(1, 3, 3), stride=1, padding=0)

    def test_difference_operator(self):
        rng = np.random.default_rng(73)
        a = DenseMatrix(rng.standard_normal((4, 4)).astype(np.float32))
        b = DenseMatrix(rng.standard_normal((4, 4)).astype(np.float32))
        d = difference(a, b)
        np.testing.assert_array_equal(d.weights, a.weights - b.weights)
        with pytest.raises(ValueError):
            difference(a, DenseMatrix(np.eye(3, dtype=np.float32)))

    def test_result_type(self):
        res = spectral_norm(DenseMatrix(np.eye(2, dtype=np.float32)))
        assert isinstance(res, SpectralNormResult)
        assert res.witness.dtype == np.float32
