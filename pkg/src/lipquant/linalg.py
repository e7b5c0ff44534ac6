"""Dense/conv linear operators and their induced-norm (Lipschitz constant) estimates.

A weight matrix W acts on inputs as a linear map; its induced p-norm
``sup_{||z||_p = 1} ||W z||_p`` is the Lipschitz constant of that map.  For
p=2 this is the largest singular value (estimated here by power iteration on
AᵀA); for p=inf it is the maximum row 1-norm.  Convolutions are treated as
the matrix they implement for a fixed input shape, without materializing it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .rng import SplitMix64


class NormOrder(Enum):
    TWO = "2"
    INF = "inf"


def check_finite(arr: np.ndarray, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf values")
    return arr


def frobenius_norm(t: np.ndarray) -> float:
    """sqrt of the sum of squared entries."""
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class DenseMatrix:
    """An explicit m-by-n weight matrix acting as x -> W @ x."""

    weights: np.ndarray  # [m, n]

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2 or min(w.shape) < 1:
            raise ValueError(f"dense operator needs a 2-d matrix, got shape {w.shape}")
        check_finite(w, "dense weights")

    @property
    def input_shape(self) -> tuple[int, ...]:
        return (self.weights.shape[1],)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return (self.weights.shape[0],)

    @property
    def weight_tensor(self) -> np.ndarray:
        return self.weights

    def with_weights(self, weights: np.ndarray) -> "DenseMatrix":
        if weights.shape != self.weights.shape:
            raise ValueError(
                f"replacement weights shape {weights.shape} != {self.weights.shape}"
            )
        return replace(self, weights=weights)


@dataclass(frozen=True)
class Conv2d:
    """A 2-d convolution viewed as the matrix it applies to a fixed input shape.

    kernel is [out_ch, in_ch, kh, kw]; input_shape is the nominal (in_ch, h, w)
    the layer sees, which fixes the matrix dimensions.
    """

    kernel: np.ndarray
    input_shape: tuple[int, int, int]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        k = np.asarray(self.kernel)
        if k.ndim != 4:
            raise ValueError(f"conv kernel must be 4-d, got shape {k.shape}")
        check_finite(k, "conv kernel")
        ic, h, w = self.input_shape
        if k.shape[1] != ic:
            raise ValueError(
                f"kernel expects {k.shape[1]} input channels, input_shape has {ic}"
            )
        oh, ow = conv_output_hw(h, w, k.shape[2], k.shape[3], self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ValueError(
                f"conv output {oh}x{ow} is empty for input {h}x{w}, "
                f"kernel {k.shape[2]}x{k.shape[3]}, stride {self.stride}, pad {self.padding}"
            )

    @property
    def output_shape(self) -> tuple[int, int, int]:
        _, h, w = self.input_shape
        oh, ow = conv_output_hw(
            h, w, self.kernel.shape[2], self.kernel.shape[3], self.stride, self.padding
        )
        return (self.kernel.shape[0], oh, ow)

    @property
    def weight_tensor(self) -> np.ndarray:
        return self.kernel

    def with_weights(self, kernel: np.ndarray) -> "Conv2d":
        if kernel.shape != self.kernel.shape:
            raise ValueError(
                f"replacement kernel shape {kernel.shape} != {self.kernel.shape}"
            )
        return replace(self, kernel=kernel)


LinearOperator = DenseMatrix | Conv2d


def _check_input(op: LinearOperator, x: np.ndarray, expected: tuple[int, ...]) -> np.ndarray:
    x = np.asarray(x)
    n = int(np.prod(expected))
    if x.shape == expected:
        return x
    if x.ndim == 1 and x.shape[0] == n:
        return x.reshape(expected)
    raise ValueError(f"operator expects input shape {expected} (or flat ({n},)), got {x.shape}")


def apply(op: LinearOperator, x: np.ndarray) -> np.ndarray:
    """A @ x for the matrix the operator represents.

    Accepts x in the operator's natural input shape or flattened; returns the
    natural output shape.  Computation dtype follows numpy promotion, so a
    float64 x gives a float64 result.
    """
    if isinstance(op, DenseMatrix):
        x = _check_input(op, x, op.input_shape)
        return op.weights @ x
    x = _check_input(op, x, op.input_shape)
    out = conv2d_forward(x[None], op.kernel, op.stride, op.padding)
    return out[0]


def apply_adjoint(op: LinearOperator, y: np.ndarray) -> np.ndarray:
    """Aᵀ @ y; for convolution this is the transposed-convolution map."""
    if isinstance(op, DenseMatrix):
        y = _check_input(op, y, op.output_shape)
        return op.weights.T @ y
    y = _check_input(op, y, op.output_shape)
    out = conv2d_input_grad(y[None], op.kernel, (1,) + op.input_shape, op.stride, op.padding)
    return out[0]


def difference(a: LinearOperator, b: LinearOperator) -> LinearOperator:
    """Operator representing A - B; both must share kind and shape."""
    if type(a) is not type(b) or a.weight_tensor.shape != b.weight_tensor.shape:
        raise ValueError("operators differ in kind or shape")
    if isinstance(a, Conv2d) and (
        a.input_shape != b.input_shape or a.stride != b.stride or a.padding != b.padding
    ):
        raise ValueError("conv operators differ in geometry")
    return a.with_weights(a.weight_tensor - b.weight_tensor)


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class SpectralNormResult:
    sigma: float
    witness: np.ndarray  # unit-norm input achieving sigma, natural input shape
    iterations: int
    converged: bool


def _start_vector(n: int, seed: int) -> np.ndarray:
    v = SplitMix64(seed).uniform_signed(n)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        v = np.zeros(n)
        v[0] = 1.0
        return v
    return v / norm


def spectral_norm(
    op: LinearOperator, tol: float = 1e-7, max_iter: int = 1000, seed: int = 0
) -> SpectralNormResult:
    """Largest singular value via power iteration on AᵀA.

    Starts from a seeded splitmix64 unit vector and stops once successive
    sigma estimates differ by at most tol * max(1, sigma), or at max_iter.
    The returned sigma is ||A @ witness|| for the (float32) witness, so the
    result invariants hold exactly.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    in_shape = op.input_shape
    n = int(np.prod(in_shape))
    v = _start_vector(n, seed)

    def _finalize(vec: np.ndarray, iters: int, conv: bool) -> SpectralNormResult:
        w32 = vec.reshape(in_shape).astype(np.float32)
        sigma = float(np.linalg.norm(apply(op, w32.astype(np.float64)).ravel()))
        return SpectralNormResult(sigma=sigma, witness=w32, iterations=iters, converged=conv)

    sigma_prev = None
    for k in range(1, max_iter + 1):
        u = apply(op, v.reshape(in_shape)).ravel()
        sigma = float(np.linalg.norm(u))
        if sigma == 0.0:
            # v lies in the nullspace (or A is the zero operator)
            return _finalize(v, k, True)
        if sigma_prev is not None and abs(sigma - sigma_prev) <= tol * max(1.0, sigma):
            return _finalize(v, k, True)
        w = apply_adjoint(op, u.reshape(op.output_shape)).ravel()
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            return _finalize(v, k, True)
        v = w / wn
        sigma_prev = sigma
    return _finalize(v, max_iter, False)


def infinity_norm(op: LinearOperator) -> float:
    """Maximum row 1-norm of the operator's matrix.

    Dense: exact.  Conv: max over output channels of the channel's kernel
    1-norm, which is the exact row sum for interior output positions and an
    upper bound at padded borders.
    """
    w = np.asarray(op.weight_tensor, dtype=np.float64)
    if isinstance(op, DenseMatrix):
        return float(np.max(np.sum(np.abs(w), axis=1)))
    return float(np.max(np.sum(np.abs(w), axis=(1, 2, 3))))


def operator_norm(op: LinearOperator, p: NormOrder, **kwargs) -> float:
    """Induced p-norm; kwargs (tol, max_iter, seed) apply to the p=2 path."""
    if p is NormOrder.TWO:
        return spectral_norm(op, **kwargs).sigma
    return infinity_norm(op)


def vector_norm(x: np.ndarray, p: NormOrder) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if p is NormOrder.TWO:
        return float(np.linalg.norm(x))
    return float(np.max(np.abs(x))) if x.size else 0.0


# ---------------------------------------------------------------------------
# batched conv arithmetic (shared with the network engine)


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[N,C,H,W] -> [N, C*kh*kw, OH*OW] patch matrix."""
    n, c, h, w = x.shape
    oh, ow = conv_output_hw(h, w, kh, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(n, c * kh * kw, oh * ow)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """[N,C,H,W] conv [OC,C,kh,kw] -> [N,OC,OH,OW]."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ValueError(f"conv input has {c} channels, kernel expects {ic}")
    oh, ow = conv_output_hw(h, w, kh, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, padding)
    out = np.matmul(kernel.reshape(oc, ic * kh * kw), cols)
    return out.reshape(n, oc, oh, ow)


def conv2d_input_grad(
    dout: np.ndarray, kernel: np.ndarray, x_shape: tuple[int, ...], stride: int, padding: int
) -> np.ndarray:
    """Adjoint of conv2d_forward in its input: [N,OC,OH,OW] -> [N,C,H,W]."""
    n, c, h, w = x_shape
    oc, ic, kh, kw = kernel.shape
    oh, ow = conv_output_hw(h, w, kh, kw, stride, padding)
    if dout.shape != (n, oc, oh, ow):
        raise ValueError(f"dout shape {dout.shape} != {(n, oc, oh, ow)}")
    dcols = np.matmul(kernel.reshape(oc, ic * kh * kw).T, dout.reshape(n, oc, oh * ow))
    dwin = dcols.reshape(n, c, kh, kw, oh, ow)
    hp, wp = h + 2 * padding, w + 2 * padding
    dx = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    for u in range(kh):
        for v in range(kw):
            dx[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += dwin[
                :, :, u, v
            ]
    if padding:
        dx = dx[:, :, padding : padding + h, padding : padding + w]
    return dx


def conv2d_kernel_grad(
    dout: np.ndarray, x: np.ndarray, kernel_shape: tuple[int, ...], stride: int, padding: int
) -> np.ndarray:
    """Adjoint of conv2d_forward in its kernel: accumulates over the batch."""
    n = x.shape[0]
    oc, ic, kh, kw = kernel_shape
    cols = _im2col(x, kh, kw, stride, padding)  # [N, ic*kh*kw, P]
    d2 = dout.reshape(n, oc, -1)  # [N, OC, P]
    dk = np.einsum("nop,nfp->of", d2, cols, optimize=True)
    return dk.reshape(kernel_shape)
