"""Lipschitz-based quantization metrics.

The planner's acceptance tests for a layer come down to three induced norms:
L_W for the full-precision weights, L_Wq for a quantized candidate, and L_dW
for the quantization error W - W_q.  The threshold rule keeps L_Wq within
110% of L_W and caps L_dW at 0.3 (1.5 for layers whose L_W is already >= 3).

decompose_loss splits a layer's pre-activation output change into the
adversarial term W*dx, the quantization term dW*x, and the mutual term
dW*dx, whose norm is bounded by ||dW||_p * ||dx||_p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import LinearOperator, NormOrder


@dataclass(frozen=True)
class Thresholds:
    threshold_q: float
    threshold_delta: float


@dataclass(frozen=True)
class LayerNorms:
    layer_index: int
    p: NormOrder
    L_W: float
    L_Wq: float
    L_dW: float


@dataclass(frozen=True)
class LossDecomposition:
    adv_loss: float  # ||W dx||_p
    quant_loss: float  # ||dW x||_p
    mutual_loss: float  # ||dW dx||_p
    mutual_bound: float  # ||dW||_p * epsilon
    epsilon: float  # ||dx||_p


@dataclass(frozen=True)
class NormSummary:
    l_wq_mean: float
    l_wq_std: float
    l_dw_mean: float
    l_dw_std: float
    layer_count: int


def thresholds_for(l_w: float) -> Thresholds:
    """Per-layer thresholds derived from the full-precision Lipschitz constant."""
    if not (math.isfinite(l_w) and l_w >= 0):
        raise ValueError(f"L_W must be finite and nonnegative, got {l_w}")
    return Thresholds(threshold_q=1.10 * l_w, threshold_delta=0.3 if l_w < 3.0 else 1.5)


def layer_norms(
    w_op: LinearOperator,
    wq_op: LinearOperator,
    p: NormOrder,
    *,
    layer_index: int = 0,
    tol: float = 1e-7,
    max_iter: int = 1000,
    seed: int = 0,
    l_w: float | None = None,
) -> LayerNorms:
    """Norms of W, W_q, and the error operator W - W_q.

    l_w may be supplied to reuse an already-computed full-precision norm
    (the planner computes it once per layer across all candidate settings).
    """
    delta = linalg.difference(w_op, wq_op)
    kw = {"tol": tol, "max_iter": max_iter, "seed": seed} if p is NormOrder.TWO else {}
    if l_w is None:
        l_w = linalg.operator_norm(w_op, p, **kw)
    return LayerNorms(
        layer_index=layer_index,
        p=p,
        L_W=float(l_w),
        L_Wq=linalg.operator_norm(wq_op, p, **kw),
        L_dW=linalg.operator_norm(delta, p, **kw),
    )


def decompose_loss(
    w_op: LinearOperator,
    dw_op: LinearOperator,
    x: np.ndarray,
    dx: np.ndarray,
    p: NormOrder,
    *,
    tol: float = 1e-7,
    max_iter: int = 1000,
    seed: int = 0,
) -> LossDecomposition:
    """Magnitudes of the three loss terms for one layer on one input pair."""
    x = np.asarray(x, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    if x.shape != dx.shape:
        raise ValueError(f"x shape {x.shape} != dx shape {dx.shape}")
    kw = {"tol": tol, "max_iter": max_iter, "seed": seed} if p is NormOrder.TWO else {}
    eps = linalg.vector_norm(dx, p)
    return LossDecomposition(
        adv_loss=linalg.vector_norm(linalg.apply(w_op, dx), p),
        quant_loss=linalg.vector_norm(linalg.apply(dw_op, x), p),
        mutual_loss=linalg.vector_norm(linalg.apply(dw_op, dx), p),
        mutual_bound=linalg.operator_norm(dw_op, p, **kw) * eps,
        epsilon=eps,
    )


def setting_gap_lower_bound(l1: float, l2: float) -> float:
    """Guaranteed lower bound |L1 - L2| on the norm of the error-difference operator."""
    if l1 < 0 or l2 < 0:
        raise ValueError("Lipschitz constants are nonnegative")
    return abs(l1 - l2)


def norm_summary(norms: list[LayerNorms], selected_layers: set[int]) -> NormSummary:
    """Population mean/stddev of L_Wq and L_dW over the selected layer indices."""
    rows = [n for n in norms if n.layer_index in selected_layers]
    if not rows:
        raise ValueError("norm summary needs a nonempty layer selection")
    l_wq = np.array([n.L_Wq for n in rows], dtype=np.float64)
    l_dw = np.array([n.L_dW for n in rows], dtype=np.float64)
    return NormSummary(
        l_wq_mean=float(np.mean(l_wq)),
        l_wq_std=float(np.std(l_wq)),
        l_dw_mean=float(np.mean(l_dw)),
        l_dw_std=float(np.std(l_dw)),
        layer_count=len(rows),
    )
