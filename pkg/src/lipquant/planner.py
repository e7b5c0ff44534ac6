"""Per-layer quantization planning.

For every weighted layer the planner searches each method's bit-widths from
its minimum upward until the quantized-weight norm stays within threshold_q
and the error norm within threshold_delta (or the bit cap is reached, which
the candidate records as hit_cap).  Between the two passing candidates it
keeps the one with the lower error Lipschitz constant; ties go to log.

Plans record everything needed to reproduce and audit the decision: both
candidates' settings and norm triples, the thresholds used, and the digest
of the model they were computed for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg, metrics, nnengine, quantizers
from .errors import DataError
from .linalg import LinearOperator, NormOrder
from .metrics import LayerNorms, Thresholds
from .nnengine import Model
from .quantizers import QuantMethod, QuantResult, QuantSetting
from .rng import derive_seed


@dataclass(frozen=True)
class PlannerConfig:
    p: NormOrder = NormOrder.TWO
    max_bits: int = 8
    start_bits_linear: int = 1
    start_bits_log: int = 2
    threshold_overrides: dict[int, Thresholds] | None = None
    norm_tol: float = 1e-7
    norm_max_iter: int = 1000
    norm_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.start_bits_linear <= self.max_bits <= 8:
            raise ValueError("need 1 <= start_bits_linear <= max_bits <= 8")
        if not 2 <= self.start_bits_log <= self.max_bits:
            raise ValueError("need 2 <= start_bits_log <= max_bits")

    def start_bits(self, method: QuantMethod) -> int:
        return self.start_bits_linear if method is QuantMethod.LINEAR else self.start_bits_log


@dataclass(frozen=True)
class CandidateRecord:
    setting: QuantSetting
    norms: LayerNorms
    hit_cap: bool  # True when the search capped out without passing both thresholds


@dataclass(frozen=True)
class LayerPlan:
    layer_index: int
    chosen: QuantMethod
    thresholds: Thresholds
    candidates: dict[QuantMethod, CandidateRecord]

    @property
    def chosen_candidate(self) -> CandidateRecord:
        return self.candidates[self.chosen]

    @property
    def chosen_setting(self) -> QuantSetting:
        return self.candidates[self.chosen].setting


@dataclass(frozen=True)
class QuantPlan:
    p: NormOrder
    max_bits: int
    model_digest: str
    layers: list[LayerPlan]
    created_unix: int = 0

    def layer(self, index: int) -> LayerPlan:
        for entry in self.layers:
            if entry.layer_index == index:
                return entry
        raise KeyError(index)


def _quantize(w: np.ndarray, method: QuantMethod, bits: int) -> QuantResult:
    if method is QuantMethod.LINEAR:
        return quantizers.quantize_linear(w, bits)
    return quantizers.quantize_log(w, bits)


def _passes(norms: LayerNorms, thr: Thresholds) -> bool:
    return norms.L_Wq <= thr.threshold_q and norms.L_dW <= thr.threshold_delta


def _norm_kwargs(cfg: PlannerConfig, layer_index: int) -> dict:
    return {
        "tol": cfg.norm_tol,
        "max_iter": cfg.norm_max_iter,
        "seed": derive_seed(cfg.norm_seed, "layer-norm", layer_index),
    }


def search_layer(
    w_op: LinearOperator,
    method: QuantMethod,
    thresholds: Thresholds,
    cfg: PlannerConfig,
    *,
    layer_index: int = 0,
    l_w: float | None = None,
) -> CandidateRecord:
    """Smallest bit-width of one method passing both thresholds (or the cap)."""
    w = w_op.weight_tensor
    kw = _norm_kwargs(cfg, layer_index)
    record = None
    for bits in range(cfg.start_bits(method), cfg.max_bits + 1):
        qres = _quantize(w, method, bits)
        norms = metrics.layer_norms(
            w_op, w_op.with_weights(qres.w_q), cfg.p, layer_index=layer_index, l_w=l_w, **kw
        )
        record = CandidateRecord(setting=qres.setting, norms=norms, hit_cap=False)
        if _passes(norms, thresholds):
            return record
    return CandidateRecord(setting=record.setting, norms=record.norms, hit_cap=True)


def _layer_thresholds(cfg: PlannerConfig, layer_index: int, l_w: float) -> Thresholds:
    if cfg.threshold_overrides and layer_index in cfg.threshold_overrides:
        return cfg.threshold_overrides[layer_index]
    return metrics.thresholds_for(l_w)


def plan(model: Model, cfg: PlannerConfig = PlannerConfig(), created_unix: int = 0) -> QuantPlan:
    """Algorithm: search both methods per weighted layer, keep the lower-L_dW one."""
    nnengine.validate_model(model)
    ops = nnengine.layer_operators(model)
    entries = []
    for i, op in enumerate(ops):
        l_w = linalg.operator_norm(op, cfg.p, **(_norm_kwargs(cfg, i) if cfg.p is NormOrder.TWO else {}))
        thr = _layer_thresholds(cfg, i, l_w)
        candidates = {
            m: search_layer(op, m, thr, cfg, layer_index=i, l_w=l_w)
            for m in (QuantMethod.LINEAR, QuantMethod.LOG)
        }
        # strict inequality: ties select log
        chosen = (
            QuantMethod.LINEAR
            if candidates[QuantMethod.LINEAR].norms.L_dW < candidates[QuantMethod.LOG].norms.L_dW
            else QuantMethod.LOG
        )
        entries.append(LayerPlan(layer_index=i, chosen=chosen, thresholds=thr, candidates=candidates))
    return QuantPlan(
        p=cfg.p,
        max_bits=cfg.max_bits,
        model_digest=nnengine.model_digest(model),
        layers=entries,
        created_unix=created_unix,
    )


def uniform_plan(
    model: Model, method: QuantMethod, bits: int, cfg: PlannerConfig = PlannerConfig(), created_unix: int = 0
) -> QuantPlan:
    """Constant method/bits across layers (the uniform 3-bit style baselines).

    Candidate records for both methods are evaluated at the forced bit-width
    (raised to 2 for log) so uniform plans still carry comparable norms;
    hit_cap flags candidates that miss the thresholds they never searched.
    """
    nnengine.validate_model(model)
    lo = 1 if method is QuantMethod.LINEAR else 2
    if not lo <= bits <= cfg.max_bits:
        raise ValueError(f"{method.value} uniform plan needs bits in [{lo}, {cfg.max_bits}], got {bits}")
    ops = nnengine.layer_operators(model)
    entries = []
    for i, op in enumerate(ops):
        kw = _norm_kwargs(cfg, i)
        l_w = linalg.operator_norm(op, cfg.p, **(kw if cfg.p is NormOrder.TWO else {}))
        thr = _layer_thresholds(cfg, i, l_w)
        candidates = {}
        for m in (QuantMethod.LINEAR, QuantMethod.LOG):
            m_bits = max(bits, 2) if m is QuantMethod.LOG else bits
            qres = _quantize(op.weight_tensor, m, m_bits)
            norms = metrics.layer_norms(
                op, op.with_weights(qres.w_q), cfg.p, layer_index=i, l_w=l_w, **kw
            )
            candidates[m] = CandidateRecord(
                setting=qres.setting, norms=norms, hit_cap=not _passes(norms, thr)
            )
        entries.append(LayerPlan(layer_index=i, chosen=method, thresholds=thr, candidates=candidates))
    return QuantPlan(
        p=cfg.p,
        max_bits=cfg.max_bits,
        model_digest=nnengine.model_digest(model),
        layers=entries,
        created_unix=created_unix,
    )


def apply_plan(model: Model, plan_: QuantPlan, override_digest: bool = False) -> Model:
    """New model with each weighted layer quantized per its recorded setting."""
    nnengine.validate_model(model)
    digest = nnengine.model_digest(model)
    if not override_digest and digest != plan_.model_digest:
        raise DataError(
            f"plan was computed for model {plan_.model_digest[:12]}..., "
            f"this model is {digest[:12]}... (pass override to force)"
        )
    ops = nnengine.layer_operators(model)
    if len(ops) != len(plan_.layers):
        raise DataError(f"plan has {len(plan_.layers)} layers, model has {len(ops)}")
    out = nnengine.clone_model(model)
    for entry in plan_.layers:
        if not 0 <= entry.layer_index < len(out.weights):
            raise DataError(f"plan layer index {entry.layer_index} out of range")
        w = out.weights[entry.layer_index]
        out.weights[entry.layer_index] = quantizers.quantize(w, entry.chosen_setting).w_q
    return out


def differing_layers(a: QuantPlan, b: QuantPlan) -> set[int]:
    """Layer indices whose chosen settings differ between two plans."""
    if len(a.layers) != len(b.layers):
        raise ValueError("plans cover different layer counts")
    out = set()
    for ea, eb in zip(a.layers, b.layers):
        if ea.layer_index != eb.layer_index:
            raise ValueError("plans cover different layer indices")
        if ea.chosen_setting != eb.chosen_setting:
            out.add(ea.layer_index)
    return out
