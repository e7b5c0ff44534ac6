"""Minimal feed-forward network engine: forward, backprop, SGD, adversarial training.

Layers are plain spec dataclasses (dense / conv / relu / 2x2 maxpool /
flatten); the classifier head is softmax cross-entropy fused into the loss,
so models output logits.  Weights are float32; the loss and its logit
gradient are computed in float64 for stability.  Everything is seeded and
deterministic: weight init, batch shuffling, and adversarial example
generation all derive their streams from the training seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import linalg
from .errors import NumericError
from .rng import derive_seed, generator


# ---------------------------------------------------------------------------
# layer specs and models


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kh: int
    kw: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2x2:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Dense | Conv2d | ReLU | MaxPool2x2 | Flatten

WEIGHTED = (Dense, Conv2d)


@dataclass
class Model:
    input_shape: tuple[int, int, int]  # (C, H, W)
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)


def shape_after(spec: LayerSpec, shape) -> tuple:
    """Propagate a (C,H,W) or flat (D,) activation shape through one layer."""
    if isinstance(spec, Dense):
        if len(shape) != 1 or shape[0] != spec.in_dim:
            raise ValueError(f"dense layer expects flat ({spec.in_dim},), got {shape}")
        return (spec.out_dim,)
    if isinstance(spec, Conv2d):
        if len(shape) != 3 or shape[0] != spec.in_ch:
            raise ValueError(f"conv layer expects ({spec.in_ch},H,W), got {shape}")
        oh, ow = linalg.conv_output_hw(shape[1], shape[2], spec.kh, spec.kw, spec.stride, spec.padding)
        if oh < 1 or ow < 1:
            raise ValueError(f"conv output collapses to {oh}x{ow} from input {shape}")
        return (spec.out_ch, oh, ow)
    if isinstance(spec, MaxPool2x2):
        if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
            raise ValueError(f"2x2 maxpool needs spatial dims >= 2, got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    if isinstance(spec, Flatten):
        return (int(np.prod(shape)),)
    return tuple(shape)  # ReLU


def validate_model(model: Model):
    n_weighted = sum(isinstance(s, WEIGHTED) for s in model.layers)
    if n_weighted == 0:
        raise ValueError("model has no weighted layers")
    if len(model.weights) != n_weighted or len(model.biases) != n_weighted:
        raise ValueError(
            f"model carries {len(model.weights)} weight / {len(model.biases)} bias tensors "
            f"for {n_weighted} weighted layers"
        )
    shape = tuple(model.input_shape)
    wi = 0
    for spec in model.layers:
        shape = shape_after(spec, shape)
        if isinstance(spec, Dense):
            want_w, want_b = (spec.out_dim, spec.in_dim), (spec.out_dim,)
        elif isinstance(spec, Conv2d):
            want_w, want_b = (spec.out_ch, spec.in_ch, spec.kh, spec.kw), (spec.out_ch,)
        else:
            continue
        if model.weights[wi].shape != want_w:
            raise ValueError(f"layer {wi} weight shape {model.weights[wi].shape} != {want_w}")
        if model.biases[wi].shape != want_b:
            raise ValueError(f"layer {wi} bias shape {model.biases[wi].shape} != {want_b}")
        linalg.check_finite(model.weights[wi], f"layer {wi} weights")
        linalg.check_finite(model.biases[wi], f"layer {wi} bias")
        wi += 1
    if len(shape) != 1:
        raise ValueError(f"model must end in a flat logits vector, got shape {shape}")


def output_classes(model: Model) -> int:
    shape = tuple(model.input_shape)
    for spec in model.layers:
        shape = shape_after(spec, shape)
    return shape[0]


def clone_model(model: Model) -> Model:
    return Model(
        input_shape=tuple(model.input_shape),
        layers=list(model.layers),
        weights=[w.copy() for w in model.weights],
        biases=[b.copy() for b in model.biases],
        metadata=dict(model.metadata),
    )


def models_equal(a: Model, b: Model) -> bool:
    return (
        tuple(a.input_shape) == tuple(b.input_shape)
        and a.layers == b.layers
        and a.metadata == b.metadata
        and len(a.weights) == len(b.weights)
        and all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        and all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    )


def model_digest(model: Model) -> str:
    """sha256 over the canonical payload bytes (per layer: weights then bias)."""
    h = hashlib.sha256()
    for w, b in zip(model.weights, model.biases):
        h.update(np.ascontiguousarray(w, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return h.hexdigest()


def init_model(
    input_shape: tuple[int, int, int],
    layers: list[LayerSpec],
    seed: int,
    metadata: dict[str, str] | None = None,
) -> Model:
    """He-uniform weight init (zero biases), seeded per layer."""
    weights, biases = [], []
    wi = 0
    for spec in layers:
        if isinstance(spec, Dense):
            fan_in, wshape, bshape = spec.in_dim, (spec.out_dim, spec.in_dim), (spec.out_dim,)
        elif isinstance(spec, Conv2d):
            fan_in = spec.in_ch * spec.kh * spec.kw
            wshape, bshape = (spec.out_ch, spec.in_ch, spec.kh, spec.kw), (spec.out_ch,)
        else:
            continue
        limit = float(np.sqrt(6.0 / fan_in))
        rng = generator(seed, "init", wi)
        weights.append(rng.uniform(-limit, limit, size=wshape).astype(np.float32))
        biases.append(np.zeros(bshape, dtype=np.float32))
        wi += 1
    model = Model(tuple(input_shape), list(layers), weights, biases, dict(metadata or {}))
    validate_model(model)
    return model


def build_model(
    arch: str, input_shape: tuple[int, int, int] = (1, 28, 28), classes: int = 10, seed: int = 0
) -> Model:
    """Reference desk-scale architectures: "mlp" (flat-256-128-out dense/relu)
    and "cnn4" (two conv/pool stages + two dense layers)."""
    c, h, w = input_shape
    flat = c * h * w
    if arch == "mlp":
        layers = [
            Flatten(),
            Dense(flat, 256),
            ReLU(),
            Dense(256, 128),
            ReLU(),
            Dense(128, classes),
        ]
    elif arch == "cnn4":
        h1, w1 = (h - 2) // 2, (w - 2) // 2  # conv 3x3 valid, then pool
        h2, w2 = (h1 - 2) // 2, (w1 - 2) // 2
        layers = [
            Conv2d(c, 16, 3, 3),
            ReLU(),
            MaxPool2x2(),
            Conv2d(16, 32, 3, 3),
            ReLU(),
            MaxPool2x2(),
            Flatten(),
            Dense(32 * h2 * w2, 128),
            ReLU(),
            Dense(128, classes),
        ]
    else:
        raise ValueError(f"unknown architecture {arch!r} (expected 'mlp' or 'cnn4')")
    return init_model(input_shape, layers, seed, {"arch": arch})


# ---------------------------------------------------------------------------
# forward / backward


def _pool_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, : 2 * h2, : 2 * w2]
    win = xc.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)  # first max wins ties, deterministically
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(g, idx, x_shape):
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
    np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=g.dtype)
    dx[:, :, : 2 * h2, : 2 * w2] = (
        dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    )
    return dx


def _check_batch(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != tuple(model.input_shape):
        raise ValueError(f"batch shape {x.shape} != (N, {', '.join(map(str, model.input_shape))})")
    return x


def forward(model: Model, x: np.ndarray, capture: bool = False):
    """Logits for a batch; with capture=True also returns the per-layer outputs."""
    h = _check_batch(model, x)
    acts = []
    wi = 0
    for spec in model.layers:
        if isinstance(spec, Dense):
            h = h @ model.weights[wi].T + model.biases[wi]
            wi += 1
        elif isinstance(spec, Conv2d):
            h = linalg.conv2d_forward(h, model.weights[wi], spec.stride, spec.padding)
            h = h + model.biases[wi][None, :, None, None]
            wi += 1
        elif isinstance(spec, ReLU):
            h = np.maximum(h, 0)
        elif isinstance(spec, MaxPool2x2):
            h, _ = _pool_forward(h)
        elif isinstance(spec, Flatten):
            h = h.reshape(h.shape[0], -1)
        if capture:
            acts.append(h)
    return (h, acts) if capture else h


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean loss and its logit gradient, both in float64."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = z.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be ints in [0, {k}) with shape ({n},)")
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    loss = float(-np.mean(logp[np.arange(n), labels]))
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


@dataclass
class BackwardResult:
    loss: float
    weight_grads: list[np.ndarray] | None
    bias_grads: list[np.ndarray] | None
    input_grad: np.ndarray


def backward(model: Model, x: np.ndarray, labels: np.ndarray, param_grads: bool = True) -> BackwardResult:
    """Gradients of mean softmax cross-entropy wrt parameters and the input batch."""
    x = _check_batch(model, x)
    inputs, pool_idx = [], []
    h = x
    wi = 0
    for spec in model.layers:
        inputs.append(h)
        if isinstance(spec, Dense):
            h = h @ model.weights[wi].T + model.biases[wi]
            wi += 1
        elif isinstance(spec, Conv2d):
            h = linalg.conv2d_forward(h, model.weights[wi], spec.stride, spec.padding)
            h = h + model.biases[wi][None, :, None, None]
            wi += 1
        elif isinstance(spec, ReLU):
            h = np.maximum(h, 0)
        elif isinstance(spec, MaxPool2x2):
            h, idx = _pool_forward(h)
            pool_idx.append(idx)
        elif isinstance(spec, Flatten):
            h = h.reshape(h.shape[0], -1)

    loss, dlogits = softmax_cross_entropy(h, labels)
    g = dlogits.astype(x.dtype)
    n_w = len(model.weights)
    wg = [None] * n_w if param_grads else None
    bg = [None] * n_w if param_grads else None
    wi = n_w - 1
    pi = len(pool_idx) - 1
    for spec, h_in in zip(reversed(model.layers), reversed(inputs)):
        if isinstance(spec, Dense):
            if param_grads:
                wg[wi] = g.T @ h_in
                bg[wi] = g.sum(axis=0)
            g = g @ model.weights[wi]
            wi -= 1
        elif isinstance(spec, Conv2d):
            if param_grads:
                wg[wi] = linalg.conv2d_kernel_grad(
                    g, h_in, model.weights[wi].shape, spec.stride, spec.padding
                )
                bg[wi] = g.sum(axis=(0, 2, 3))
            g = linalg.conv2d_input_grad(g, model.weights[wi], h_in.shape, spec.stride, spec.padding)
            wi -= 1
        elif isinstance(spec, ReLU):
            g = g * (h_in > 0)
        elif isinstance(spec, MaxPool2x2):
            g = _pool_backward(g, pool_idx[pi], h_in.shape)
            pi -= 1
        elif isinstance(spec, Flatten):
            g = g.reshape(h_in.shape)
    return BackwardResult(loss=loss, weight_grads=wg, bias_grads=bg, input_grad=g)


# ---------------------------------------------------------------------------
# training / evaluation


class AdvMode(Enum):
    REPLACE_CLEAN = "replace"
    MIX50 = "mix50"


@dataclass(frozen=True)
class AdversarialTraining:
    attack: "AttackConfig"  # noqa: F821  (attacks imports this module)
    mode: AdvMode = AdvMode.REPLACE_CLEAN


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int
    momentum: float = 0.9
    adversarial: AdversarialTraining | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.momentum < 0:
            raise ValueError("learning_rate must be positive and momentum nonnegative")


def train(model: Model, dataset, cfg: TrainConfig):
    """SGD with momentum over seeded shuffles; returns (trained model, per-epoch metrics).

    With cfg.adversarial set, each batch is attacked against the current
    weights first and the model trains on the adversarial batch
    (REPLACE_CLEAN) or on the clean+adversarial concatenation (MIX50).
    """
    from . import attacks  # deferred: attacks needs backward() from this module

    images, labels = dataset.images, dataset.labels
    n = images.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    model = clone_model(model)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    history = []
    for epoch in range(cfg.epochs):
        perm = generator(cfg.seed, "shuffle", epoch).permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            take = perm[start : start + cfg.batch_size]
            xb, yb = images[take], labels[take]
            if cfg.adversarial is not None:
                acfg = replace(
                    cfg.adversarial.attack,
                    seed=derive_seed(cfg.adversarial.attack.seed, "advtrain", epoch, bi),
                )
                x_adv = attacks.craft(acfg, model, xb, yb)
                if cfg.adversarial.mode is AdvMode.REPLACE_CLEAN:
                    xb = x_adv
                else:
                    xb = np.concatenate([xb, x_adv])
                    yb = np.concatenate([yb, yb])
            res = backward(model, xb, yb)
            if not np.isfinite(res.loss):
                raise NumericError(f"training diverged at epoch {epoch} batch {bi} (loss={res.loss})")
            for i in range(len(model.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] + res.weight_grads[i]
                vel_b[i] = cfg.momentum * vel_b[i] + res.bias_grads[i]
                model.weights[i] = model.weights[i] - cfg.learning_rate * vel_w[i]
                model.biases[i] = model.biases[i] - cfg.learning_rate * vel_b[i]
            losses.append(res.loss)
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})
    return model, history


def evaluate(model: Model, dataset, batch_size: int = 512) -> float:
    """Mean argmax-vs-label accuracy in [0, 1]."""
    images, labels = dataset.images, dataset.labels
    n = images.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    correct = 0
    for start in range(0, n, batch_size):
        logits = forward(model, images[start : start + batch_size])
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start : start + batch_size]))
    return correct / n


def layer_operators(model: Model) -> list[linalg.LinearOperator]:
    """One LinearOperator per weighted layer, carrying its nominal input shape."""
    ops = []
    shape = tuple(model.input_shape)
    wi = 0
    for spec in model.layers:
        if isinstance(spec, Dense):
            ops.append(linalg.DenseMatrix(model.weights[wi]))
            wi += 1
        elif isinstance(spec, Conv2d):
            ops.append(
                linalg.Conv2d(
                    kernel=model.weights[wi],
                    input_shape=shape,
                    stride=spec.stride,
                    padding=spec.padding,
                )
            )
            wi += 1
        shape = shape_after(spec, shape)
    return ops
