"""Adversarial example generation under gray- and white-box protocols.

Gradient families (FGSM / PGD / BIM / MIM) perturb inputs along signed loss
gradients inside an L-infinity ball of radius epsilon, always clipped back to
the [0,1] pixel box.  PGD is BIM plus a seeded uniform random start.  Noise
families add seeded Gaussian or uniform noise instead of gradients.

Gray-box crafting runs against a surrogate model (conventionally the
full-precision adversarially-trained parent of a quantized target) and the
result is evaluated on the target; white-box crafts on the target itself.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import nnengine
from .errors import NumericError
from .nnengine import Model
from .rng import derive_seed, generator


class AttackFamily(Enum):
    FGSM = "fgsm"
    PGD = "pgd"
    BIM = "bim"
    MIM = "mim"
    GAUSSIAN_NOISE = "gaussian"
    UNIFORM_NOISE = "uniform"


_SINGLE_STEP = (AttackFamily.FGSM, AttackFamily.GAUSSIAN_NOISE, AttackFamily.UNIFORM_NOISE)
_ITERATIVE = (AttackFamily.PGD, AttackFamily.BIM, AttackFamily.MIM)


@dataclass(frozen=True)
class AttackConfig:
    family: AttackFamily
    epsilon: float  # L-inf budget; Gaussian reads it as sigma
    steps: int = 1
    step_size: float = 0.01
    momentum_decay: float = 1.0  # MIM only
    seed: int = 0
    random_start: bool = True  # PGD only

    def __post_init__(self):
        if self.epsilon < 0 or not np.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.family in _SINGLE_STEP and self.steps != 1:
            raise ValueError(f"{self.family.value} is single-step; got steps={self.steps}")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.momentum_decay < 0:
            raise ValueError("momentum_decay must be nonnegative")


@dataclass(frozen=True)
class GrayBox:
    surrogate: Model


@dataclass(frozen=True)
class WhiteBox:
    pass


AttackProtocol = GrayBox | WhiteBox


def _input_grad(model: Model, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    res = nnengine.backward(model, x, labels, param_grads=False)
    if not np.all(np.isfinite(res.input_grad)):
        raise NumericError("attack aborted: non-finite input gradients")
    return res.input_grad


def craft(cfg: AttackConfig, crafting_model: Model, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Adversarial batch for x in [0,1]; output stays in the budget and the box."""
    x = np.asarray(x, dtype=np.float32)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("inputs must lie in [0, 1]")
    labels = np.asarray(labels)
    eps = np.float32(cfg.epsilon)

    if cfg.family is AttackFamily.GAUSSIAN_NOISE:
        rng = generator(cfg.seed, "gaussian")
        noise = rng.standard_normal(x.shape).astype(np.float32) * eps
        return np.clip(x + noise, 0.0, 1.0)
    if cfg.family is AttackFamily.UNIFORM_NOISE:
        rng = generator(cfg.seed, "uniform")
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(np.float32)
        return np.clip(x + np.clip(noise, -eps, eps), 0.0, 1.0)

    if cfg.family is AttackFamily.FGSM:
        g = _input_grad(crafting_model, x, labels)
        return np.clip(x + eps * np.sign(g, dtype=np.float32), 0.0, 1.0)

    adv = x
    if cfg.family is AttackFamily.PGD and cfg.random_start and cfg.epsilon > 0:
        rng = generator(cfg.seed, "pgd-start")
        start = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(np.float32)
        adv = np.clip(x + np.clip(start, -eps, eps), 0.0, 1.0)
    alpha = np.float32(cfg.step_size)
    momentum = np.zeros_like(x)
    for _ in range(cfg.steps):
        g = _input_grad(crafting_model, adv, labels)
        if cfg.family is AttackFamily.MIM:
            l1 = np.sum(np.abs(g), axis=tuple(range(1, g.ndim)), keepdims=True)
            momentum = np.float32(cfg.momentum_decay) * momentum + g / np.maximum(l1, 1e-12)
            direction = momentum
        else:
            direction = g
        adv = adv + alpha * np.sign(direction, dtype=np.float32)
        adv = np.clip(adv, x - eps, x + eps)
        adv = np.clip(adv, 0.0, 1.0)
    return adv.astype(np.float32)


def evaluate_under_attack(
    target: Model,
    protocol: AttackProtocol,
    cfg: AttackConfig,
    dataset,
    batch_size: int = 256,
) -> float:
    """Accuracy of the target on adversarial inputs crafted per the protocol."""
    crafting = protocol.surrogate if isinstance(protocol, GrayBox) else target
    if tuple(crafting.input_shape) != tuple(target.input_shape) or nnengine.output_classes(
        crafting
    ) != nnengine.output_classes(target):
        raise ValueError("surrogate and target input/output shapes differ")
    images, labels = dataset.images, dataset.labels
    n = images.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    correct = 0
    for bi, start in enumerate(range(0, n, batch_size)):
        xb = images[start : start + batch_size]
        yb = labels[start : start + batch_size]
        bcfg = replace(cfg, seed=derive_seed(cfg.seed, "batch", bi))
        x_adv = craft(bcfg, crafting, xb, yb)
        logits = nnengine.forward(target, x_adv)
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return correct / n
