"""White-box adversaries: FGSM, PGD under linf/l2, and random perturbation.

All attacks treat the model snapshot as immutable, keep iterates inside the
norm ball around the clean input, and clip to the [0, 1] input domain after
every step. Randomness is split per example from (seed, example index) so
results do not depend on batch composition or traversal order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericError
from .model import Model, ModelParams, ce_loss_spec, softmax

NORMS = ("linf", "l2")
GENERATION_LOSSES = ("ce", "trades_kl")

_TINY = 1e-30


@dataclass(frozen=True)
class Budget:
    """Perturbation budget: norm ball radius plus the iteration recipe."""

    norm: str = "linf"
    epsilon: float = 8.0 / 255.0
    step_size: float = 2.0 / 255.0
    num_steps: int = 10
    random_start: bool = True

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ConfigError(f"unknown attack norm {self.norm!r}")
        # epsilon == 0 is allowed and degenerates to the identity attack
        if not (self.epsilon >= 0.0 and np.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not (self.step_size >= 0.0 and np.isfinite(self.step_size)):
            raise ConfigError(f"step_size must be finite and >= 0, got {self.step_size}")
        if self.step_size > 2.0 * self.epsilon:
            raise ConfigError(
                f"step_size {self.step_size} exceeds twice epsilon {self.epsilon}"
            )
        if self.num_steps < 1:
            raise ConfigError(f"num_steps must be >= 1, got {self.num_steps}")


def _row_norms(delta: np.ndarray) -> np.ndarray:
    return np.sqrt((delta * delta).sum(axis=-1, keepdims=True))


def project(delta: np.ndarray, budget: Budget) -> np.ndarray:
    """Project a perturbation (or batch of rows) onto the epsilon ball."""
    delta = np.asarray(delta, dtype=np.float64)
    if not np.isfinite(delta).all():
        raise NumericError("cannot project a non-finite perturbation")
    if budget.norm == "linf":
        return np.clip(delta, -budget.epsilon, budget.epsilon)
    norms = _row_norms(delta)
    scale = np.where(norms > budget.epsilon, budget.epsilon / np.maximum(norms, _TINY), 1.0)
    return delta * scale


def clip_domain(x: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def _unit_rows(g: np.ndarray) -> np.ndarray:
    # zero rows stay zero rather than dividing by zero
    norms = _row_norms(g)
    return g / np.where(norms > 0.0, norms, 1.0)


def _per_example_rngs(seed: int, n: int) -> list:
    return [np.random.default_rng([int(seed), i]) for i in range(n)]


def _ball_sample(rng, d: int, budget: Budget) -> np.ndarray:
    """One draw from the uniform distribution over the epsilon ball."""
    if budget.norm == "linf":
        return rng.uniform(-budget.epsilon, budget.epsilon, size=d)
    direction = rng.standard_normal(d)
    norm = np.sqrt((direction * direction).sum())
    if norm == 0.0:
        return np.zeros(d)
    # radius ~ eps * U^(1/d) makes the density uniform over the ball volume
    radius = budget.epsilon * rng.random() ** (1.0 / d)
    return direction * (radius / norm)


def make_generation_loss(name: str, model: Model, params: ModelParams, x_clean: np.ndarray):
    """Loss the adversary ascends: plain CE, or the KL term used by TRADES.

    Returns a callable (adv logits, labels) -> (value, d value / d logits).
    """
    if name == "ce":
        return ce_loss_spec
    if name != "trades_kl":
        raise ConfigError(f"unknown generation loss {name!r}")
    probs_clean = softmax(model.forward(params, x_clean))

    def kl_spec(logits, y):
        n = len(logits)
        probs_adv = softmax(logits)
        safe_adv = np.maximum(probs_adv, _TINY)
        per = (probs_clean * (np.log(np.maximum(probs_clean, _TINY)) - np.log(safe_adv))).sum(
            axis=1
        )
        return per.mean(), (probs_adv - probs_clean) / n

    return kl_spec


def pgd(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    budget: Budget,
    seed: int = 0,
    generation: str = "ce",
) -> np.ndarray:
    """Iterated gradient ascent with projection and domain clipping.

    Signed steps under linf, unit-gradient steps under l2. With one step, no
    random start, and step_size equal to epsilon this reduces exactly to FGSM.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    y2 = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n, d = x2.shape

    loss_spec = make_generation_loss(generation, model, params, x2)

    x_adv = x2.copy()
    if budget.random_start and budget.epsilon > 0.0:
        rngs = _per_example_rngs(seed, n)
        start = np.stack([_ball_sample(r, d, budget) for r in rngs])
        x_adv = clip_domain(x2 + project(start, budget))

    for _ in range(budget.num_steps):
        cache = model.forward_cache(params, x_adv)
        _, dlogits = loss_spec(cache.stages[-1], y2)
        _, g = model.backward(params, cache, {model.num_layers - 1: dlogits})
        if not np.isfinite(g).all():
            raise NumericError("non-finite attack gradient")
        if budget.norm == "linf":
            step = budget.step_size * np.sign(g)
        else:
            step = budget.step_size * _unit_rows(g)
        x_adv = clip_domain(x2 + project(x_adv + step - x2, budget))

    return x_adv[0] if single else x_adv


def fgsm(
    model: Model, params: ModelParams, x: np.ndarray, y: np.ndarray, budget: Budget
) -> np.ndarray:
    """Single step of size epsilon along the (signed / normalized) gradient."""
    one_step = replace(
        budget, step_size=budget.epsilon, num_steps=1, random_start=False
    )
    return pgd(model, params, x, y, one_step, seed=0, generation="ce")


def random_perturb(x: np.ndarray, budget: Budget, seed: int = 0) -> np.ndarray:
    """Uniform draw from the budget ball around each example, then clip."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    n, d = x2.shape
    if budget.epsilon == 0.0:
        out = clip_domain(x2)
    else:
        rngs = _per_example_rngs(seed, n)
        delta = np.stack([_ball_sample(r, d, budget) for r in rngs])
        out = clip_domain(x2 + delta)
    return out[0] if single else out
