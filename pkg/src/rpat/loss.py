"""Training objectives.

Four methods share one entry point (`batch_loss`):

  pgd_at       CE(p(x_adv), y)
  trades       CE(p(x), y) + beta * KL(p(x) || p(x_adv))
  rpat         CE(p(x_adv), y) + lambda * D(u, v)
  trades_rpat  CE(p(x), y) + beta * KL(p(x) || p(x_adv)) + lambda * D(u, v)

where u and v are the two slope residuals of the perception along the
segment from x to x_adv, measured at an interpolation point x_mid:

  u = (h(x_mid) - h(x)) / alpha        v = (h(x_adv) - h(x_mid)) / (1 - alpha)

For an affine perception u == v exactly, so the regularizer D(u, v) only
penalizes curvature of the perception across the perturbation segment.
Every loss returns its exact parameter gradient, assembled by injecting the
hand-derived divergence gradients into the model's backward pass at the
chosen perception stage across the (up to three) forward passes involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .model import Model, ModelParams, PerceptionProxy, ce_loss_spec, log_softmax, softmax

DIVERGENCES = ("mse", "kl", "js", "cosine")
ALPHA_MODES = ("fixed", "beta_minus", "beta_plus")
METHODS = ("pgd_at", "trades", "rpat", "trades_rpat")

ALPHA_FLOOR = 1e-4  # keeps the 1/alpha and 1/(1-alpha) factors bounded
COSINE_NORM_FLOOR = 1e-12
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class RpatConfig:
    """Settings of the perception regularizer."""

    lambda_: float = 1.0
    alpha: float = 0.5
    alpha_mode: str = "fixed"
    divergence: str = "mse"
    proxy: PerceptionProxy = field(default_factory=PerceptionProxy)

    def __post_init__(self):
        if self.lambda_ < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"unknown alpha_mode {self.alpha_mode!r}")
        # endpoints are excluded: both residual denominators must stay finite
        if self.alpha_mode == "fixed" and not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"fixed alpha must lie strictly in (0, 1), got {self.alpha}")
        if self.divergence not in DIVERGENCES:
            raise ConfigError(f"unknown divergence {self.divergence!r}")
        if isinstance(self.proxy, str):
            object.__setattr__(self, "proxy", PerceptionProxy(self.proxy))


@dataclass(frozen=True)
class LossConfig:
    """Method selector plus every knob any of the four methods reads."""

    method: str = "rpat"
    lambda_: float = 1.0
    beta: float = 6.0
    alpha: float = 0.5
    alpha_mode: str = "fixed"
    divergence: str = "mse"
    proxy: str = "logits"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown loss method {self.method!r}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        self.rpat()  # validates the shared fields

    def rpat(self) -> RpatConfig:
        return RpatConfig(
            lambda_=self.lambda_,
            alpha=self.alpha,
            alpha_mode=self.alpha_mode,
            divergence=self.divergence,
            proxy=PerceptionProxy(self.proxy),
        )


@dataclass(frozen=True)
class InterpolationTriple:
    """A segment endpoint pair with its interpolation point."""

    x: np.ndarray
    x_adv: np.ndarray
    x_mid: np.ndarray
    alpha: float

    def __post_init__(self):
        expected = self.x + self.alpha * (self.x_adv - self.x)
        if not np.allclose(self.x_mid, expected, rtol=0.0, atol=1e-12):
            raise ContractError("x_mid does not lie at alpha along [x, x_adv]")


def interpolate(x: np.ndarray, x_adv: np.ndarray, alpha: float) -> InterpolationTriple:
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_mid = x + alpha * (x_adv - x)
    return InterpolationTriple(x=x, x_adv=x_adv, x_mid=x_mid, alpha=float(alpha))


def sample_alpha(config: RpatConfig, rng=None) -> float:
    """One interpolation coefficient per call, clamped away from {0, 1}."""
    if config.alpha_mode == "fixed":
        alpha = config.alpha
    else:
        if rng is None:
            raise ConfigError("beta alpha modes need an rng")
        b = rng.beta(0.75, 0.75)
        alpha = min(b, 1.0 - b) if config.alpha_mode == "beta_minus" else max(b, 1.0 - b)
    return float(min(max(alpha, ALPHA_FLOOR), 1.0 - ALPHA_FLOOR))


def cross_entropy(p: np.ndarray, y: int) -> float:
    """-log p_y for a probability vector; p_y is floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or (p < 0.0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ContractError("cross_entropy expects one probability vector")
    return float(-np.log(max(p[int(y)], PROB_FLOOR)))


def perception_residuals(
    model: Model,
    params: ModelParams,
    triple: InterpolationTriple,
    proxy: PerceptionProxy,
):
    """The two slope residuals (u, v) of the perception along the segment."""
    if not (0.0 < triple.alpha < 1.0):
        raise ContractError(f"alpha must lie strictly in (0, 1), got {triple.alpha}")
    h_x = model.perception(params, triple.x, proxy)
    h_mid = model.perception(params, triple.x_mid, proxy)
    h_adv = model.perception(params, triple.x_adv, proxy)
    u = (h_mid - h_x) / triple.alpha
    v = (h_adv - h_mid) / (1.0 - triple.alpha)
    return u, v


# -- divergences ---------------------------------------------------------------
#
# Each kind returns per-example values and the exact per-example gradients
# with respect to u and v. kl and js act on softmax(u), softmax(v): residuals
# are not probability vectors, so they pass through the minimal monotone map
# onto the simplex first. cosine is defined as 0 (with zero gradients) when
# either residual norm falls below 1e-12.


def _divergence_parts(u: np.ndarray, v: np.ndarray, kind: str):
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise ContractError("residual vectors must have equal shape")
    m = u.shape[1]

    if kind == "mse":
        diff = u - v
        vals = (diff * diff).mean(axis=1)
        du = 2.0 * diff / m
        return vals, du, -du

    if kind == "kl":
        log_a, log_b = log_softmax(u), log_softmax(v)
        a, b = np.exp(log_a), np.exp(log_b)
        s = log_a - log_b
        vals = (a * s).sum(axis=1)
        du = a * (s - (a * s).sum(axis=1, keepdims=True))
        dv = b - a
        return vals, du, dv

    if kind == "js":
        log_a, log_b = log_softmax(u), log_softmax(v)
        a, b = np.exp(log_a), np.exp(log_b)
        mix = 0.5 * (a + b)
        log_mix = np.log(np.maximum(mix, PROB_FLOOR))
        vals = 0.5 * (a * (log_a - log_mix)).sum(axis=1) + 0.5 * (
            b * (log_b - log_mix)
        ).sum(axis=1)
        ga = 0.5 * (log_a - log_mix)
        gb = 0.5 * (log_b - log_mix)
        du = a * (ga - (a * ga).sum(axis=1, keepdims=True))
        dv = b * (gb - (b * gb).sum(axis=1, keepdims=True))
        return vals, du, dv

    if kind == "cosine":
        nu = np.sqrt((u * u).sum(axis=1, keepdims=True))
        nv = np.sqrt((v * v).sum(axis=1, keepdims=True))
        live = (nu > COSINE_NORM_FLOOR) & (nv > COSINE_NORM_FLOOR)
        nu_s = np.where(live, nu, 1.0)
        nv_s = np.where(live, nv, 1.0)
        dot = (u * v).sum(axis=1, keepdims=True)
        cos = dot / (nu_s * nv_s)
        vals = np.where(live[:, 0], 1.0 - cos[:, 0], 0.0)
        du = np.where(live, -(v / (nu_s * nv_s) - cos * u / (nu_s * nu_s)), 0.0)
        dv = np.where(live, -(u / (nu_s * nv_s) - cos * v / (nv_s * nv_s)), 0.0)
        return vals, du, dv

    raise ConfigError(f"unknown divergence {kind!r}")


def divergence(u: np.ndarray, v: np.ndarray, kind: str) -> float:
    """Scalar dissimilarity of two residual vectors; 0 when u == v."""
    vals, _, _ = _divergence_parts(u, v, kind)
    return float(vals.mean())


# -- composite losses ----------------------------------------------------------


@dataclass(frozen=True)
class LossResult:
    """Batch loss with its decomposition and exact parameter gradient."""

    total: float
    ce_term: float
    rp_term: float  # weighted regularizer contribution; total = ce + rp
    grad: np.ndarray
    alpha: float | None = None


def _add_tap(taps: dict, layer: int, g: np.ndarray):
    taps[layer] = g if layer not in taps else taps[layer] + g


def _kl_clean_adv(logits_clean, logits_adv):
    """Mean KL(p_clean || p_adv) with gradients for both logit sets."""
    n = len(logits_clean)
    log_a, log_b = log_softmax(logits_clean), log_softmax(logits_adv)
    a, b = np.exp(log_a), np.exp(log_b)
    s = log_a - log_b
    value = (a * s).sum(axis=1).mean()
    d_clean = a * (s - (a * s).sum(axis=1, keepdims=True)) / n
    d_adv = (b - a) / n
    return value, d_clean, d_adv


def rpat_loss(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    x_adv: np.ndarray,
    config: RpatConfig,
    rng=None,
    alpha: float | None = None,
) -> LossResult:
    """CE on the adversarial batch plus the weighted perception penalty.

    One alpha is drawn per batch. With lambda == 0 the extra forward passes
    are skipped entirely, so the result is bit-for-bit the plain AT loss.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_adv = np.atleast_2d(np.asarray(x_adv, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = len(x)
    if alpha is None:
        alpha = sample_alpha(config, rng)

    last = model.num_layers - 1
    cache_adv = model.forward_cache(params, x_adv)
    ce_val, dlogits = ce_loss_spec(cache_adv.stages[-1], y)

    if config.lambda_ == 0.0:
        grad, _ = model.backward(params, cache_adv, {last: dlogits})
        return LossResult(float(ce_val), float(ce_val), 0.0, grad, alpha)

    layer = model.perception_layer(config.proxy)
    triple = interpolate(x, x_adv, alpha)
    cache_x = model.forward_cache(params, x)
    cache_mid = model.forward_cache(params, triple.x_mid)
    u = (cache_mid.stages[layer] - cache_x.stages[layer]) / alpha
    v = (cache_adv.stages[layer] - cache_mid.stages[layer]) / (1.0 - alpha)
    vals, du, dv = _divergence_parts(u, v, config.divergence)
    rp_val = config.lambda_ * vals.mean()

    w = config.lambda_ / n
    taps_adv = {last: dlogits}
    _add_tap(taps_adv, layer, w * dv / (1.0 - alpha))
    g_adv, _ = model.backward(params, cache_adv, taps_adv)
    g_mid, _ = model.backward(
        params, cache_mid, {layer: w * (du / alpha - dv / (1.0 - alpha))}
    )
    g_x, _ = model.backward(params, cache_x, {layer: -w * du / alpha})
    total = float(ce_val + rp_val)
    return LossResult(total, float(ce_val), float(rp_val), g_adv + g_mid + g_x, alpha)


def trades_loss(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    x_adv: np.ndarray,
    beta: float,
) -> LossResult:
    """Clean CE plus beta times KL between clean and adversarial predictions."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_adv = np.atleast_2d(np.asarray(x_adv, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    last = model.num_layers - 1

    cache_x = model.forward_cache(params, x)
    ce_val, d_ce = ce_loss_spec(cache_x.stages[-1], y)
    if beta == 0.0:
        grad, _ = model.backward(params, cache_x, {last: d_ce})
        return LossResult(float(ce_val), float(ce_val), 0.0, grad)

    cache_adv = model.forward_cache(params, x_adv)
    kl_val, d_clean, d_adv = _kl_clean_adv(cache_x.stages[-1], cache_adv.stages[-1])
    g_x, _ = model.backward(params, cache_x, {last: d_ce + beta * d_clean})
    g_adv, _ = model.backward(params, cache_adv, {last: beta * d_adv})
    total = float(ce_val + beta * kl_val)
    return LossResult(total, float(ce_val), float(beta * kl_val), g_x + g_adv)


def trades_rpat_loss(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    x_adv: np.ndarray,
    config: RpatConfig,
    beta: float,
    rng=None,
    alpha: float | None = None,
) -> LossResult:
    """The TRADES objective with the perception penalty stacked on top."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_adv = np.atleast_2d(np.asarray(x_adv, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = len(x)
    if alpha is None:
        alpha = sample_alpha(config, rng)
    last = model.num_layers - 1

    cache_x = model.forward_cache(params, x)
    cache_adv = model.forward_cache(params, x_adv)
    ce_val, d_ce = ce_loss_spec(cache_x.stages[-1], y)
    kl_val, d_clean, d_adv = _kl_clean_adv(cache_x.stages[-1], cache_adv.stages[-1])

    taps_x = {last: d_ce + beta * d_clean}
    taps_adv = {last: beta * d_adv}
    reg_val = beta * kl_val

    if config.lambda_ > 0.0:
        layer = model.perception_layer(config.proxy)
        triple = interpolate(x, x_adv, alpha)
        cache_mid = model.forward_cache(params, triple.x_mid)
        u = (cache_mid.stages[layer] - cache_x.stages[layer]) / alpha
        v = (cache_adv.stages[layer] - cache_mid.stages[layer]) / (1.0 - alpha)
        vals, du, dv = _divergence_parts(u, v, config.divergence)
        w = config.lambda_ / n
        reg_val += config.lambda_ * vals.mean()
        _add_tap(taps_x, layer, -w * du / alpha)
        _add_tap(taps_adv, layer, w * dv / (1.0 - alpha))
        g_mid, _ = model.backward(
            params, cache_mid, {layer: w * (du / alpha - dv / (1.0 - alpha))}
        )
    else:
        g_mid = 0.0

    g_x, _ = model.backward(params, cache_x, taps_x)
    g_adv, _ = model.backward(params, cache_adv, taps_adv)
    total = float(ce_val + reg_val)
    return LossResult(total, float(ce_val), float(reg_val), g_x + g_adv + g_mid, alpha)


def batch_loss(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    x_adv: np.ndarray,
    config: LossConfig,
    rng=None,
    alpha: float | None = None,
) -> LossResult:
    """Dispatch to the configured training objective."""
    if config.method == "pgd_at":
        cfg = RpatConfig(lambda_=0.0, proxy=PerceptionProxy(config.proxy))
        return rpat_loss(model, params, x, y, x_adv, cfg, rng, alpha)
    if config.method == "rpat":
        return rpat_loss(model, params, x, y, x_adv, config.rpat(), rng, alpha)
    if config.method == "trades":
        return trades_loss(model, params, x, y, x_adv, config.beta)
    return trades_rpat_loss(
        model, params, x, y, x_adv, config.rpat(), config.beta, rng, alpha
    )


def rp_penalty(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    x_adv: np.ndarray,
    divergence_kind: str,
    proxy: PerceptionProxy,
    alpha: float = 0.5,
) -> float:
    """Unweighted mean perception penalty of a batch, for diagnostics."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_adv = np.atleast_2d(np.asarray(x_adv, dtype=np.float64))
    triple = interpolate(x, x_adv, alpha)
    layer = model.perception_layer(proxy)
    h_x = model.perception(params, triple.x, proxy)
    h_mid = model.perception(params, triple.x_mid, proxy)
    h_adv = model.perception(params, triple.x_adv, proxy)
    u = (h_mid - h_x) / alpha
    v = (h_adv - h_mid) / (1.0 - alpha)
    vals, _, _ = _divergence_parts(u, v, divergence_kind)
    return float(vals.mean())
