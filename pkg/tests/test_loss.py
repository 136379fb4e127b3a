"""Objectives: divergences, residuals, alpha sampling, composite losses."""

import numpy as np
import pytest

from helpers import fd_grad, loss_fixture, make_mlp, rel_err
from rpat.errors import ConfigError, ContractError
from rpat.loss import (
    ALPHA_FLOOR,
    DIVERGENCES,
    InterpolationTriple,
    LossConfig,
    RpatConfig,
    batch_loss,
    cross_entropy,
    divergence,
    interpolate,
    perception_residuals,
    rp_penalty,
    rpat_loss,
    sample_alpha,
    trades_loss,
    trades_rpat_loss,
)
from rpat.loss import _divergence_parts
from rpat.model import ArchitectureDescriptor, Model, ModelParams, PerceptionProxy

# independently derived decimals (plain-math evaluation, frozen):
# KL([.5,.5] || [.8,.2]) and JS of the same pair; cosine of orthogonal-ish pair
KL_HALF_VS_82 = 0.22314355131420976
JS_HALF_VS_82 = 0.05067183698556589
COS_45_DEG = 0.29289321881345254
LOG4 = 1.3862943611198906


# -- configuration types ---------------------------------------------------


def test_rpat_config_validation():
    RpatConfig(lambda_=0.0)
    with pytest.raises(ConfigError):
        RpatConfig(lambda_=-0.5)
    with pytest.raises(ConfigError):
        RpatConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        RpatConfig(alpha=1.0)
    with pytest.raises(ConfigError):
        RpatConfig(alpha_mode="uniform")
    with pytest.raises(ConfigError):
        RpatConfig(divergence="wasserstein")
    cfg = RpatConfig(proxy="penultimate")
    assert cfg.proxy == PerceptionProxy("penultimate")


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(method="mart")
    with pytest.raises(ConfigError):
        LossConfig(beta=-1.0)
    with pytest.raises(ConfigError):
        LossConfig(alpha=1.0)
    rc = LossConfig(method="rpat", lambda_=2.0, divergence="js").rpat()
    assert rc.lambda_ == 2.0 and rc.divergence == "js"


# -- interpolation and alpha ------------------------------------------------


def test_interpolate_endpoints_and_midpoint():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(3, 4))
    x_adv = rng.uniform(size=(3, 4))
    near_x = interpolate(x, x_adv, 1e-9)
    assert np.allclose(near_x.x_mid, x, atol=1e-8)
    near_adv = interpolate(x, x_adv, 1.0 - 1e-9)
    assert np.allclose(near_adv.x_mid, x_adv, atol=1e-8)
    mid = interpolate(x, x_adv, 0.5)
    assert np.allclose(mid.x_mid, (x + x_adv) / 2.0, atol=1e-15)
    assert mid.alpha == 0.5


def test_interpolation_triple_rejects_off_segment():
    x = np.zeros(2)
    x_adv = np.ones(2)
    with pytest.raises(ContractError):
        InterpolationTriple(x=x, x_adv=x_adv, x_mid=np.array([0.5, 0.7]), alpha=0.5)


def test_sample_alpha_fixed():
    assert sample_alpha(RpatConfig(alpha=0.5)) == 0.5
    assert sample_alpha(RpatConfig(alpha=0.2)) == 0.2


def test_sample_alpha_order_statistics():
    rng = np.random.default_rng(1)
    lo_cfg = RpatConfig(alpha_mode="beta_minus")
    hi_cfg = RpatConfig(alpha_mode="beta_plus")
    for _ in range(200):
        assert ALPHA_FLOOR <= sample_alpha(lo_cfg, rng) <= 0.5
    for _ in range(200):
        assert 0.5 <= sample_alpha(hi_cfg, rng) <= 1.0 - ALPHA_FLOOR
    with pytest.raises(ConfigError):
        sample_alpha(lo_cfg)  # rng is required for the sampling modes


def test_sample_alpha_beta_minus_monte_carlo():
    # mean of min(b, 1-b), b ~ Beta(0.75, 0.75), against a direct-sampling
    # oracle drawn from an independent generator
    rng = np.random.default_rng(2)
    cfg = RpatConfig(alpha_mode="beta_minus")
    draws = np.array([sample_alpha(cfg, rng) for _ in range(100_000)])
    oracle_b = np.random.default_rng(999).beta(0.75, 0.75, size=100_000)
    oracle = np.minimum(oracle_b, 1.0 - oracle_b).mean()
    assert abs(draws.mean() - oracle) < 1e-2


# -- cross entropy ----------------------------------------------------------


def test_cross_entropy_values():
    assert cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert abs(cross_entropy(np.array([0.5, 0.5]), 0) - np.log(2.0)) < 1e-15
    assert abs(cross_entropy(np.array([0.25, 0.25, 0.25, 0.25]), 3) - LOG4) < 1e-15
    # floored at 1e-12 instead of diverging
    assert cross_entropy(np.array([0.0, 1.0]), 0) == pytest.approx(-np.log(1e-12))
    with pytest.raises(ContractError):
        cross_entropy(np.array([0.7, 0.7]), 0)
    with pytest.raises(ContractError):
        cross_entropy(np.array([-0.1, 1.1]), 0)


# -- residuals ---------------------------------------------------------------


class _QuadPerception:
    """Stand-in whose perception is the componentwise square."""

    def perception(self, params, X, proxy):
        return np.asarray(X, dtype=np.float64) ** 2


def test_perception_residuals_quadratic_oracle():
    triple = interpolate(np.array([[0.0]]), np.array([[1.0]]), 0.5)
    u, v = perception_residuals(_QuadPerception(), None, triple, None)
    # hand evaluation at 0, 0.5, 1: u=(0.25-0)/0.5, v=(1-0.25)/0.5
    assert np.allclose(u, [[0.5]], atol=1e-15)
    assert np.allclose(v, [[1.5]], atol=1e-15)


def test_perception_residuals_affine_equal():
    desc = ArchitectureDescriptor(kind="mlp", input_shape=(3,), hidden=(), num_classes=2)
    model = Model(desc)
    params = ModelParams(np.random.default_rng(3).normal(size=model.num_params))
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(5, 3))
    x_adv = rng.uniform(size=(5, 3))
    u, v = perception_residuals(
        model, params, interpolate(x, x_adv, 0.3), PerceptionProxy("logits")
    )
    assert np.allclose(u, v, atol=1e-12)


def test_perception_residuals_zero_delta():
    model = make_mlp()
    params = ModelParams(np.random.default_rng(5).normal(size=model.num_params))
    x = np.random.default_rng(6).uniform(size=(2, 3))
    u, v = perception_residuals(
        model, params, interpolate(x, x, 0.5), PerceptionProxy("logits")
    )
    assert np.allclose(u, 0.0, atol=1e-12) and np.allclose(v, 0.0, atol=1e-12)


def test_perception_residuals_endpoint_alpha_rejected():
    model = make_mlp()
    params = model.zero_params()
    x = np.zeros((1, 3))
    triple = InterpolationTriple(x=x, x_adv=x, x_mid=x, alpha=0.0)
    with pytest.raises(ContractError):
        perception_residuals(model, params, triple, PerceptionProxy("logits"))


# -- divergences --------------------------------------------------------------


def test_divergence_identity_is_zero():
    rng = np.random.default_rng(7)
    u = rng.normal(size=(4, 5))
    for kind in DIVERGENCES:
        assert abs(divergence(u, u.copy(), kind)) < 1e-14


def test_divergence_oracles():
    assert divergence(np.array([1.0, 0.0]), np.array([0.0, 1.0]), "mse") == 1.0
    ln2 = np.log(2.0)
    assert abs(
        divergence(np.array([0.0, 0.0]), np.array([ln2, -ln2]), "kl") - KL_HALF_VS_82
    ) < 1e-15
    assert abs(
        divergence(np.array([0.0, 0.0]), np.array([ln2, -ln2]), "js") - JS_HALF_VS_82
    ) < 1e-15
    assert abs(
        divergence(np.array([1.0, 0.0]), np.array([1.0, 1.0]), "cosine") - COS_45_DEG
    ) < 1e-15


def test_divergence_cosine_range_and_degenerate():
    assert abs(divergence(np.array([2.0, 0.0]), np.array([5.0, 0.0]), "cosine")) < 1e-15
    assert abs(divergence(np.array([1.0, 0.0]), np.array([-3.0, 0.0]), "cosine") - 2.0) < 1e-15
    # either norm under the floor: defined as 0 with zero gradients
    vals, du, dv = _divergence_parts(np.zeros((1, 3)), np.ones((1, 3)), "cosine")
    assert vals[0] == 0.0 and (du == 0.0).all() and (dv == 0.0).all()


def test_divergence_js_symmetric_and_bounded():
    rng = np.random.default_rng(8)
    for _ in range(20):
        u = rng.normal(size=(1, 4))
        v = rng.normal(size=(1, 4))
        a = divergence(u, v, "js")
        b = divergence(v, u, "js")
        assert abs(a - b) < 1e-14
        assert 0.0 <= a <= np.log(2.0) + 1e-12


def test_divergence_nonnegative():
    rng = np.random.default_rng(9)
    for kind in DIVERGENCES:
        for _ in range(20):
            u = rng.normal(size=(3, 4))
            v = rng.normal(size=(3, 4))
            assert divergence(u, v, kind) >= -1e-14


def test_divergence_shape_contract_and_unknown_kind():
    with pytest.raises(ContractError):
        divergence(np.zeros((1, 3)), np.zeros((1, 4)), "mse")
    with pytest.raises(ConfigError):
        divergence(np.zeros(3), np.zeros(3), "hellinger")


def test_divergence_gradients_fd():
    rng = np.random.default_rng(10)
    for kind in DIVERGENCES:
        for _ in range(5):
            u = rng.normal(size=(2, 4))
            v = rng.normal(size=(2, 4)) + 0.1
            _, du, dv = _divergence_parts(u, v, kind)

            gu = fd_grad(lambda f: _divergence_parts(f.reshape(2, 4), v, kind)[0].sum(), u.reshape(-1))
            gv = fd_grad(lambda f: _divergence_parts(u, f.reshape(2, 4), kind)[0].sum(), v.reshape(-1))
            assert rel_err(du, gu.reshape(2, 4)) < 1e-7, kind
            assert rel_err(dv, gv.reshape(2, 4)) < 1e-7, kind


# -- composite losses ---------------------------------------------------------


def test_rpat_loss_lambda_zero_equals_pgd_at():
    model = make_mlp()
    params, X, y, x_adv = loss_fixture(model, seed=30, batch=4, alpha=0.5)
    zero = rpat_loss(model, params, X, y, x_adv, RpatConfig(lambda_=0.0), alpha=0.5)
    at = batch_loss(model, params, X, y, x_adv, LossConfig(method="pgd_at"), alpha=0.5)
    assert zero.total == at.total
    assert zero.rp_term == 0.0
    assert zero.grad.tobytes() == at.grad.tobytes()


def test_rpat_loss_decomposition_and_alpha():
    model = make_mlp()
    params, X, y, x_adv = loss_fixture(model, seed=31, batch=4, alpha=0.37)
    cfg = RpatConfig(lambda_=1.5, divergence="mse")
    res = rpat_loss(model, params, X, y, x_adv, cfg, alpha=0.37)
    assert res.alpha == 0.37
    assert res.rp_term >= 0.0
    assert abs(res.total - (res.ce_term + res.rp_term)) < 1e-12


def test_rpat_loss_affine_model_rp_zero():
    desc = ArchitectureDescriptor(kind="mlp", input_shape=(3,), hidden=(), num_classes=2)
    model = Model(desc)
    params = ModelParams(np.random.default_rng(11).normal(size=model.num_params))
    rng = np.random.default_rng(12)
    X = rng.uniform(size=(4, 3))
    x_adv = rng.uniform(size=(4, 3))
    y = rng.integers(0, 2, size=4)
    res = rpat_loss(model, params, X, y, x_adv, RpatConfig(lambda_=3.0), alpha=0.4)
    assert abs(res.rp_term) < 1e-12
    assert abs(res.total - res.ce_term) < 1e-12


def test_rpat_loss_straight_line_oracle():
    # two examples through a hand-set 2->2->2 network, recomputed step by
    # step with independent numpy expressions
    desc = ArchitectureDescriptor(kind="mlp", input_shape=(2,), hidden=(2,), num_classes=2)
    model = Model(desc)
    flat = np.array([0.8, -0.3, 0.2, 0.9, 0.05, 0.1, 1.1, -0.7, 0.4, 0.6, -0.2, 0.3])
    params = ModelParams(flat)
    X = np.array([[0.2, 0.7], [0.6, 0.3]])
    x_adv = np.array([[0.25, 0.6], [0.5, 0.35]])
    y = np.array([0, 1])
    alpha = 0.5
    res = rpat_loss(model, params, X, y, x_adv, RpatConfig(lambda_=2.0), alpha=alpha)

    W0, b0 = flat[:4].reshape(2, 2), flat[4:6]
    W1, b1 = flat[6:10].reshape(2, 2), flat[10:12]

    def logits(P):
        return np.maximum(P @ W0 + b0, 0.0) @ W1 + b1

    x_mid = X + alpha * (x_adv - X)
    za, zx, zm = logits(x_adv), logits(X), logits(x_mid)
    shifted = za - za.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -logp[np.arange(2), y].mean()
    u = (zm - zx) / alpha
    v = (za - zm) / (1.0 - alpha)
    rp = 2.0 * ((u - v) ** 2).mean(axis=1).mean()
    assert abs(res.total - (ce + rp)) < 1e-10
    assert abs(res.ce_term - ce) < 1e-12
    assert abs(res.rp_term - rp) < 1e-12


@pytest.mark.parametrize("kind", DIVERGENCES)
def test_rpat_loss_gradient_fd(kind):
    model = make_mlp(hidden=(5,), d_in=3, num_classes=3)
    params, X, y, x_adv = loss_fixture(model, seed=32, batch=3, alpha=0.37)
    cfg = RpatConfig(lambda_=1.3, divergence=kind)
    res = rpat_loss(model, params, X, y, x_adv, cfg, alpha=0.37)

    def f(flat):
        return rpat_loss(model, ModelParams(flat), X, y, x_adv, cfg, alpha=0.37).total

    numeric = fd_grad(f, params.flat)
    assert rel_err(res.grad, numeric) < 1e-6


@pytest.mark.parametrize("proxy", ["penultimate", "antepenultimate"])
def test_rpat_loss_gradient_fd_hidden_proxies(proxy):
    model = make_mlp(hidden=(5, 4), d_in=3, num_classes=2)
    params, X, y, x_adv = loss_fixture(model, seed=33, batch=3, alpha=0.45)
    cfg = RpatConfig(lambda_=0.8, divergence="mse", proxy=proxy)
    res = rpat_loss(model, params, X, y, x_adv, cfg, alpha=0.45)

    def f(flat):
        return rpat_loss(model, ModelParams(flat), X, y, x_adv, cfg, alpha=0.45).total

    numeric = fd_grad(f, params.flat)
    assert rel_err(res.grad, numeric) < 1e-6


def test_rp_swap_symmetry_mse():
    # traversing the segment from the other end at 1-alpha negates and
    # swaps the residuals, which the squared difference cannot see
    model = make_mlp(hidden=(6,), d_in=3, num_classes=4)
    params, X, y, x_adv = loss_fixture(model, seed=34, batch=4, alpha=0.3)
    proxy = PerceptionProxy("logits")
    direct = rp_penalty(model, params, X, x_adv, "mse", proxy, alpha=0.3)
    swapped = rp_penalty(model, params, x_adv, X, "mse", proxy, alpha=0.7)
    assert abs(direct - swapped) < 1e-12


def test_rp_swap_symmetry_js_two_classes():
    # with two-component residuals softmax(-z) is the coordinate swap of
    # softmax(z), so the js value survives the traversal flip as well
    model = make_mlp(hidden=(6,), d_in=3, num_classes=2)
    params, X, y, x_adv = loss_fixture(model, seed=35, batch=4, alpha=0.25)
    proxy = PerceptionProxy("logits")
    direct = rp_penalty(model, params, X, x_adv, "js", proxy, alpha=0.25)
    swapped = rp_penalty(model, params, x_adv, X, "js", proxy, alpha=0.75)
    assert abs(direct - swapped) < 1e-12


def test_trades_loss_reductions():
    model = make_mlp()
    params, X, y, x_adv = loss_fixture(model, seed=36, batch=4, alpha=0.5)
    plain = trades_loss(model, params, X, y, X.copy(), beta=7.0)
    cache_ce = trades_loss(model, params, X, y, x_adv, beta=0.0)
    assert abs(plain.total - plain.ce_term) < 1e-12  # KL(p||p) = 0
    assert cache_ce.rp_term == 0.0
    assert cache_ce.total == cache_ce.ce_term


def test_trades_loss_gradient_fd():
    model = make_mlp(hidden=(5,), d_in=3, num_classes=3)
    params, X, y, x_adv = loss_fixture(model, seed=37, batch=3, alpha=0.5)
    res = trades_loss(model, params, X, y, x_adv, beta=4.0)

    def f(flat):
        return trades_loss(model, ModelParams(flat), X, y, x_adv, beta=4.0).total

    numeric = fd_grad(f, params.flat)
    assert rel_err(res.grad, numeric) < 1e-6


def test_trades_rpat_loss_gradient_fd():
    model = make_mlp(hidden=(5,), d_in=3, num_classes=3)
    params, X, y, x_adv = loss_fixture(model, seed=38, batch=3, alpha=0.41)
    cfg = RpatConfig(lambda_=0.9, divergence="kl")
    res = trades_rpat_loss(model, params, X, y, x_adv, cfg, beta=3.0, alpha=0.41)

    def f(flat):
        return trades_rpat_loss(
            model, ModelParams(flat), X, y, x_adv, cfg, beta=3.0, alpha=0.41
        ).total

    numeric = fd_grad(f, params.flat)
    assert rel_err(res.grad, numeric) < 1e-6


def test_trades_rpat_lambda_zero_is_trades():
    model = make_mlp()
    params, X, y, x_adv = loss_fixture(model, seed=39, batch=4, alpha=0.5)
    a = trades_rpat_loss(model, params, X, y, x_adv, RpatConfig(lambda_=0.0), beta=5.0, alpha=0.5)
    b = trades_loss(model, params, X, y, x_adv, beta=5.0)
    assert a.total == b.total
    assert a.grad.tobytes() == b.grad.tobytes()


def test_batch_loss_dispatch():
    model = make_mlp()
    params, X, y, x_adv = loss_fixture(model, seed=40, batch=3, alpha=0.5)
    for method in ("pgd_at", "trades", "rpat", "trades_rpat"):
        res = batch_loss(
            model, params, X, y, x_adv, LossConfig(method=method), alpha=0.5
        )
        assert np.isfinite(res.total)
        assert res.grad.shape == (model.num_params,)
    direct = rpat_loss(model, params, X, y, x_adv, LossConfig(method="rpat").rpat(), alpha=0.5)
    routed = batch_loss(model, params, X, y, x_adv, LossConfig(method="rpat"), alpha=0.5)
    assert routed.total == direct.total


def test_rp_penalty_affine_zero():
    desc = ArchitectureDescriptor(kind="mlp", input_shape=(2,), hidden=(), num_classes=2)
    model = Model(desc)
    params = ModelParams(np.random.default_rng(13).normal(size=model.num_params))
    rng = np.random.default_rng(14)
    X = rng.uniform(size=(6, 2))
    x_adv = rng.uniform(size=(6, 2))
    for kind in ("mse", "cosine"):
        assert abs(rp_penalty(model, params, X, x_adv, kind, PerceptionProxy("logits"))) < 1e-12
