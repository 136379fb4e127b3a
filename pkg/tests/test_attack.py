"""Projection, domain clipping, FGSM/PGD behavior, random perturbation."""

import itertools

import numpy as np
import pytest

from helpers import make_mlp
from rpat.attack import (
    Budget,
    clip_domain,
    fgsm,
    make_generation_loss,
    pgd,
    project,
    random_perturb,
)
from rpat.errors import ConfigError, NumericError
from rpat.model import ArchitectureDescriptor, Model, ModelParams, ce_loss_spec, softmax


def _ball_norm(delta, norm):
    if norm == "linf":
        return np.abs(delta).max()
    return float(np.sqrt((np.asarray(delta) ** 2).sum(axis=-1).max()))


def test_budget_validation():
    Budget(epsilon=0.0, step_size=0.0)  # identity attack is allowed
    with pytest.raises(ConfigError):
        Budget(norm="l1")
    with pytest.raises(ConfigError):
        Budget(epsilon=-0.1)
    with pytest.raises(ConfigError):
        Budget(epsilon=np.inf, step_size=0.1)
    with pytest.raises(ConfigError):
        Budget(epsilon=0.1, step_size=0.25)  # step beyond twice the radius
    with pytest.raises(ConfigError):
        Budget(num_steps=0)


def test_project_linf_clamp():
    b = Budget(norm="linf", epsilon=0.1, step_size=0.05)
    assert np.allclose(project(np.array([0.5]), b), [0.1])
    assert np.allclose(project(np.array([-0.5, 0.03]), b), [-0.1, 0.03])


def test_project_l2_three_four_five():
    b = Budget(norm="l2", epsilon=0.05, step_size=0.02)
    out = project(np.array([[0.06, 0.08]]), b)
    assert np.allclose(out, [[0.03, 0.04]], atol=1e-15)


def test_project_inside_ball_unchanged():
    b = Budget(norm="l2", epsilon=0.5, step_size=0.1)
    d = np.array([[0.1, -0.2]])
    assert (project(d, b) == d).all()


def test_project_idempotent_and_contractive():
    rng = np.random.default_rng(0)
    for norm in ("linf", "l2"):
        b = Budget(norm=norm, epsilon=0.3, step_size=0.1)
        d = rng.normal(size=(50, 4))
        once = project(d, b)
        assert np.allclose(project(once, b), once, atol=1e-15)
        assert _ball_norm(once, norm) <= 0.3 * (1 + 1e-12)
        if norm == "l2":
            n_before = np.sqrt((d**2).sum(axis=1))
            n_after = np.sqrt((once**2).sum(axis=1))
            assert (n_after <= np.minimum(n_before, 0.3) * (1 + 1e-12)).all()


def test_project_rejects_nonfinite():
    b = Budget()
    with pytest.raises(NumericError):
        project(np.array([np.nan]), b)


def test_clip_domain():
    assert clip_domain(np.array(1.2)) == 1.0
    assert clip_domain(np.array(-0.1)) == 0.0
    assert clip_domain(np.array(0.5)) == 0.5
    x = np.array([1.2, -0.1, 0.5])
    assert np.allclose(clip_domain(clip_domain(x)), clip_domain(x))


@pytest.fixture(scope="module")
def small_model():
    model = make_mlp(hidden=(6,), d_in=4, num_classes=3)
    params = ModelParams(np.random.default_rng(1).normal(size=model.num_params))
    return model, params


def test_pgd_containment_both_norms(small_model):
    model, params = small_model
    rng = np.random.default_rng(2)
    for norm in ("linf", "l2"):
        b = Budget(norm=norm, epsilon=0.1, step_size=0.03, num_steps=5)
        X = rng.uniform(size=(20, 4))
        y = rng.integers(0, 3, size=20)
        x_adv = pgd(model, params, X, y, b, seed=3)
        assert _ball_norm(x_adv - X, norm) <= 0.1 * (1 + 1e-12)
        assert (x_adv >= 0.0).all() and (x_adv <= 1.0).all()


def test_pgd_deterministic_and_seed_sensitive(small_model):
    model, params = small_model
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(8, 4))
    y = rng.integers(0, 3, size=8)
    b = Budget(epsilon=0.1, step_size=0.025, num_steps=4)
    a1 = pgd(model, params, X, y, b, seed=5)
    a2 = pgd(model, params, X, y, b, seed=5)
    assert a1.tobytes() == a2.tobytes()
    a3 = pgd(model, params, X, y, b, seed=6)
    assert a1.tobytes() != a3.tobytes()


def test_pgd_batch_composition_invariance(small_model):
    # per-example rng comes from (seed, row index): an example attacked
    # alone must equal the same example attacked inside a batch
    model, params = small_model
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    b = Budget(epsilon=0.08, step_size=0.02, num_steps=3)
    full = pgd(model, params, X, y, b, seed=9)
    first = pgd(model, params, X[0], y[0], b, seed=9)
    assert (full[0] == first).all()


def test_pgd_epsilon_zero_is_identity(small_model):
    model, params = small_model
    X = np.random.default_rng(8).uniform(size=(4, 4))
    y = np.zeros(4, dtype=np.int64)
    b = Budget(epsilon=0.0, step_size=0.0, num_steps=2)
    assert (pgd(model, params, X, y, b, seed=0) == X).all()


def test_pgd_single_example_shape(small_model):
    model, params = small_model
    x = np.full(4, 0.5)
    out = pgd(model, params, x, 1, Budget(epsilon=0.05, step_size=0.02), seed=0)
    assert out.shape == (4,)


def test_pgd_ascends_loss(small_model):
    model, params = small_model
    rng = np.random.default_rng(10)
    X = rng.uniform(0.2, 0.8, size=(16, 4))
    y = rng.integers(0, 3, size=16)
    b = Budget(epsilon=0.1, step_size=0.025, num_steps=10)
    x_adv = pgd(model, params, X, y, b, seed=1)
    before, _ = ce_loss_spec(model.forward(params, X), y)
    after, _ = ce_loss_spec(model.forward(params, x_adv), y)
    assert after > before


def test_pgd_ten_beats_fgsm_on_average(small_model):
    model, params = small_model
    rng = np.random.default_rng(11)
    X = rng.uniform(0.25, 0.75, size=(32, 4))
    y = rng.integers(0, 3, size=32)
    b = Budget(epsilon=0.1, step_size=0.025, num_steps=10)
    loss_pgd, _ = ce_loss_spec(model.forward(params, pgd(model, params, X, y, b, seed=2)), y)
    loss_fgsm, _ = ce_loss_spec(model.forward(params, fgsm(model, params, X, y, b)), y)
    assert loss_pgd >= loss_fgsm - 1e-12


def test_fgsm_equals_one_step_pgd_bitwise(small_model):
    model, params = small_model
    rng = np.random.default_rng(12)
    X = rng.uniform(size=(10, 4))
    y = rng.integers(0, 3, size=10)
    base = Budget(epsilon=0.07, step_size=0.02, num_steps=9, random_start=True)
    collapsed = Budget(
        norm=base.norm, epsilon=0.07, step_size=0.07, num_steps=1, random_start=False
    )
    assert fgsm(model, params, X, y, base).tobytes() == pgd(
        model, params, X, y, collapsed, seed=0
    ).tobytes()


def test_fgsm_linear_closed_form():
    # linear 2-class model: CE gradient direction is w2-w1 scaled by the
    # class-0 probability, so the signed step is fixed by the weight gap
    desc = ArchitectureDescriptor(kind="mlp", input_shape=(3,), hidden=(), num_classes=2)
    model = Model(desc)
    W = np.array([[0.5, -0.2], [-0.3, 0.4], [0.1, 0.1]])
    flat = np.concatenate([W.reshape(-1), np.zeros(2)])
    params = ModelParams(flat)
    x = np.full(3, 0.5)
    y = 0
    eps = 0.1
    out = fgsm(model, params, x, y, Budget(epsilon=eps, step_size=eps))
    expected = np.clip(x + eps * np.sign(W[:, 1] - W[:, 0]), 0.0, 1.0)
    assert np.allclose(out, expected, atol=1e-15)


def test_fgsm_zero_gradient_returns_x():
    model = make_mlp(hidden=(4,), d_in=3, num_classes=2)
    x = np.full(3, 0.5)
    out = fgsm(model, model.zero_params(), x, 0, Budget(epsilon=0.1, step_size=0.1))
    assert (out == x).all()


def test_fgsm_epsilon_zero():
    model = make_mlp(hidden=(4,), d_in=3, num_classes=2)
    params = ModelParams(np.random.default_rng(13).normal(size=model.num_params))
    x = np.full(3, 0.5)
    out = fgsm(model, params, x, 0, Budget(epsilon=0.0, step_size=0.0))
    assert (out == x).all()


def test_fgsm_exhaustive_sign_enumeration():
    # 2-class linear model: CE is monotone in the logit margin, which is
    # linear in the perturbation, so the best vertex of the linf cube is
    # exactly the FGSM point; verify against all 2^d sign patterns
    rng = np.random.default_rng(14)
    for d in (2, 4, 8):
        desc = ArchitectureDescriptor(kind="mlp", input_shape=(d,), hidden=(), num_classes=2)
        model = Model(desc)
        for trial in range(5):
            flat = rng.normal(size=model.num_params)
            params = ModelParams(flat)
            eps = 0.1
            x = rng.uniform(0.2, 0.8, size=d)  # interior: clipping inactive
            y = int(rng.integers(0, 2))
            attacked = fgsm(model, params, x, y, Budget(epsilon=eps, step_size=eps))
            best = -np.inf
            for signs in itertools.product((-1.0, 1.0), repeat=d):
                vertex = x + eps * np.array(signs)
                val, _ = ce_loss_spec(model.forward(params, vertex[None, :]), [y])
                best = max(best, val)
            achieved, _ = ce_loss_spec(model.forward(params, attacked[None, :]), [y])
            assert achieved >= best - 1e-12


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_pgd_nonfinite_gradient_raises():
    model = make_mlp(hidden=(4,), d_in=3, num_classes=2)
    huge = ModelParams(np.full(model.num_params, 1e200))
    with pytest.raises(NumericError):
        pgd(
            model,
            huge,
            np.full((1, 3), 0.5),
            np.array([0]),
            Budget(epsilon=0.1, step_size=0.05, random_start=False),
        )


def test_generation_loss_trades_kl(small_model):
    model, params = small_model
    rng = np.random.default_rng(15)
    X = rng.uniform(size=(6, 4))
    spec = make_generation_loss("trades_kl", model, params, X)
    logits_same = model.forward(params, X)
    val, d = spec(logits_same, None)
    assert abs(val) < 1e-12  # KL against itself
    assert np.allclose(d, 0.0, atol=1e-12)
    # gradient matches finite differences of the KL value
    logits = rng.normal(size=(6, 3))
    probs_clean = softmax(logits_same)

    def kl_value(flat_logits):
        z = flat_logits.reshape(6, 3)
        pa = softmax(z)
        return float(
            (probs_clean * (np.log(probs_clean) - np.log(pa))).sum(axis=1).mean()
        )

    _, analytic = spec(logits, None)
    h = 1e-6
    flat = logits.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = (kl_value(up) - kl_value(down)) / (2 * h)
    assert np.abs(analytic.reshape(-1) - numeric).max() < 1e-8
    with pytest.raises(ConfigError):
        make_generation_loss("margin", model, params, X)


def test_random_perturb_containment_and_determinism():
    rng = np.random.default_rng(16)
    X = rng.uniform(size=(30, 5))
    for norm in ("linf", "l2"):
        b = Budget(norm=norm, epsilon=0.2, step_size=0.05)
        out = random_perturb(X, b, seed=7)
        again = random_perturb(X, b, seed=7)
        assert out.tobytes() == again.tobytes()
        assert _ball_norm(out - X, norm) <= 0.2 * (1 + 1e-12)
        assert (out >= 0.0).all() and (out <= 1.0).all()
        assert (out != X).any()
    b0 = Budget(epsilon=0.0, step_size=0.0)
    assert (random_perturb(X, b0, seed=7) == X).all()


def test_random_perturb_l2_fills_the_ball():
    # radii should spread over (0, eps); a sizable share must exceed the
    # half-radius shell or the draw is not volume-uniform
    X = np.full((400, 3), 0.5)
    b = Budget(norm="l2", epsilon=0.2, step_size=0.05)
    out = random_perturb(X, b, seed=8)
    radii = np.sqrt(((out - X) ** 2).sum(axis=1))
    assert radii.max() <= 0.2 * (1 + 1e-12)
    assert (radii > 0.1).mean() > 0.5
