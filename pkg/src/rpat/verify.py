"""Numerical smoothness diagnostics for a trained perception.

Three instruments, all along attack directions:

  * directional curvature: a central second difference of the perception,
    estimating the magnitude of the Hessian-quadratic-form along delta;
  * Jacobian drift: the spectral norm of J(x + a*delta) - J(x) over a grid
    of interpolation coefficients a;
  * a Lipschitz upper bound: sup of per-example Jacobian spectral norms
    plus the largest observed drift (the sup is over the evaluated sample,
    so it lower-bounds the true domain sup).

Training with the perception regularizer should shrink all three relative
to a plain adversarial-training baseline; `compare_models` measures that
reduction on paired checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._csvio import write_rows
from .attack import Budget, pgd
from .data import Dataset
from .errors import ConfigError, ContractError, NumericError
from .loss import rp_penalty
from .model import Model, ModelParams, PerceptionProxy

DRIFT_GRID = (0.25, 0.5, 0.75, 1.0)
T_FLOOR = 1e-10


def _gamma_column(a: float) -> str:
    return ("gamma_" + str(float(a))).replace("0.", "0").replace(".", "")


def report_header(grid=DRIFT_GRID) -> str:
    return ",".join(["example_id", "curvature", *[_gamma_column(a) for a in grid], "j_spec"])


@dataclass(frozen=True)
class CurvatureReport:
    """Per-example smoothness measurements plus the dataset-level bound."""

    curvature: np.ndarray  # (n,)
    drift: np.ndarray  # (n, len(grid))
    grid: tuple
    j_spec: np.ndarray  # (n,) spectral norm of J at each benign point
    sup_j_spec: float
    k_hat: float

    def __post_init__(self):
        for name in ("curvature", "drift", "j_spec"):
            if (getattr(self, name) < 0.0).any():
                raise ContractError(f"{name} entries must be >= 0")
        if self.k_hat < self.sup_j_spec:
            raise ContractError("the Lipschitz bound cannot undercut the Jacobian sup")

    def rows(self):
        out = []
        for i in range(len(self.curvature)):
            cells = [str(i), repr(float(self.curvature[i]))]
            cells += [repr(float(g)) for g in self.drift[i]]
            cells.append(repr(float(self.j_spec[i])))
            out.append(",".join(cells))
        return out

    def summary(self) -> dict:
        return {
            "curvature_median": float(np.median(self.curvature)),
            "drift_median": float(np.median(self.drift)),
            "j_spec_sup": self.sup_j_spec,
            "gamma_max": float(self.drift.max()) if self.drift.size else 0.0,
            "k_hat": self.k_hat,
        }


def directional_curvature(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    delta: np.ndarray,
    proxy: PerceptionProxy,
    t: float = 1e-3,
) -> float:
    """|| h(x + t*delta) - 2 h(x) + h(x - t*delta) ||_2 / t^2.

    The probe stays inside [0, 1]^d: t is halved until both endpoints fit,
    and a t that underflows the floor raises a numeric error. The central
    difference is exact for quadratics, so affine perceptions measure 0.
    """
    if t <= 0.0:
        raise ConfigError(f"probe step must be positive, got {t}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    while True:
        lo = x - t * delta
        hi = x + t * delta
        if (lo >= 0.0).all() and (lo <= 1.0).all() and (hi >= 0.0).all() and (hi <= 1.0).all():
            break
        t *= 0.5
        if t < T_FLOOR:
            raise NumericError(
                "probe step underflowed while shrinking to stay inside the domain"
            )
    h = model.perception(params, np.stack([hi, x, lo]), proxy)
    second = h[0] - 2.0 * h[1] + h[2]
    return float(np.sqrt((second * second).sum()) / (t * t))


def jacobian(model: Model, params: ModelParams, x: np.ndarray, proxy: PerceptionProxy):
    """Exact Jacobian of the perception at x, one backward per output row."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    cache = model.forward_cache(params, x)
    layer = model.perception_layer(proxy)
    m = cache.stages[layer].shape[1]
    J = np.empty((m, x.size), dtype=np.float64)
    for j in range(m):
        tap = np.zeros((1, m), dtype=np.float64)
        tap[0, j] = 1.0
        _, dX = model.backward(params, cache, {layer: tap})
        J[j] = dX[0]
    return J


def jacobian_fd(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    proxy: PerceptionProxy,
    h: float = 1e-5,
):
    """Central-difference Jacobian, the cross-check for the analytic one."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = x.size
    plus = np.repeat(x[None, :], d, axis=0) + h * np.eye(d)
    minus = np.repeat(x[None, :], d, axis=0) - h * np.eye(d)
    h_plus = model.perception(params, plus, proxy)
    h_minus = model.perception(params, minus, proxy)
    return (h_plus - h_minus).T / (2.0 * h)


def spectral_norm(matrix: np.ndarray, max_iters: int = 100, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest singular value by power iteration with a seeded start vector.

    Converges to within tol relative error for matrices with a spectral
    gap; the estimate is a valid lower bound at every iteration.
    """
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2:
        raise ContractError("spectral_norm expects a matrix")
    if A.size == 0 or not A.any():
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.sqrt((v * v).sum())
    sigma = 0.0
    for _ in range(max_iters):
        u = A @ v
        nu = np.sqrt((u * u).sum())
        if nu == 0.0:
            # v landed exactly in the null space; restart from a fresh draw
            v = rng.standard_normal(A.shape[1])
            v /= np.sqrt((v * v).sum())
            continue
        w = A.T @ (u / nu)
        nw = np.sqrt((w * w).sum())
        if nw == 0.0:
            return float(nu)
        v = w / nw
        if abs(nw - sigma) <= tol * max(nw, 1.0):
            return float(nw)
        sigma = nw
    return float(sigma)


def jacobian_drift(
    model: Model,
    params: ModelParams,
    x: np.ndarray,
    delta: np.ndarray,
    alpha: float,
    proxy: PerceptionProxy,
    **spectral_kwargs,
) -> float:
    """Spectral norm of the Jacobian change along the perturbation segment."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    J0 = jacobian(model, params, x, proxy)
    J1 = jacobian(model, params, x + alpha * delta, proxy)
    return spectral_norm(J1 - J0, **spectral_kwargs)


def lipschitz_upper_bound(j_specs, gammas) -> float:
    """sup ||J||_spec over the sample plus the largest observed drift."""
    j_specs = np.asarray(j_specs, dtype=np.float64)
    if j_specs.size == 0:
        raise ContractError("need at least one Jacobian norm")
    gammas = np.asarray(gammas, dtype=np.float64)
    gamma_max = float(gammas.max()) if gammas.size else 0.0
    return float(j_specs.max()) + gamma_max


def build_report(
    model: Model,
    params: ModelParams,
    X: np.ndarray,
    deltas: np.ndarray,
    proxy: PerceptionProxy,
    probe_step: float = 1e-3,
    grid=DRIFT_GRID,
    spectral_iters: int = 2000,
    spectral_tol: float = 1e-12,
) -> CurvatureReport:
    """Measure curvature, drift, and Jacobian norms at each (x, delta) pair.

    Curvature is probed at the segment midpoint x + delta/2: for probe
    steps up to 0.5 both probe endpoints then stay on [x, x + delta], which
    lies inside the domain whenever its endpoints do, so boundary examples
    never force the probe step to shrink away.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    if X.shape != deltas.shape:
        raise ContractError("one delta per example is required")
    n = len(X)
    curvature = np.empty(n)
    drift = np.empty((n, len(grid)))
    j_spec = np.empty(n)
    for i in range(n):
        mid = X[i] + 0.5 * deltas[i]
        curvature[i] = directional_curvature(model, params, mid, deltas[i], proxy, probe_step)
        J0 = jacobian(model, params, X[i], proxy)
        j_spec[i] = spectral_norm(J0, max_iters=spectral_iters, tol=spectral_tol)
        for k, a in enumerate(grid):
            Ja = jacobian(model, params, X[i] + a * deltas[i], proxy)
            drift[i, k] = spectral_norm(Ja - J0, max_iters=spectral_iters, tol=spectral_tol)
    sup_j = float(j_spec.max())
    return CurvatureReport(
        curvature=curvature,
        drift=drift,
        grid=tuple(grid),
        j_spec=j_spec,
        sup_j_spec=sup_j,
        k_hat=lipschitz_upper_bound(j_spec, drift.reshape(-1)),
    )


def write_report_csv(path: str, report: CurvatureReport, config_hash: str = "") -> None:
    write_rows(path, report_header(report.grid), report.rows(), config_hash=config_hash)


def write_summary_json(path: str, summaries: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summaries, f, sort_keys=True, indent=2)
        f.write("\n")


def compare_models(
    model: Model,
    baseline_params: ModelParams,
    regularized_params: ModelParams,
    dataset: Dataset,
    budget: Budget,
    proxy: PerceptionProxy,
    probe_step: float = 0.5,
    grid=DRIFT_GRID,
    seed: int = 0,
    max_examples: int | None = None,
    rp_divergence: str = "mse",
):
    """Paired smoothness reports for two checkpoints of one architecture.

    Each model is probed along its own PGD perturbations. The default probe
    step of 0.5 measures curvature across the whole perturbation segment,
    which is the scale the regularizer acts on; rectifier networks are
    piecewise linear, so infinitesimal probes at generic points see nothing.
    Returns (baseline report, regularized report, summary dict); the summary
    carries per-model medians plus regularized-vs-baseline reduction ratios.
    """
    X = dataset.features
    y = dataset.labels
    if max_examples is not None:
        X, y = X[:max_examples], y[:max_examples]

    out = {}
    reports = {}
    for name, params in (("baseline", baseline_params), ("regularized", regularized_params)):
        x_adv = pgd(model, params, X, y, budget, seed)
        report = build_report(model, params, X, x_adv - X, proxy, probe_step, grid)
        reports[name] = report
        out[name] = report.summary()
        out[name]["rp_term"] = rp_penalty(model, params, X, x_adv, rp_divergence, proxy)

    def _reduction(key):
        base = out["baseline"][key]
        if base == 0.0:
            return 0.0
        return 1.0 - out["regularized"][key] / base

    out["reduction"] = {
        "curvature_median": _reduction("curvature_median"),
        "drift_median": _reduction("drift_median"),
        "rp_term": _reduction("rp_term"),
        "k_hat": _reduction("k_hat"),
    }
    return reports["baseline"], reports["regularized"], out
