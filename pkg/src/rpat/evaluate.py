"""Accuracy, trade-off scores, and the success/failure perception analysis.

Mean is the arithmetic mean of clean and robust accuracy; NRR is their
harmonic mean, which rewards balanced trade-offs. The perception analysis
attacks every example once, splits the set by whether the attacked input is
still classified correctly, and compares the mean squared perception shift
of the two groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import Budget, fgsm, pgd, random_perturb
from .errors import ConfigError, ContractError
from .data import Dataset
from .model import Model, ModelParams, PerceptionProxy

ATTACK_TAGS = ("pgd", "fgsm", "random")

REPORT_HEADER = "tag,clean,robust_pgd20,mean,nrr,n_success,n_failure,mse_success,mse_failure"


@dataclass(frozen=True)
class EvalReport:
    tag: str
    clean_acc: float
    robust_acc: dict
    mean_score: float
    nrr: float
    n_success: int
    n_failure: int
    mse_success: float | None
    mse_failure: float | None

    def __post_init__(self):
        accs = [self.clean_acc, *self.robust_acc.values()]
        if any(not (0.0 <= a <= 1.0) for a in accs):
            raise ContractError("accuracies must lie in [0, 1]")
        if self.n_success < 0 or self.n_failure < 0:
            raise ContractError("group counts must be non-negative")

    def row(self) -> str:
        robust = next(iter(self.robust_acc.values()))
        cells = [
            self.tag,
            f"{100.0 * self.clean_acc:.3f}",
            f"{100.0 * robust:.3f}",
            f"{self.mean_score:.3f}",
            f"{self.nrr:.3f}",
            str(self.n_success),
            str(self.n_failure),
            "" if self.mse_success is None else repr(self.mse_success),
            "" if self.mse_failure is None else repr(self.mse_failure),
        ]
        return ",".join(cells)


def run_attack(
    model: Model,
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    budget: Budget,
    tag: str = "pgd",
    seed: int = 0,
) -> np.ndarray:
    """Attack a whole batch; per-example randomness is keyed by row index."""
    if tag == "pgd":
        return pgd(model, params, X, y, budget, seed)
    if tag == "fgsm":
        return fgsm(model, params, X, y, budget)
    if tag == "random":
        return random_perturb(X, budget, seed)
    raise ConfigError(f"unknown attack tag {tag!r}")


def _predictions(model: Model, params: ModelParams, X: np.ndarray) -> np.ndarray:
    return np.argmax(model.forward(params, X), axis=1)


def clean_accuracy(model: Model, params: ModelParams, dataset: Dataset) -> float:
    preds = _predictions(model, params, dataset.features)
    return float((preds == dataset.labels).mean())


def robust_accuracy(
    model: Model,
    params: ModelParams,
    dataset: Dataset,
    budget: Budget,
    tag: str = "pgd",
    seed: int = 0,
) -> float:
    x_adv = run_attack(model, params, dataset.features, dataset.labels, budget, tag, seed)
    preds = _predictions(model, params, x_adv)
    return float((preds == dataset.labels).mean())


def mean_score(clean: float, robust: float) -> float:
    return (clean + robust) / 2.0


def nrr(clean: float, robust: float) -> float:
    """Harmonic mean of the two accuracies; defined as 0 when both vanish."""
    if clean < 0.0 or robust < 0.0:
        raise ContractError("nrr expects non-negative accuracies")
    if clean + robust == 0.0:
        return 0.0
    return 2.0 * clean * robust / (clean + robust)


def split_success_failure(
    model: Model,
    params: ModelParams,
    dataset: Dataset,
    budget: Budget,
    tag: str = "pgd",
    seed: int = 0,
):
    """Indices where the attacked input is still / no longer classified right."""
    x_adv = run_attack(model, params, dataset.features, dataset.labels, budget, tag, seed)
    preds = _predictions(model, params, x_adv)
    ok = preds == dataset.labels
    return np.flatnonzero(ok), np.flatnonzero(~ok)


def perception_mse_gap(
    model: Model,
    params: ModelParams,
    dataset: Dataset,
    budget: Budget,
    proxy: PerceptionProxy,
    tag: str = "pgd",
    seed: int = 0,
):
    """Mean perception MSE of defense-success vs defense-failure groups.

    One attack pass serves both the split and the measurement. Per example,
    the MSE is the per-dimension mean squared difference between the benign
    and the attacked perception; each group reports the mean over its
    members, or None when the group is empty.
    """
    X, y = dataset.features, dataset.labels
    x_adv = run_attack(model, params, X, y, budget, tag, seed)
    preds = _predictions(model, params, x_adv)
    ok = preds == y
    h_clean = model.perception(params, X, proxy)
    h_adv = model.perception(params, x_adv, proxy)
    per_example = ((h_clean - h_adv) ** 2).mean(axis=1)
    mse_success = float(per_example[ok].mean()) if ok.any() else None
    mse_failure = float(per_example[~ok].mean()) if (~ok).any() else None
    return {
        "n_success": int(ok.sum()),
        "n_failure": int((~ok).sum()),
        "mse_success": mse_success,
        "mse_failure": mse_failure,
    }


def evaluate_model(
    model: Model,
    params: ModelParams,
    dataset: Dataset,
    budget: Budget,
    proxy: PerceptionProxy = PerceptionProxy("logits"),
    tag: str = "pgd",
    seed: int = 0,
    report_tag: str = "model",
) -> EvalReport:
    """One attack pass feeding accuracy, trade-off scores, and the MSE split."""
    X, y = dataset.features, dataset.labels
    x_adv = run_attack(model, params, X, y, budget, tag, seed)
    preds_adv = _predictions(model, params, x_adv)
    ok = preds_adv == y
    clean = clean_accuracy(model, params, dataset)
    robust = float(ok.mean())

    h_clean = model.perception(params, X, proxy)
    h_adv = model.perception(params, x_adv, proxy)
    per_example = ((h_clean - h_adv) ** 2).mean(axis=1)

    return EvalReport(
        tag=report_tag,
        clean_acc=clean,
        robust_acc={f"{tag}{budget.num_steps}" if tag == "pgd" else tag: robust},
        mean_score=mean_score(100.0 * clean, 100.0 * robust),
        nrr=nrr(100.0 * clean, 100.0 * robust),
        n_success=int(ok.sum()),
        n_failure=int((~ok).sum()),
        mse_success=float(per_example[ok].mean()) if ok.any() else None,
        mse_failure=float(per_example[~ok].mean()) if (~ok).any() else None,
    )
