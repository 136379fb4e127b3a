"""Outer minimization: SGD with momentum over adversarially generated batches.

Each epoch shuffles the training split, and for every batch runs
augment -> attack (against the current parameters) -> loss -> sgd_step.
Validation accuracy (clean and PGD) is measured after every epoch; the
checkpoint with the highest PGD validation accuracy (earliest on ties) and
the final checkpoint are both kept.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import evaluate
from .attack import Budget, pgd, random_perturb
from .data import AugmentConfig, Dataset, augment_batch
from .errors import ConfigError, NumericError
from .loss import LossConfig, batch_loss
from .model import Model, ModelParams, save_checkpoint
from ._csvio import write_rows

METRICS_HEADER = "epoch,lr,train_loss,ce_term,rp_term,clean_val_acc,pgd_val_acc"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 60
    lr_milestones: tuple[int, ...] = (40, 50)
    lr_factor: float = 0.1
    seed: int = 0
    budget: Budget = field(default_factory=Budget)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    attack: str = "pgd"  # training-time perturbation: pgd | random | none
    val_attack_steps: int = 10  # PGD strength used for per-epoch validation

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        if self.attack not in ("pgd", "random", "none"):
            raise ConfigError(f"unknown training attack {self.attack!r}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.epochs for m in ms):
            raise ConfigError("lr_milestones must be strictly increasing and < epochs")
        if self.val_attack_steps < 1:
            raise ConfigError("val_attack_steps must be >= 1")


@dataclass(frozen=True)
class CheckpointRecord:
    epoch: int
    params: ModelParams
    clean_val_acc: float
    pgd_val_acc: float

    def __post_init__(self):
        for name in ("clean_val_acc", "pgd_val_acc"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    ce_term: float
    rp_term: float
    clean_val_acc: float
    pgd_val_acc: float

    def row(self) -> str:
        return (
            f"{self.epoch},{self.lr!r},{self.train_loss!r},{self.ce_term!r},"
            f"{self.rp_term!r},{self.clean_val_acc!r},{self.pgd_val_acc!r}"
        )


@dataclass(frozen=True)
class RunArtifacts:
    history: list
    metrics: list
    best: CheckpointRecord
    final: CheckpointRecord
    run_dir: str | None = None


def lr_at(epoch: int, config: TrainConfig) -> float:
    passed = sum(1 for m in config.lr_milestones if m <= epoch)
    return config.lr * config.lr_factor**passed


def sgd_step(
    params: np.ndarray,
    grads: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
):
    """v <- momentum*v + (g + wd*theta); theta <- theta - lr*v."""
    velocity = momentum * velocity + (grads + weight_decay * params)
    return params - lr * velocity, velocity


def _generation_for(config: TrainConfig) -> str:
    # TRADES-style methods craft adversaries by ascending their own KL term
    return "trades_kl" if config.loss.method in ("trades", "trades_rpat") else "ce"


def _derived_seed(*parts: int) -> int:
    return int(np.random.default_rng(list(parts)).integers(2**62))


def train_epoch(
    model: Model,
    params: ModelParams,
    velocity: np.ndarray,
    train_set: Dataset,
    config: TrainConfig,
    rng: np.random.Generator,
    epoch: int,
):
    """One pass over the shuffled training split; returns updated state."""
    n = len(train_set)
    order = rng.permutation(n)
    lr = lr_at(epoch, config)
    generation = _generation_for(config)

    sum_total = sum_ce = sum_rp = 0.0
    flat = params.flat
    for start in range(0, n, config.batch_size):
        idx = order[start : start + config.batch_size]
        x = train_set.features[idx]
        y = train_set.labels[idx]
        x = augment_batch(x, train_set.input_shape, config.augment, rng)
        snapshot = ModelParams(flat, version=params.version)
        attack_seed = int(rng.integers(2**62))
        if config.attack == "pgd":
            x_adv = pgd(model, snapshot, x, y, config.budget, attack_seed, generation)
        elif config.attack == "random":
            x_adv = random_perturb(x, config.budget, attack_seed)
        else:
            x_adv = x
        result = batch_loss(model, snapshot, x, y, x_adv, config.loss, rng)
        if not np.isfinite(result.total):
            raise NumericError(
                f"non-finite loss at epoch {epoch}, batch starting at {start}"
            )
        flat, velocity = sgd_step(
            flat, result.grad, velocity, lr, config.momentum, config.weight_decay
        )
        k = len(idx)
        sum_total += result.total * k
        sum_ce += result.ce_term * k
        sum_rp += result.rp_term * k

    new_params = ModelParams(flat, version=params.version + 1)
    stats = {
        "lr": lr,
        "train_loss": sum_total / n,
        "ce_term": sum_ce / n,
        "rp_term": sum_rp / n,
    }
    return new_params, velocity, stats


def select_best(history: list) -> CheckpointRecord:
    """Highest PGD validation accuracy; ties resolve to the earliest epoch."""
    if not history:
        raise ConfigError("cannot select from an empty history")
    best = history[0]
    for rec in history[1:]:
        if rec.pgd_val_acc > best.pgd_val_acc:
            best = rec
    return best


def run_experiment(
    model: Model,
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    run_dir: str | None = None,
    config_hash: str = "",
) -> RunArtifacts:
    """Full training run with per-epoch validation and checkpoint retention."""
    rng = np.random.default_rng([config.seed, 0])
    params = model.init_params(config.seed)
    velocity = np.zeros(model.num_params, dtype=np.float64)
    val_budget = Budget(
        norm=config.budget.norm,
        epsilon=config.budget.epsilon,
        step_size=config.budget.step_size,
        num_steps=config.val_attack_steps,
        random_start=config.budget.random_start,
    )

    history: list[CheckpointRecord] = []
    metrics: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        params, velocity, stats = train_epoch(
            model, params, velocity, train_set, config, rng, epoch
        )
        clean = evaluate.clean_accuracy(model, params, val_set)
        robust = evaluate.robust_accuracy(
            model, params, val_set, val_budget, seed=_derived_seed(config.seed, 2, epoch)
        )
        history.append(CheckpointRecord(epoch, params.copy(), clean, robust))
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                lr=stats["lr"],
                train_loss=stats["train_loss"],
                ce_term=stats["ce_term"],
                rp_term=stats["rp_term"],
                clean_val_acc=clean,
                pgd_val_acc=robust,
            )
        )

    best = select_best(history)
    final = history[-1]
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        write_rows(
            os.path.join(run_dir, "metrics.csv"),
            METRICS_HEADER,
            [m.row() for m in metrics],
            config_hash=config_hash,
        )
        for name, rec in (("best", best), ("final", final)):
            save_checkpoint(
                os.path.join(run_dir, f"{name}.ckpt"),
                model.desc,
                rec.params,
                {
                    "epoch": rec.epoch,
                    "clean_val_acc": rec.clean_val_acc,
                    "pgd_val_acc": rec.pgd_val_acc,
                    "config": config_hash,
                    "version": rec.params.version,
                },
            )
    return RunArtifacts(history, metrics, best, final, run_dir)
