"""Experiment orchestration: config schema, run layout, and batch analyses.

A config is canonical JSON (sorted keys, no extra whitespace in the hashed
form) with a schema version; unknown keys anywhere are rejected. Its
sha256 prefix names the run directory (`<timestamp>_<hash8>`) and is
embedded as a `# config=<hash>` comment in every emitted CSV, so any
artifact can be traced back to the exact configuration that produced it.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import evaluate, train as train_mod, verify
from ._csvio import read_rows, write_rows
from .attack import Budget, pgd
from .data import (
    AugmentConfig,
    Dataset,
    generate_synthetic,
    load_idx,
    split_dataset,
)
from .errors import ConfigError
from .loss import LossConfig
from .model import ArchitectureDescriptor, Model, PerceptionProxy, load_checkpoint
from .train import TrainConfig

SCHEMA_VERSION = 1
RUNS_ROOT_ENV = "RPAT_RUNS_ROOT"

ABLATION_DIVERGENCES = ("mse", "kl", "js", "cosine")
ABLATION_ALPHAS = ("0.2", "0.5", "0.8", "beta_minus", "beta_plus")

ABLATE_HEADER = "divergence,alpha,clean,robust,mean,nrr"
ANALYZE_HEADER = (
    "condition,seed,clean_acc,perturbed_acc,n_success,n_failure,mse_success,mse_failure"
)
PLOT_HEADER = "series,x,y"
REPORT_AGG_HEADER = "metric,mean,spread,n"
TABLES_HEADER = "norm,dataset,method,variant,clean,robust,mean,nrr,mean_ok,nrr_ok"


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"  # synthetic | idx
    layout: str = "two_arcs"
    n_per_class: int = 300
    num_classes: int = 2
    noise_sigma: float = 0.1
    seed: int = 0
    fractions: tuple = (0.8, 0.1, 0.1)
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in ("synthetic", "idx"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if self.kind == "idx" and not (self.train_images and self.train_labels):
            raise ConfigError("idx datasets need train_images and train_labels paths")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError("val_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    hidden: tuple = (64, 64)
    input_shape: tuple | None = None  # None: take the dataset's shape

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_budget: Budget = field(default_factory=lambda: Budget(num_steps=20))
    seeds: tuple = (0, 1, 2)
    output_root: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must name at least one seed")

    def to_dict(self) -> dict:
        d = self.dataset
        m = self.model
        t = self.train
        return {
            "schema_version": self.schema_version,
            "dataset": {
                "kind": d.kind,
                "layout": d.layout,
                "n_per_class": d.n_per_class,
                "num_classes": d.num_classes,
                "noise_sigma": d.noise_sigma,
                "seed": d.seed,
                "fractions": list(d.fractions),
                "train_images": d.train_images,
                "train_labels": d.train_labels,
                "test_images": d.test_images,
                "test_labels": d.test_labels,
                "val_fraction": d.val_fraction,
            },
            "model": {
                "kind": m.kind,
                "hidden": list(m.hidden),
                "input_shape": None if m.input_shape is None else list(m.input_shape),
            },
            "train": {
                "lr": t.lr,
                "momentum": t.momentum,
                "weight_decay": t.weight_decay,
                "batch_size": t.batch_size,
                "epochs": t.epochs,
                "lr_milestones": list(t.lr_milestones),
                "lr_factor": t.lr_factor,
                "attack": t.attack,
                "val_attack_steps": t.val_attack_steps,
                "budget": _budget_dict(t.budget),
                "loss": {
                    "method": t.loss.method,
                    "lambda": t.loss.lambda_,
                    "beta": t.loss.beta,
                    "alpha": t.loss.alpha,
                    "alpha_mode": t.loss.alpha_mode,
                    "divergence": t.loss.divergence,
                    "proxy": t.loss.proxy,
                },
                "augment": {
                    "crop_padding": t.augment.crop_padding,
                    "hflip_prob": t.augment.hflip_prob,
                    "enabled": t.augment.enabled,
                },
            },
            "eval_budget": _budget_dict(self.eval_budget),
            "seeds": list(self.seeds),
            "output_root": self.output_root,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:8]


def _budget_dict(b: Budget) -> dict:
    return {
        "norm": b.norm,
        "epsilon": b.epsilon,
        "step_size": b.step_size,
        "num_steps": b.num_steps,
        "random_start": b.random_start,
    }


def _take(d: dict, allowed: tuple, where: str) -> dict:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    return dict(d)


def _budget_from(d: dict, where: str) -> Budget:
    kw = _take(d, ("norm", "epsilon", "step_size", "num_steps", "random_start"), where)
    return Budget(**kw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated config from parsed JSON; unknown keys are errors."""
    top = _take(
        raw,
        ("schema_version", "dataset", "model", "train", "eval_budget", "seeds", "output_root"),
        "config",
    )
    kwargs = {}
    if "schema_version" in top:
        kwargs["schema_version"] = top["schema_version"]
    if "dataset" in top:
        kw = _take(
            top["dataset"],
            (
                "kind",
                "layout",
                "n_per_class",
                "num_classes",
                "noise_sigma",
                "seed",
                "fractions",
                "train_images",
                "train_labels",
                "test_images",
                "test_labels",
                "val_fraction",
            ),
            "dataset",
        )
        kwargs["dataset"] = DatasetSpec(**kw)
    if "model" in top:
        kw = _take(top["model"], ("kind", "hidden", "input_shape"), "model")
        if kw.get("hidden") is not None:
            kw["hidden"] = tuple(kw["hidden"])
        kwargs["model"] = ModelSpec(**kw)
    if "train" in top:
        kw = _take(
            top["train"],
            (
                "lr",
                "momentum",
                "weight_decay",
                "batch_size",
                "epochs",
                "lr_milestones",
                "lr_factor",
                "attack",
                "val_attack_steps",
                "budget",
                "loss",
                "augment",
            ),
            "train",
        )
        if "budget" in kw:
            kw["budget"] = _budget_from(kw["budget"], "train.budget")
        if "loss" in kw:
            lw = _take(
                kw["loss"],
                ("method", "lambda", "beta", "alpha", "alpha_mode", "divergence", "proxy"),
                "loss",
            )
            if "lambda" in lw:
                lw["lambda_"] = lw.pop("lambda")
            kw["loss"] = LossConfig(**lw)
        if "augment" in kw:
            aw = _take(kw["augment"], ("crop_padding", "hflip_prob", "enabled"), "augment")
            kw["augment"] = AugmentConfig(**aw)
        if "lr_milestones" in kw:
            kw["lr_milestones"] = tuple(kw["lr_milestones"])
        kwargs["train"] = TrainConfig(**kw)
    if "eval_budget" in top:
        kwargs["eval_budget"] = _budget_from(top["eval_budget"], "eval_budget")
    if "seeds" in top:
        kwargs["seeds"] = tuple(top["seeds"])
    if top.get("output_root") is not None:
        kwargs["output_root"] = top["output_root"]
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return config_from_dict(raw)


def apply_overrides(raw: dict, overrides: list) -> dict:
    """Apply dotted-key overrides like ('loss.lambda', '2.0') to a config dict.

    Values parse as JSON when possible, otherwise stay strings. The `loss.`
    and `budget.` and `augment.` prefixes address the train block.
    """
    out = json.loads(json.dumps(raw))  # deep copy
    for key, text in overrides:
        parts = key.split(".")
        if parts[0] in ("loss", "budget", "augment"):
            parts = ["train", *parts]
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key} path crosses a non-object value")
        node[parts[-1]] = value
    return out


# -- building blocks -----------------------------------------------------------


def build_datasets(spec: DatasetSpec):
    """Materialize (train, val, test) splits from a dataset spec."""
    if spec.kind == "synthetic":
        full = generate_synthetic(
            spec.seed, spec.n_per_class, spec.num_classes, spec.layout, spec.noise_sigma
        )
        return split_dataset(full, spec.fractions, spec.seed)
    full = load_idx(spec.train_images, spec.train_labels)
    train_set, val_set, _ = split_dataset(
        full, (1.0 - spec.val_fraction, spec.val_fraction, 0.0), spec.seed
    )
    if spec.test_images and spec.test_labels:
        test_set = load_idx(spec.test_images, spec.test_labels)
        test_set = Dataset(
            test_set.features, test_set.labels, full.num_classes, test_set.input_shape, "test"
        )
    else:
        test_set = val_set
    return train_set, val_set, test_set


def build_model(spec: ModelSpec, dataset: Dataset) -> Model:
    shape = spec.input_shape if spec.input_shape is not None else dataset.input_shape
    desc = ArchitectureDescriptor(
        kind=spec.kind,
        input_shape=tuple(shape),
        hidden=spec.hidden,
        num_classes=dataset.num_classes,
    )
    return Model(desc)


def _eval_seed(seed: int) -> int:
    return int(np.random.default_rng([seed, 3]).integers(2**62))


def resolve_output_root(config: ExperimentConfig, override: str | None = None) -> str:
    if override:
        return override
    if config.output_root:
        return config.output_root
    return os.environ.get(RUNS_ROOT_ENV, "runs")


def new_run_dir(root: str, config_hash: str) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = os.path.join(root, f"{stamp}_{config_hash}")
    suffix = 0
    while os.path.exists(path):
        suffix += 1
        path = os.path.join(root, f"{stamp}_{config_hash}.{suffix}")
    os.makedirs(path)
    return path


def write_config_snapshot(run_dir: str, config: ExperimentConfig) -> str:
    path = os.path.join(run_dir, "config.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return path


@dataclass(frozen=True)
class ExperimentResult:
    run_dir: str | None
    config_hash: str
    artifacts: dict  # seed -> train.RunArtifacts
    reports: list  # one EvalReport per seed, on the test split


def run_experiment_config(
    config: ExperimentConfig,
    output_root: str | None = None,
    persist: bool = True,
) -> ExperimentResult:
    """Train every seed, evaluate best checkpoints on the test split."""
    train_set, val_set, test_set = build_datasets(config.dataset)
    model = build_model(config.model, train_set)
    config_hash = config.config_hash()

    run_dir = None
    if persist:
        run_dir = new_run_dir(resolve_output_root(config, output_root), config_hash)
        write_config_snapshot(run_dir, config)

    artifacts = {}
    reports = []
    proxy = PerceptionProxy(config.train.loss.proxy)
    for seed in config.seeds:
        seed_dir = None if run_dir is None else os.path.join(run_dir, f"seed_{seed}")
        art = train_mod.run_experiment(
            model,
            replace(config.train, seed=seed),
            train_set,
            val_set,
            run_dir=seed_dir,
            config_hash=config_hash,
        )
        artifacts[seed] = art
        reports.append(
            evaluate.evaluate_model(
                model,
                art.best.params,
                test_set,
                config.eval_budget,
                proxy=proxy,
                seed=_eval_seed(seed),
                report_tag=f"seed_{seed}",
            )
        )
    if run_dir is not None:
        write_rows(
            os.path.join(run_dir, "eval.csv"),
            evaluate.REPORT_HEADER,
            [r.row() for r in reports],
            config_hash=config_hash,
        )
    return ExperimentResult(run_dir, config_hash, artifacts, reports)


# -- batch analyses -------------------------------------------------------------


def ablate(
    config: ExperimentConfig,
    divergences=ABLATION_DIVERGENCES,
    alphas=ABLATION_ALPHAS,
    output_root: str | None = None,
    persist: bool = True,
):
    """Sweep divergence kind x alpha setting, shared seeds per cell.

    Returns (rows, run_dir); each row averages the test-split scores of the
    cell's seeds. Alpha settings are fixed values ("0.2") or the names of
    the two order-statistic sampling modes.
    """
    base_hash = config.config_hash()
    run_dir = None
    if persist:
        run_dir = new_run_dir(resolve_output_root(config, output_root), base_hash)
        write_config_snapshot(run_dir, config)

    rows = []
    for div in divergences:
        for a in alphas:
            loss = config.train.loss
            if a in ("beta_minus", "beta_plus"):
                loss = replace(loss, method="rpat", divergence=div, alpha_mode=a)
            else:
                loss = replace(
                    loss, method="rpat", divergence=div, alpha_mode="fixed", alpha=float(a)
                )
            cell = replace(config, train=replace(config.train, loss=loss), output_root=None)
            cell_dir = None if run_dir is None else os.path.join(run_dir, f"{div}_{a}")
            if cell_dir is not None:
                os.makedirs(cell_dir, exist_ok=True)
            result = run_experiment_config(cell, output_root=cell_dir, persist=persist)
            clean = float(np.mean([100.0 * r.clean_acc for r in result.reports]))
            robust = float(
                np.mean([100.0 * next(iter(r.robust_acc.values())) for r in result.reports])
            )
            rows.append(
                f"{div},{a},{clean:.3f},{robust:.3f},"
                f"{evaluate.mean_score(clean, robust):.3f},{evaluate.nrr(clean, robust):.3f}"
            )
    if run_dir is not None:
        write_rows(os.path.join(run_dir, "ablate.csv"), ABLATE_HEADER, rows, base_hash)
    return rows, run_dir


PERCEPTION_CONDITIONS = (
    # (label, training-time perturbation, evaluation attack tag)
    ("clean", "none", "random"),
    ("random", "random", "random"),
    ("adversarial", "pgd", "pgd"),
)


def analyze_perception(
    config: ExperimentConfig,
    output_root: str | None = None,
    persist: bool = True,
    conditions=PERCEPTION_CONDITIONS,
):
    """Success/failure perception gap under three training regimes.

    Trains one model per (condition, seed) with the plain adversarial CE
    objective, then measures the group-wise perception MSE between benign
    and perturbed test inputs, split by defense success. Returns
    (per-seed rows, mean plot rows, run_dir).
    """
    base_hash = config.config_hash()
    run_dir = None
    if persist:
        run_dir = new_run_dir(resolve_output_root(config, output_root), base_hash)
        write_config_snapshot(run_dir, config)

    train_set, val_set, test_set = build_datasets(config.dataset)
    model = build_model(config.model, train_set)
    proxy = PerceptionProxy(config.train.loss.proxy)

    rows = []
    stats = {}
    for label, train_attack, eval_tag in conditions:
        per_seed = []
        for seed in config.seeds:
            tcfg = replace(
                config.train,
                seed=seed,
                attack=train_attack,
                loss=replace(config.train.loss, method="pgd_at"),
            )
            seed_dir = (
                None if run_dir is None else os.path.join(run_dir, f"{label}_seed_{seed}")
            )
            art = train_mod.run_experiment(
                model, tcfg, train_set, val_set, run_dir=seed_dir, config_hash=base_hash
            )
            params = art.best.params
            clean = evaluate.clean_accuracy(model, params, test_set)
            perturbed = evaluate.robust_accuracy(
                model, params, test_set, config.eval_budget, eval_tag, _eval_seed(seed)
            )
            gap = evaluate.perception_mse_gap(
                model, params, test_set, config.eval_budget, proxy, eval_tag, _eval_seed(seed)
            )
            per_seed.append((clean, perturbed, gap))
            rows.append(
                f"{label},{seed},{100.0 * clean:.3f},{100.0 * perturbed:.3f},"
                f"{gap['n_success']},{gap['n_failure']},"
                + (
                    "" if gap["mse_success"] is None else repr(gap["mse_success"])
                )
                + ","
                + ("" if gap["mse_failure"] is None else repr(gap["mse_failure"]))
            )
        stats[label] = per_seed

    plot_rows = []
    for label, per_seed in stats.items():
        for series, pick in (
            ("clean_acc", lambda t: 100.0 * t[0]),
            ("perturbed_acc", lambda t: 100.0 * t[1]),
            ("mse_success", lambda t: t[2]["mse_success"]),
            ("mse_failure", lambda t: t[2]["mse_failure"]),
        ):
            vals = [pick(t) for t in per_seed if pick(t) is not None]
            if vals:
                plot_rows.append(f"{series},{label},{float(np.mean(vals))!r}")

    if run_dir is not None:
        write_rows(os.path.join(run_dir, "analyze.csv"), ANALYZE_HEADER, rows, base_hash)
        write_rows(os.path.join(run_dir, "plot_data.csv"), PLOT_HEADER, plot_rows, base_hash)
    return rows, plot_rows, run_dir


def verify_theorems(
    config: ExperimentConfig,
    baseline_ckpt: str,
    regularized_ckpt: str | None = None,
    out_dir: str | None = None,
    max_examples: int | None = 32,
    probe_step: float = 0.5,
):
    """Smoothness reports for one checkpoint, or a paired comparison for two."""
    _, _, test_set = build_datasets(config.dataset)
    desc, params, _ = load_checkpoint(baseline_ckpt)
    model = Model(desc)
    if test_set.features.shape[1] != model.input_dim:
        raise ConfigError("checkpoint and dataset disagree on the input dimension")
    proxy = PerceptionProxy(config.train.loss.proxy)
    config_hash = config.config_hash()

    if regularized_ckpt is None:
        X = test_set.features[:max_examples]
        y = test_set.labels[:max_examples]
        x_adv = pgd(model, params, X, y, config.eval_budget, _eval_seed(0))
        report = verify.build_report(model, params, X, x_adv - X, proxy, probe_step)
        summary = {"model": report.summary()}
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            verify.write_report_csv(os.path.join(out_dir, "verify.csv"), report, config_hash)
            verify.write_summary_json(os.path.join(out_dir, "verify_summary.json"), summary)
        return summary

    desc_b, params_b, _ = load_checkpoint(regularized_ckpt)
    if desc_b != desc:
        raise ConfigError("paired checkpoints must share one architecture")
    base_report, reg_report, summary = verify.compare_models(
        model,
        params,
        params_b,
        test_set,
        config.eval_budget,
        proxy,
        probe_step=probe_step,
        seed=_eval_seed(1),
        max_examples=max_examples,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        verify.write_report_csv(
            os.path.join(out_dir, "verify_baseline.csv"), base_report, config_hash
        )
        verify.write_report_csv(
            os.path.join(out_dir, "verify_regularized.csv"), reg_report, config_hash
        )
        verify.write_summary_json(os.path.join(out_dir, "verify_summary.json"), summary)
    return summary


# -- pure-arithmetic reproduction -----------------------------------------------


def _cell_matches(printed: str, computed: float, tol: float = 0.001) -> bool:
    # compare at the precision the reference chose for each cell
    decimals = len(printed.split(".")[1]) if "." in printed else 0
    return abs(round(computed, decimals) - float(printed)) <= tol + 1e-12


def reproduce_tables(out_path: str | None = None):
    """Recompute every benchmark Mean/NRR cell from its clean/robust pair.

    Returns (rows, mismatches): `rows` are CSV strings with per-cell pass
    flags; `mismatches` lists the identifiers of any cell that deviates by
    more than 0.001 at its printed precision.
    """
    text = (
        resources.files("rpat")
        .joinpath("resources/benchmark_tables.csv")
        .read_text(encoding="utf-8")
    )
    rows = []
    mismatches = []
    header = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = line
            continue
        norm, ds, method, variant, clean_s, robust_s, mean_s, nrr_s = line.split(",")
        clean, robust = float(clean_s), float(robust_s)
        mean_c = evaluate.mean_score(clean, robust)
        nrr_c = evaluate.nrr(clean, robust)
        mean_ok = _cell_matches(mean_s, mean_c)
        nrr_ok = _cell_matches(nrr_s, nrr_c)
        if not (mean_ok and nrr_ok):
            mismatches.append(f"{norm}/{ds}/{method}/{variant}")
        rows.append(
            f"{norm},{ds},{method},{variant},{clean_s},{robust_s},"
            f"{mean_c:.3f},{nrr_c:.3f},{int(mean_ok)},{int(nrr_ok)}"
        )
    if out_path is not None:
        write_rows(out_path, TABLES_HEADER, rows)
    return rows, mismatches


def aggregate_report(run_dir: str, out_path: str | None = None):
    """Mean and sample spread of the per-seed test scores of one experiment."""
    eval_path = os.path.join(run_dir, "eval.csv")
    if not os.path.exists(eval_path):
        raise ConfigError(f"no eval.csv under {run_dir}")
    header, data = read_rows(eval_path)
    cols = {name: i for i, name in enumerate(header)}
    rows = []
    for metric in ("clean", "robust_pgd20", "mean", "nrr"):
        vals = np.array([float(r[cols[metric]]) for r in data], dtype=np.float64)
        spread = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rows.append(f"{metric},{float(vals.mean())!r},{spread!r},{len(vals)}")
    if out_path is not None:
        write_rows(out_path, REPORT_AGG_HEADER, rows)
    return rows
