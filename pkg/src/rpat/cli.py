"""Command-line entry points.

Exit codes: 0 success, 2 configuration or usage problems, 3 numeric
failures. Any config key can be overridden on the command line with a
dotted flag, e.g. `--loss.lambda 2.0` or `--train.epochs 10`; values parse
as JSON when possible. The run-directory root resolves from --out, then
the config's output_root, then $RPAT_RUNS_ROOT, then ./runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import data, evaluate, runner
from .attack import Budget
from .errors import ConfigError, NumericError
from .model import Model, PerceptionProxy, load_checkpoint


def _load_config(args, overrides) -> runner.ExperimentConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{args.config} is not valid JSON: {e}") from e
    else:
        raw = runner.ExperimentConfig().to_dict()
    if overrides:
        raw = runner.apply_overrides(raw, overrides)
    return runner.config_from_dict(raw)


def parse_overrides(tokens) -> list:
    """Turn leftover `--a.b value` / `--a.b=value` tokens into (key, value)."""
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} is missing a value")
            key, value = body, tokens[i + 1]
            i += 2
        if "." not in key:
            raise ConfigError(f"unknown option --{key}")
        out.append((key, value))
    return out


def _cmd_synth_data(args, overrides):
    if overrides:
        raise ConfigError("synth-data does not take config overrides")
    full = data.generate_synthetic(
        args.seed, args.n_per_class, args.num_classes, args.layout, args.noise_sigma
    )
    splits = data.split_dataset(full, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    for ds in splits:
        if args.format == "csv":
            path = os.path.join(args.out, f"{ds.split}.csv")
            data.export_csv(path, ds)
        else:
            path = os.path.join(args.out, f"{ds.split}-images.idx")
            data.write_idx(path, os.path.join(args.out, f"{ds.split}-labels.idx"), ds)
        print(f"{ds.split}: {len(ds)} examples -> {path}")
    return 0


def _cmd_train(args, overrides):
    config = _load_config(args, overrides)
    result = runner.run_experiment_config(config, output_root=args.out)
    print(f"run dir: {result.run_dir}")
    for report in result.reports:
        print(report.row())
    return 0


def _budget_from_args(args, fallback: Budget) -> Budget:
    return Budget(
        norm=args.norm if args.norm else fallback.norm,
        epsilon=args.eps if args.eps is not None else fallback.epsilon,
        step_size=args.step if args.step is not None else fallback.step_size,
        num_steps=args.steps if args.steps is not None else fallback.num_steps,
        random_start=fallback.random_start if args.random_start is None else args.random_start,
    )


def _load_model_and_data(args, overrides):
    config = _load_config(args, overrides)
    train_set, val_set, test_set = runner.build_datasets(config.dataset)
    desc, params, meta = load_checkpoint(args.ckpt)
    model = Model(desc)
    if test_set.features.shape[1] != model.input_dim:
        raise ConfigError("checkpoint and dataset disagree on the input dimension")
    return config, model, params, test_set


def _cmd_eval(args, overrides):
    config, model, params, test_set = _load_model_and_data(args, overrides)
    report = evaluate.evaluate_model(
        model,
        params,
        test_set,
        config.eval_budget,
        proxy=PerceptionProxy(config.train.loss.proxy),
        tag=args.tag,
        seed=args.seed,
        report_tag=os.path.basename(args.ckpt),
    )
    print(evaluate.REPORT_HEADER)
    print(report.row())
    if args.out:
        runner.write_rows(args.out, evaluate.REPORT_HEADER, [report.row()], config.config_hash())
    return 0


def _cmd_attack(args, overrides):
    config, model, params, test_set = _load_model_and_data(args, overrides)
    budget = _budget_from_args(args, config.eval_budget)
    clean = evaluate.clean_accuracy(model, params, test_set)
    robust = evaluate.robust_accuracy(model, params, test_set, budget, args.tag, args.seed)
    print(f"clean={100.0 * clean:.3f} robust={100.0 * robust:.3f} "
          f"({args.tag}, {budget.norm}, eps={budget.epsilon:g}, steps={budget.num_steps})")
    if args.save_adv:
        x_adv = evaluate.run_attack(
            model, params, test_set.features, test_set.labels, budget, args.tag, args.seed
        )
        adv = data.Dataset(
            x_adv, test_set.labels, test_set.num_classes, test_set.input_shape, "adv"
        )
        data.export_csv(args.save_adv, adv)
        print(f"adversarial examples -> {args.save_adv}")
    return 0


def _cmd_analyze_perception(args, overrides):
    config = _load_config(args, overrides)
    rows, plot_rows, run_dir = runner.analyze_perception(config, output_root=args.out)
    print(runner.ANALYZE_HEADER)
    for row in rows:
        print(row)
    if run_dir:
        print(f"run dir: {run_dir}")
    return 0


def _cmd_verify_theorems(args, overrides):
    config = _load_config(args, overrides)
    summary = runner.verify_theorems(
        config,
        args.baseline,
        args.regularized,
        out_dir=args.out,
        max_examples=args.max_examples,
        probe_step=args.probe_step,
    )
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _cmd_ablate(args, overrides):
    config = _load_config(args, overrides)
    divergences = args.divergences.split(",") if args.divergences else runner.ABLATION_DIVERGENCES
    alphas = args.alphas.split(",") if args.alphas else runner.ABLATION_ALPHAS
    rows, run_dir = runner.ablate(config, divergences, alphas, output_root=args.out)
    print(runner.ABLATE_HEADER)
    for row in rows:
        print(row)
    if run_dir:
        print(f"run dir: {run_dir}")
    return 0


def _cmd_nrr(args, overrides):
    if overrides:
        raise ConfigError("nrr takes exactly two accuracies")
    print(f"{evaluate.nrr(args.clean, args.robust):.3f}")
    return 0


def _cmd_report(args, overrides):
    if overrides:
        raise ConfigError("report does not take config overrides")
    rows = runner.aggregate_report(args.run_dir, out_path=args.out)
    print(runner.REPORT_AGG_HEADER)
    for row in rows:
        print(row)
    return 0


def _cmd_reproduce_tables(args, overrides):
    if overrides:
        raise ConfigError("reproduce-tables does not take config overrides")
    rows, mismatches = runner.reproduce_tables(out_path=args.out)
    print(runner.TABLES_HEADER)
    for row in rows:
        print(row)
    if mismatches:
        print(f"MISMATCHES: {', '.join(mismatches)}")
        return 3
    print(f"all {len(rows)} rows reproduce within 0.001")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rpat",
        description="Adversarial-training laboratory with a perception-smoothing regularizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset and write splits")
    p.add_argument("--layout", default="two_arcs", choices=["two_arcs", "gaussian_blobs"])
    p.add_argument("--n-per-class", type=int, default=300)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.add_argument("--format", default="csv", choices=["csv", "idx"])
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train one experiment config across its seeds")
    p.add_argument("--config", help="experiment config JSON (defaults when omitted)")
    p.add_argument("--out", help="output root (overrides config and environment)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tag", default="pgd", choices=list(evaluate.ATTACK_TAGS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the report row to this CSV file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("attack", help="attack a checkpoint and report robust accuracy")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--norm", choices=["linf", "l2"])
    p.add_argument("--eps", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--steps", type=int)
    rs = p.add_mutually_exclusive_group()
    rs.add_argument("--random-start", dest="random_start", action="store_true", default=None)
    rs.add_argument("--no-random-start", dest="random_start", action="store_false")
    p.add_argument("--tag", default="pgd", choices=list(evaluate.ATTACK_TAGS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-adv", help="write attacked inputs to this CSV file")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser(
        "analyze-perception",
        help="success/failure perception gap under clean, random, and PGD training",
    )
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_analyze_perception)

    p = sub.add_parser(
        "verify-theorems", help="curvature/Jacobian smoothness report for checkpoints"
    )
    p.add_argument("--config")
    p.add_argument("--baseline", required=True, help="checkpoint to measure")
    p.add_argument("--regularized", help="second checkpoint for a paired comparison")
    p.add_argument("--out")
    p.add_argument("--max-examples", type=int, default=32)
    p.add_argument("--probe-step", type=float, default=0.5)
    p.set_defaults(func=_cmd_verify_theorems)

    p = sub.add_parser("ablate", help="sweep divergence kind and alpha setting")
    p.add_argument("--config")
    p.add_argument("--divergences", help="comma-separated subset of mse,kl,js,cosine")
    p.add_argument("--alphas", help="comma-separated subset of 0.2,0.5,0.8,beta_minus,beta_plus")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("nrr", help="harmonic trade-off score of a clean/robust pair")
    p.add_argument("clean", type=float)
    p.add_argument("robust", type=float)
    p.set_defaults(func=_cmd_nrr)

    p = sub.add_parser("report", help="aggregate per-seed eval rows of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser(
        "reproduce-tables", help="recompute the benchmark Mean/NRR arithmetic"
    )
    p.add_argument("--out")
    p.set_defaults(func=_cmd_reproduce_tables)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = parse_overrides(extra)
        return args.func(args, overrides)
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ArithmeticError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
