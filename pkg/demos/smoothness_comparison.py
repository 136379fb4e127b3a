"""Paired comparison: plain adversarial training against the same run + penalty.

Both models share the dataset, architecture, initialization, and batch
schedule; the only difference is lambda. Afterwards the verification pass
probes directional curvature, Jacobian drift along the interpolation path,
and the layer-wise spectral bound on the held-out test set, and prints the
medians side by side. Reports land as CSV/JSON under --out (default
demo_out/smoothness).

    python3 demos/smoothness_comparison.py [--seed N] [--out DIR]
"""

import argparse
import os
from dataclasses import replace

import numpy as np

import rpat
from rpat import runner, verify

parser = argparse.ArgumentParser()
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default=os.path.join("demo_out", "smoothness"))
args = parser.parse_args()

spec = runner.DatasetSpec(n_per_class=400, noise_sigma=0.1, seed=0, fractions=(0.8, 0.1, 0.1))
train_set, val_set, test_set = runner.build_datasets(spec)
model = runner.build_model(runner.ModelSpec(hidden=(64, 64)), train_set)
budget = rpat.Budget(norm="linf", epsilon=0.1, step_size=0.02, num_steps=10, random_start=True)
eval_budget = replace(budget, num_steps=20)
proxy = rpat.PerceptionProxy("logits")

params = {}
for name, method, lam in (("at", "pgd_at", 0.0), ("rpat", "rpat", 1.0)):
    config = rpat.TrainConfig(
        epochs=150, lr_milestones=(100, 125), batch_size=64, seed=args.seed, budget=budget,
        loss=rpat.LossConfig(method=method, lambda_=lam, alpha=0.5, divergence="mse"),
    )
    arts = rpat.run_experiment(model, config, train_set, val_set)
    params[name] = arts.best.params
    clean = rpat.clean_accuracy(model, params[name], test_set)
    robust = rpat.robust_accuracy(model, params[name], test_set, eval_budget, seed=7)
    print(f"{name:5s} trained {config.epochs} epochs: "
          f"clean {100 * clean:.2f}%, pgd20 {100 * robust:.2f}%")

base_rep, reg_rep, summary = rpat.compare_models(
    model, params["at"], params["rpat"], test_set, eval_budget, proxy, seed=11
)

print()
print(f"{'probe':<22}{'at':>12}{'rpat':>12}{'reduction':>12}")
for label, a, b in (
    ("curvature median", np.median(base_rep.curvature), np.median(reg_rep.curvature)),
    ("drift median", np.median(base_rep.drift), np.median(reg_rep.drift)),
    ("penalty on test set", summary["baseline"]["rp_term"], summary["regularized"]["rp_term"]),
):
    print(f"{label:<22}{a:>12.5f}{b:>12.5f}{1.0 - b / a:>11.1%}")

os.makedirs(args.out, exist_ok=True)
for tag, rep in (("at", base_rep), ("rpat", reg_rep)):
    verify.write_report_csv(os.path.join(args.out, f"{tag}.csv"), rep)
    verify.write_summary_json(os.path.join(args.out, f"{tag}.json"), rep.summary())
print(f"\nper-example reports under {args.out}")
