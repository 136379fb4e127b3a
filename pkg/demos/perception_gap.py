"""Do attack failures move the model's perception more than successes do?

Trains one model on clean batches and one with PGD examples, then splits a
random-perturbation evaluation of each into fooled / not-fooled examples and
compares the mean squared perception displacement of the two groups. On the
clean model the failures sit well above the successes; adversarial training
shrinks or flips that gap. A wider evaluation radius than the training
budget keeps both groups populated.

    python3 demos/perception_gap.py [--seeds N]
"""

import argparse
from dataclasses import replace

import rpat
from rpat import runner

parser = argparse.ArgumentParser()
parser.add_argument("--seeds", type=int, default=3)
args = parser.parse_args()

spec = runner.DatasetSpec(n_per_class=400, noise_sigma=0.1, seed=0, fractions=(0.8, 0.1, 0.1))
train_set, val_set, test_set = runner.build_datasets(spec)
model = runner.build_model(runner.ModelSpec(hidden=(64, 64)), train_set)
budget = rpat.Budget(norm="linf", epsilon=0.1, step_size=0.02, num_steps=10, random_start=True)
eval_budget = replace(budget, epsilon=0.15)  # wider than trained, see docstring
proxy = rpat.PerceptionProxy("logits")

print(f"{'training':<14}{'seed':>5}{'fooled':>8}{'held':>6}{'mse fooled':>12}{'mse held':>10}  gap")
for label, attack in (("clean", "none"), ("adversarial", "pgd")):
    for seed in range(args.seeds):
        config = rpat.TrainConfig(
            epochs=40, lr_milestones=(25, 35), batch_size=64, seed=seed,
            budget=budget, attack=attack,
            loss=rpat.LossConfig(method="pgd_at", lambda_=0.0),
        )
        arts = rpat.run_experiment(model, config, train_set, val_set)
        gap = rpat.perception_mse_gap(
            model, arts.best.params, test_set, eval_budget, proxy,
            tag="random", seed=seed + 100,
        )
        if gap["mse_success"] is None or gap["mse_failure"] is None:
            verdict = "one group empty"
            ms = mf = float("nan")
        else:
            ms, mf = gap["mse_success"], gap["mse_failure"]
            verdict = "failures move more" if mf > ms else "successes move more"
        print(f"{label:<14}{seed:>5}{gap['n_success']:>8}{gap['n_failure']:>6}"
              f"{ms:>12.4f}{mf:>10.4f}  {verdict}")
