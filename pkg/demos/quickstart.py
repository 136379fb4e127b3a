"""Smallest end-to-end run: synthetic arcs, RPAT training, one eval report.

Trains a small relu net for a couple dozen epochs with PGD-generated
adversarial examples and the interpolation penalty switched on, then prints
the evaluation row (clean accuracy, robust accuracy, mean, NRR). Pass an
output directory as the only argument to also keep metrics.csv and the
checkpoints around; without it nothing is written.

    python3 demos/quickstart.py [outdir]
"""

import sys

import rpat
from rpat.evaluate import REPORT_HEADER

budget = rpat.Budget(norm="linf", epsilon=0.1, step_size=0.02, num_steps=10, random_start=True)

data = rpat.generate_synthetic(seed=0, n_per_class=300, num_classes=2)
train_set, val_set, test_set = rpat.split_dataset(data, fractions=(0.8, 0.1, 0.1), seed=0)
print(f"data: {train_set.features.shape[0]} train / {val_set.features.shape[0]} val / "
      f"{test_set.features.shape[0]} test, {data.num_classes} classes")

model = rpat.Model(rpat.ArchitectureDescriptor(
    kind="mlp", input_shape=data.input_shape, hidden=(32, 32), num_classes=data.num_classes,
))
print(f"model: mlp hidden=(32, 32), {model.num_params} parameters")

config = rpat.TrainConfig(
    epochs=30, batch_size=64, lr_milestones=(20, 26), seed=0, budget=budget,
    loss=rpat.LossConfig(method="rpat", lambda_=1.0, alpha=0.5, divergence="mse"),
)

run_dir = sys.argv[1] if len(sys.argv) > 1 else None
arts = rpat.run_experiment(model, config, train_set, val_set, run_dir=run_dir)

for m in arts.metrics[::6] + [arts.metrics[-1]]:
    print(f"epoch {m.epoch:3d}  loss {m.train_loss:.4f} (ce {m.ce_term:.4f} + rp {m.rp_term:.4f})  "
          f"val clean {m.clean_val_acc:.3f}  val pgd {m.pgd_val_acc:.3f}")
print(f"best checkpoint: epoch {arts.best.epoch} (val pgd {arts.best.pgd_val_acc:.3f})")

eval_budget = rpat.Budget(norm="linf", epsilon=0.1, step_size=0.02, num_steps=20, random_start=True)
report = rpat.evaluate_model(model, arts.best.params, test_set, eval_budget, report_tag="quickstart")
print()
print(REPORT_HEADER)
print(report.row())
if run_dir is not None:
    print(f"artifacts under {run_dir}")
