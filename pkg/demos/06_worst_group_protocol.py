"""The full worst-group protocol: sweep, select without group labels, report.

Pretraining sees an unbiased twin of the deployment task (attribute
uncorrelated with the label, through a bottleneck backbone); fine-tuning sees
the 95%-correlated version. Each method sweeps its grid with five replicates,
hyperparameters are chosen by validation top-1 alone (no group labels), and
only then is worst-group accuracy revealed on the test split. Anchoring to
the unbiased backbone trades a little top-1 for a large worst-group gain.

Run:  python3 demos/06_worst_group_protocol.py   (about a minute)
"""

import dataclasses
import pathlib

from fimreg import (
    FimConfig,
    MlpSpec,
    OptimizerConfig,
    PenaltyConfig,
    PretrainConfig,
    RunConfig,
    SweepSpec,
    TaskConfig,
)
from fimreg import harness

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

base = RunConfig(
    model=MlpSpec(12, (16, 3), 2, activation="relu", backbone_depth=2),
    task=TaskConfig(kind="spurious_pair", n_pretrain=6000, n_finetune=10000,
                    d_core=6, d_spurious=6, rho=0.95, noise_std=0.45,
                    data_seed=0, fractions=(0.2, 0.2, 0.6)),
    pretrain=PretrainConfig(style="supervised",
                            optimizer=OptimizerConfig("adamw", 1e-2, schedule="cosine"),
                            epochs=60, batch_size=128, seed=0),
    fim=FimConfig(mode="exact", n_samples=10000),
    penalty=PenaltyConfig(kind="erm"),
    optimizer=OptimizerConfig("adamw", 1e-2, schedule="cosine"),
    epochs=40, batch_size=128, seed=0,
)
print("building tasks and pretraining on the unbiased twin...")
tasks = harness.build_tasks(base.task)
artifacts = harness.prepare_artifacts(base, tasks)

lrs = (1e-3, 3e-3, 1e-2)
sweeps = {
    "erm": (base, SweepSpec(learning_rates=lrs, lambdas=(0.0,),
                            replicates=5, master_seed=100)),
    "fim": (dataclasses.replace(base, penalty=PenaltyConfig(kind="fim", lam=1.0)),
            SweepSpec(learning_rates=lrs, lambdas=(1e2, 1e3, 1e4),
                      replicates=5, master_seed=100)),
    "adjusted_fim": (dataclasses.replace(
        base, penalty=PenaltyConfig(kind="adjusted_fim", lam=1.0, alpha=1e-3)),
        SweepSpec(learning_rates=lrs, lambdas=(1e2, 1e3, 1e4),
                  replicates=5, master_seed=100)),
    "l2": (dataclasses.replace(base, penalty=PenaltyConfig(kind="l2", lam=1.0)),
           SweepSpec(learning_rates=lrs, lambdas=(1e-2, 1e-1, 1e0),
                     replicates=5, master_seed=100)),
}

print(f"\n{'method':>14s} {'val top-1':>10s} {'test top-1':>11s} "
      f"{'test WGA':>16s} {'reverse':>8s}")
for name, (config, spec) in sweeps.items():
    sweep = harness.random_sweep(spec, config, artifacts, tasks)
    harness.write_results_csv(sweep, OUT / f"wga_results_{name}.csv")
    summary = harness.selection_summary(sweep)
    chosen = harness.aggregate(sweep.trials_for(summary["selected_config_id"]))
    wga_m, wga_s = chosen["test_wga"]
    print(f"{name:>14s} {chosen['val_top1'][0]:10.3f} {chosen['test_top1'][0]:11.3f} "
          f"{wga_m:10.3f} +- {wga_s:.3f} {chosen['reverse_top1'][0]:8.3f}")

print(f"\nselection never sees group labels; per-run rows are in {OUT}/wga_results_*.csv")
