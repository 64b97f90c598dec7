"""The pseudo-norm failure: zero-Fisher parameters escape any lambda.

A pretrained classifier is engineered so a block of hidden units is silent on
every input used for the Fisher: every parameter touching those units has an
exactly-zero Fisher entry. Fine-tuning on a follow-up task that needs exactly
those units then moves them for free, no matter how large the penalty weight,
and grafting the original head back on shows reverse transfer stuck below the
pretrained accuracy. Blending the Fisher with its mean (alpha = 1e-3) gives
the dead directions a floor and restores full recovery, at the usual cost of
less freedom for the new task.

Run:  python3 demos/04_recovery_pathology.py
"""

import pathlib

from fimreg import RecoveryConfig, build_recovery_setup, recovery_curve

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

config = RecoveryConfig(seed=0)
setup = build_recovery_setup(config)
print(f"pretrained accuracy on task A (after unit surgery): "
      f"{setup.pretrained_accuracy:.3f}")
print(f"exact-zero Fisher entries: {setup.dead_fraction:.1%} of "
      f"{setup.fisher.size} parameters "
      f"({len(setup.silenced_units)} silenced hidden units)")

lambdas = (1e0, 1e2, 1e4, 1e8, 1e12)
_, erm_b, erm_r = recovery_curve(setup, config, "erm", (0.0,))[0]
print(f"\nunregularized fine-tune: task-B {erm_b:.3f}, reverse transfer {erm_r:.3f}")

rows = {}
for method in ("fim", "adjusted_fim", "l2"):
    rows[method] = recovery_curve(setup, config, method, lambdas)

print(f"\n{'lambda':>8s} | " + " | ".join(f"{m:>22s}" for m in rows))
print(f"{'':>8s} | " + " | ".join(f"{'task-B':>10s} {'reverse':>10s}" for _ in rows))
for i, lam in enumerate(lambdas):
    cells = []
    for method in rows:
        _, b, r = rows[method][i]
        cells.append(f"{b:10.3f} {r:10.3f}")
    print(f"{lam:8.0e} | " + " | ".join(cells))

fim_final = rows["fim"][-1][2]
adj_final = rows["adjusted_fim"][-1][2]
print(f"\nat lambda = 1e12: unadjusted Fisher reverse transfer saturates at "
      f"{fim_final:.3f} ({100 * (setup.pretrained_accuracy - fim_final):.1f} points "
      f"below the pretrained {setup.pretrained_accuracy:.3f});")
print(f"the adjusted Fisher recovers {adj_final:.3f}.")

csv_path = OUT / "recovery_curves.csv"
with open(csv_path, "w") as fh:
    fh.write("method,lambda,task_b_top1,reverse_top1\n")
    fh.write(f"erm,0.0,{erm_b!r},{erm_r!r}\n")
    for method, curve in rows.items():
        for lam, b, r in curve:
            fh.write(f"{method},{lam!r},{b!r},{r!r}\n")
print(f"wrote {csv_path}")
