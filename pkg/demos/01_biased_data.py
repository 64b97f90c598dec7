"""A biased binary task with a spurious shortcut, and why it fools a learner.

The dataset has two feature blocks. The core block carries the label at a
modest separation; the spurious block carries a nuisance attribute at twice
that separation. The attribute agrees with the label with probability rho, so
at high rho the cleaner spurious signal is the tempting shortcut -- but it is
wrong on the label/attribute minority groups. Group ids (2 * label +
attribute) make the failure measurable as worst-group accuracy.

Run:  python3 demos/01_biased_data.py
"""

import pathlib

import numpy as np

from fimreg import SpuriousSpec, gen_spurious_dataset, linear_probe_accuracy, split

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

rho = 0.95
ds = gen_spurious_dataset(SpuriousSpec(n=12000, d_core=6, d_spurious=6,
                                       correlation=rho, noise_std=0.45, seed=0))
print(f"dataset: {ds.name}, n={ds.n}, d={ds.dim}")
print("\ngroup structure (group = 2 * label + attribute):")
for g in range(4):
    count = int((ds.groups == g).sum())
    label, attr = divmod(g, 2)
    kind = "majority" if label == attr else "minority"
    print(f"  group {g} (label={label}, attribute={attr}): {count:5d} samples  [{kind}]")

train, test = split(ds, (0.7, 0.3), seed=1)
core = slice(0, 6)
spur = slice(6, 12)

acc_core = linear_probe_accuracy(train.features[:, core], train.labels,
                                 test.features[:, core], test.labels, 2)
acc_spur = linear_probe_accuracy(train.features[:, spur], train.labels,
                                 test.features[:, spur], test.labels, 2)
acc_all = linear_probe_accuracy(train.features, train.labels,
                                test.features, test.labels, 2)

print("\nlinear probes (test accuracy):")
print(f"  core block only      {acc_core:.3f}   (the honest signal)")
print(f"  spurious block only  {acc_spur:.3f}   (tracks rho = {rho})")
print(f"  all features         {acc_all:.3f}")

csv_path = OUT / "biased_dataset.csv"
ds.subset(np.arange(200)).to_csv(csv_path)
print(f"\nwrote a 200-row sample to {csv_path}")
