"""Catastrophic forgetting, and what the anchored penalty buys back.

Two cluster-classification tasks share one input space but demand different
features, and the network is deliberately narrow so they compete for
capacity. Plain fine-tuning on the second task overwrites the first; the
Fisher-weighted penalty pins the parameters the first task actually used, so
at a well-chosen lambda the second task trains to near-parity while the first
survives.

Run:  python3 demos/05_forgetting_control.py
"""

from fimreg import (
    ClusterSpec,
    MlpSpec,
    ModelState,
    OptimizerConfig,
    PenaltyKind,
    SupervisedPretrainConfig,
    compute_fim_exact,
    gen_cluster_dataset,
    init_model,
    reverse_transfer_eval,
    split,
    supervised_pretrain,
    top1_accuracy,
    train_model,
)

seed, d, hidden = 0, 12, 8
task_a = gen_cluster_dataset(ClusterSpec(n=4000, d=d, k=4, seed=seed))
a_train, a_test = split(task_a, (0.8, 0.2), seed=seed + 11)
task_b = gen_cluster_dataset(ClusterSpec(n=6000, d=d, k=6, seed=seed + 5000))
b_train, _, b_test = split(task_b, (0.6, 0.2, 0.2), seed=seed + 53)

spec_a = MlpSpec(d, (hidden,), 4, activation="relu", backbone_depth=1)
pretrained = supervised_pretrain(
    a_train, spec_a,
    SupervisedPretrainConfig(OptimizerConfig("adamw", 1e-2, schedule="cosine"),
                             epochs=40, batch_size=128, seed=seed))
a0 = top1_accuracy(pretrained, a_test)
fisher = compute_fim_exact(pretrained, a_train.features)
print(f"task A (4 clusters): pretrained accuracy {a0:.3f} "
      f"with a {hidden}-unit hidden layer")

spec_b = MlpSpec(d, (hidden,), 6, activation="relu", backbone_depth=1)
scope = spec_b.backbone_segment_names()


def finetune(kind):
    fresh = init_model(spec_b, seed + 5)
    start = ModelState(spec_b, fresh.params.with_segments(
        {name: pretrained.params.segment(name) for name in scope}))
    return train_model(
        start, b_train.features, b_train.labels,
        OptimizerConfig("adamw", 1e-2, schedule="cosine"),
        epochs=60, batch_size=128, seed=seed + 6,
        penalty=kind, theta_ref=pretrained.params if kind.kind != "erm" else None)


erm = finetune(PenaltyKind.erm())
erm_b = top1_accuracy(erm, b_test)
erm_a = reverse_transfer_eval(erm, pretrained, a_test)
print(f"\nplain fine-tuning on task B (6 new clusters): "
      f"task-B {erm_b:.3f}, task-A falls {a0:.3f} -> {erm_a:.3f} "
      f"({100 * (a0 - erm_a):.0f} points forgotten)")

print(f"\n{'lambda':>8s} {'task-B':>8s} {'task-A':>8s}   note")
for lam in (3e-1, 1e0, 3e0, 1e1, 1e2, 1e3):
    model = finetune(PenaltyKind.fisher(fisher, lam, scope=scope))
    b = top1_accuracy(model, b_test)
    a = reverse_transfer_eval(model, pretrained, a_test)
    note = "task-B competitive" if b >= erm_b - 0.02 else "anchor too strong for B"
    print(f"{lam:8.0e} {b:8.3f} {a:8.3f}   {note}")
print("\nthe sweet spot keeps task B within two points of plain fine-tuning "
      "while retaining most of task A.")
