"""Metrics: top-1 accuracy, per-group accuracy, reverse transfer, and
cross-task Pareto fronts.

Reverse transfer grafts the original pretraining head onto a fine-tuned
backbone and scores the pretraining test set: it measures how much of the
first task survives fine-tuning. The Pareto utilities summarize sweeps in the
(fine-tune accuracy, reverse-transfer accuracy) plane, either as the
nondominated staircase or as the upper-right convex hull of that staircase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledDataset
from .nn import MlpSpec, ModelState, OptimizerConfig
from .train import train_model


@dataclass(frozen=True)
class GroupReport:
    """Overall and per-group accuracy; worst group taken over nonempty groups."""

    overall: float
    per_group: tuple[tuple[int, int, float], ...]  # (group id, count, accuracy)
    worst_group_accuracy: float
    worst_group: int

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "worst_group_accuracy": self.worst_group_accuracy,
            "worst_group": self.worst_group,
            "groups": [
                {"group": g, "count": c, "accuracy": a} for g, c, a in self.per_group
            ],
        }


def _predictions(model: ModelState, dataset: LabeledDataset) -> np.ndarray:
    logits = nn.forward_logits(model, dataset.features)
    return np.argmax(logits, axis=1)  # ties resolve to the lowest class index


def top1_accuracy(model: ModelState, dataset: LabeledDataset) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    if dataset.n == 0:
        raise ValueError("empty dataset")
    return float(np.mean(_predictions(model, dataset) == dataset.labels))


def worst_group_accuracy(model: ModelState, dataset: LabeledDataset) -> GroupReport:
    """Per-group accuracies and their minimum; requires group ids."""
    if dataset.groups is None:
        raise ValueError("dataset has no group ids")
    preds = _predictions(model, dataset)
    correct = preds == dataset.labels
    rows = []
    worst = (1.0, -1)
    for g in range(dataset.num_groups):
        mask = dataset.groups == g
        count = int(mask.sum())
        if count == 0:
            continue
        acc = float(correct[mask].mean())
        rows.append((g, count, acc))
        if acc < worst[0]:
            worst = (acc, g)
    return GroupReport(
        overall=float(correct.mean()),
        per_group=tuple(rows),
        worst_group_accuracy=worst[0],
        worst_group=worst[1],
    )


def reverse_transfer_eval(
    finetuned: ModelState,
    pretrained: ModelState,
    pretrain_testset: LabeledDataset,
) -> float:
    """Top-1 of (fine-tuned backbone + pretrained head) on the pretrain test set.

    The two models may differ in head width (the fine-tuning task usually has
    its own class count); their backbones must agree exactly. Neither input is
    modified.
    """
    f_spec, p_spec = finetuned.spec, pretrained.spec
    same_backbone = (
        f_spec.input_dim == p_spec.input_dim
        and f_spec.activation == p_spec.activation
        and f_spec.backbone_depth == p_spec.backbone_depth
        and f_spec.hidden_dims[: f_spec.backbone_depth]
        == p_spec.hidden_dims[: p_spec.backbone_depth]
    )
    if not same_backbone:
        raise nn.LayoutMismatchError("backbone architectures differ")
    updates = {
        name: finetuned.params.segment(name)
        for name in p_spec.backbone_segment_names()
    }
    composite = ModelState(p_spec, pretrained.params.with_segments(updates))
    return top1_accuracy(composite, pretrain_testset)


@dataclass(frozen=True)
class ParetoPoint:
    """One run in the (fine-tune top-1, reverse-transfer top-1) plane."""

    x: float
    y: float
    config_id: int = -1
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError("pareto coordinates must lie in [0, 1]")


def _nondominated(points: list[ParetoPoint]) -> list[ParetoPoint]:
    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    ge_x = xs[:, None] <= xs[None, :]
    ge_y = ys[:, None] <= ys[None, :]
    strict = (xs[:, None] < xs[None, :]) | (ys[:, None] < ys[None, :])
    dominated = (ge_x & ge_y & strict).any(axis=1)
    return [p for p, d in zip(points, dominated) if not d]


def _upper_hull(points: list[ParetoPoint]) -> list[ParetoPoint]:
    # points arrive nondominated and sorted by x ascending (y descending);
    # walk left to right and drop interior points, keeping those exactly on a
    # chord (closed-hull convention).
    hull: list[ParetoPoint] = []
    for p in points:
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (a.x - o.x) * (p.y - o.y) - (a.y - o.y) * (p.x - o.x)
            if cross > 0.0:  # a lies strictly below chord o-p
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def pareto_front(points: list[ParetoPoint], mode: str = "nondominated") -> list[ParetoPoint]:
    """Maximal points in both coordinates, sorted by x ascending.

    ``nondominated`` keeps every point not dominated in the (>=, >=, one >)
    sense; duplicates of a maximal point are all kept. ``convex_hull`` keeps
    the upper-right hull of the nondominated set, including points lying
    exactly on a hull chord.
    """
    if not points:
        raise ValueError("empty point list")
    if mode not in ("nondominated", "convex_hull"):
        raise ValueError("mode must be nondominated or convex_hull")
    front = _nondominated(list(points))
    front.sort(key=lambda p: (p.x, -p.y, p.seed, p.config_id))
    if mode == "convex_hull":
        front = _upper_hull(front)
    return sorted(front, key=lambda p: (p.x, p.y, p.config_id, p.seed))


def linear_probe_accuracy(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    num_classes: int,
    seed: int = 0,
    epochs: int = 60,
    learning_rate: float = 0.05,
) -> float:
    """Accuracy of a linear softmax probe trained on the given features.

    Used both as a separability oracle for synthetic tasks and to score
    learned representations (pass backbone outputs as features).
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    spec = MlpSpec(train_x.shape[1], (), num_classes)
    model = nn.init_model(spec, seed)
    opt = OptimizerConfig(
        kind="adamw", learning_rate=learning_rate, schedule="cosine", total_steps=0
    )
    trained = train_model(
        model, train_x, train_y, opt, epochs=epochs, batch_size=256, seed=seed + 1
    )
    preds = np.argmax(nn.forward_logits(trained, np.asarray(test_x, np.float64)), axis=1)
    return float(np.mean(preds == np.asarray(test_y)))
