"""Reverse-transfer recovery experiment with engineered zero-Fisher parameters.

The quadratic Fisher-weighted penalty is only a pseudo-norm: parameters whose
Fisher entry is exactly zero can move freely at any regularization strength.
This module constructs a pretrained classifier in which that degeneracy has
teeth, so the failure (and its repair by the mean-blended Fisher) can be
measured directly:

1. Pretrain an MLP on a Gaussian-cluster task (task A).
2. Surgery: pick a block of hidden units, point their input weights along a
   direction orthogonal to every cluster center, amplify their outgoing rows,
   and lower their biases until they are inactive on every task-A input used
   for the Fisher. All Fisher entries touching these units are then exactly
   zero, while the model's behaviour on task A is that of the surviving
   sub-network.
3. Task B places the same clusters at a larger input scale and labels them by
   the side of the silenced direction, so fine-tuning revives exactly the
   zero-Fisher units.

Fine-tuning with the unadjusted Fisher penalty then fits task B well at any
lambda but wakes the silenced units inside task A's input range, corrupting
reverse transfer below the pretrained accuracy no matter how large lambda
grows; the adjusted penalty assigns those units weight alpha * mean(F) and
recovers the pretrained accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import ClusterSpec, LabeledDataset, cluster_centers, gen_cluster_dataset, split
from .evaluate import reverse_transfer_eval, top1_accuracy
from .fim import DiagFim, compute_fim_exact
from .harness import TaskBundle
from .nn import MlpSpec, ModelState, OptimizerConfig
from .penalty import PenaltyKind
from .pretrain import SupervisedPretrainConfig, supervised_pretrain
from .train import train_model


@dataclass(frozen=True)
class RecoveryConfig:
    """Knobs of the engineered-degeneracy construction."""

    seed: int = 0
    d: int = 12
    k: int = 4
    hidden: int = 24
    n_pretrain: int = 4000
    n_finetune: int = 6000
    cluster_radius: float = 3.0
    cluster_noise_std: float = 1.0
    scale: float = 3.0           # task-B input scale
    n_silenced: int = 8
    margin: float = 0.05
    head_amplification: float = 4.0
    pretrain_epochs: int = 40
    finetune_epochs: int = 40
    batch_size: int = 128
    learning_rate: float = 1e-2


@dataclass(frozen=True)
class RecoverySetup:
    """Everything the recovery sweep needs, built once per seed."""

    pretrained: ModelState       # post-surgery reference model
    fisher: DiagFim              # exact Fisher at the reference, on task-A inputs
    tasks: TaskBundle
    direction: np.ndarray        # the silenced feature direction
    silenced_units: tuple[int, ...]
    pretrained_accuracy: float   # task-A test top-1 of the reference model
    dead_fraction: float

    @property
    def scope(self) -> tuple[str, ...]:
        return self.pretrained.spec.backbone_segment_names()


def orthogonal_direction(centers: np.ndarray, seed: int) -> np.ndarray:
    """Unit vector orthogonal to every row of ``centers``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(centers.shape[1])
    q, _ = np.linalg.qr(centers.T)
    v = v - q @ (q.T @ v)
    norm = np.linalg.norm(v)
    if norm < 1e-9:
        raise ValueError("centers span the whole space; no orthogonal direction")
    return v / norm


def engineer_dead_units(
    model: ModelState,
    inputs: np.ndarray,
    units: tuple[int, ...],
    direction: np.ndarray,
    head_amplification: float,
    margin: float,
) -> ModelState:
    """Rewire selected first-layer units into silent detectors of ``direction``.

    The units' input weights are pointed along ``direction`` (norms kept) and
    the same direction is projected out of every other unit, so the silenced
    block is the network's only channel for it. The silenced units' outgoing
    head rows are amplified and their biases lowered until they are inactive
    on every row of ``inputs``. Amplifying a silent unit's outgoing row
    changes nothing on ``inputs`` but magnifies the damage done if
    fine-tuning later revives the unit.
    """
    w0 = model.weights(0).copy()
    live = [j for j in range(w0.shape[1]) if j not in set(units)]
    for j in live:
        w0[:, j] -= direction * (direction @ w0[:, j])
    for j in units:
        w0[:, j] = direction * np.linalg.norm(w0[:, j])
    w1 = model.weights(1).copy()
    w1[list(units), :] *= head_amplification
    rewired = ModelState(
        model.spec,
        model.params.with_segments(
            {"linear0.weight": w0.ravel(), "linear1.weight": w1.ravel()}
        ),
    )
    return nn.silence_hidden_units(rewired, inputs, layer=0, units=units, margin=margin)


def build_recovery_setup(cfg: RecoveryConfig) -> RecoverySetup:
    cluster_spec = ClusterSpec(
        n=cfg.n_pretrain, d=cfg.d, k=cfg.k, radius=cfg.cluster_radius,
        noise_std=cfg.cluster_noise_std, seed=cfg.seed,
    )
    task_a = gen_cluster_dataset(cluster_spec)
    a_train, a_test = split(task_a, (0.8, 0.2), seed=cfg.seed + 11)

    spec = MlpSpec(cfg.d, (cfg.hidden,), cfg.k, activation="relu", backbone_depth=1)
    opt = OptimizerConfig("adamw", cfg.learning_rate, schedule="cosine")
    model = supervised_pretrain(
        a_train, spec,
        SupervisedPretrainConfig(opt, cfg.pretrain_epochs, cfg.batch_size, seed=cfg.seed),
    )

    direction = orthogonal_direction(cluster_centers(cluster_spec), cfg.seed + 23)
    units = tuple(range(cfg.n_silenced))
    reference = engineer_dead_units(
        model, a_train.features, units, direction, cfg.head_amplification, cfg.margin
    )
    fisher = compute_fim_exact(reference, a_train.features)

    # task B: same cluster family at a larger scale, labeled by the silenced
    # direction, which only the dead units are positioned to detect
    src = gen_cluster_dataset(
        ClusterSpec(n=cfg.n_finetune, d=cfg.d, k=cfg.k, radius=cfg.cluster_radius,
                    noise_std=cfg.cluster_noise_std, seed=cfg.seed + 7919)
    )
    x_b = src.features * cfg.scale
    y_b = (x_b @ direction > 0.0).astype(np.int64)
    task_b = LabeledDataset(x_b, y_b, 2, name=f"recovery-b(seed={cfg.seed})")
    b_train, b_val, b_test = split(task_b, (0.6, 0.2, 0.2), seed=cfg.seed + 53)

    return RecoverySetup(
        pretrained=reference,
        fisher=fisher,
        tasks=TaskBundle(a_train, a_test, b_train, b_val, b_test),
        direction=direction,
        silenced_units=units,
        pretrained_accuracy=top1_accuracy(reference, a_test),
        dead_fraction=fisher.zero_fraction(),
    )


def finetune_recovery(
    setup: RecoverySetup,
    kind: PenaltyKind,
    cfg: RecoveryConfig,
    seed_offset: int = 0,
) -> ModelState:
    """Fine-tune the reference backbone (fresh binary head) on task B."""
    ft_spec = MlpSpec(cfg.d, (cfg.hidden,), 2, activation="relu", backbone_depth=1)
    fresh = nn.init_model(ft_spec, cfg.seed + 5 + seed_offset)
    theta = setup.pretrained.params
    start = ModelState(
        ft_spec,
        fresh.params.with_segments(
            {name: theta.segment(name) for name in ft_spec.backbone_segment_names()}
        ),
    )
    opt = OptimizerConfig("adamw", cfg.learning_rate, schedule="cosine")
    return train_model(
        start,
        setup.tasks.finetune_train.features,
        setup.tasks.finetune_train.labels,
        opt,
        epochs=cfg.finetune_epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed + 6 + seed_offset,
        penalty=kind,
        theta_ref=theta if kind.kind != "erm" else None,
    )


def recovery_curve(
    setup: RecoverySetup,
    cfg: RecoveryConfig,
    method: str,
    lambdas: tuple[float, ...],
    alpha: float = 1e-3,
) -> list[tuple[float, float, float]]:
    """(lambda, task-B top-1, reverse-transfer top-1) along a lambda sweep."""
    out = []
    for lam in lambdas:
        if method == "fim":
            kind = PenaltyKind.fisher(setup.fisher, lam, scope=setup.scope)
        elif method == "adjusted_fim":
            kind = PenaltyKind.adjusted_fisher(setup.fisher, lam, alpha, scope=setup.scope)
        elif method == "l2":
            kind = PenaltyKind.l2(lam, scope=setup.scope)
        elif method == "erm":
            kind = PenaltyKind.erm()
        else:
            raise ValueError(f"unknown method {method!r}")
        model = finetune_recovery(setup, kind, cfg)
        out.append(
            (
                lam,
                top1_accuracy(model, setup.tasks.finetune_test),
                reverse_transfer_eval(model, setup.pretrained, setup.tasks.pretrain_test),
            )
        )
    return out
