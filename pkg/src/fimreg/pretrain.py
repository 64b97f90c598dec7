"""Toy self-distillation pretraining and its supervised control.

The self-distillation loop trains a student network against pseudo-labels
from a teacher that is an exponential moving average of the student. The
teacher applies a centering step between backbone and head (an EMA of batch
backbone means) and sharpens with a lower softmax temperature than the
student. Gradients never flow through the teacher: its parameters change only
via the EMA update.

The final student parameters are the reference weights for every downstream
Fisher computation and anchored penalty; the final teacher's probabilities
over the unaugmented inputs form the pseudo-label dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledDataset
from .nn import MlpSpec, ModelState, OptimizerConfig, ParamVector
from .train import train_model


@dataclass(frozen=True)
class AugmentationSpec:
    """Gaussian jitter plus independent coordinate masking."""

    noise_std: float
    mask_prob: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError("mask_prob must lie in [0, 1)")


def augment(x: np.ndarray, spec: AugmentationSpec, draw_index: int) -> np.ndarray:
    """One stochastic view of ``x``; deterministic given (spec.seed, draw_index)."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng([spec.seed, draw_index])
    out = x + rng.standard_normal(x.shape) * spec.noise_std
    if spec.mask_prob > 0.0:
        out = np.where(rng.random(x.shape) < spec.mask_prob, 0.0, out)
    return out


@dataclass(frozen=True)
class TeacherState:
    """EMA copy of the student plus the output-centering vector."""

    params: ParamVector
    center: np.ndarray
    ema_momentum: float
    center_momentum: float

    def __post_init__(self) -> None:
        c = np.array(self.center, dtype=np.float64, copy=True)
        c.flags.writeable = False
        object.__setattr__(self, "center", c)
        for name in ("ema_momentum", "center_momentum"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def teacher_forward(
    teacher: TeacherState,
    model_spec: MlpSpec,
    x: np.ndarray,
    temperature: float = 1.0,
) -> np.ndarray:
    """Teacher probabilities: softmax(head(backbone(x) - center) / temperature)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if teacher.center.shape != (model_spec.backbone_output_dim,):
        raise ValueError("center dimension does not match the backbone output")
    model = ModelState(model_spec, teacher.params)
    rep = nn.forward_backbone(model, x)
    logits = nn.head_logits(model, rep - teacher.center)
    return nn.softmax(logits / temperature)


def update_center(center: np.ndarray, batch_backbone_outputs: np.ndarray, c_m: float) -> np.ndarray:
    """EMA of batch means: c_m * center + (1 - c_m) * mean(outputs)."""
    outputs = np.asarray(batch_backbone_outputs, dtype=np.float64)
    if outputs.ndim != 2 or outputs.shape[0] == 0:
        raise ValueError("batch outputs must be a nonempty n x d matrix")
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (outputs.shape[1],):
        raise ValueError("center dimension mismatch")
    if not 0.0 <= c_m <= 1.0:
        raise ValueError("center momentum must lie in [0, 1]")
    return c_m * center + (1.0 - c_m) * outputs.mean(axis=0)


def ema_update(teacher_params: ParamVector, student_params: ParamVector, m: float) -> ParamVector:
    """theta_t <- m * theta_t + (1 - m) * theta_s."""
    if not 0.0 <= m <= 1.0:
        raise ValueError("ema momentum must lie in [0, 1]")
    teacher_params._require_same_layout(student_params)
    return ParamVector(
        m * teacher_params.values + (1.0 - m) * student_params.values,
        teacher_params.layout,
    )


@dataclass(frozen=True)
class PseudoLabelDataset:
    """Unaugmented inputs with the teacher's soft class probabilities."""

    inputs: np.ndarray
    soft_labels: np.ndarray

    def __post_init__(self) -> None:
        inp = np.array(self.inputs, dtype=np.float64, copy=True)
        soft = np.array(self.soft_labels, dtype=np.float64, copy=True)
        inp.flags.writeable = False
        soft.flags.writeable = False
        object.__setattr__(self, "inputs", inp)
        object.__setattr__(self, "soft_labels", soft)
        if soft.shape[0] != inp.shape[0]:
            raise ValueError("inputs and soft labels disagree on row count")
        if np.any(np.abs(soft.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("each soft-label row must sum to 1")

    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.soft_labels, axis=1)


@dataclass(frozen=True)
class DinoConfig:
    """Hyperparameters of the self-distillation loop.

    Temperatures default to the conventional sharpened-teacher ratio
    (student 0.1, teacher 0.04).
    """

    steps: int
    batch_size: int
    optimizer: OptimizerConfig
    augmentation: AugmentationSpec
    tau_student: float = 0.1
    tau_teacher: float = 0.04
    ema_momentum: float = 0.99
    center_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.tau_student <= 0 or self.tau_teacher <= 0:
            raise ValueError("temperatures must be positive")
        for name in ("ema_momentum", "center_momentum"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class DinoResult:
    theta_ssl: ParamVector
    pseudo_labels: PseudoLabelDataset
    teacher: TeacherState
    loss_history: tuple[float, ...]


def _cross_entropy(p: np.ndarray, log_q: np.ndarray) -> float:
    return float(-np.mean(np.sum(p * log_q, axis=1)))


def dino_pretrain(
    unlabeled_inputs: np.ndarray,
    model_spec: MlpSpec,
    config: DinoConfig,
) -> DinoResult:
    """Run the student/teacher loop; returns the reference weights and
    pseudo-labels.

    Each step draws a batch, forms two augmented views, and minimizes the
    symmetrized cross-entropy between the teacher's sharpened probabilities on
    one view and the student's on the other. Per step, in order: loss and
    student gradient with the current teacher, student optimizer update,
    teacher EMA update, center update from the teacher's batch backbone
    outputs. Deterministic given config.seed.
    """
    inputs = np.asarray(unlabeled_inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("unlabeled inputs must be a nonempty n x d matrix")
    n = inputs.shape[0]
    student = nn.init_model(model_spec, config.seed)
    teacher = TeacherState(
        params=student.params,
        center=np.zeros(model_spec.backbone_output_dim),
        ema_momentum=config.ema_momentum,
        center_momentum=config.center_momentum,
    )
    opt_state = nn.init_opt_state(config.optimizer, student.params)
    batch_rng = np.random.default_rng([config.seed, 0xBA7C4])
    order = batch_rng.permutation(n)
    cursor = 0
    losses: list[float] = []
    for step in range(config.steps):
        if cursor + config.batch_size > n:
            order = batch_rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        batch = inputs[idx]
        x1 = augment(batch, config.augmentation, 2 * step)
        x2 = augment(batch, config.augmentation, 2 * step + 1)

        teacher_model = ModelState(model_spec, teacher.params)
        rep1 = nn.forward_backbone(teacher_model, x1)
        rep2 = nn.forward_backbone(teacher_model, x2)
        t1 = nn.softmax(nn.head_logits(teacher_model, rep1 - teacher.center) / config.tau_teacher)
        t2 = nn.softmax(nn.head_logits(teacher_model, rep2 - teacher.center) / config.tau_teacher)

        z1 = nn.forward_logits(student, x1)
        z2 = nn.forward_logits(student, x2)
        logq1 = nn.log_softmax(z1 / config.tau_student)
        logq2 = nn.log_softmax(z2 / config.tau_student)
        loss = 0.5 * (_cross_entropy(t2, logq1) + _cross_entropy(t1, logq2))
        losses.append(loss)

        m = idx.size
        d1 = 0.5 * (np.exp(logq1) - t2) / (config.tau_student * m)
        d2 = 0.5 * (np.exp(logq2) - t1) / (config.tau_student * m)
        grad = nn.backprop_from_logits(student, x1, d1) + nn.backprop_from_logits(student, x2, d2)
        opt_state, new_params = nn.optimizer_step(
            opt_state, student.params, grad, config.optimizer, step
        )
        student = ModelState(model_spec, new_params)

        new_teacher_params = ema_update(teacher.params, student.params, config.ema_momentum)
        new_center = update_center(
            teacher.center, np.concatenate([rep1, rep2], axis=0), config.center_momentum
        )
        teacher = TeacherState(
            params=new_teacher_params,
            center=new_center,
            ema_momentum=config.ema_momentum,
            center_momentum=config.center_momentum,
        )

    pseudo = PseudoLabelDataset(
        inputs,
        teacher_forward(teacher, model_spec, inputs, config.tau_teacher),
    )
    return DinoResult(
        theta_ssl=student.params,
        pseudo_labels=pseudo,
        teacher=teacher,
        loss_history=tuple(losses),
    )


@dataclass(frozen=True)
class SupervisedPretrainConfig:
    optimizer: OptimizerConfig
    epochs: int
    batch_size: int
    seed: int = 0


def supervised_pretrain(
    dataset: LabeledDataset,
    model_spec: MlpSpec,
    config: SupervisedPretrainConfig,
) -> ModelState:
    """Plain NLL pretraining; the returned parameters serve as the anchor."""
    model = nn.init_model(model_spec, config.seed)
    return train_model(
        model,
        dataset.features,
        dataset.labels,
        config.optimizer,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed + 1,
    )
