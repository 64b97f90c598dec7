"""Experiment orchestration: the two-task pipeline, random sweeps,
group-label-free model selection, and replicate aggregation.

A trial fine-tunes a pretrained backbone (with a fresh task head) under one
penalty configuration and reports validation/test top-1, worst-group
accuracy, and reverse transfer. Sweeps sample hyperparameter combinations
without replacement from a candidate grid via a seeded shuffle and run each
with arithmetically derived replicate seeds, so any replicate can be rerun in
isolation bit-exactly.

Model selection deliberately sees only (config_id, seed, validation top-1)
records: the selection input type carries no group-wise fields, which is the
firewall guaranteeing hyperparameters are chosen without group labels.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import nn
from .data import (
    ClusterSpec,
    LabeledDataset,
    SpuriousSpec,
    gen_cluster_dataset,
    gen_scaled_binary_split,
    gen_spurious_dataset,
    split,
)
from .evaluate import reverse_transfer_eval, top1_accuracy, worst_group_accuracy
from .fim import DiagFim, bind_fim, compute_fim_empirical, compute_fim_exact
from .nn import MlpSpec, ModelState, OptimizerConfig, ParamVector
from .penalty import PenaltyKind
from .pretrain import (
    AugmentationSpec,
    DinoConfig,
    SupervisedPretrainConfig,
    dino_pretrain,
    supervised_pretrain,
)
from .train import train_model

TASK_KINDS = ("spurious_pair", "cluster_pair", "recovery")


@dataclass(frozen=True)
class TaskConfig:
    """Which pretrain/fine-tune dataset pair a run is built on.

    spurious_pair: unbiased (rho = 0.5) spurious task for pretraining, biased
        spurious task for fine-tuning -- the worst-group protocol.
    cluster_pair: Gaussian clusters for pretraining, biased spurious task for
        fine-tuning -- cross-distribution sequential transfer.
    recovery: Gaussian clusters for pretraining, a scaled binary-split task
        for fine-tuning -- the reverse-transfer / recovery protocol.
    """

    kind: str = "spurious_pair"
    n_pretrain: int = 6000
    n_finetune: int = 10000
    d_core: int = 6
    d_spurious: int = 6
    rho: float = 0.95
    noise_std: float = 0.5
    k_pretrain: int = 4
    cluster_radius: float = 3.0
    cluster_noise_std: float = 1.0
    split_scale: float = 2.0
    data_seed: int = 0
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"task kind must be one of {TASK_KINDS}")
        object.__setattr__(self, "fractions", tuple(self.fractions))

    @property
    def input_dim(self) -> int:
        return self.d_core + self.d_spurious

    @property
    def pretrain_classes(self) -> int:
        return 2 if self.kind == "spurious_pair" else self.k_pretrain

    @property
    def finetune_classes(self) -> int:
        return 2


class TaskBundle(NamedTuple):
    pretrain_train: LabeledDataset
    pretrain_test: LabeledDataset
    finetune_train: LabeledDataset
    finetune_val: LabeledDataset
    finetune_test: LabeledDataset


def build_tasks(cfg: TaskConfig) -> TaskBundle:
    """Materialize both tasks and their splits, deterministically."""
    d = cfg.input_dim
    if cfg.kind == "spurious_pair":
        pre = gen_spurious_dataset(
            SpuriousSpec(cfg.n_pretrain, cfg.d_core, cfg.d_spurious, 0.5,
                         cfg.noise_std, seed=cfg.data_seed)
        )
    else:
        pre = gen_cluster_dataset(
            ClusterSpec(cfg.n_pretrain, d, cfg.k_pretrain, cfg.cluster_radius,
                        cfg.cluster_noise_std, seed=cfg.data_seed)
        )
    pre_train, pre_test = split(pre, (0.8, 0.2), seed=cfg.data_seed + 11)

    if cfg.kind == "recovery":
        fin = gen_scaled_binary_split(
            ClusterSpec(cfg.n_finetune, d, cfg.k_pretrain, cfg.cluster_radius,
                        cfg.cluster_noise_std, seed=cfg.data_seed),
            scale=cfg.split_scale,
            direction_seed=cfg.data_seed + 23,
        )
    else:
        fin = gen_spurious_dataset(
            SpuriousSpec(cfg.n_finetune, cfg.d_core, cfg.d_spurious, cfg.rho,
                         cfg.noise_std, seed=cfg.data_seed + 37)
        )
    fin_train, fin_val, fin_test = split(fin, cfg.fractions, seed=cfg.data_seed + 53)
    return TaskBundle(pre_train, pre_test, fin_train, fin_val, fin_test)


@dataclass(frozen=True)
class PretrainConfig:
    style: str = "supervised"  # "supervised" | "dino"
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig("adamw", 1e-2, schedule="cosine")
    )
    epochs: int = 40
    batch_size: int = 128
    dino_steps: int = 400
    dino_tau_student: float = 0.1
    dino_tau_teacher: float = 0.04
    dino_ema_momentum: float = 0.99
    dino_center_momentum: float = 0.9
    aug_noise_std: float = 0.25
    aug_mask_prob: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.style not in ("supervised", "dino"):
            raise ValueError("pretrain style must be supervised or dino")


@dataclass(frozen=True)
class FimConfig:
    mode: str = "exact"  # exact | empirical_sampled | empirical_labels
    n_samples: int = 10000  # capped at the available pretraining inputs
    seed: int = 0


@dataclass(frozen=True)
class PenaltyConfig:
    """Declarative penalty; bound to Fisher values inside a trial."""

    kind: str = "erm"
    lam: float = 0.0
    alpha: float | None = None
    scope: str = "backbone"  # "backbone" | "all"

    def __post_init__(self) -> None:
        if self.kind not in ("erm", "l2", "fim", "adjusted_fim"):
            raise ValueError("unknown penalty kind")
        if self.scope not in ("backbone", "all"):
            raise ValueError("scope must be backbone or all")


@dataclass(frozen=True)
class RunConfig:
    """Everything one trial depends on; fully determines its results."""

    model: MlpSpec
    task: TaskConfig
    pretrain: PretrainConfig
    fim: FimConfig
    penalty: PenaltyConfig
    optimizer: OptimizerConfig
    epochs: int
    batch_size: int
    seed: int
    config_id: int = 0

    def pretrain_spec(self) -> MlpSpec:
        return replace(self.model, num_classes=self.task.pretrain_classes)

    def finetune_spec(self) -> MlpSpec:
        return replace(self.model, num_classes=self.task.finetune_classes)


@dataclass(frozen=True)
class Artifacts:
    """Pretrained reference weights and their diagonal Fisher."""

    theta_ssl: ParamVector
    fisher: DiagFim


def prepare_artifacts(config: RunConfig, tasks: TaskBundle | None = None) -> Artifacts:
    """Pretrain once and compute the Fisher at the pretrained weights."""
    tasks = tasks if tasks is not None else build_tasks(config.task)
    spec = config.pretrain_spec()
    pc = config.pretrain
    if pc.style == "supervised":
        model = supervised_pretrain(
            tasks.pretrain_train,
            spec,
            SupervisedPretrainConfig(pc.optimizer, pc.epochs, pc.batch_size, pc.seed),
        )
    else:
        result = dino_pretrain(
            tasks.pretrain_train.features,
            spec,
            DinoConfig(
                steps=pc.dino_steps,
                batch_size=pc.batch_size,
                optimizer=pc.optimizer,
                augmentation=AugmentationSpec(pc.aug_noise_std, pc.aug_mask_prob, pc.seed),
                tau_student=pc.dino_tau_student,
                tau_teacher=pc.dino_tau_teacher,
                ema_momentum=pc.dino_ema_momentum,
                center_momentum=pc.dino_center_momentum,
                seed=pc.seed,
            ),
        )
        model = ModelState(spec, result.theta_ssl)
    fisher = compute_fisher(model, tasks.pretrain_train, config.fim)
    return Artifacts(theta_ssl=model.params, fisher=fisher)


def compute_fisher(model: ModelState, dataset: LabeledDataset, cfg: FimConfig) -> DiagFim:
    inputs = dataset.features[: min(dataset.n, cfg.n_samples)]
    if cfg.mode == "exact":
        return compute_fim_exact(model, inputs)
    if cfg.mode == "empirical_sampled":
        return compute_fim_empirical(model, inputs, seed=cfg.seed)
    if cfg.mode == "empirical_labels":
        labels = dataset.labels[: inputs.shape[0]]
        return compute_fim_empirical(model, inputs, labels=labels)
    raise ValueError(f"unknown fim mode {cfg.mode!r}")


def _bind_penalty(config: RunConfig, artifacts: Artifacts, spec: MlpSpec) -> PenaltyKind:
    pc = config.penalty
    scope = (
        spec.backbone_segment_names()
        if pc.scope == "backbone"
        else tuple(seg.name for seg in artifacts.theta_ssl.layout)
    )
    if pc.kind == "erm":
        return PenaltyKind.erm()
    if pc.kind == "l2":
        return PenaltyKind.l2(pc.lam, scope=scope)
    fisher = bind_fim(artifacts.fisher, artifacts.theta_ssl.layout)
    if pc.kind == "fim":
        return PenaltyKind.fisher(fisher, pc.lam, scope=scope)
    return PenaltyKind.adjusted_fisher(fisher, pc.lam, pc.alpha, scope=scope)


@dataclass(frozen=True)
class TrialResult:
    """Metrics of one fine-tuning run."""

    config_id: int
    seed: int
    val_top1: float
    test_top1: float
    test_wga: float | None
    reverse_top1: float
    wall_clock_s: float

    def metrics_equal(self, other: "TrialResult") -> bool:
        """Equality over everything except wall-clock time."""
        return (
            self.config_id == other.config_id
            and self.seed == other.seed
            and self.val_top1 == other.val_top1
            and self.test_top1 == other.test_top1
            and self.test_wga == other.test_wga
            and self.reverse_top1 == other.reverse_top1
        )


def finetune_model(config: RunConfig, artifacts: Artifacts, tasks: TaskBundle) -> ModelState:
    """Fine-tune: pretrained backbone, fresh head, configured penalty."""
    ft_spec = config.finetune_spec()
    pre_spec = config.pretrain_spec()
    nn.require_same_layout(artifacts.theta_ssl.layout, pre_spec.param_layout(),
                           "pretrained parameters")
    fresh = nn.init_model(ft_spec, config.seed)
    backbone = {
        name: artifacts.theta_ssl.segment(name)
        for name in ft_spec.backbone_segment_names()
    }
    model = ModelState(ft_spec, fresh.params.with_segments(backbone))
    kind = _bind_penalty(config, artifacts, ft_spec)
    return train_model(
        model,
        tasks.finetune_train.features,
        tasks.finetune_train.labels,
        config.optimizer,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed + 1,
        penalty=kind,
        theta_ref=artifacts.theta_ssl if kind.kind != "erm" else None,
    )


def run_trial(
    config: RunConfig,
    artifacts: Artifacts,
    tasks: TaskBundle | None = None,
) -> TrialResult:
    """Fine-tune under ``config`` and evaluate every metric.

    Deterministic given the config and artifacts; wall-clock time is the only
    field that varies between reruns.
    """
    start = time.perf_counter()
    tasks = tasks if tasks is not None else build_tasks(config.task)
    model = finetune_model(config, artifacts, tasks)
    pretrained = ModelState(config.pretrain_spec(), artifacts.theta_ssl)
    wga = None
    if tasks.finetune_test.groups is not None:
        wga = worst_group_accuracy(model, tasks.finetune_test).worst_group_accuracy
    return TrialResult(
        config_id=config.config_id,
        seed=config.seed,
        val_top1=top1_accuracy(model, tasks.finetune_val),
        test_top1=top1_accuracy(model, tasks.finetune_test),
        test_wga=wga,
        reverse_top1=reverse_transfer_eval(model, pretrained, tasks.pretrain_test),
        wall_clock_s=time.perf_counter() - start,
    )


@dataclass(frozen=True)
class SweepSpec:
    """Candidate values per hyperparameter, sample count, and replicates."""

    learning_rates: tuple[float, ...]
    lambdas: tuple[float, ...] = (0.0,)
    alphas: tuple[float, ...] = (1e-3,)
    batch_sizes: tuple[int, ...] = (128,)
    weight_decays: tuple[float, ...] = (0.0,)
    num_samples: int = 0  # 0 -> the full grid
    replicates: int = 5
    master_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("learning_rates", "lambdas", "alphas", "batch_sizes", "weight_decays"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.replicates <= 0:
            raise ValueError("replicates must be positive")
        if self.num_samples < 0:
            raise ValueError("num_samples must be nonnegative")
        if self.num_samples > self.grid_size:
            raise ValueError(
                f"num_samples {self.num_samples} exceeds grid size {self.grid_size}"
            )

    @property
    def grid_size(self) -> int:
        return (
            len(self.learning_rates)
            * len(self.lambdas)
            * len(self.alphas)
            * len(self.batch_sizes)
            * len(self.weight_decays)
        )

    def combinations(self) -> list[dict]:
        return [
            {"lr": lr, "lam": lam, "alpha": al, "batch_size": bs, "weight_decay": wd}
            for lr, lam, al, bs, wd in itertools.product(
                self.learning_rates, self.lambdas, self.alphas,
                self.batch_sizes, self.weight_decays,
            )
        ]

    def sample_combinations(self) -> list[dict]:
        """Seeded shuffle of the full grid, truncated to num_samples."""
        combos = self.combinations()
        k = self.num_samples if self.num_samples > 0 else len(combos)
        order = np.random.default_rng(self.master_seed).permutation(len(combos))
        return [combos[i] for i in order[:k]]


def _apply_combo(base: RunConfig, combo: dict, config_id: int, seed: int) -> RunConfig:
    opt = replace(
        base.optimizer,
        learning_rate=combo["lr"],
        weight_decay=combo["weight_decay"],
    )
    pen = replace(base.penalty, lam=combo["lam"])
    if base.penalty.kind == "adjusted_fim":
        pen = replace(pen, alpha=combo["alpha"])
    if base.penalty.kind == "erm":
        pen = replace(base.penalty, lam=0.0)
    return replace(
        base,
        optimizer=opt,
        penalty=pen,
        batch_size=combo["batch_size"],
        seed=seed,
        config_id=config_id,
    )


@dataclass(frozen=True)
class SweepResult:
    configs: tuple[RunConfig, ...]       # one representative per config_id
    trials: tuple[TrialResult, ...]
    combos: tuple[dict, ...] = ()

    def trials_for(self, config_id: int) -> list[TrialResult]:
        return [t for t in self.trials if t.config_id == config_id]


def random_sweep(
    spec: SweepSpec,
    base_config: RunConfig,
    artifacts: Artifacts,
    tasks: TaskBundle | None = None,
) -> SweepResult:
    """Run num_samples distinct combinations, each over the replicate seeds.

    Replicate seeds are master_seed + replicate_index, identical across
    configs, so a single row can be reproduced from (SweepSpec, config_id,
    replicate index) alone.
    """
    tasks = tasks if tasks is not None else build_tasks(base_config.task)
    combos = spec.sample_combinations()
    configs: list[RunConfig] = []
    trials: list[TrialResult] = []
    for config_id, combo in enumerate(combos):
        rep_config = None
        for r in range(spec.replicates):
            cfg = _apply_combo(base_config, combo, config_id, spec.master_seed + r)
            rep_config = cfg if rep_config is None else rep_config
            trials.append(run_trial(cfg, artifacts, tasks))
        configs.append(rep_config)
    return SweepResult(tuple(configs), tuple(trials), tuple(combos))


class ValidationRecord(NamedTuple):
    """Selection input: deliberately contains no group-wise metric."""

    config_id: int
    seed: int
    val_top1: float


def validation_records(trials: Iterable[TrialResult]) -> list[ValidationRecord]:
    return [ValidationRecord(t.config_id, t.seed, t.val_top1) for t in trials]


def select_by_validation(records: Sequence[ValidationRecord]) -> int:
    """Config id with the highest mean validation top-1; ties to the lowest id."""
    if not records:
        raise ValueError("no validation records")
    sums: dict[int, list[float]] = {}
    for rec in records:
        sums.setdefault(rec.config_id, []).append(rec.val_top1)
    best_id, best_mean = -1, -np.inf
    for config_id in sorted(sums):
        mean = float(np.mean(sums[config_id]))
        if mean > best_mean:
            best_id, best_mean = config_id, mean
    return best_id


def aggregate(trials: Sequence[TrialResult]) -> dict[str, tuple[float, float]]:
    """Per-metric (mean, sample std); std uses the n-1 denominator, 0 if n=1.

    Metrics that are None in any trial (e.g. WGA on group-free tasks)
    aggregate to (nan, nan).
    """
    if not trials:
        raise ValueError("no trials to aggregate")
    out: dict[str, tuple[float, float]] = {}
    for metric in ("val_top1", "test_top1", "test_wga", "reverse_top1"):
        vals = [getattr(t, metric) for t in trials]
        if any(v is None for v in vals):
            out[metric] = (float("nan"), float("nan"))
            continue
        arr = np.asarray(vals, dtype=np.float64)
        if np.all(arr == arr[0]):  # identical replicates aggregate exactly
            out[metric] = (float(arr[0]), 0.0)
            continue
        std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        out[metric] = (float(np.mean(arr)), std)
    return out


RESULTS_CSV_COLUMNS = (
    "config_id", "seed", "lr", "lambda", "alpha", "penalty_kind",
    "val_top1", "test_top1", "test_wga", "reverse_top1",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv_rows(sweep: SweepResult) -> list[dict]:
    by_id = {c.config_id: c for c in sweep.configs}
    rows = []
    for t in sweep.trials:
        cfg = by_id[t.config_id]
        rows.append(
            {
                "config_id": t.config_id,
                "seed": t.seed,
                "lr": cfg.optimizer.learning_rate,
                "lambda": cfg.penalty.lam if cfg.penalty.kind != "erm" else None,
                "alpha": cfg.penalty.alpha if cfg.penalty.kind == "adjusted_fim" else None,
                "penalty_kind": cfg.penalty.kind,
                "val_top1": t.val_top1,
                "test_top1": t.test_top1,
                "test_wga": t.test_wga,
                "reverse_top1": t.reverse_top1,
            }
        )
    return rows


def write_results_csv(sweep: SweepResult, path) -> None:
    """Deterministic byte-for-byte results table (floats via repr)."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(RESULTS_CSV_COLUMNS) + "\n")
        for row in results_csv_rows(sweep):
            fh.write(",".join(_fmt(row[c]) for c in RESULTS_CSV_COLUMNS) + "\n")


def selection_summary(sweep: SweepResult) -> dict:
    """The headline numbers: selected config and its test WGA across replicates."""
    selected = select_by_validation(validation_records(sweep.trials))
    stats = aggregate(sweep.trials_for(selected))
    return {
        "selected_config_id": selected,
        "val_top1_mean": stats["val_top1"][0],
        "test_wga_mean": stats["test_wga"][0],
        "test_wga_std": stats["test_wga"][1],
    }


# --- JSON run-config schema -------------------------------------------------
# One human-readable file carries every field a trial depends on; no
# environment variables. Missing sections fall back to dataclass defaults.


def _optimizer_to_dict(opt: OptimizerConfig) -> dict:
    return {
        "kind": opt.kind,
        "learning_rate": opt.learning_rate,
        "momentum": opt.momentum,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "weight_decay": opt.weight_decay,
        "schedule": opt.schedule,
        "total_steps": opt.total_steps,
        "warmup_steps": opt.warmup_steps,
    }


def _optimizer_from_dict(d: dict) -> OptimizerConfig:
    return OptimizerConfig(**d)


def run_config_to_dict(config: RunConfig) -> dict:
    m = config.model
    return {
        "model": {
            "input_dim": m.input_dim,
            "hidden_dims": list(m.hidden_dims),
            "num_classes": m.num_classes,
            "activation": m.activation,
            "backbone_depth": m.backbone_depth,
        },
        "task": {
            "kind": config.task.kind,
            "n_pretrain": config.task.n_pretrain,
            "n_finetune": config.task.n_finetune,
            "d_core": config.task.d_core,
            "d_spurious": config.task.d_spurious,
            "rho": config.task.rho,
            "noise_std": config.task.noise_std,
            "k_pretrain": config.task.k_pretrain,
            "cluster_radius": config.task.cluster_radius,
            "cluster_noise_std": config.task.cluster_noise_std,
            "split_scale": config.task.split_scale,
            "data_seed": config.task.data_seed,
            "fractions": list(config.task.fractions),
        },
        "pretrain": {
            "style": config.pretrain.style,
            "optimizer": _optimizer_to_dict(config.pretrain.optimizer),
            "epochs": config.pretrain.epochs,
            "batch_size": config.pretrain.batch_size,
            "dino_steps": config.pretrain.dino_steps,
            "dino_tau_student": config.pretrain.dino_tau_student,
            "dino_tau_teacher": config.pretrain.dino_tau_teacher,
            "dino_ema_momentum": config.pretrain.dino_ema_momentum,
            "dino_center_momentum": config.pretrain.dino_center_momentum,
            "aug_noise_std": config.pretrain.aug_noise_std,
            "aug_mask_prob": config.pretrain.aug_mask_prob,
            "seed": config.pretrain.seed,
        },
        "fim": {
            "mode": config.fim.mode,
            "n_samples": config.fim.n_samples,
            "seed": config.fim.seed,
        },
        "penalty": {
            "kind": config.penalty.kind,
            "lambda": config.penalty.lam,
            "alpha": config.penalty.alpha,
            "scope": config.penalty.scope,
        },
        "optimizer": _optimizer_to_dict(config.optimizer),
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "config_id": config.config_id,
    }


def run_config_from_dict(d: dict) -> RunConfig:
    model = d["model"]
    task = dict(d.get("task", {}))
    if "fractions" in task:
        task["fractions"] = tuple(task["fractions"])
    pre = dict(d.get("pretrain", {}))
    if "optimizer" in pre:
        pre["optimizer"] = _optimizer_from_dict(pre["optimizer"])
    pen = dict(d.get("penalty", {}))
    if "lambda" in pen:
        pen["lam"] = pen.pop("lambda")
    return RunConfig(
        model=MlpSpec(
            input_dim=model["input_dim"],
            hidden_dims=tuple(model["hidden_dims"]),
            num_classes=model["num_classes"],
            activation=model.get("activation", "relu"),
            backbone_depth=model.get("backbone_depth", -1),
        ),
        task=TaskConfig(**task),
        pretrain=PretrainConfig(**pre),
        fim=FimConfig(**d.get("fim", {})),
        penalty=PenaltyConfig(**pen),
        optimizer=_optimizer_from_dict(d["optimizer"]),
        epochs=d["epochs"],
        batch_size=d["batch_size"],
        seed=d["seed"],
        config_id=d.get("config_id", 0),
    )


def sweep_spec_from_dict(d: dict) -> SweepSpec:
    return SweepSpec(
        learning_rates=tuple(d["learning_rates"]),
        lambdas=tuple(d.get("lambdas", (0.0,))),
        alphas=tuple(d.get("alphas", (1e-3,))),
        batch_sizes=tuple(d.get("batch_sizes", (128,))),
        weight_decays=tuple(d.get("weight_decays", (0.0,))),
        num_samples=d.get("num_samples", 0),
        replicates=d.get("replicates", 5),
        master_seed=d.get("master_seed", 0),
    )
