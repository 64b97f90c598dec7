"""fimreg: a desk-scale lab for Fisher-regularized fine-tuning.

Small deterministic MLPs, exact and empirical diagonal Fisher information,
anchored (EWC-style) penalties against a pretrained reference, toy
self-distillation pretraining, synthetic biased datasets with group labels,
and a sweep harness with group-label-free model selection.
"""

from .artifact import load_fim, load_params, save_fim, save_params
from .data import (
    ClusterSpec,
    LabeledDataset,
    SpuriousSpec,
    gen_cluster_dataset,
    gen_scaled_binary_split,
    gen_spurious_dataset,
    gen_task_pair,
    split,
)
from .evaluate import (
    GroupReport,
    ParetoPoint,
    linear_probe_accuracy,
    pareto_front,
    reverse_transfer_eval,
    top1_accuracy,
    worst_group_accuracy,
)
from .fim import (
    DiagFim,
    FimStats,
    adjust_fim,
    compute_fim_empirical,
    compute_fim_exact,
    fim_stats,
)
from .harness import (
    Artifacts,
    FimConfig,
    PenaltyConfig,
    PretrainConfig,
    RunConfig,
    SweepSpec,
    TaskConfig,
    TrialResult,
    aggregate,
    build_tasks,
    prepare_artifacts,
    random_sweep,
    run_trial,
    select_by_validation,
)
from .nn import (
    MlpSpec,
    ModelState,
    OptimizerConfig,
    ParamVector,
    cosine_lr,
    forward_logits,
    grad_nll,
    init_model,
    nll_loss,
    optimizer_step,
    predict_proba,
    silence_hidden_units,
)
from .penalty import PenaltyKind, objective_grad, penalty_grad, penalty_value
from .recovery import (
    RecoveryConfig,
    RecoverySetup,
    build_recovery_setup,
    finetune_recovery,
    recovery_curve,
)
from .pretrain import (
    AugmentationSpec,
    DinoConfig,
    DinoResult,
    PseudoLabelDataset,
    SupervisedPretrainConfig,
    TeacherState,
    augment,
    dino_pretrain,
    ema_update,
    supervised_pretrain,
    teacher_forward,
    update_center,
)
from .train import train_model

__version__ = "0.1.0"
