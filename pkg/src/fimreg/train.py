"""Mini-batch training loop shared by supervised pretraining and fine-tuning.

One deterministic loop: seeded per-epoch shuffling, scheduled optimizer steps,
and an optional anchored penalty folded into the objective. Single-threaded;
the caller owns all randomness through the seed argument.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import nn
from .nn import ModelState, OptimizerConfig, ParamVector
from .penalty import PenaltyKind, objective_grad


def train_model(
    model: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    optimizer: OptimizerConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    penalty: PenaltyKind | None = None,
    theta_ref: ParamVector | None = None,
) -> ModelState:
    """Train ``model`` on (x, y); returns the final state.

    A cosine-scheduled optimizer with total_steps 0 gets the true step count
    filled in automatically. Penalty defaults to plain ERM.
    """
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    kind = penalty if penalty is not None else PenaltyKind.erm()
    batches_per_epoch = (n + batch_size - 1) // batch_size
    total = epochs * batches_per_epoch
    if optimizer.schedule == "cosine" and optimizer.total_steps == 0:
        optimizer = replace(optimizer, total_steps=max(total, 1))
    rng = np.random.default_rng(seed)
    params = model.params
    opt_state = nn.init_opt_state(optimizer, params)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for b in range(batches_per_epoch):
            idx = order[b * batch_size : (b + 1) * batch_size]
            current = ModelState(model.spec, params)
            _, grad = objective_grad(current, x[idx], y[idx], theta_ref, kind)
            opt_state, params = nn.optimizer_step(opt_state, params, grad, optimizer, step)
            step += 1
    return ModelState(model.spec, params)
