"""Diagonal Fisher information of a softmax classifier.

Three estimators share one definition: the per-parameter mean of squared
score-function entries,

    F = (1/N) sum_i E_{y ~ p(.|x_i)} [ (d/dtheta log p(y|x_i))^2 ],

differing only in how the label expectation is handled. ``exact`` enumerates
every class and weights by the model's own probabilities; ``empirical_sampled``
draws one label per input from the model; ``empirical_labels`` substitutes
dataset labels. Entries are nonnegative by construction and exact zeros are
preserved: a zero entry means the parameter has no first-order influence on
any class log-probability at the current weights, which is precisely the
degeneracy the rescaling in :func:`adjust_fim` repairs.

Accumulation order is fixed (samples ascending, classes ascending within a
sample) so repeated runs produce bit-identical values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .nn import (
    Layout,
    ModelState,
    _as_batch,
    _forward,
    _activate_grad,
    layout_fingerprint,
    log_softmax,
    require_same_layout,
)

FIM_MODES = ("exact", "empirical_sampled", "empirical_labels")

# log10 histogram bin edges; values on an edge fall in the bin to its right
# (lower edge inclusive). Exact zeros are counted separately, never log-binned.
LOG10_BIN_EDGES = (-30.0, -25.0, -20.0, -15.0, -12.0, -10.0, -8.0, -6.0, -4.0, -2.0, 0.0)
NUM_HIST_BINS = len(LOG10_BIN_EDGES) + 1  # (-inf, -30) ... [0, +inf)


@dataclass(frozen=True)
class DiagFim:
    """Diagonal Fisher values aligned to a model's parameter layout."""

    values: np.ndarray
    layout: Layout
    mode: str
    n_samples: int
    model_fingerprint: str

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True).ravel()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "layout", tuple(self.layout))
        if self.mode not in FIM_MODES:
            raise ValueError(f"mode must be one of {FIM_MODES}")
        if arr.size != sum(seg.length for seg in self.layout):
            raise ValueError("values do not cover the layout")
        if np.any(arr < 0):
            raise ValueError("Fisher values must be nonnegative")
        if self.n_samples < 0:
            raise ValueError("n_samples must be nonnegative")

    @property
    def size(self) -> int:
        return self.values.size

    def segment(self, name: str) -> np.ndarray:
        for seg in self.layout:
            if seg.name == name:
                return self.values[seg.offset : seg.offset + seg.length]
        raise KeyError(f"no segment named {name!r}")

    def mean(self) -> float:
        return float(np.mean(self.values))

    def zero_fraction(self) -> float:
        return float(np.mean(self.values == 0.0))


def _per_sample_sq_grad_sums(
    model: ModelState,
    batch: np.ndarray,
    cotangent_rows_per_sample: Iterable[tuple[int, np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Accumulate sum_i sum_r w_r * (grad from cotangent row r at sample i)^2.

    ``cotangent_rows_per_sample`` yields (sample_index, rows R x K, weights R).
    For a linear layer the per-row squared weight gradient factorizes as
    (input^2) outer (delta^2), so each sample costs one small backward pass.
    Samples are visited in the order given (ascending for reproducibility).
    """
    spec = model.spec
    cache = _forward(model, batch)
    Ws = [model.weights(i) for i in range(spec.num_layers)]
    acc: dict[str, np.ndarray] = {
        seg.name: np.zeros(seg.length) for seg in model.params.layout
    }
    for i, rows, weights in cotangent_rows_per_sample:
        delta = rows  # R x K
        for layer in reversed(range(spec.num_layers)):
            a_in = cache.inputs[layer][i]  # fan_in
            wsq = weights @ (delta * delta)  # fan_out: sum_r w_r delta_r^2
            acc[f"linear{layer}.weight"] += np.outer(a_in * a_in, wsq).ravel()
            acc[f"linear{layer}.bias"] += wsq
            if layer > 0:
                delta = (delta @ Ws[layer].T) * _activate_grad(
                    cache.preacts[layer - 1][i], spec.activation
                )
    return np.concatenate([acc[seg.name] for seg in model.params.layout])


def compute_fim_exact(model: ModelState, inputs: np.ndarray) -> DiagFim:
    """Diagonal Fisher with the class expectation enumerated exactly.

    Per input the K class-score gradients are formed and combined with the
    model's own class probabilities, costing one K-row backward pass per
    sample.
    """
    batch, _ = _as_batch(inputs, model.spec.input_dim)
    n, k = batch.shape[0], model.spec.num_classes
    probs = np.exp(log_softmax(_forward(model, batch).logits))
    eye = np.eye(k)

    def rows():
        for i in range(n):
            yield i, eye - probs[i][None, :], probs[i]

    total = _per_sample_sq_grad_sums(model, batch, rows())
    return DiagFim(
        total / n,
        model.params.layout,
        mode="exact",
        n_samples=n,
        model_fingerprint=layout_fingerprint(model.params),
    )


def compute_fim_empirical(
    model: ModelState,
    inputs: np.ndarray,
    labels: np.ndarray | None = None,
    seed: int | None = None,
) -> DiagFim:
    """Diagonal Fisher from one label per input.

    With ``labels`` given, uses them (empirical_labels mode); otherwise labels
    are sampled from the model's own predictive distribution using ``seed``
    (empirical_sampled mode).
    """
    batch, _ = _as_batch(inputs, model.spec.input_dim)
    n, k = batch.shape[0], model.spec.num_classes
    probs = np.exp(log_softmax(_forward(model, batch).logits))
    if labels is not None:
        y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if y.shape != (n,):
            raise ValueError("labels must be one id per input row")
        if y.min() < 0 or y.max() >= k:
            raise ValueError("labels out of range")
        mode = "empirical_labels"
    else:
        if seed is None:
            raise ValueError("empirical_sampled mode requires a seed")
        rng = np.random.default_rng(seed)
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(n)
        y = np.minimum((u[:, None] > cdf).sum(axis=1), k - 1)
        mode = "empirical_sampled"
    eye = np.eye(k)
    one = np.ones(1)

    def rows():
        for i in range(n):
            yield i, (eye[y[i]] - probs[i])[None, :], one

    total = _per_sample_sq_grad_sums(model, batch, rows())
    return DiagFim(
        total / n,
        model.params.layout,
        mode=mode,
        n_samples=n,
        model_fingerprint=layout_fingerprint(model.params),
    )


def adjust_fim(fim: DiagFim, alpha: float) -> DiagFim:
    """Convex blend with the global scalar mean: (1 - alpha) F + alpha mean(F).

    Lifts every zero entry to at least alpha * mean(F) while preserving the
    overall mean, turning the degenerate quadratic form into a proper norm.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    fbar = fim.mean()
    return replace(fim, values=(1.0 - alpha) * fim.values + alpha * fbar)


@dataclass(frozen=True)
class LayerFimStats:
    count: int
    min: float
    max: float
    mean: float
    zero_fraction: float
    log10_hist: tuple[int, ...]  # NUM_HIST_BINS bins over nonzero entries
    zero_count: int


@dataclass(frozen=True)
class FimStats:
    """Per-layer distribution summaries of a diagonal Fisher."""

    per_layer: dict[str, LayerFimStats]

    def to_dict(self) -> dict:
        return {
            "bin_edges": list(LOG10_BIN_EDGES),
            "layers": {
                name: {
                    "count": s.count,
                    "min": s.min,
                    "max": s.max,
                    "mean": s.mean,
                    "zero_fraction": s.zero_fraction,
                    "zero_count": s.zero_count,
                    "log10_hist": list(s.log10_hist),
                }
                for name, s in self.per_layer.items()
            },
        }


def _log10_histogram(nonzero: np.ndarray) -> tuple[int, ...]:
    if nonzero.size == 0:
        return tuple([0] * NUM_HIST_BINS)
    logs = np.log10(nonzero)
    idx = np.digitize(logs, LOG10_BIN_EDGES, right=False)
    counts = np.bincount(idx, minlength=NUM_HIST_BINS)
    return tuple(int(c) for c in counts)


def fim_stats(fim: DiagFim) -> FimStats:
    """Min/max/mean, zero fraction, and a fixed-edge log10 histogram per layer.

    Zeros go to a dedicated bucket rather than a log bin, so the histogram of
    tiny-but-nonzero values (the poorly conditioned tail) stays readable.
    """
    per_layer: dict[str, LayerFimStats] = {}
    for seg in fim.layout:
        vals = fim.values[seg.offset : seg.offset + seg.length]
        nonzero = vals[vals > 0.0]
        hist = _log10_histogram(nonzero)
        zero_count = int(vals.size - nonzero.size)
        per_layer[seg.name] = LayerFimStats(
            count=int(vals.size),
            min=float(vals.min()),
            max=float(vals.max()),
            mean=float(vals.mean()),
            zero_fraction=zero_count / vals.size,
            log10_hist=hist,
            zero_count=zero_count,
        )
    return FimStats(per_layer)


def bind_fim(fim: DiagFim, model_layout: Layout) -> DiagFim:
    """Check a (possibly loaded) Fisher against a model layout before use."""
    require_same_layout(fim.layout, model_layout, "fisher artifact")
    return fim
