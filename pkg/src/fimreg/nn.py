"""Feedforward network engine on flat float64 parameter vectors.

Everything downstream (Fisher information, anchored penalties, teacher/student
pretraining) manipulates parameters through one coordinate system: a flat
float64 vector with a named segment layout. This module owns that coordinate
system plus the deterministic MLP machinery built on it: initialization,
forward pass, stable softmax, analytic backpropagation, SGD/AdamW steps, and
the cosine learning-rate schedule.

All arithmetic is 64-bit. Every operation is deterministic given its seed; the
training utilities never consult global random state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")


class LayoutMismatchError(ValueError):
    """Raised when two parameter vectors with different layouts are combined."""


class Segment(NamedTuple):
    """One named contiguous slice of a flat parameter vector."""

    name: str
    offset: int
    length: int


Layout = tuple[Segment, ...]


def _validate_layout(layout: Layout, total: int) -> None:
    expected = 0
    seen: set[str] = set()
    for seg in layout:
        if seg.name in seen:
            raise ValueError(f"duplicate segment name {seg.name!r}")
        if seg.offset != expected:
            raise ValueError(
                f"segment {seg.name!r} starts at {seg.offset}, expected {expected}"
            )
        if seg.length <= 0:
            raise ValueError(f"segment {seg.name!r} has non-positive length")
        seen.add(seg.name)
        expected += seg.length
    if expected != total:
        raise ValueError(f"layout covers {expected} values, vector has {total}")


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector with a named segment layout.

    The backing array is copied on construction and frozen, so a ParamVector
    can be shared freely. Arithmetic between two vectors requires identical
    layouts and raises :class:`LayoutMismatchError` otherwise.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True).ravel()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "layout", tuple(self.layout))
        _validate_layout(self.layout, arr.size)

    @property
    def size(self) -> int:
        return self.values.size

    def segment_names(self) -> tuple[str, ...]:
        return tuple(seg.name for seg in self.layout)

    def segment(self, name: str) -> np.ndarray:
        """Read-only view of one named segment."""
        for seg in self.layout:
            if seg.name == name:
                return self.values[seg.offset : seg.offset + seg.length]
        raise KeyError(f"no segment named {name!r}")

    def with_segments(self, updates: dict[str, np.ndarray]) -> "ParamVector":
        """New vector with the named segments replaced."""
        out = self.values.copy()
        names = {seg.name: seg for seg in self.layout}
        for name, new in updates.items():
            if name not in names:
                raise KeyError(f"no segment named {name!r}")
            seg = names[name]
            new = np.asarray(new, dtype=np.float64).ravel()
            if new.size != seg.length:
                raise LayoutMismatchError(
                    f"segment {name!r} expects {seg.length} values, got {new.size}"
                )
            out[seg.offset : seg.offset + seg.length] = new
        return ParamVector(out, self.layout)

    def _require_same_layout(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise LayoutMismatchError(
                "parameter vectors have different layouts: "
                f"{self.segment_names()} vs {other.segment_names()}"
            )

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._require_same_layout(other)
        return ParamVector(self.values + other.values, self.layout)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._require_same_layout(other)
        return ParamVector(self.values - other.values, self.layout)

    def __mul__(self, other: "ParamVector") -> "ParamVector":
        """Elementwise product; layouts must match."""
        self._require_same_layout(other)
        return ParamVector(self.values * other.values, self.layout)

    def scale(self, c: float) -> "ParamVector":
        return ParamVector(self.values * float(c), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros(self.size), self.layout)


def same_layout(a: Layout, b: Layout) -> bool:
    return tuple(a) == tuple(b)


def require_same_layout(a: Layout, b: Layout, what: str = "operand") -> None:
    if tuple(a) != tuple(b):
        raise LayoutMismatchError(f"{what} layout does not match model layout")


def layout_fingerprint(params: ParamVector) -> str:
    """SHA-256 over the layout description and raw parameter bytes."""
    h = hashlib.sha256()
    for seg in params.layout:
        h.update(f"{seg.name}:{seg.offset}:{seg.length};".encode())
    h.update(params.values.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected softmax classifier.

    ``backbone_depth`` counts how many of the linear layers belong to the
    backbone (the feature extractor); the remaining layers form the head.
    The final linear layer is always part of the head, so
    ``backbone_depth <= len(hidden_dims)``.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"
    backbone_depth: int = -1  # -1 -> all hidden layers

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.backbone_depth < 0:
            object.__setattr__(self, "backbone_depth", len(self.hidden_dims))
        if self.input_dim <= 0:
            raise ValueError("input_dim must be positive")
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError("hidden dims must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0 <= self.backbone_depth <= len(self.hidden_dims):
            raise ValueError(
                "backbone_depth must leave the final linear layer in the head"
            )

    @property
    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        dims = (self.input_dim,) + self.hidden_dims + (self.num_classes,)
        return tuple((dims[i], dims[i + 1]) for i in range(len(dims) - 1))

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims) + 1

    def layer_names(self) -> tuple[str, ...]:
        return tuple(f"linear{i}" for i in range(self.num_layers))

    def backbone_layer_names(self) -> tuple[str, ...]:
        return self.layer_names()[: self.backbone_depth]

    def head_layer_names(self) -> tuple[str, ...]:
        return self.layer_names()[self.backbone_depth :]

    def backbone_segment_names(self) -> tuple[str, ...]:
        out = []
        for name in self.backbone_layer_names():
            out.extend((f"{name}.weight", f"{name}.bias"))
        return tuple(out)

    @property
    def backbone_output_dim(self) -> int:
        """Width of the representation the head consumes."""
        if self.backbone_depth == 0:
            return self.input_dim
        return self.hidden_dims[self.backbone_depth - 1]

    def param_layout(self) -> Layout:
        """Canonical layout: weight then bias, per layer, in layer order."""
        segs = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(self.layer_dims):
            segs.append(Segment(f"linear{i}.weight", offset, fan_in * fan_out))
            offset += fan_in * fan_out
            segs.append(Segment(f"linear{i}.bias", offset, fan_out))
            offset += fan_out
        return tuple(segs)

    @property
    def num_params(self) -> int:
        return sum(seg.length for seg in self.param_layout())


@dataclass(frozen=True)
class ModelState:
    """An MlpSpec plus a parameter vector in its canonical layout."""

    spec: MlpSpec
    params: ParamVector

    def __post_init__(self) -> None:
        require_same_layout(self.params.layout, self.spec.param_layout(), "params")

    def weights(self, i: int) -> np.ndarray:
        fan_in, fan_out = self.spec.layer_dims[i]
        return self.params.segment(f"linear{i}.weight").reshape(fan_in, fan_out)

    def biases(self, i: int) -> np.ndarray:
        return self.params.segment(f"linear{i}.bias")


def init_model(spec: MlpSpec, seed: int) -> ModelState:
    """Deterministic init: weights uniform on +-1/sqrt(fan_in), biases zero.

    Draw order is fixed (layer 0 weights, layer 1 weights, ...), so identical
    (spec, seed) pairs yield bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    layout = spec.param_layout()
    values = np.zeros(sum(seg.length for seg in layout))
    offset = 0
    for fan_in, fan_out in spec.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=fan_in * fan_out)
        values[offset : offset + w.size] = w
        offset += w.size + fan_out  # bias segment stays zero
    return ModelState(spec, ParamVector(values, layout))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


class _ForwardCache(NamedTuple):
    inputs: list[np.ndarray]    # input to each linear layer, n x fan_in
    preacts: list[np.ndarray]   # pre-activation of each linear layer
    logits: np.ndarray


def _as_batch(x: np.ndarray, input_dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != input_dim:
        raise ValueError(
            f"expected inputs with {input_dim} features, got shape {x.shape}"
        )
    return batch, single


def _forward(model: ModelState, batch: np.ndarray) -> _ForwardCache:
    spec = model.spec
    inputs, preacts = [], []
    a = batch
    for i in range(spec.num_layers):
        inputs.append(a)
        z = a @ model.weights(i) + model.biases(i)
        preacts.append(z)
        if i < spec.num_layers - 1:
            a = _activate(z, spec.activation)
    return _ForwardCache(inputs, preacts, preacts[-1])


def forward_logits(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Logits for one feature vector or a batch (rows are samples)."""
    batch, single = _as_batch(x, model.spec.input_dim)
    logits = _forward(model, batch).logits
    return logits[0] if single else logits


def forward_backbone(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Backbone representation: activated output of the backbone layers.

    With backbone_depth 0 this is the input itself.
    """
    batch, single = _as_batch(x, model.spec.input_dim)
    a = batch
    for i in range(model.spec.backbone_depth):
        a = _activate(a @ model.weights(i) + model.biases(i), model.spec.activation)
    return a[0] if single else a


def head_logits(model: ModelState, representation: np.ndarray) -> np.ndarray:
    """Apply only the head layers to a backbone representation."""
    rep = np.asarray(representation, dtype=np.float64)
    single = rep.ndim == 1
    a = rep[None, :] if single else rep
    spec = model.spec
    for i in range(spec.backbone_depth, spec.num_layers):
        z = a @ model.weights(i) + model.biases(i)
        a = _activate(z, spec.activation) if i < spec.num_layers - 1 else z
    return a[0] if single else a


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def predict_proba(model: ModelState, x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Class probabilities softmax(logits / temperature)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return softmax(forward_logits(model, x) / temperature)


def nll_loss(model: ModelState, x: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of integer labels y under the model."""
    batch, _ = _as_batch(x, model.spec.input_dim)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.size == 0:
        raise ValueError("empty batch")
    if y.size != batch.shape[0]:
        raise ValueError("labels and features disagree on batch size")
    logp = log_softmax(_forward(model, batch).logits)
    return float(-np.mean(logp[np.arange(y.size), y]))


def _backward(model: ModelState, cache: _ForwardCache, dlogits: np.ndarray) -> ParamVector:
    """Backpropagate a cotangent at the logits into a parameter gradient."""
    spec = model.spec
    grads: dict[str, np.ndarray] = {}
    delta = dlogits
    for i in reversed(range(spec.num_layers)):
        grads[f"linear{i}.weight"] = cache.inputs[i].T @ delta
        grads[f"linear{i}.bias"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights(i).T) * _activate_grad(
                cache.preacts[i - 1], spec.activation
            )
    flat = np.concatenate(
        [grads[seg.name].ravel() for seg in model.params.layout]
    )
    return ParamVector(flat, model.params.layout)


def backprop_from_logits(model: ModelState, x: np.ndarray, dlogits: np.ndarray) -> ParamVector:
    """Gradient of sum_n <dlogits_n, logits_n> w.r.t. the parameters."""
    batch, single = _as_batch(x, model.spec.input_dim)
    d = np.asarray(dlogits, dtype=np.float64)
    if single:
        d = d[None, :]
    if d.shape != (batch.shape[0], model.spec.num_classes):
        raise ValueError("dlogits shape does not match batch/classes")
    return _backward(model, _forward(model, batch), d)


def nll_and_grad(model: ModelState, x: np.ndarray, y: np.ndarray) -> tuple[float, ParamVector]:
    """Mean NLL and its analytic gradient in one fused forward/backward."""
    batch, _ = _as_batch(x, model.spec.input_dim)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.size == 0:
        raise ValueError("empty batch")
    if y.size != batch.shape[0]:
        raise ValueError("labels and features disagree on batch size")
    cache = _forward(model, batch)
    logp = log_softmax(cache.logits)
    loss = float(-np.mean(logp[np.arange(y.size), y]))
    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(y.size), y] -= 1.0
    dlogits /= y.size
    return loss, _backward(model, cache, dlogits)


def grad_nll(model: ModelState, x: np.ndarray, y: np.ndarray) -> ParamVector:
    """Gradient of the mean NLL w.r.t. the parameters."""
    return nll_and_grad(model, x, y)[1]


def silence_hidden_units(
    model: ModelState,
    inputs: np.ndarray,
    layer: int,
    units: Sequence[int],
    margin: float = 0.05,
) -> ModelState:
    """Push selected hidden units of a relu layer below threshold on `inputs`.

    Lowers each selected unit's bias so its pre-activation is at most
    ``-margin`` on every row of ``inputs``. On those inputs the silenced units
    emit exactly zero and pass no gradient, so every parameter into or out of
    them has an exactly-zero diagonal Fisher entry. All other parameters are
    untouched. Fine-tuning on data that re-activates the units can then move
    these parameters at zero Fisher cost.
    """
    spec = model.spec
    if spec.activation != "relu":
        raise ValueError("unit silencing requires a relu network")
    if not 0 <= layer < spec.num_layers - 1:
        raise ValueError("layer must be a hidden layer index")
    if margin <= 0:
        raise ValueError("margin must be positive")
    batch, _ = _as_batch(inputs, spec.input_dim)
    a = batch
    for i in range(layer):
        a = _activate(a @ model.weights(i) + model.biases(i), spec.activation)
    z = a @ model.weights(layer) + model.biases(layer)
    bias = model.biases(layer).copy()
    for j in units:
        bias[j] -= z[:, j].max() + margin
    return ModelState(
        spec, model.params.with_segments({f"linear{layer}.bias": bias})
    )


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD-with-momentum or AdamW, with a constant or cosine-decayed rate."""

    kind: str  # "sgd_momentum" | "adamw"
    learning_rate: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.0
    schedule: str = "constant"  # "constant" | "cosine"
    total_steps: int = 0
    warmup_steps: int = 0
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.kind not in ("sgd_momentum", "adamw"):
            raise ValueError("kind must be sgd_momentum or adamw")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        for name in ("momentum", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be constant or cosine")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be nonnegative")
        # total_steps == 0 with a cosine schedule means "fill in at training
        # time"; evaluating the schedule then still requires total_steps > 0.
        if self.schedule == "cosine" and self.total_steps > 0:
            if not self.warmup_steps < self.total_steps:
                raise ValueError("warmup_steps must lie in [0, total_steps)")


@dataclass(frozen=True)
class OptState:
    """Optimizer slot variables; fresh state is all zeros."""

    velocity: ParamVector | None = None  # sgd_momentum
    m: ParamVector | None = None         # adamw first moment
    v: ParamVector | None = None         # adamw second moment


def init_opt_state(config: OptimizerConfig, params: ParamVector) -> OptState:
    zeros = params.zeros_like()
    if config.kind == "sgd_momentum":
        return OptState(velocity=zeros)
    return OptState(m=zeros, v=zeros)


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Linear warmup to base_lr over warmup_steps, then half-cosine decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError("step out of range")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("warmup_steps must lie in [0, total_steps)")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def scheduled_lr(config: OptimizerConfig, step_index: int) -> float:
    if config.schedule == "constant":
        return config.learning_rate
    if config.total_steps <= 0:
        raise ValueError("cosine schedule requires total_steps > 0")
    return cosine_lr(step_index, config.total_steps, config.learning_rate, config.warmup_steps)


def optimizer_step(
    opt_state: OptState,
    params: ParamVector,
    grad: ParamVector,
    config: OptimizerConfig,
    step_index: int,
) -> tuple[OptState, ParamVector]:
    """One optimizer update; returns the new state and parameters.

    AdamW uses decoupled weight decay (params shrink toward zero by
    lr * weight_decay per step, independent of the gradient); sgd_momentum
    folds weight decay into the gradient in the classic coupled form.
    """
    params._require_same_layout(grad)
    lr = scheduled_lr(config, step_index)
    if config.kind == "sgd_momentum":
        g = grad.values
        if config.weight_decay > 0:
            g = g + config.weight_decay * params.values
        vel = opt_state.velocity if opt_state.velocity is not None else params.zeros_like()
        params._require_same_layout(vel)
        new_vel = config.momentum * vel.values + g
        new_params = params.values - lr * new_vel
        return (
            OptState(velocity=ParamVector(new_vel, params.layout)),
            ParamVector(new_params, params.layout),
        )
    m = opt_state.m if opt_state.m is not None else params.zeros_like()
    v = opt_state.v if opt_state.v is not None else params.zeros_like()
    params._require_same_layout(m)
    params._require_same_layout(v)
    t = step_index + 1
    g = grad.values
    new_m = config.beta1 * m.values + (1.0 - config.beta1) * g
    new_v = config.beta2 * v.values + (1.0 - config.beta2) * g * g
    m_hat = new_m / (1.0 - config.beta1**t)
    v_hat = new_v / (1.0 - config.beta2**t)
    new_params = params.values - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    if config.weight_decay > 0:
        new_params = new_params - lr * config.weight_decay * params.values
    return (
        OptState(m=ParamVector(new_m, params.layout), v=ParamVector(new_v, params.layout)),
        ParamVector(new_params, params.layout),
    )
