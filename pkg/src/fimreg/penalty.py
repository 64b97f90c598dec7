"""Anchored quadratic penalties and the regularized fine-tuning objective.

The fine-tuning loss is the mean NLL on the new task plus
``lambda * sum_i w_i (theta_i - theta_ref_i)^2`` over a declared scope of
layers, where the per-parameter weights w_i select the flavour:

    erm           no penalty (lambda forced to 0)
    l2            w = 1
    fim           w = diagonal Fisher at theta_ref
    adjusted_fim  w = (1 - alpha) F + alpha mean(F)

Scope is a set of layer segment names; gradients outside the scope are exact
zeros. The l2 flavour runs through the same weighted code path with a ones
vector, so ``fim`` with an all-ones Fisher is bit-identical to ``l2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .fim import DiagFim, adjust_fim
from .nn import ModelState, ParamVector

PENALTY_KINDS = ("erm", "l2", "fim", "adjusted_fim")


@dataclass(frozen=True)
class PenaltyKind:
    """One penalty flavour with its strength and layer scope.

    ``scope`` is a tuple of segment names (e.g. ``linear0.weight``) the
    penalty applies to; ``None`` means every segment of the anchor vector.
    Build instances through the factory classmethods.
    """

    kind: str
    lam: float = 0.0
    fim: DiagFim | None = None
    alpha: float | None = None
    scope: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"kind must be one of {PENALTY_KINDS}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.kind == "erm" and self.lam != 0.0:
            raise ValueError("erm penalty forces lambda = 0")
        if self.kind in ("fim", "adjusted_fim") and self.fim is None:
            raise ValueError(f"{self.kind} penalty requires Fisher values")
        if self.kind == "adjusted_fim" and self.alpha is None:
            raise ValueError("adjusted_fim requires alpha")
        if self.scope is not None:
            object.__setattr__(self, "scope", tuple(self.scope))

    @classmethod
    def erm(cls) -> "PenaltyKind":
        return cls("erm", 0.0)

    @classmethod
    def l2(cls, lam: float, scope: tuple[str, ...] | None = None) -> "PenaltyKind":
        return cls("l2", lam, scope=scope)

    @classmethod
    def fisher(
        cls, fim: DiagFim, lam: float, scope: tuple[str, ...] | None = None
    ) -> "PenaltyKind":
        return cls("fim", lam, fim=fim, scope=scope)

    @classmethod
    def adjusted_fisher(
        cls,
        fim: DiagFim,
        lam: float,
        alpha: float,
        scope: tuple[str, ...] | None = None,
    ) -> "PenaltyKind":
        # the blend is applied once here; penalty evaluation reads self.fim
        return cls("adjusted_fim", lam, fim=adjust_fim(fim, alpha), alpha=alpha, scope=scope)


def _scope_segments(kind: PenaltyKind, reference: ParamVector):
    names = kind.scope if kind.scope is not None else reference.segment_names()
    available = {seg.name for seg in reference.layout}
    missing = [n for n in names if n not in available]
    if missing:
        raise nn.LayoutMismatchError(f"scope segments missing from anchor: {missing}")
    return names


def _segment_weights(kind: PenaltyKind, name: str, length: int) -> np.ndarray:
    if kind.kind in ("fim", "adjusted_fim"):
        w = kind.fim.segment(name)
        if w.size != length:
            raise nn.LayoutMismatchError(
                f"fisher segment {name!r} has {w.size} entries, expected {length}"
            )
        return w
    return np.ones(length)


def penalty_value(theta: ParamVector, theta_ref: ParamVector, kind: PenaltyKind) -> float:
    """lambda-weighted squared anchored distance over the scope segments.

    Segments are matched by name between ``theta`` and ``theta_ref``; zero for
    the erm flavour or lambda = 0.
    """
    if kind.kind == "erm" or kind.lam == 0.0:
        return 0.0
    total = 0.0
    for name in _scope_segments(kind, theta_ref):
        ref = theta_ref.segment(name)
        cur = theta.segment(name)
        if cur.size != ref.size:
            raise nn.LayoutMismatchError(
                f"segment {name!r} differs in size between theta and anchor"
            )
        delta = cur - ref
        total += float(np.sum(_segment_weights(kind, name, ref.size) * delta * delta))
    return kind.lam * total


def penalty_grad(theta: ParamVector, theta_ref: ParamVector, kind: PenaltyKind) -> ParamVector:
    """Gradient of :func:`penalty_value`; exact zeros outside the scope."""
    out = np.zeros(theta.size)
    if kind.kind != "erm" and kind.lam != 0.0:
        segs = {seg.name: seg for seg in theta.layout}
        for name in _scope_segments(kind, theta_ref):
            if name not in segs:
                raise nn.LayoutMismatchError(f"segment {name!r} missing from theta")
            seg = segs[name]
            ref = theta_ref.segment(name)
            if seg.length != ref.size:
                raise nn.LayoutMismatchError(
                    f"segment {name!r} differs in size between theta and anchor"
                )
            delta = theta.values[seg.offset : seg.offset + seg.length] - ref
            w = _segment_weights(kind, name, ref.size)
            out[seg.offset : seg.offset + seg.length] = 2.0 * kind.lam * w * delta
    return ParamVector(out, theta.layout)


def objective_grad(
    model: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    theta_ref: ParamVector | None,
    kind: PenaltyKind,
) -> tuple[float, ParamVector]:
    """Total fine-tuning loss (NLL + penalty) and its gradient.

    With lambda = 0 the result is bitwise the plain NLL loss and gradient; the
    penalty terms are skipped entirely, not added as zeros.
    """
    loss, grad = nn.nll_and_grad(model, x, y)
    if kind.kind == "erm" or kind.lam == 0.0:
        return loss, grad
    if theta_ref is None:
        raise ValueError("penalized objective requires an anchor vector")
    loss += penalty_value(model.params, theta_ref, kind)
    pgrad = penalty_grad(model.params, theta_ref, kind)
    return loss, ParamVector(grad.values + pgrad.values, grad.layout)
