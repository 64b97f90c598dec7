"""Deterministic synthetic datasets: biased classification tasks with group
labels, Gaussian cluster tasks, and pretrain/fine-tune task pairs.

The spurious-correlation construction is the workhorse. Labels are fair
coins; a binary nuisance attribute agrees with the label with probability
``correlation``. Core feature dimensions carry the label at a fixed modest
separation, spurious dimensions carry the *attribute* at twice that
separation, so an unconstrained learner prefers the spurious shortcut and
fails on the label-vs-attribute minority groups. Group ids are
``2 * label + attribute``, giving four groups whose worst-case accuracy is
the robustness metric of interest.

Everything here is a pure function of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

# Class-conditional mean offsets along the normalized block direction.
# The spurious block separation is fixed at twice the core separation so that
# unconstrained training reliably prefers the shortcut at high correlation.
CORE_HALF_SEP = 0.75
SPURIOUS_HALF_SEP = 1.5


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer class labels and optional group ids."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    groups: np.ndarray | None = None
    num_groups: int | None = None
    name: str = ""

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        feats.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("features must be a nonempty n x d matrix")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must be one id per row")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("labels out of range")
        if self.groups is not None:
            groups = np.array(self.groups, dtype=np.int64, copy=True)
            groups.flags.writeable = False
            object.__setattr__(self, "groups", groups)
            if self.num_groups is None:
                raise ValueError("num_groups required when groups are present")
            if groups.shape != (feats.shape[0],):
                raise ValueError("groups must be one id per row")
            if groups.min() < 0 or groups.max() >= self.num_groups:
                raise ValueError("group ids out of range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray, name: str | None = None) -> "LabeledDataset":
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            self.num_classes,
            None if self.groups is None else self.groups[idx],
            self.num_groups,
            self.name if name is None else name,
        )

    def to_csv(self, path) -> None:
        """Write columns feature_0..feature_{d-1}, label[, group]."""
        cols = [f"feature_{j}" for j in range(self.dim)] + ["label"]
        if self.groups is not None:
            cols.append("group")
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.n):
                row = [repr(float(v)) for v in self.features[i]]
                row.append(str(int(self.labels[i])))
                if self.groups is not None:
                    row.append(str(int(self.groups[i])))
                fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class SpuriousSpec:
    """Binary task with a label-correlated nuisance attribute.

    ``correlation`` is the probability that the spurious attribute agrees
    with the label; 0.5 means unbiased, 1.0 perfectly confounded.
    """

    n: int
    d_core: int
    d_spurious: int
    correlation: float
    noise_std: float = 0.5
    seed: int = 0

    num_classes = 2

    def __post_init__(self) -> None:
        if self.n <= 0 or self.d_core <= 0 or self.d_spurious <= 0:
            raise ValueError("n, d_core and d_spurious must be positive")
        if not 0.5 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [0.5, 1]")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")


def gen_spurious_dataset(spec: SpuriousSpec) -> LabeledDataset:
    """Sample the biased task; group id is 2 * label + attribute (4 groups)."""
    rng = np.random.default_rng(spec.seed)
    y = rng.integers(0, 2, size=spec.n)
    agree = rng.random(spec.n) < spec.correlation
    a = np.where(agree, y, 1 - y)
    d = spec.d_core + spec.d_spurious
    x = rng.standard_normal((spec.n, d)) * spec.noise_std
    u_core = np.ones(spec.d_core) / np.sqrt(spec.d_core)
    u_spur = np.ones(spec.d_spurious) / np.sqrt(spec.d_spurious)
    x[:, : spec.d_core] += np.outer(2.0 * y - 1.0, CORE_HALF_SEP * u_core)
    x[:, spec.d_core :] += np.outer(2.0 * a - 1.0, SPURIOUS_HALF_SEP * u_spur)
    return LabeledDataset(
        x,
        y,
        num_classes=2,
        groups=2 * y + a,
        num_groups=4,
        name=f"spurious(rho={spec.correlation:g},seed={spec.seed})",
    )


@dataclass(frozen=True)
class ClusterSpec:
    """K Gaussian clusters centered on random orthonormal directions."""

    n: int
    d: int
    k: int
    radius: float = 3.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n <= 0 or self.d <= 0:
            raise ValueError("n and d must be positive")
        if not 2 <= self.k <= self.d:
            raise ValueError("need 2 <= k <= d for orthonormal centers")
        if self.radius <= 0 or self.noise_std <= 0:
            raise ValueError("radius and noise_std must be positive")


def cluster_centers(spec: ClusterSpec) -> np.ndarray:
    """k x d orthonormal center directions scaled by radius; seed-deterministic."""
    rng = np.random.default_rng(spec.seed)
    q, r = np.linalg.qr(rng.standard_normal((spec.d, spec.k)))
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity
    return spec.radius * q.T


def gen_cluster_dataset(spec: ClusterSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed + 1)
    centers = cluster_centers(spec)
    y = rng.integers(0, spec.k, size=spec.n)
    x = centers[y] + rng.standard_normal((spec.n, spec.d)) * spec.noise_std
    return LabeledDataset(
        x, y, num_classes=spec.k, name=f"clusters(k={spec.k},seed={spec.seed})"
    )


def gen_scaled_binary_split(
    spec: ClusterSpec, scale: float, direction_seed: int, n: int | None = None
) -> LabeledDataset:
    """A shifted follow-up task built on the same cluster family.

    Inputs are fresh cluster samples scaled by ``scale`` (so they live outside
    the original task's envelope); the binary label is the side of a fixed
    random hyperplane through the origin. Solving it requires a feature the
    cluster task never demanded.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    base = spec if n is None else replace(spec, n=n)
    src = gen_cluster_dataset(replace(base, seed=base.seed + 7919))
    v_rng = np.random.default_rng(direction_seed)
    v = v_rng.standard_normal(spec.d)
    v /= np.linalg.norm(v)
    x = src.features * scale
    y = (x @ v > 0.0).astype(np.int64)
    return LabeledDataset(
        x, y, num_classes=2, name=f"split(scale={scale:g},seed={direction_seed})"
    )


def split(
    dataset: LabeledDataset,
    fractions: Sequence[float],
    seed: int,
) -> tuple[LabeledDataset, ...]:
    """Disjoint shuffled partition, stratified by group when groups exist.

    Global split sizes follow largest-remainder rounding of n * fraction;
    within each group the same rounding is used with leftovers steered toward
    the globally most-underfilled split, which keeps every group's proportions
    within one sample of the global ones.
    """
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    n, s = dataset.n, len(fractions)

    targets = _largest_remainder(n, fractions)
    if dataset.groups is None:
        perm = rng.permutation(n)
        bounds = np.cumsum(targets)[:-1]
        parts = np.split(perm, bounds)
    else:
        # Per-group floor quotas first; each group's leftover units then go to
        # distinct splits chosen by remaining global capacity (ties by the
        # group's fractional remainder, then split index). Totals land exactly
        # on the global targets and every group deviates by at most one sample
        # per split.
        group_ids = np.unique(dataset.groups)
        bases, fracs, members = {}, {}, {}
        for g in group_ids:
            idx = np.flatnonzero(dataset.groups == g)
            members[g] = idx[rng.permutation(idx.size)]
            quota = idx.size * np.asarray(fractions)
            bases[g] = np.floor(quota).astype(np.int64)
            fracs[g] = quota - bases[g]
        capacity = targets - sum(bases[g] for g in group_ids)
        counts = {g: bases[g].copy() for g in group_ids}
        for g in group_ids:
            used: set[int] = set()
            for _ in range(members[g].size - int(bases[g].sum())):
                order = sorted(
                    (i for i in range(s) if capacity[i] > 0),
                    key=lambda i: (i in used, -capacity[i], -fracs[g][i], i),
                )
                chosen = order[0]
                counts[g][chosen] += 1
                capacity[chosen] -= 1
                used.add(chosen)
        parts = []
        for i in range(s):
            chunks = []
            for g in group_ids:
                start = int(counts[g][:i].sum())
                chunks.append(members[g][start : start + counts[g][i]])
            parts.append(np.concatenate(chunks))
    names = ("train", "val", "test") if s == 3 else tuple(f"part{i}" for i in range(s))
    return tuple(
        dataset.subset(np.sort(idx), name=f"{dataset.name}/{names[i]}")
        for i, idx in enumerate(parts)
    )


def _largest_remainder(n: int, fractions: tuple[float, ...]) -> np.ndarray:
    quota = n * np.asarray(fractions)
    base = np.floor(quota).astype(np.int64)
    leftover = n - base.sum()
    order = np.lexsort((np.arange(len(fractions)), -(quota - base)))
    for i in order[:leftover]:
        base[i] += 1
    return base


def gen_task_pair(
    seed: int,
    n_pretrain: int = 4000,
    n_finetune: int = 6000,
    d_core: int = 6,
    d_spurious: int = 6,
    k_pretrain: int = 4,
    rho: float = 0.9,
    noise_std: float = 0.5,
) -> tuple[LabeledDataset, LabeledDataset]:
    """A sequential task pair sharing one input space.

    The first task is a separable k-way Gaussian-cluster problem (the
    pretraining task); the second is a biased spurious-correlation task of the
    same dimensionality, so a backbone trained on the first transfers to the
    second.
    """
    d = d_core + d_spurious
    pre = gen_cluster_dataset(ClusterSpec(n=n_pretrain, d=d, k=k_pretrain, seed=seed))
    fin = gen_spurious_dataset(
        SpuriousSpec(
            n=n_finetune,
            d_core=d_core,
            d_spurious=d_spurious,
            correlation=rho,
            noise_std=noise_std,
            seed=seed + 1000003,
        )
    )
    return pre, fin
