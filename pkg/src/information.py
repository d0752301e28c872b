"""
Empirical joints over discrete class variables and the information metrics
computed on them. All values are in nats; ``0 * ln 0`` terms contribute 0.
"""
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence

import numpy as np
from scipy.special import entr, xlogy

from .errors import ArgumentError

logger = logging.getLogger(__name__)

MASS_TOL = 1e-9
ZERO_ENTROPY = 1e-12


def _check_table(table: np.ndarray, ndim: int) -> np.ndarray:
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != ndim:
        raise ArgumentError(f"expected a {ndim}-way table, got shape {table.shape}")
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise ArgumentError("joint table has negative or non-finite entries")
    if abs(table.sum() - 1.0) > MASS_TOL:
        raise ArgumentError(f"joint table sums to {table.sum()!r}, not 1")
    return table


@dataclass(frozen=True)
class EmpiricalJoint2:
    """P(A, B) as a dense table."""
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", _check_table(self.table, 2))

    @property
    def marginal_a(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def marginal_b(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def transpose(self) -> "EmpiricalJoint2":
        return EmpiricalJoint2(self.table.T.copy())


@dataclass(frozen=True)
class EmpiricalJoint3:
    """P(A, B, Z) as a dense table."""
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", _check_table(self.table, 3))

    def marginalize(self, axis: int) -> EmpiricalJoint2:
        return EmpiricalJoint2(self.table.sum(axis=axis))


@dataclass(frozen=True)
class PosteriorBatch:
    """Fused and per-modality class posteriors for ``n`` samples, plus labels."""
    fused: np.ndarray
    unimodal: List[np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        fused = _check_posteriors(self.fused)
        unimodal = [_check_posteriors(u) for u in self.unimodal]
        labels = np.asarray(self.labels, dtype=np.int64)
        if not unimodal:
            raise ArgumentError("need at least one modality")
        if any(u.shape != fused.shape for u in unimodal):
            raise ArgumentError("unimodal posteriors must match the fused shape")
        if labels.shape != (fused.shape[0],):
            raise ArgumentError("need one label per sample")
        if np.any(labels < 0) or np.any(labels >= fused.shape[1]):
            raise ArgumentError("label out of range")
        object.__setattr__(self, "fused", fused)
        object.__setattr__(self, "unimodal", unimodal)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.fused.shape[0]

    @property
    def num_classes(self) -> int:
        return self.fused.shape[1]

    @property
    def m(self) -> int:
        return len(self.unimodal)


def _check_posteriors(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ArgumentError(f"posteriors must be n x C with n >= 1, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > MASS_TOL):
        raise ArgumentError("posterior rows must be nonnegative and sum to 1")
    return p


def _smooth(table: np.ndarray, smoothing: float) -> np.ndarray:
    if smoothing <= 0:
        return table
    return (table + smoothing) / (1.0 + smoothing * table.size)


# *** estimators ***

def soft_joint2(p_a, p_b, smoothing: float = 0.0) -> EmpiricalJoint2:
    """table[a, b] = mean_s p_a[s, a] * p_b[s, b]."""
    p_a, p_b = _check_posteriors(p_a), _check_posteriors(p_b)
    if p_a.shape != p_b.shape:
        raise ArgumentError(f"posterior shapes differ: {p_a.shape} vs {p_b.shape}")
    return EmpiricalJoint2(_smooth(p_a.T @ p_b / p_a.shape[0], smoothing))


def soft_joint3(p_a, p_b, p_z, smoothing: float = 0.0) -> EmpiricalJoint3:
    """table[a, b, z] = mean_s p_a[s, a] * p_b[s, b] * p_z[s, z]."""
    p_a, p_b, p_z = _check_posteriors(p_a), _check_posteriors(p_b), _check_posteriors(p_z)
    if not p_a.shape == p_b.shape == p_z.shape:
        raise ArgumentError("posterior shapes differ")
    table = np.einsum("sa,sb,sz->abz", p_a, p_b, p_z) / p_a.shape[0]
    return EmpiricalJoint3(_smooth(table, smoothing))


def hard_joint2(labels_a: Sequence[int], labels_b: Sequence[int], num_classes: int) -> EmpiricalJoint2:
    a = np.asarray(labels_a, dtype=np.int64)
    b = np.asarray(labels_b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ArgumentError("label vectors must be nonempty and equally long")
    for labels in (a, b):
        if np.any(labels < 0) or np.any(labels >= num_classes):
            raise ArgumentError(f"label out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes))
    np.add.at(counts, (a, b), 1.0)
    return EmpiricalJoint2(counts / a.size)


def hard_joint3(labels_a, labels_b, labels_z, num_classes: int) -> EmpiricalJoint3:
    a, b, z = (np.asarray(x, dtype=np.int64) for x in (labels_a, labels_b, labels_z))
    if not a.shape == b.shape == z.shape or a.ndim != 1 or a.size == 0:
        raise ArgumentError("label vectors must be nonempty and equally long")
    for labels in (a, b, z):
        if np.any(labels < 0) or np.any(labels >= num_classes):
            raise ArgumentError(f"label out of range [0, {num_classes})")
    counts = np.zeros((num_classes,) * 3)
    np.add.at(counts, (a, b, z), 1.0)
    return EmpiricalJoint3(counts / a.size)


# *** metrics ***

def entropy(dist) -> float:
    p = np.asarray(dist, dtype=np.float64)
    if np.any(p < 0):
        raise ArgumentError("probability vector has a negative entry")
    if abs(p.sum() - 1.0) > MASS_TOL:
        raise ArgumentError("probability vector does not sum to 1")
    return float(entr(p).sum())


def _table_entropy(t: np.ndarray) -> float:
    return float(entr(t).sum())


def mutual_information(j: EmpiricalJoint2) -> float:
    p = j.table
    outer = np.outer(j.marginal_a, j.marginal_b)
    return float(np.sum(xlogy(p, p) - xlogy(p, outer)))


def normalized_mi(j: EmpiricalJoint2) -> float:
    h_a = _table_entropy(j.marginal_a)
    h_b = _table_entropy(j.marginal_b)
    if h_a < ZERO_ENTROPY or h_b < ZERO_ENTROPY:
        return 0.0
    return mutual_information(j) / np.sqrt(h_a * h_b)


def conditional_mi(j: EmpiricalJoint3) -> float:
    """I(A; B | Z) by direct summation."""
    p = j.table
    p_z = p.sum(axis=(0, 1))[None, None, :]
    p_az = p.sum(axis=1)[:, None, :]
    p_bz = p.sum(axis=0)[None, :, :]
    return float(np.sum(xlogy(p, p) + xlogy(p, p_z) - xlogy(p, p_az) - xlogy(p, p_bz)))


def conditional_entropies(j: EmpiricalJoint3):
    """(H(A|Z), H(B|Z))."""
    p = j.table
    h_z = _table_entropy(p.sum(axis=(0, 1)))
    return _table_entropy(p.sum(axis=1)) - h_z, _table_entropy(p.sum(axis=0)) - h_z


def normalized_cmi(j: EmpiricalJoint3) -> float:
    h_a_z, h_b_z = conditional_entropies(j)
    if h_a_z < ZERO_ENTROPY or h_b_z < ZERO_ENTROPY:
        return 0.0
    return conditional_mi(j) / np.sqrt(h_a_z * h_b_z)


def interaction_information(nmi_jb: float, ncmi_jb_given_i: float) -> float:
    """Redundancy (> 0) or synergy (< 0) between two modalities w.r.t. the fused prediction."""
    return nmi_jb - ncmi_jb_given_i


class PointwiseInfo(NamedTuple):
    value: float
    degenerate: bool


def pointwise_positive_mi(j: EmpiricalJoint2, y: int) -> PointwiseInfo:
    """
    Information the first variable carries about the event that the second
    (the prediction) equals ``y``: sum_x P(x|y) ln[P(y|x) / P(y)].
    """
    p = j.table
    if not 0 <= y < p.shape[1]:
        raise ArgumentError(f"class {y} out of range")
    p_y = p[:, y].sum()
    if p_y <= 0:
        return PointwiseInfo(0.0, True)
    p_x = j.marginal_a
    cond = p[:, y] / p_y
    ratio = np.divide(p[:, y], p_x * p_y, out=np.ones_like(p_x), where=p_x > 0)
    return PointwiseInfo(float(np.sum(xlogy(cond, ratio))), False)


def monotone_gain_check(j: EmpiricalJoint3, y: int) -> PointwiseInfo:
    """
    I(Y=y; B,C) - I(Y=y; B) for a joint over (B, C, Y). Adding the variable C
    never loses information about the event Y=y, so the result is >= 0 up to
    rounding.
    """
    p = j.table
    nb, nc, ny = p.shape
    joint_bc = EmpiricalJoint2(p.reshape(nb * nc, ny))
    with_c = pointwise_positive_mi(joint_bc, y)
    without_c = pointwise_positive_mi(j.marginalize(1), y)
    if with_c.degenerate:
        return PointwiseInfo(0.0, True)
    return PointwiseInfo(with_c.value - without_c.value, False)
