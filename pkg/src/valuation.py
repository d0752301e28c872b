"""
Per-sample modality contribution valuation.

Batch-level quantities (NMI between the fused head and each probe head, NCMI
between the fused head and probe ``j`` given probe ``i``) are shared by every
sample; per-sample quantities scale them by the probability each head
assigns to the true class.

Two paths compute the same numbers: ``valuate`` works on plain arrays for
reporting, fusion weights and resampling; ``GraphValuation`` builds the
smooth-mode terms on the autodiff tape so the balanced loss gets gradients
through the fused posteriors.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import information as info
from .errors import ArgumentError, InsufficientBatchError
from .information import PosteriorBatch
from .tensor import Tensor, concat

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-300


@dataclass
class ContributionReport:
    p_true_fused: float
    p_true_unimodal: np.ndarray
    nmi: np.ndarray
    ncmi: np.ndarray
    ii: np.ndarray
    phi_mi_marginal: np.ndarray
    phi_mi_joint: float
    phi_cmi_marginal: np.ndarray
    phi_cmi_joint: float
    phi_cmi_marginal_raw: np.ndarray = field(default=None)  # before clamping to [0, m]
    argmin_modality: int = 0

    @property
    def m(self) -> int:
        return len(self.nmi)


# *** batch-level ***

def batch_nmi_matrix(batch: PosteriorBatch, smoothing: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    nmi[i] = NMI(fused; probe_i); ncmi[j, i] = NCMI(fused; probe_j | probe_i)
    for j != i, diagonal left at 0.
    """
    if batch.n < 2:
        raise InsufficientBatchError(f"valuation needs at least 2 samples, got {batch.n}")
    m = batch.m
    nmi = np.array([info.normalized_mi(info.soft_joint2(batch.fused, u, smoothing)) for u in batch.unimodal])
    ncmi = np.zeros((m, m))
    for j in range(m):
        for i in range(m):
            if i != j:
                joint = info.soft_joint3(batch.fused, batch.unimodal[j], batch.unimodal[i], smoothing)
                ncmi[j, i] = info.normalized_cmi(joint)
    return nmi, ncmi


def interaction_matrix(nmi: np.ndarray, ncmi: np.ndarray) -> np.ndarray:
    m = len(nmi)
    ii = np.zeros((m, m))
    for j in range(m):
        for i in range(m):
            if i != j:
                ii[j, i] = info.interaction_information(nmi[j], ncmi[j, i])
    return ii


# *** per-sample metrics ***

def phi_mi_marginal(p_true: float, nmi_i: float) -> float:
    return p_true * nmi_i


def smooth_min(values, temperature: float) -> float:
    """-tau * logsumexp(-x / tau): a lower bound within tau * ln(m) of min(x)."""
    if temperature <= 0:
        raise ArgumentError("temperature must be > 0")
    x = -np.asarray(values, dtype=np.float64) / temperature
    top = x.max()
    return float(-temperature * (top + np.log(np.exp(x - top).sum())))


def phi_mi_joint(p_true: float, nmi, smooth: bool = False, temperature: float = 0.1) -> float:
    if temperature <= 0:
        raise ArgumentError("temperature must be > 0")
    nmi = np.asarray(nmi, dtype=np.float64)
    if nmi.size == 0:
        raise ArgumentError("need at least one modality")
    if not smooth:
        return p_true * float(nmi.min())
    return max(0.0, p_true * smooth_min(nmi, temperature))


def phi_cmi_marginal_raw(i: int, p_true_fused: float, p_true_unimodal, nmi, ncmi) -> float:
    total = p_true_fused * nmi[i]
    for j in range(len(nmi)):
        if j != i:
            total += p_true_unimodal[j] * (nmi[j] - ncmi[j][i])
    return float(total)


def phi_cmi_marginal(i: int, p_true_fused: float, p_true_unimodal, nmi, ncmi) -> float:
    m = len(nmi)
    return float(np.clip(phi_cmi_marginal_raw(i, p_true_fused, p_true_unimodal, nmi, ncmi), 0.0, m))


def phi_cmi_joint(marginals) -> float:
    marginals = np.asarray(marginals, dtype=np.float64)
    if marginals.size == 0:
        raise ArgumentError("need at least one marginal")
    return float(marginals.mean())


def true_class_probs(posteriors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return posteriors[np.arange(len(labels)), labels]


def valuate(batch: PosteriorBatch, smooth: bool = False, temperature: float = 0.1,
            smoothing: float = 0.0) -> List[ContributionReport]:
    """One report per sample of ``batch``."""
    if temperature <= 0:
        raise ArgumentError("temperature must be > 0")
    nmi, ncmi = batch_nmi_matrix(batch, smoothing)
    ii = interaction_matrix(nmi, ncmi)
    m = batch.m
    p_fused = true_class_probs(batch.fused, batch.labels)
    p_uni = np.stack([true_class_probs(u, batch.labels) for u in batch.unimodal], axis=1)
    argmin = int(np.argmin(nmi))

    reports = []
    for s in range(batch.n):
        raw = np.array([phi_cmi_marginal_raw(i, p_fused[s], p_uni[s], nmi, ncmi) for i in range(m)])
        marginals = np.clip(raw, 0.0, m)
        reports.append(ContributionReport(
            p_true_fused=float(p_fused[s]),
            p_true_unimodal=p_uni[s].copy(),
            nmi=nmi,
            ncmi=ncmi,
            ii=ii,
            phi_mi_marginal=p_fused[s] * nmi,
            phi_mi_joint=phi_mi_joint(p_fused[s], nmi, smooth, temperature),
            phi_cmi_marginal=marginals,
            phi_cmi_joint=phi_cmi_joint(marginals),
            phi_cmi_marginal_raw=raw,
            argmin_modality=argmin,
        ))
    return reports


# *** differentiable path ***

def _graph_entropy(table: Tensor) -> Tensor:
    return -(table * table.log(floor=LOG_FLOOR)).sum()


def _safe_reciprocal(table: Tensor) -> Tensor:
    return table.log(floor=LOG_FLOOR).scale(-1.0).exp()


def _graph_divergence(joint: Tensor, indep: Tensor, dependence: Tensor) -> Tensor:
    """sum joint * ln(joint / indep) as sum joint * log1p(dependence / indep), joint = indep + dependence."""
    return (joint * (dependence * _safe_reciprocal(indep)).log1p()).sum()


def _normalize(numerator: Tensor, h_a: Tensor, h_b: Tensor) -> Tensor:
    if h_a.item() < info.ZERO_ENTROPY or h_b.item() < info.ZERO_ENTROPY:
        return Tensor(0.0)
    # x / sqrt(h_a h_b) with the log/exp primitives
    return numerator * (h_a.log() + h_b.log()).scale(-0.5).exp()


def _khatri_rao(p_b: np.ndarray, p_z: np.ndarray) -> np.ndarray:
    """Row-wise outer products flattened to n x (C*C), column index b*C + z."""
    n, c = p_b.shape
    return (p_b[:, :, None] * p_z[:, None, :]).reshape(n, c * c)


def _conditional_pairs(p_b: np.ndarray, p_z: np.ndarray) -> np.ndarray:
    """
    n x (C*C) weights whose product with the fused posteriors gives
    p(a,b,z) - p(a,z) p(b,z) / p(z): column b*C + z holds p_z[s, z] times
    p_b[s, b] centered on its p_z-weighted mean.
    """
    n, c = p_b.shape
    totals = p_z.sum(axis=0)
    means = np.divide(p_z.T @ p_b, totals[:, None], out=np.zeros((c, c)), where=totals[:, None] > 0)  # z x b
    return ((p_b[:, :, None] - means.T[None, :, :]) * p_z[:, None, :]).reshape(n, c * c)


class GraphValuation:
    """
    Smooth-mode valuation built on the tape. The fused posteriors carry
    gradients; probe posteriors enter as constants.
    """

    def __init__(self, fused: Tensor, unimodal: List[np.ndarray], labels: np.ndarray,
                 temperature: float = 0.1, smoothing: float = 0.0):
        if temperature <= 0:
            raise ArgumentError("temperature must be > 0")
        n, c = fused.shape
        if n < 2:
            raise InsufficientBatchError(f"valuation needs at least 2 samples, got {n}")
        self.fused = fused
        self.unimodal = [np.asarray(u, dtype=np.float64) for u in unimodal]
        self.labels = np.asarray(labels, dtype=np.int64)
        self.temperature = temperature
        self.smoothing = smoothing
        self.n, self.c, self.m = n, c, len(self.unimodal)
        self.onehot = np.eye(c)[self.labels]
        self.nmi = [self._nmi(u) for u in self.unimodal]
        self.ncmi = [[self._ncmi(j, i) if i != j else None for i in range(self.m)] for j in range(self.m)]
        self.p_true_fused = (fused * self.onehot).sum(axis=1, keepdims=True)  # n x 1
        self.p_true_unimodal = np.stack([true_class_probs(u, self.labels) for u in self.unimodal], axis=1)

    def _smooth(self, table: Tensor) -> Tensor:
        if self.smoothing <= 0:
            return table
        return (table + self.smoothing).scale(1.0 / (1.0 + self.smoothing * table.size))

    def _nmi(self, unimodal: np.ndarray) -> Tensor:
        joint = self._smooth((self.fused.T @ Tensor(unimodal)).scale(1.0 / self.n))  # C x C
        p_a = joint.sum(axis=1, keepdims=True)
        p_b = joint.sum(axis=0, keepdims=True)
        indep = p_a * p_b
        if self.smoothing > 0:
            dependence = joint - indep
        else:
            centered = unimodal - unimodal.mean(axis=0, keepdims=True)
            dependence = (self.fused.T @ Tensor(centered)).scale(1.0 / self.n)
        mi = _graph_divergence(joint, indep, dependence)
        return _normalize(mi, _graph_entropy(p_a), _graph_entropy(p_b))

    def _ncmi(self, j: int, i: int) -> Tensor:
        p_b, p_z = self.unimodal[j], self.unimodal[i]
        joint = self._smooth((self.fused.T @ Tensor(_khatri_rao(p_b, p_z))).scale(1.0 / self.n))  # a x (b, z)
        # (b, z) -> z and back
        sum_b = Tensor(np.tile(np.eye(self.c), (self.c, 1)))
        spread_b = Tensor(sum_b.data.T)
        joint_az = joint @ sum_b
        joint_bz = joint.sum(axis=0, keepdims=True)
        joint_z = joint_bz @ sum_b
        indep = (joint_az @ spread_b) * joint_bz * _safe_reciprocal(joint_z @ spread_b)
        if self.smoothing > 0:
            dependence = joint - indep
        else:
            dependence = (self.fused.T @ Tensor(_conditional_pairs(p_b, p_z))).scale(1.0 / self.n)
        cmi = _graph_divergence(joint, indep, dependence)
        h_z = _graph_entropy(joint_z)
        return _normalize(cmi, _graph_entropy(joint_az) - h_z, _graph_entropy(joint_bz) - h_z)

    def nmi_vector(self) -> Tensor:
        return concat([v.reshape(1, 1) for v in self.nmi], axis=1)  # 1 x m

    def phi_mi_joint(self) -> Tensor:
        """Per-sample smooth lower-bound joint contribution, n x 1, clamped at 0."""
        smin = self.nmi_vector().scale(-1.0 / self.temperature).logsumexp(axis=1, keepdims=True)
        smin = smin.scale(-self.temperature)  # 1 x 1
        return (self.p_true_fused * smin).relu()

    def phi_cmi_marginals(self) -> List[Tensor]:
        m = self.m
        marginals = []
        for i in range(m):
            total = self.p_true_fused * self.nmi[i]
            for j in range(m):
                if j == i:
                    continue
                weight = self.p_true_unimodal[:, j:j + 1]  # stop-gradient coefficient
                total = total + Tensor(weight) * (self.nmi[j] - self.ncmi[j][i])
            # clamp to [0, m]
            marginals.append(m - (m - total.relu()).relu())
        return marginals

    def phi_cmi_terms(self) -> Tuple[List[Tensor], Tensor]:
        marginals = self.phi_cmi_marginals()
        joint = concat(marginals, axis=1).mean(axis=1, keepdims=True)  # n x 1
        return marginals, joint
