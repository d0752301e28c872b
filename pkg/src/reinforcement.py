"""
Asymmetric reinforcement: per-sample fusion weights, the balanced min-max
loss terms, and contribution-driven resampling counts.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArgumentError
from .tensor import Tensor, concat
from .valuation import ContributionReport, GraphValuation

logger = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-8
RESAMPLE_MODES = ("dsr", "random", "inverse")
Number = Union[float, Tensor]


@dataclass
class FusionWeights:
    weights: np.ndarray
    epoch: int = -1
    degenerate: bool = False


@dataclass
class ResamplePlan:
    counts: Dict[int, int]      # sample id -> extra copies
    slope: float
    m: int
    mode: str = "dsr"

    @property
    def total_extra(self) -> int:
        return int(sum(self.counts.values()))

    def multiplicity(self, sample_id: int) -> int:
        return 1 + self.counts.get(sample_id, 0)


@dataclass
class LossBreakdown:
    ce: float
    l_phi_mi: float
    l_phi_cmi: float
    total: float
    lambda1: float
    lambda2: float
    probe: float = 0.0


class SampleLoss(NamedTuple):
    value: float
    degenerate: bool


# *** dynamic feature-level fusion ***

def fusion_weights(report: ContributionReport, eps: float = DEGENERATE_EPS, epoch: int = -1) -> FusionWeights:
    """FW^i = phi_cmi(x^i) / phi_cmi(X); all ones when the joint is ~0."""
    if report.phi_cmi_joint <= eps:
        return FusionWeights(np.ones(report.m), epoch=epoch, degenerate=True)
    return FusionWeights(np.asarray(report.phi_cmi_marginal) / report.phi_cmi_joint, epoch=epoch)


# *** balanced min-max loss ***

def loss_phi_mi(reports: Sequence[ContributionReport]) -> float:
    """1 - mean phi_mi joint over the batch (whichever mode the reports were valuated in)."""
    if not reports:
        raise ArgumentError("no reports")
    return 1.0 - float(np.mean([r.phi_mi_joint for r in reports]))


def loss_phi_cmi_sample(report: ContributionReport, eps: float = DEGENERATE_EPS, floor: float = 0.0) -> SampleLoss:
    """sum_i |phi_i - phi_joint| / max(phi_joint, floor); 0 and flagged when phi_joint <= eps."""
    joint = report.phi_cmi_joint
    if joint <= eps:
        return SampleLoss(0.0, True)
    marginals = np.asarray(report.phi_cmi_marginal)
    return SampleLoss(float(np.abs(marginals - joint).sum() / max(joint, floor)), False)


def loss_phi_cmi(reports: Sequence[ContributionReport], eps: float = DEGENERATE_EPS, floor: float = 0.0) -> float:
    if not reports:
        raise ArgumentError("no reports")
    return float(np.mean([loss_phi_cmi_sample(r, eps, floor).value for r in reports]))


def _check_lambdas(lambda1: float, lambda2: float):
    if lambda1 < 0 or lambda2 < 0:
        raise ArgumentError(f"trade-off weights must be >= 0, got {lambda1}, {lambda2}")


def weighted_total(ce: Number, l_mi: Number, l_cmi: Number, lambda1: float, lambda2: float) -> Number:
    _check_lambdas(lambda1, lambda2)
    return ce + lambda1 * l_mi + lambda2 * l_cmi


def total_loss(ce: float, l_mi: float, l_cmi: float, lambda1: float, lambda2: float,
               probe: float = 0.0) -> LossBreakdown:
    return LossBreakdown(
        ce=float(ce), l_phi_mi=float(l_mi), l_phi_cmi=float(l_cmi),
        total=float(weighted_total(ce, l_mi, l_cmi, lambda1, lambda2)),
        lambda1=lambda1, lambda2=lambda2, probe=float(probe),
    )


def graph_balanced_losses(gv: GraphValuation, eps: float = DEGENERATE_EPS,
                          floor: float = 0.0) -> Tuple[Tensor, Tensor, int]:
    """
    Smooth-mode (L_phi_mi, L_phi_cmi) on the tape, plus the number of samples
    whose joint contribution was too small to normalize by. Joint
    contributions below ``floor`` are normalized by ``floor`` instead.
    """
    l_mi = 1.0 - gv.phi_mi_joint().mean()

    marginals, joint = gv.phi_cmi_terms()
    mask = (joint.data > eps).astype(np.float64)  # n x 1
    # max(joint, floor)
    bounded = (joint - floor).relu() + floor if floor > 0 else joint
    safe_joint = bounded * mask + (1.0 - mask)
    gap = concat([(marg - joint).abs() for marg in marginals], axis=1).sum(axis=1, keepdims=True)
    l_cmi = (gap * safe_joint.reciprocal() * mask).mean()
    degenerate = int(mask.size - mask.sum())
    return l_mi, l_cmi, degenerate


# *** dynamic sample-level resampling ***

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resample_count(phi_joint: float, k: float, m: int) -> int:
    """Extra copies round(k * phi - k * m), floored at 0; non-increasing in phi for k < 0."""
    if k >= 0:
        raise ArgumentError(f"slope must be negative, got {k}")
    return max(0, _round_half_up(k * phi_joint - k * m))


def inverse_resample_count(phi_joint: float, k: float) -> int:
    """Mirror image of ``resample_count``: higher contribution, more copies."""
    if k >= 0:
        raise ArgumentError(f"slope must be negative, got {k}")
    return max(0, _round_half_up(-k * phi_joint))


def build_resampled_dataset(base_ids: Sequence[int],
                            reports: Union[Mapping[int, ContributionReport], Sequence[ContributionReport]],
                            k: float, mode: str = "dsr",
                            rng: Optional[np.random.Generator] = None) -> ResamplePlan:
    """
    Extra-copy counts for every base sample. ``reports`` is keyed by sample id
    or aligned with ``base_ids``.
    """
    if mode not in RESAMPLE_MODES:
        raise ArgumentError(f"unknown resample mode {mode!r}")
    ids = [int(i) for i in base_ids]
    if isinstance(reports, Mapping):
        missing = [i for i in ids if i not in reports]
        if missing:
            raise ArgumentError(f"no report for sample ids {missing[:5]}")
        ordered = [reports[i] for i in ids]
    else:
        if len(reports) != len(ids):
            raise ArgumentError(f"{len(ids)} samples but {len(reports)} reports")
        ordered = list(reports)
    if not ordered:
        return ResamplePlan({}, slope=k, m=0, mode=mode)

    m = ordered[0].m
    dsr = [resample_count(r.phi_cmi_joint, k, m) for r in ordered]
    if mode == "dsr":
        counts = dsr
    elif mode == "inverse":
        counts = [inverse_resample_count(r.phi_cmi_joint, k) for r in ordered]
    else:
        if rng is None:
            raise ArgumentError("random resampling needs a generator")
        # same budget as dsr, spread uniformly
        counts = rng.multinomial(sum(dsr), np.full(len(ids), 1.0 / len(ids))).tolist()
    return ResamplePlan({i: int(c) for i, c in zip(ids, counts) if c > 0}, slope=k, m=m, mode=mode)
