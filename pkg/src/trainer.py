import logging
from dataclasses import dataclass, field, asdict, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .config import ExperimentConfig, TrainConfig
from .data import (STREAM_INIT, STREAM_RESAMPLE, MultimodalDataset, make_rng, materialize_resample, split)
from .errors import ArgumentError, ConfigError, InsufficientBatchError, NumericalError
from .information import PosteriorBatch
from .model import MultimodalNet, cross_entropy
from .monitor import StatusMonitor
from .optim import SGD
from .reinforcement import (ResamplePlan, build_resampled_dataset, fusion_weights, graph_balanced_losses,
                            loss_phi_cmi, loss_phi_mi, total_loss, weighted_total)
from .valuation import ContributionReport, GraphValuation, valuate

logger = logging.getLogger(__name__)


@dataclass
class EvalMetrics:
    fused_acc: float
    probe_acc: List[float]
    phi_cmi: List[float]
    phi_cmi_joint: float
    phi_mi_joint: float
    gap: float


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    epoch_size: int
    extras: int
    train_acc: float
    test_acc: float
    probe_acc: List[float]
    phi_cmi: List[float]
    phi_cmi_joint: float
    phi_mi_joint: float
    gap: float
    test_phi_cmi: List[float]
    test_gap: float
    ce: float
    l_phi_mi: float
    l_phi_cmi: float
    total: float
    probe_loss: float
    fw_mean: List[float]
    degenerate: int


@dataclass
class RunHistory:
    seed: int
    records: List[EpochRecord] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)  # total loss per optimizer step
    counters: Dict[str, int] = field(default_factory=dict)  # steps, degenerate samples, capped epochs

    def series(self, name: str) -> List:
        return [getattr(r, name) for r in self.records]


def evaluate(net: MultimodalNet, ds: MultimodalDataset, temperature: float = 0.1,
             smoothing: float = 0.0) -> EvalMetrics:
    """
    Fused accuracy with all-ones fusion weights, probe accuracy per modality,
    and mean contributions from a valuation over the whole set.
    """
    if ds.n == 0:
        raise ArgumentError("cannot evaluate on an empty dataset")
    xs, labels = ds.batch(np.arange(ds.n))
    out = net.forward(xs)
    fused_acc = float(np.mean(out.fused.data.argmax(axis=1) == labels))
    probe_acc = [float(np.mean(u.argmax(axis=1) == labels)) for u in out.unimodal_arrays()]

    if ds.n < 2:
        logger.warning("Evaluation set has a single sample; contributions reported as 0")
        zeros = [0.0] * net.m
        return EvalMetrics(fused_acc, probe_acc, zeros, 0.0, 0.0, 0.0)

    reports = valuate(PosteriorBatch(out.fused.data, out.unimodal_arrays(), labels),
                      smooth=False, temperature=temperature, smoothing=smoothing)
    phi_cmi = np.mean([r.phi_cmi_marginal for r in reports], axis=0)
    return EvalMetrics(
        fused_acc=fused_acc,
        probe_acc=probe_acc,
        phi_cmi=[float(v) for v in phi_cmi],
        phi_cmi_joint=float(np.mean([r.phi_cmi_joint for r in reports])),
        phi_mi_joint=float(np.mean([r.phi_mi_joint for r in reports])),
        gap=float(phi_cmi.max() - phi_cmi.min()),
    )


class _EpochStats:
    """Running sums over one epoch."""

    def __init__(self, m: int):
        self.m = m
        self.visits = 0
        self.correct = 0
        self.steps = 0
        self.loss_sums = np.zeros(5)  # ce, l_mi, l_cmi, total, probe
        self.fw_sum = np.zeros(m)
        self.degenerate = 0
        self.first_reports: Dict[int, ContributionReport] = {}

    def add_step(self, breakdown, correct: int, visits: int, fw: np.ndarray, degenerate: int):
        self.steps += 1
        self.loss_sums += [breakdown.ce, breakdown.l_phi_mi, breakdown.l_phi_cmi, breakdown.total, breakdown.probe]
        self.correct += correct
        self.visits += visits
        self.fw_sum += fw.sum(axis=0)
        self.degenerate += degenerate

    def add_reports(self, ids: np.ndarray, reports: List[ContributionReport]):
        for sample_id, report in zip(ids, reports):
            self.first_reports.setdefault(int(sample_id), report)


class ArmTrainer:
    """
    Runs warm-up epochs with the plain loss, then valuation-driven fusion
    weights, the balanced min-max loss and resampling.
    """

    def __init__(self, cfg: TrainConfig, train_ds: MultimodalDataset, test_ds: Optional[MultimodalDataset] = None,
                 progress: bool = False, monitor: Optional[StatusMonitor] = None):
        try:
            cfg.validate()
        except ConfigError as e:
            raise ArgumentError(str(e)) from None
        if train_ds.n < 2:
            raise InsufficientBatchError("training needs at least 2 samples")
        self.cfg = cfg
        self.train_ds = train_ds
        self.test_ds = test_ds
        self.progress = progress
        self.monitor = monitor
        self.net = MultimodalNet(train_ds.dims, cfg.hidden_dim, train_ds.num_classes,
                                 rng=make_rng(cfg.seed, STREAM_INIT))
        self.optimizer = SGD(self.net.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
        self.fw_cache: Dict[int, np.ndarray] = {}
        self.pending_plan: Optional[ResamplePlan] = None
        self.history = RunHistory(seed=cfg.seed)
        self.row_of = {int(s): r for r, s in enumerate(train_ds.ids)}
        self.stats = {"steps": 0, "degenerate": 0, "capped_epochs": 0}

    # *** epoch plumbing ***

    def _batches(self, order: np.ndarray) -> List[np.ndarray]:
        size = self.cfg.batch_size
        chunks = [order[i:i + size] for i in range(0, len(order), size)]
        if len(chunks) > 1 and len(chunks[-1]) < 2:
            chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
            chunks.pop()
        return chunks

    def _cap(self, plan: ResamplePlan, epoch: int) -> ResamplePlan:
        budget = int(self.cfg.max_epoch_factor * self.train_ds.n) - self.train_ds.n
        total = plan.total_extra
        if total <= budget:
            return plan
        logger.warning(f"Epoch {epoch}: {total} extra copies exceed the cap of {budget}; scaling down")
        self.stats["capped_epochs"] += 1
        scale = max(budget, 0) / total
        counts = {i: int(np.floor(c * scale)) for i, c in plan.counts.items()}
        return replace(plan, counts={i: c for i, c in counts.items() if c > 0})

    def _plan(self, reports: Dict[int, ContributionReport], epoch: int) -> ResamplePlan:
        ids = [int(i) for i in self.train_ds.ids if int(i) in reports]
        plan = build_resampled_dataset(ids, reports, self.cfg.slope, mode=self.cfg.resample_mode,
                                       rng=make_rng(self.cfg.seed, STREAM_RESAMPLE, epoch))
        return self._cap(plan, epoch)

    def _fusion_matrix(self, ids: np.ndarray, arm: bool) -> Optional[np.ndarray]:
        if not (arm and self.cfg.dff):
            return None
        ones = np.ones(self.net.m)
        return np.stack([self.fw_cache.get(int(i), ones) for i in ids])

    # *** one optimizer step ***

    def _step(self, ids: np.ndarray, arm: bool, stats: _EpochStats) -> List[ContributionReport]:
        cfg = self.cfg
        rows = np.array([self.row_of[int(i)] for i in ids])
        xs, labels = self.train_ds.batch(rows)
        weights = self._fusion_matrix(ids, arm)

        out = self.net.forward(xs, weights)
        ce = cross_entropy(out.fused, labels)
        probe = sum(cross_entropy(u, labels) for u in out.unimodal).scale(1.0 / self.net.m)
        loss = ce + probe.scale(cfg.probe_weight) if cfg.probe_weight > 0 else ce

        reports = valuate(PosteriorBatch(out.fused.data, out.unimodal_arrays(), labels),
                          smooth=False, temperature=cfg.temperature, smoothing=cfg.smoothing)
        degenerate = 0
        if cfg.bmml:
            gv = GraphValuation(out.fused, out.unimodal_arrays(), labels, cfg.temperature, cfg.smoothing)
            l_mi, l_cmi, degenerate = graph_balanced_losses(gv, cfg.degenerate_eps, cfg.cmi_floor)
            loss = loss + weighted_total(0.0, l_mi, l_cmi, cfg.lambda1, cfg.lambda2)
            breakdown = total_loss(ce.item(), l_mi.item(), l_cmi.item(), cfg.lambda1, cfg.lambda2, probe.item())
        else:
            # reported only; the terms do not enter the objective
            l_cmi_report = loss_phi_cmi(reports, cfg.degenerate_eps, cfg.cmi_floor)
            breakdown = total_loss(ce.item(), loss_phi_mi(reports), l_cmi_report, 0.0, 0.0, probe.item())

        if not np.isfinite(loss.item()):
            raise NumericalError(f"non-finite loss {loss.item()!r} at step {self.stats['steps']}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        if not all(np.all(np.isfinite(p.data)) for p in self.net.parameters()):
            raise NumericalError(f"non-finite parameters after step {self.stats['steps']}")

        if arm and cfg.dff:
            for sample_id, report in zip(ids, reports):
                self.fw_cache[int(sample_id)] = fusion_weights(report, cfg.degenerate_eps).weights

        self.stats["steps"] += 1
        self.stats["degenerate"] += degenerate
        self.history.step_losses.append(breakdown.total)
        correct = int(np.sum(out.fused.data.argmax(axis=1) == labels))
        applied = weights if weights is not None else np.ones((len(ids), self.net.m))
        stats.add_step(breakdown, correct, len(ids), applied, degenerate)
        stats.add_reports(ids, reports)
        return reports

    def _run_order(self, order: np.ndarray, arm: bool, stats: _EpochStats) -> Dict[int, ContributionReport]:
        latest: Dict[int, ContributionReport] = {}
        if len(order) < 2:
            if len(order):
                logger.debug(f"Skipping a lone sample {order.tolist()}; valuation needs two")
            return latest
        for batch_ids in self._batches(order):
            for sample_id, report in zip(batch_ids, self._step(batch_ids, arm, stats)):
                latest[int(sample_id)] = report
        return latest

    # *** epoch loop ***

    def run_epoch(self, epoch: int) -> EpochRecord:
        cfg = self.cfg
        arm = epoch >= cfg.warmup
        resample = arm and cfg.dsr
        stats = _EpochStats(self.net.m)

        plan = self.pending_plan if (resample and cfg.defer_resample) else None
        order = materialize_resample(self.train_ds, plan, cfg.seed, epoch)
        latest = self._run_order(order, arm, stats)
        extras = plan.total_extra if plan is not None else 0

        if resample and not cfg.defer_resample:
            plan = self._plan(latest, epoch)
            extra_order = materialize_resample(self.train_ds, plan, cfg.seed, epoch, include_base=False)
            self._run_order(extra_order, arm, stats)
            extras = plan.total_extra
        elif resample:
            self.pending_plan = self._plan(latest, epoch)

        return self._record(epoch, arm, stats, extras)

    def _record(self, epoch: int, arm: bool, stats: _EpochStats, extras: int) -> EpochRecord:
        reports = list(stats.first_reports.values())
        phi_cmi = np.mean([r.phi_cmi_marginal for r in reports], axis=0)
        means = stats.loss_sums / max(stats.steps, 1)
        test = evaluate(self.net, self.test_ds, self.cfg.temperature, self.cfg.smoothing) if self.test_ds is not None else None
        return EpochRecord(
            epoch=epoch,
            phase="arm" if arm else "warmup",
            epoch_size=stats.visits,
            extras=int(extras),
            train_acc=stats.correct / max(stats.visits, 1),
            test_acc=test.fused_acc if test is not None else 0.0,
            probe_acc=test.probe_acc if test is not None else [0.0] * self.net.m,
            phi_cmi=[float(v) for v in phi_cmi],
            phi_cmi_joint=float(np.mean([r.phi_cmi_joint for r in reports])),
            phi_mi_joint=float(np.mean([r.phi_mi_joint for r in reports])),
            gap=float(phi_cmi.max() - phi_cmi.min()),
            test_phi_cmi=test.phi_cmi if test is not None else [0.0] * self.net.m,
            test_gap=test.gap if test is not None else 0.0,
            ce=float(means[0]),
            l_phi_mi=float(means[1]),
            l_phi_cmi=float(means[2]),
            total=float(means[3]),
            probe_loss=float(means[4]),
            fw_mean=[float(v) for v in stats.fw_sum / max(stats.visits, 1)],
            degenerate=int(stats.degenerate),
        )

    def run(self) -> Tuple[MultimodalNet, RunHistory]:
        cfg = self.cfg
        logger.info(f"Training seed {cfg.seed}: T={cfg.epochs}, F={cfg.warmup}, "
                    f"dff={cfg.dff}, bmml={cfg.bmml}, dsr={cfg.dsr} ({cfg.resample_mode})")
        if self.monitor:
            self.monitor.set_stage("TRAINING")
        for epoch in tqdm(range(cfg.epochs), desc=f"seed {cfg.seed}", disable=not self.progress):
            record = self.run_epoch(epoch)
            self.history.records.append(record)
            logger.info(
                f"epoch {epoch:3d} [{record.phase}] size={record.epoch_size} train_acc={record.train_acc:.4f} "
                f"test_acc={record.test_acc:.4f} gap={record.gap:.6f} joint={record.phi_cmi_joint:.6f} "
                f"ce={record.ce:.6f} l_mi={record.l_phi_mi:.6f} l_cmi={record.l_phi_cmi:.6f}"
            )
            if record.degenerate:
                logger.warning(f"epoch {epoch}: {record.degenerate} sample(s) with ~0 joint contribution")
            if self.monitor:
                self.monitor.update_epoch(epoch, asdict(record))
        self.history.counters = dict(self.stats)
        if self.monitor:
            self.monitor.set_stage("COMPLETED")
        return self.net, self.history


def train(cfg: TrainConfig, train_ds: MultimodalDataset, test_ds: Optional[MultimodalDataset] = None,
          progress: bool = False, monitor: Optional[StatusMonitor] = None) -> Tuple[MultimodalNet, RunHistory]:
    return ArmTrainer(cfg, train_ds, test_ds, progress=progress, monitor=monitor).run()


def run_experiment(cfg: ExperimentConfig, dataset: MultimodalDataset, seed: int, progress: bool = False,
                   monitor: Optional[StatusMonitor] = None) -> Tuple[MultimodalNet, RunHistory, EvalMetrics]:
    """Split ``dataset`` with the synth seed, train with ``seed``, evaluate on the held-out part."""
    train_ds, test_ds = split(dataset, cfg.train.train_fraction, cfg.synth.seed)
    train_cfg = replace(cfg.train, seed=seed)
    net, history = train(train_cfg, train_ds, test_ds, progress=progress, monitor=monitor)
    return net, history, evaluate(net, test_ds, train_cfg.temperature, train_cfg.smoothing)
