"""
Multimodal datasets: synthetic generation with controllable modality
dominance, CSV ingestion, stratified splits and resampled epoch orders.
"""
import logging
import os
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import SynthConfig
from .errors import ArgumentError, ConfigError, SchemaError, StratificationError

logger = logging.getLogger(__name__)

# RNG stream ids, combined with the seed in a SeedSequence
STREAM_DATA = 1
STREAM_SPLIT = 2
STREAM_INIT = 3
STREAM_SHUFFLE = 4
STREAM_RESAMPLE = 5

FEATURE_COLUMN = re.compile(r"^mod(\d+)_f(\d+)$")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator keyed by the seed plus stream ids (e.g. stream, epoch)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class MultimodalDataset:
    ids: np.ndarray
    labels: np.ndarray
    features: Tuple[np.ndarray, ...]
    num_classes: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.int64)
        features = tuple(np.asarray(f, dtype=np.float64) for f in self.features)
        if ids.ndim != 1 or labels.shape != ids.shape:
            raise ArgumentError("ids and labels must be 1-D and equally long")
        if len(np.unique(ids)) != ids.size:
            raise ArgumentError("sample ids must be unique")
        if np.any(ids < 0):
            raise ArgumentError("sample ids must be nonnegative")
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise ArgumentError(f"labels must lie in [0, {self.num_classes})")
        if not features:
            raise ArgumentError("need at least one modality")
        for i, f in enumerate(features):
            if f.ndim != 2 or f.shape[0] != ids.size:
                raise ArgumentError(f"modality {i} must be n x d with n = {ids.size}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", features)

    @property
    def n(self) -> int:
        return int(self.ids.size)

    @property
    def m(self) -> int:
        return len(self.features)

    @property
    def dims(self) -> List[int]:
        return [f.shape[1] for f in self.features]

    def subset(self, rows: Sequence[int]) -> "MultimodalDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return MultimodalDataset(self.ids[rows], self.labels[rows],
                                 tuple(f[rows] for f in self.features), self.num_classes)

    def batch(self, rows: Sequence[int]) -> Tuple[List[np.ndarray], np.ndarray]:
        rows = np.asarray(rows, dtype=np.int64)
        return [f[rows] for f in self.features], self.labels[rows]


# *** generation ***

def generate_synthetic(cfg: SynthConfig) -> MultimodalDataset:
    """
    Per class c and modality i the first ``informative`` dims are Gaussian
    around a unit-spaced class center with std ``noise``; the rest are
    standard normal noise.
    """
    try:
        cfg.validate()
    except ConfigError as e:
        raise ArgumentError(str(e)) from None
    rng = make_rng(cfg.seed, STREAM_DATA)
    num_classes, per_class = cfg.num_classes, cfg.samples_per_class
    centers = np.arange(num_classes, dtype=np.float64) - (num_classes - 1) / 2.0

    blocks = [[] for _ in cfg.modalities]
    labels = []
    for c in range(num_classes):
        labels.append(np.full(per_class, c, dtype=np.int64))
        for i, mod in enumerate(cfg.modalities):
            x = rng.normal(0.0, 1.0, size=(per_class, mod.dim))
            r = mod.informative
            if r:
                x[:, :r] = centers[c] + mod.noise * rng.normal(0.0, 1.0, size=(per_class, r))
            blocks[i].append(x)

    n = num_classes * per_class
    ds = MultimodalDataset(
        ids=np.arange(n, dtype=np.int64),
        labels=np.concatenate(labels),
        features=tuple(np.concatenate(b, axis=0) for b in blocks),
        num_classes=num_classes,
    )
    logger.info(f"Generated synthetic dataset: n={ds.n}, m={ds.m}, dims={ds.dims}, classes={num_classes}")
    return ds


def split(ds: MultimodalDataset, train_fraction: float, seed: int) -> Tuple[MultimodalDataset, MultimodalDataset]:
    """Stratified, disjoint, seeded train/test split."""
    if not 0 < train_fraction < 1:
        raise ArgumentError(f"train fraction must lie in (0, 1), got {train_fraction}")
    rng = make_rng(seed, STREAM_SPLIT)
    train_rows, test_rows = [], []
    for c in range(ds.num_classes):
        rows = np.flatnonzero(ds.labels == c)
        if rows.size == 0:
            continue
        if rows.size < 2:
            raise StratificationError(f"class {c} has {rows.size} sample(s); stratified split needs 2")
        rows = rng.permutation(rows)
        cut = min(max(int(round(train_fraction * rows.size)), 1), rows.size - 1)
        train_rows.append(rows[:cut])
        test_rows.append(rows[cut:])
    return (ds.subset(np.sort(np.concatenate(train_rows))),
            ds.subset(np.sort(np.concatenate(test_rows))))


def materialize_resample(ds: MultimodalDataset, plan, seed: int, epoch: int = 0,
                         include_base: bool = True) -> np.ndarray:
    """
    Epoch iteration order (sample ids): every sample once plus its extra
    copies from ``plan``, shuffled by (seed, epoch). ``include_base=False``
    returns only the extras.
    """
    counts = plan.counts if plan is not None else {}
    known = set(int(i) for i in ds.ids)
    unknown = [i for i in counts if int(i) not in known]
    if unknown:
        raise ArgumentError(f"resample plan names unknown sample ids {sorted(unknown)[:5]}")
    order = list(ds.ids) if include_base else []
    for sample_id in ds.ids:
        order.extend([int(sample_id)] * counts.get(int(sample_id), 0))
    rng = make_rng(seed, STREAM_SHUFFLE, epoch, 0 if include_base else 1)
    return rng.permutation(np.asarray(order, dtype=np.int64))


# *** CSV ***

@dataclass(frozen=True)
class DatasetSchema:
    dims: Tuple[int, ...]
    num_classes: Optional[int] = None

    def columns(self) -> List[str]:
        cols = ["id", "label"]
        for i, d in enumerate(self.dims):
            cols.extend(f"mod{i}_f{k}" for k in range(d))
        return cols

    @classmethod
    def from_header(cls, header: Sequence[str], num_classes: Optional[int] = None) -> "DatasetSchema":
        if list(header[:2]) != ["id", "label"]:
            raise SchemaError("header must start with id,label", line=1)
        dims = {}
        for col in header[2:]:
            match = FEATURE_COLUMN.match(col)
            if not match:
                raise SchemaError(f"unknown column {col!r}", line=1)
            mod, feat = int(match.group(1)), int(match.group(2))
            dims[mod] = max(dims.get(mod, 0), feat + 1)
        if not dims or sorted(dims) != list(range(len(dims))):
            raise SchemaError("modalities must be numbered 0..m-1", line=1)
        schema = cls(tuple(dims[i] for i in range(len(dims))), num_classes)
        if schema.columns() != list(header):
            raise SchemaError("feature columns out of order or missing", line=1)
        return schema


def save_csv(ds: MultimodalDataset, path: str):
    schema = DatasetSchema(tuple(ds.dims), ds.num_classes)
    frame = pd.DataFrame(np.concatenate(ds.features, axis=1), columns=schema.columns()[2:])
    frame.insert(0, "label", ds.labels)
    frame.insert(0, "id", ds.ids)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8", lineterminator="\n")
    logger.info(f"Wrote {ds.n} samples to {path}")


def load_csv(path: str, schema: Optional[DatasetSchema] = None) -> MultimodalDataset:
    """Parse a dataset CSV; errors name the offending line (header is line 1)."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise SchemaError(f"malformed CSV: {e}") from None
    except pd.errors.EmptyDataError:
        raise SchemaError("empty file", line=1) from None

    header = list(frame.columns)
    if schema is None:
        schema = DatasetSchema.from_header(header)
    else:
        expected = schema.columns()
        for col in header:
            if col not in expected:
                raise SchemaError(f"unknown column {col!r}", line=1)
        if header != expected:
            raise SchemaError("header does not match the schema", line=1)

    values = np.empty(frame.shape, dtype=np.float64)
    for k, col in enumerate(header):
        parsed = pd.to_numeric(frame[col].str.strip(), errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            raise SchemaError(f"non-numeric value {frame[col].iloc[bad[0]]!r} in column {col}", line=int(bad[0]) + 2)
        values[:, k] = parsed.to_numpy(dtype=np.float64)

    for k, col in enumerate(("id", "label")):
        bad = np.flatnonzero(values[:, k] != np.round(values[:, k]))
        if bad.size:
            raise SchemaError(f"{col} must be an integer", line=int(bad[0]) + 2)
    ids = values[:, 0].astype(np.int64)
    labels = values[:, 1].astype(np.int64)
    num_classes = schema.num_classes or (int(labels.max()) + 1 if labels.size else 0)

    features, offset = [], 2
    for d in schema.dims:
        features.append(values[:, offset:offset + d])
        offset += d
    try:
        return MultimodalDataset(ids, labels, tuple(features), num_classes)
    except ArgumentError as e:
        raise SchemaError(str(e)) from None
