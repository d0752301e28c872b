"""
Small multimodal classifier: one-hidden-layer encoder per modality, weighted
concatenation fusion, a fused softmax head and per-modality probe heads on
stop-gradient features.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ArgumentError, DimensionError
from .tensor import Tensor, concat

logger = logging.getLogger(__name__)

CE_FLOOR = 1e-12


@dataclass
class ForwardResult:
    fused: Tensor               # n x C posteriors
    unimodal: List[Tensor]      # m tensors, n x C, computed from detached features
    features: List[Tensor]      # m tensors, n x hidden_dim

    def unimodal_arrays(self) -> List[np.ndarray]:
        return [u.data for u in self.unimodal]


class MultimodalNet:
    def __init__(self, input_dims: Sequence[int], hidden_dim: int, num_classes: int,
                 rng: Optional[np.random.Generator] = None):
        if not input_dims:
            raise ArgumentError("need at least one modality")
        self.input_dims = [int(d) for d in input_dims]
        self.hidden_dim = int(hidden_dim)
        self.num_classes = int(num_classes)
        self.m = len(self.input_dims)
        self.params: Dict[str, Tensor] = OrderedDict()
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))

        for i, d in enumerate(self.input_dims):
            self._add_linear(f"enc{i}", d, self.hidden_dim, rng)
        self._add_linear("head", self.m * self.hidden_dim, self.num_classes, rng)
        for i in range(self.m):
            self._add_linear(f"probe{i}", self.hidden_dim, self.num_classes, rng)

    def _add_linear(self, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[f"{prefix}.weight"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                                 requires_grad=True, name=f"{prefix}.weight")
        self.params[f"{prefix}.bias"] = Tensor(rng.uniform(-bound, bound, (1, fan_out)),
                                               requires_grad=True, name=f"{prefix}.bias")

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def encoder_parameters(self) -> List[Tensor]:
        return [p for name, p in self.params.items() if name.startswith("enc")]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _linear(self, prefix: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{prefix}.weight"] + self.params[f"{prefix}.bias"]

    def encode_all(self, xs: Sequence) -> List[Tensor]:
        if len(xs) != self.m:
            raise ArgumentError(f"expected {self.m} modalities, got {len(xs)}")
        features = []
        for i, x in enumerate(xs):
            x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(x))
            if x.shape[-1] != self.input_dims[i]:
                raise DimensionError(f"modality {i} has dimension {x.shape[-1]}, expected {self.input_dims[i]}")
            features.append(self._linear(f"enc{i}", x).relu())
        return features

    def fuse(self, features: Sequence[Tensor], weights: Optional[np.ndarray] = None) -> Tensor:
        """[w_1 * f_1 | ... | w_m * f_m]; ``weights`` is m (shared) or n x m (per sample)."""
        if len(features) != self.m:
            raise ArgumentError(f"expected {self.m} feature blocks, got {len(features)}")
        if weights is None:
            return concat(list(features), axis=1)
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim == 1:
            w = np.broadcast_to(w, (features[0].shape[0], w.size))
        if w.shape != (features[0].shape[0], self.m):
            raise ArgumentError(f"fusion weights of shape {w.shape} do not match {self.m} modalities")
        return concat([f * w[:, i:i + 1] for i, f in enumerate(features)], axis=1)

    def forward(self, xs: Sequence, weights: Optional[np.ndarray] = None) -> ForwardResult:
        features = self.encode_all(xs)
        fused = self._linear("head", self.fuse(features, weights)).softmax(axis=1)
        unimodal = [self._linear(f"probe{i}", f.detach()).softmax(axis=1) for i, f in enumerate(features)]
        return ForwardResult(fused=fused, unimodal=unimodal, features=features)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for name, p in self.params.items():
            if name not in state:
                raise ArgumentError(f"checkpoint is missing {name}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape}, model shape {p.shape}")
            p.data = value.copy()


def cross_entropy(posteriors: Tensor, labels) -> Tensor:
    """Mean of -ln p[label] over rows, with p floored at 1e-12."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = posteriors.shape
    if labels.shape != (n,):
        raise ArgumentError(f"need {n} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ArgumentError(f"label out of range [0, {c})")
    onehot = np.eye(c)[labels]
    return -(posteriors * onehot).sum(axis=1).log(floor=CE_FLOOR).mean()


def cross_entropy_value(posterior_row, label: int) -> float:
    p = np.asarray(posterior_row, dtype=np.float64)
    if not 0 <= label < p.size:
        raise ArgumentError(f"label {label} out of range [0, {p.size})")
    return float(-np.log(max(p[label], CE_FLOOR)))
