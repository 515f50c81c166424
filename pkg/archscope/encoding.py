"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Architecture Encodings
==================================
Turns an architecture record into the feature vector a predictor sees.

Encodings:
    Vec     - flattened adjacency bits + op indices (search-space specific)
    ZCP     - min-max scaled zero-cost proxy scores
    HWL     - min-max scaled latencies on reference devices
    ZCPVec  - ZCP followed by Vec
    HWLVec  - HWL followed by Vec

ZCP and HWL have the same length in every search space, which is what
lets a predictor move from one space to another.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import PredictorDefaults
from .errors import ArgumentError, IngestionError, SpecError, StateError

logger = logging.getLogger(__name__)


# ============================================================================
# RECORDS & SCHEMA
# ============================================================================

@dataclass(frozen=True)
class SpaceSchema:
    """
    Vec layout for one search space: the row-major upper triangle of the
    node adjacency matrix, then one op index per remaining slot.
    """
    space_id: str
    node_count: int
    op_vocabulary: Tuple[str, ...]
    vec_length: int

    def __post_init__(self):
        object.__setattr__(self, "op_vocabulary", tuple(self.op_vocabulary))
        if self.node_count < 1 or not self.op_vocabulary:
            raise SpecError(f"schema '{self.space_id}' needs node_count >= 1 and a non-empty op vocabulary")
        if self.vec_length < self.adjacency_bits:
            raise SpecError(f"schema '{self.space_id}': vec_length {self.vec_length} "
                            f"shorter than {self.adjacency_bits} adjacency bits")

    @property
    def adjacency_bits(self) -> int:
        return self.node_count * (self.node_count - 1) // 2

    @property
    def op_slots(self) -> int:
        return self.vec_length - self.adjacency_bits

    def validate_vec(self, vec: Sequence[int], arch_id: str = "?") -> None:
        if len(vec) != self.vec_length:
            raise IngestionError(f"{arch_id}: vec length {len(vec)} != schema {self.vec_length}",
                                 arch_id=arch_id, feature="vec")
        adj = vec[:self.adjacency_bits]
        ops = vec[self.adjacency_bits:]
        if any(v not in (0, 1) for v in adj):
            raise IngestionError(f"{arch_id}: adjacency entries must be 0/1", arch_id=arch_id, feature="vec")
        if any(not 0 <= v < len(self.op_vocabulary) for v in ops):
            raise IngestionError(f"{arch_id}: op index outside vocabulary of {len(self.op_vocabulary)}",
                                 arch_id=arch_id, feature="vec")


@dataclass(frozen=True)
class ArchitectureRecord:
    """One candidate network with whatever metrics the benchmark carries."""
    arch_id: str
    space_id: str
    vec: Optional[Tuple[int, ...]] = None
    zcp: Mapping[str, float] = field(default_factory=dict)
    latencies: Mapping[str, float] = field(default_factory=dict)
    accuracy: Optional[float] = None

    def __post_init__(self):
        if self.vec is not None:
            object.__setattr__(self, "vec", tuple(int(v) for v in self.vec))
        object.__setattr__(self, "zcp", {str(k): float(v) for k, v in dict(self.zcp).items()})
        object.__setattr__(self, "latencies", {str(k): float(v) for k, v in dict(self.latencies).items()})
        bad = [d for d, v in self.latencies.items() if not v > 0]
        if bad:
            raise IngestionError(f"{self.arch_id}: latency must be > 0 for {bad}",
                                 arch_id=self.arch_id, feature=f"lat:{bad[0]}")
        if self.accuracy is not None:
            acc = float(self.accuracy)
            if not 0.0 <= acc <= 1.0:
                raise IngestionError(f"{self.arch_id}: accuracy {acc} outside [0, 1]",
                                     arch_id=self.arch_id, feature="accuracy")
            object.__setattr__(self, "accuracy", acc)

    def target(self, kind: str, device_id: Optional[str] = None) -> Optional[float]:
        if kind == "accuracy":
            return self.accuracy
        if kind == "latency":
            return self.latencies.get(device_id)
        raise ArgumentError(f"unknown target kind '{kind}'")


# ============================================================================
# ENCODING MODES
# ============================================================================

class EncodingKind(Enum):
    VEC = "Vec"
    ZCP = "ZCP"
    HWL = "HWL"
    ZCPVEC = "ZCPVec"
    HWLVEC = "HWLVec"

    @property
    def uses_vec(self) -> bool:
        return self in (EncodingKind.VEC, EncodingKind.ZCPVEC, EncodingKind.HWLVEC)

    @property
    def uses_zcp(self) -> bool:
        return self in (EncodingKind.ZCP, EncodingKind.ZCPVEC)

    @property
    def uses_hwl(self) -> bool:
        return self in (EncodingKind.HWL, EncodingKind.HWLVEC)

    @property
    def space_independent(self) -> bool:
        return self in (EncodingKind.ZCP, EncodingKind.HWL)


@dataclass(frozen=True)
class EncodingMode:
    kind: EncodingKind
    proxy_list: Tuple[str, ...] = ()
    device_list: Tuple[str, ...] = ()

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, EncodingKind) else EncodingKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "proxy_list", tuple(self.proxy_list))
        object.__setattr__(self, "device_list", tuple(self.device_list))
        if kind.uses_zcp and not self.proxy_list:
            raise ArgumentError(f"{kind.value} encoding needs a non-empty proxy list")
        if kind.uses_hwl and not self.device_list:
            raise ArgumentError(f"{kind.value} encoding needs a non-empty reference device list")

    @property
    def metric_features(self) -> Tuple[str, ...]:
        if self.kind.uses_zcp:
            return tuple(f"zcp:{p}" for p in self.proxy_list)
        if self.kind.uses_hwl:
            return tuple(f"lat:{d}" for d in self.device_list)
        return ()

    def to_dict(self) -> Dict:
        return {"kind": self.kind.value, "proxy_list": list(self.proxy_list),
                "device_list": list(self.device_list)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EncodingMode":
        return cls(EncodingKind(data["kind"]), tuple(data.get("proxy_list", ())),
                   tuple(data.get("device_list", ())))


def metric_value(record: ArchitectureRecord, feature: str) -> Optional[float]:
    source, _, name = feature.partition(":")
    table = record.zcp if source == "zcp" else record.latencies
    return table.get(name)


def encoding_dim(mode: EncodingMode, schema: Optional[SpaceSchema] = None) -> int:
    dim = len(mode.metric_features)
    if mode.kind.uses_vec:
        if schema is None:
            raise ArgumentError(f"{mode.kind.value} encoding length depends on the space schema")
        dim += schema.vec_length
    return dim


# ============================================================================
# NORMALIZATION
# ============================================================================

@dataclass(frozen=True)
class Normalizer:
    """Per-feature min-max scaling fitted on a reference set."""
    features: Tuple[str, ...] = ()
    mins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    maxs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    means: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fitted: bool = False

    def transform(self, values, clip: bool = True) -> np.ndarray:
        if not self.fitted:
            raise StateError("normalizer used before fit")
        values = np.asarray(values, dtype=np.float64)
        span = self.maxs - self.mins
        constant = span <= 0
        scaled = (values - self.mins) / np.where(constant, 1.0, span)
        scaled = np.where(constant, 0.5, scaled)
        if clip:
            scaled = np.clip(scaled, PredictorDefaults.CLIP_LOW, PredictorDefaults.CLIP_HIGH)
        return scaled

    def inverse(self, scaled) -> np.ndarray:
        if not self.fitted:
            raise StateError("normalizer used before fit")
        scaled = np.asarray(scaled, dtype=np.float64)
        return (1.0 - scaled) * self.mins + scaled * self.maxs

    def to_dict(self) -> Dict:
        return {"features": list(self.features), "mins": self.mins.tolist(),
                "maxs": self.maxs.tolist(), "means": self.means.tolist(), "fitted": self.fitted}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Normalizer":
        return cls(tuple(data["features"]), np.array(data["mins"], dtype=np.float64),
                   np.array(data["maxs"], dtype=np.float64),
                   np.array(data.get("means", data["mins"]), dtype=np.float64), bool(data["fitted"]))


def fit_feature_normalizer(features: Sequence[str], rows: np.ndarray) -> Normalizer:
    """Fit on a dense (n, features) matrix that may contain NaN for absent values."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[1] == 0:
        return Normalizer(tuple(features), np.zeros(0), np.zeros(0), np.zeros(0), True)
    return Normalizer(tuple(features), np.nanmin(rows, axis=0), np.nanmax(rows, axis=0),
                      np.nanmean(rows, axis=0), True)


def fit_normalizer(records: Sequence[ArchitectureRecord], mode: EncodingMode,
                   impute_missing: bool = False) -> Normalizer:
    """
    Min/max of every metric feature over the reference records.
    Vec entries are not scaled, so Vec-only modes fit an empty normalizer.
    """
    if len(records) < 2:
        raise ArgumentError(f"normalizer needs at least 2 records, got {len(records)}")
    features = mode.metric_features
    rows = np.full((len(records), len(features)), np.nan)
    for i, rec in enumerate(records):
        for j, feat in enumerate(features):
            value = metric_value(rec, feat)
            if value is None:
                if not impute_missing:
                    raise IngestionError(f"{rec.arch_id}: missing {feat}", arch_id=rec.arch_id, feature=feat)
                continue
            rows[i, j] = value
    empty = [f for j, f in enumerate(features) if np.all(np.isnan(rows[:, j]))]
    if empty:
        raise IngestionError(f"no record carries {empty}", feature=empty[0])
    return fit_feature_normalizer(features, rows)


# ============================================================================
# ENCODE
# ============================================================================

def _metric_row(record: ArchitectureRecord, norm: Normalizer, impute_missing: bool) -> np.ndarray:
    raw = np.empty(len(norm.features))
    for j, feat in enumerate(norm.features):
        value = metric_value(record, feat)
        if value is None:
            if not impute_missing:
                raise IngestionError(f"{record.arch_id}: missing {feat}", arch_id=record.arch_id, feature=feat)
            logger.warning("%s: imputing %s with training mean", record.arch_id, feat)
            value = norm.means[j]
        raw[j] = value
    return raw


def encode(record: ArchitectureRecord, mode: EncodingMode, norm: Normalizer,
           schema: Optional[SpaceSchema] = None, impute_missing: bool = False) -> np.ndarray:
    """Scaled metrics first, then the raw Vec entries (if the mode has them)."""
    if not norm.fitted:
        raise StateError("encode called with an unfitted normalizer")
    if tuple(norm.features) != mode.metric_features:
        raise StateError(f"normalizer features {norm.features} do not match mode {mode.kind.value}")
    parts = []
    if mode.metric_features:
        parts.append(norm.transform(_metric_row(record, norm, impute_missing)))
    if mode.kind.uses_vec:
        if record.vec is None:
            raise IngestionError(f"{record.arch_id}: missing vec", arch_id=record.arch_id, feature="vec")
        if schema is not None:
            schema.validate_vec(record.vec, record.arch_id)
        parts.append(np.asarray(record.vec, dtype=np.float64))
    return np.concatenate(parts) if parts else np.zeros(0)


def encode_batch(records: Sequence[ArchitectureRecord], mode: EncodingMode, norm: Normalizer,
                 schema: Optional[SpaceSchema] = None, impute_missing: bool = False) -> np.ndarray:
    if not records:
        return np.zeros((0, encoding_dim(mode, schema) if schema or not mode.kind.uses_vec else 0))
    rows = [encode(r, mode, norm, schema, impute_missing) for r in records]
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise IngestionError(f"records encode to different lengths {sorted(lengths)}", feature="vec")
    X = np.vstack(rows)
    if mode.metric_features:
        m = len(mode.metric_features)
        clipped = int(np.sum((X[:, :m] == PredictorDefaults.CLIP_LOW) | (X[:, :m] == PredictorDefaults.CLIP_HIGH)))
        if clipped:
            logger.debug("%d metric values clipped to [%s, %s]", clipped,
                         PredictorDefaults.CLIP_LOW, PredictorDefaults.CLIP_HIGH)
    return X
