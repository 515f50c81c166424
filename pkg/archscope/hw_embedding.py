"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Hardware Embeddings
===============================
Three ways to tell the predictor which device it is predicting for:

    Sample - latencies of a fixed set of reference architectures
    Index  - binary expansion of the device ordinal
    Table  - one learnable row per device

A new Table device starts from the row of the training device whose
latencies rank the shared sample architectures most alike (Spearman).
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .config import PredictorDefaults
from .encoding import Normalizer, fit_feature_normalizer
from .errors import (ArgumentError, DataError, DeviceLookupError, RangeError, ShapeError,
                     SpecError, StateError)
from .metrics import safe_spearman

logger = logging.getLogger(__name__)


class EmbeddingKind(Enum):
    SAMPLE = "Sample"
    INDEX = "Index"
    TABLE = "Table"


# ============================================================================
# EMBEDDING TABLE
# ============================================================================

@dataclass(frozen=True)
class EmbeddingTable:
    """E with one row per registered device, in registration order."""
    device_ids: Tuple[str, ...]
    matrix: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        ids = tuple(self.device_ids)
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ShapeError(f"table shape {matrix.shape} does not hold {len(ids)} device rows")
        if len(set(ids)) != len(ids):
            raise ArgumentError(f"duplicate device ids in {ids}")
        object.__setattr__(self, "device_ids", ids)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def ordinal(self, device_id: str) -> int:
        try:
            return self.device_ids.index(device_id)
        except ValueError:
            raise DeviceLookupError(f"device '{device_id}' is not registered") from None

    def one_hot(self, device_id: str) -> np.ndarray:
        e = np.zeros(len(self.device_ids))
        e[self.ordinal(device_id)] = 1.0
        return e

    def lookup(self, device_id: str) -> np.ndarray:
        return self.matrix[self.ordinal(device_id)].copy()

    def register(self, device_id: str, row) -> "EmbeddingTable":
        if device_id in self.device_ids:
            raise ArgumentError(f"device '{device_id}' already registered")
        row = np.asarray(row, dtype=np.float64).reshape(-1)
        if row.shape[0] != self.dim:
            raise ShapeError(f"row length {row.shape[0]} != table width {self.dim}")
        return EmbeddingTable(self.device_ids + (device_id,), np.vstack([self.matrix, row]), self.trainable)

    def with_matrix(self, matrix) -> "EmbeddingTable":
        return EmbeddingTable(self.device_ids, matrix, self.trainable)


def lookup(table: EmbeddingTable, device_id: str) -> np.ndarray:
    """E_h = e_i E"""
    return table.lookup(device_id)


def init_table(device_ids: Sequence[str], dim: int, rng: np.random.Generator) -> EmbeddingTable:
    if dim < 1:
        raise ArgumentError(f"embedding dim must be >= 1, got {dim}")
    scale = PredictorDefaults.EMBEDDING_INIT
    return EmbeddingTable(tuple(device_ids), rng.uniform(-scale, scale, size=(len(device_ids), dim)))


# ============================================================================
# INDEX & SAMPLE REPRESENTATIONS
# ============================================================================

def index_width(n_devices: int) -> int:
    """Room for as many new devices as there are training devices."""
    return max(1, (2 * n_devices).bit_length())


def index_embedding(ordinal: int, width: int) -> np.ndarray:
    if width < 1 or ordinal < 0:
        raise RangeError(f"need ordinal >= 0 and width >= 1, got ({ordinal}, {width})")
    if ordinal >= 2 ** width:
        raise RangeError(f"ordinal {ordinal} does not fit in {width} bits")
    return np.array([(ordinal >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.float64)


def decode_index(bits) -> int:
    value = 0
    for b in bits:
        value = (value << 1) | int(round(b))
    return value


def reference_features(reference_archs: Sequence[str]) -> Tuple[str, ...]:
    return tuple(f"ref:{a}" for a in reference_archs)


def fit_sample_normalizer(latency_columns: Mapping[str, Mapping[str, float]],
                          reference_archs: Sequence[str]) -> Normalizer:
    """Per reference architecture min/max across the training devices."""
    rows = np.array([_reference_latencies(col, reference_archs, dev) for dev, col in latency_columns.items()])
    return fit_feature_normalizer(reference_features(reference_archs), rows)


def _reference_latencies(latencies: Mapping[str, float], reference_archs: Sequence[str],
                         device_id: str = "?") -> np.ndarray:
    missing = [a for a in reference_archs if a not in latencies]
    if missing:
        raise DataError(f"device '{device_id}' lacks measurements for {missing}", missing)
    return np.array([latencies[a] for a in reference_archs], dtype=np.float64)


def sample_embedding(latencies: Mapping[str, float], reference_archs: Sequence[str],
                     normalizer: Optional[Normalizer] = None, device_id: str = "?") -> np.ndarray:
    """Reference-architecture latencies in reference order, scaled if a normalizer is given."""
    raw = _reference_latencies(latencies, reference_archs, device_id)
    if normalizer is None:
        return raw
    if tuple(normalizer.features) != reference_features(reference_archs):
        raise StateError("sample normalizer was fitted on different reference architectures")
    return normalizer.transform(raw)


def choose_reference_archs(candidates: Sequence[str], latency_columns: Mapping[str, Mapping[str, float]],
                           count: int, rng: np.random.Generator) -> Tuple[str, ...]:
    """Draw reference architectures among those measured on every training device."""
    covered = [a for a in candidates if all(a in col for col in latency_columns.values())]
    if len(covered) < count:
        raise DataError(f"only {len(covered)} candidates are measured on every training device, need {count}")
    picked = rng.choice(len(covered), size=count, replace=False)
    return tuple(covered[i] for i in sorted(picked))


# ============================================================================
# NEW-DEVICE INITIALIZATION
# ============================================================================

@dataclass(frozen=True)
class DonorChoice:
    donor_id: str
    rho: float
    row: np.ndarray
    candidates: Dict[str, float] = field(default_factory=dict)


def init_new_device(table: EmbeddingTable, sample_ids: Sequence[str], sample_latencies: Sequence[float],
                    train_columns: Mapping[str, Mapping[str, float]]) -> DonorChoice:
    """
    Copy the row of the training device whose latencies on the sample
    architectures have the highest Spearman rho with the new device's.
    Ties go to the lowest ordinal.
    """
    sample_ids = list(sample_ids)
    sample_latencies = np.asarray(sample_latencies, dtype=np.float64)
    if len(sample_ids) < 2:
        raise ArgumentError(f"need at least 2 sample architectures, got {len(sample_ids)}")
    if sample_latencies.shape != (len(sample_ids),):
        raise ShapeError(f"{len(sample_ids)} sample ids but {sample_latencies.size} latencies")

    candidates: Dict[str, float] = {}
    best_id, best_rho = None, -np.inf
    for device in table.device_ids:
        column = train_columns.get(device)
        if column is None:
            raise DataError(f"no latency column for training device '{device}'", [device])
        missing = [a for a in sample_ids if a not in column]
        if missing:
            raise DataError(f"training device '{device}' lacks latencies for {missing}", missing)
        rho = safe_spearman([column[a] for a in sample_ids], sample_latencies)
        if rho is None:
            logger.warning("skipping donor '%s': rho undefined on the sample set", device)
            continue
        candidates[device] = rho
        if rho > best_rho:
            best_id, best_rho = device, rho

    if best_id is None:
        raise DataError("no training device has a defined rho with the new device", list(table.device_ids))
    logger.debug("donor for new device: %s (rho=%.3f)", best_id, best_rho)
    return DonorChoice(best_id, float(best_rho), table.lookup(best_id), candidates)


# ============================================================================
# DEVICE EMBEDDING
# ============================================================================

@dataclass(frozen=True)
class DeviceEmbedding:
    """The hardware half of a predictor input, in one of the three kinds."""
    kind: EmbeddingKind
    table: Optional[EmbeddingTable] = None
    ordinals: Dict[str, int] = field(default_factory=dict)
    width: int = 0
    reference_archs: Tuple[str, ...] = ()
    sample_vectors: Dict[str, np.ndarray] = field(default_factory=dict)
    sample_normalizer: Optional[Normalizer] = None

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, EmbeddingKind) else EmbeddingKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "reference_archs", tuple(self.reference_archs))
        if kind is EmbeddingKind.TABLE and self.table is None:
            raise ArgumentError("Table embedding needs an EmbeddingTable")
        if kind is EmbeddingKind.INDEX:
            n = len(self.ordinals)
            if self.width < max(1, (n - 1).bit_length()):
                raise RangeError(f"{self.width} bits cannot index {n} devices")
        if kind is EmbeddingKind.SAMPLE:
            bad = [d for d, v in self.sample_vectors.items() if len(v) != len(self.reference_archs)]
            if bad or not self.reference_archs:
                raise ShapeError(f"sample vectors must match {len(self.reference_archs)} reference archs: {bad}")

    @property
    def dim(self) -> int:
        if self.kind is EmbeddingKind.TABLE:
            return self.table.dim
        if self.kind is EmbeddingKind.INDEX:
            return self.width
        return len(self.reference_archs)

    @property
    def trainable(self) -> bool:
        return self.kind is EmbeddingKind.TABLE and self.table.trainable

    @property
    def device_ids(self) -> Tuple[str, ...]:
        if self.kind is EmbeddingKind.TABLE:
            return self.table.device_ids
        if self.kind is EmbeddingKind.INDEX:
            return tuple(sorted(self.ordinals, key=self.ordinals.get))
        return tuple(self.sample_vectors)

    def vector(self, device_id: str) -> np.ndarray:
        if self.kind is EmbeddingKind.TABLE:
            return self.table.lookup(device_id)
        if self.kind is EmbeddingKind.INDEX:
            if device_id not in self.ordinals:
                raise DeviceLookupError(f"device '{device_id}' is not registered")
            return index_embedding(self.ordinals[device_id], self.width)
        if device_id not in self.sample_vectors:
            raise DeviceLookupError(f"device '{device_id}' is not registered")
        return self.sample_vectors[device_id].copy()

    def matrix(self) -> np.ndarray:
        """Row per device in device_ids order."""
        return np.vstack([self.vector(d) for d in self.device_ids])

    def with_matrix(self, matrix) -> "DeviceEmbedding":
        if self.kind is not EmbeddingKind.TABLE:
            raise StateError(f"{self.kind.value} embeddings are not trainable")
        return replace(self, table=self.table.with_matrix(matrix))

    def register_table_row(self, device_id: str, row) -> "DeviceEmbedding":
        return replace(self, table=self.table.register(device_id, row))

    def register_index(self, device_id: str) -> "DeviceEmbedding":
        if device_id in self.ordinals:
            raise ArgumentError(f"device '{device_id}' already registered")
        ordinal = len(self.ordinals)
        index_embedding(ordinal, self.width)
        return replace(self, ordinals={**self.ordinals, device_id: ordinal})

    def register_sample(self, device_id: str, latencies: Mapping[str, float]) -> "DeviceEmbedding":
        if device_id in self.sample_vectors:
            raise ArgumentError(f"device '{device_id}' already registered")
        vec = sample_embedding(latencies, self.reference_archs, self.sample_normalizer, device_id)
        return replace(self, sample_vectors={**self.sample_vectors, device_id: vec})

    def to_dict(self) -> Dict:
        data: Dict = {"kind": self.kind.value, "device_ids": list(self.device_ids), "dim": self.dim}
        if self.kind is EmbeddingKind.TABLE:
            data["matrix"] = self.table.matrix.tolist()
            data["trainable"] = self.table.trainable
        elif self.kind is EmbeddingKind.INDEX:
            data["ordinals"] = dict(self.ordinals)
            data["width"] = self.width
        else:
            data["reference_archs"] = list(self.reference_archs)
            data["sample_vectors"] = {d: v.tolist() for d, v in self.sample_vectors.items()}
            if self.sample_normalizer is not None:
                data["sample_normalizer"] = self.sample_normalizer.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "DeviceEmbedding":
        kind = EmbeddingKind(data["kind"])
        if kind is EmbeddingKind.TABLE:
            table = EmbeddingTable(tuple(data["device_ids"]), np.array(data["matrix"], dtype=np.float64),
                                   bool(data.get("trainable", True)))
            return cls(kind, table=table)
        if kind is EmbeddingKind.INDEX:
            return cls(kind, ordinals={k: int(v) for k, v in data["ordinals"].items()}, width=int(data["width"]))
        norm = data.get("sample_normalizer")
        return cls(kind, reference_archs=tuple(data["reference_archs"]),
                   sample_vectors={d: np.array(v, dtype=np.float64) for d, v in data["sample_vectors"].items()},
                   sample_normalizer=Normalizer.from_dict(norm) if norm else None)


def build_device_embedding(kind, device_ids: Sequence[str], rng: np.random.Generator,
                           dim: int = PredictorDefaults.EMBEDDING_DIM,
                           latency_columns: Optional[Mapping[str, Mapping[str, float]]] = None,
                           reference_candidates: Optional[Sequence[str]] = None,
                           num_reference_archs: int = PredictorDefaults.NUM_REFERENCE_ARCHS
                           ) -> DeviceEmbedding:
    """Fresh embedding over the training devices."""
    kind = kind if isinstance(kind, EmbeddingKind) else EmbeddingKind(kind)
    device_ids = tuple(device_ids)
    if not device_ids:
        raise ArgumentError("device embedding needs at least one training device")
    if kind is EmbeddingKind.TABLE:
        return DeviceEmbedding(kind, table=init_table(device_ids, dim, rng))
    if kind is EmbeddingKind.INDEX:
        return DeviceEmbedding(kind, ordinals={d: i for i, d in enumerate(device_ids)},
                               width=index_width(len(device_ids)))

    if latency_columns is None:
        raise ArgumentError("Sample embedding needs training latency columns")
    columns = {d: latency_columns[d] for d in device_ids}
    candidates = reference_candidates if reference_candidates is not None else sorted(
        set.intersection(*(set(c) for c in columns.values())))
    refs = choose_reference_archs(candidates, columns, num_reference_archs, rng)
    norm = fit_sample_normalizer(columns, refs)
    vectors = {d: sample_embedding(columns[d], refs, norm, d) for d in device_ids}
    return DeviceEmbedding(kind, reference_archs=refs, sample_vectors=vectors, sample_normalizer=norm)


# ============================================================================
# DEVICE REGISTRY FILE
# ============================================================================

def save_registry(embedding: DeviceEmbedding, path: Path) -> None:
    """Ordered device ids, kind, width and (Sample) reference architectures."""
    data = {"kind": embedding.kind.value, "dim": embedding.dim, "device_ids": list(embedding.device_ids)}
    if embedding.kind is EmbeddingKind.SAMPLE:
        data["reference_archs"] = list(embedding.reference_archs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(data, f, sort_keys=False)


def load_registry(path: Path) -> Dict:
    with open(path, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f) or {}
    missing = [k for k in ("kind", "dim", "device_ids") if k not in data]
    if missing:
        raise SpecError(f"device registry {path} lacks {missing}")
    data["kind"] = EmbeddingKind(data["kind"])
    if data["kind"] is EmbeddingKind.SAMPLE and len(data.get("reference_archs", [])) != data["dim"]:
        raise SpecError(f"registry {path}: Sample dim must equal the reference arch count")
    return data
