"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Rank Metrics & Task Distance
========================================
Spearman rank correlation (average ranks for ties), device / proxy
correlation matrices, closest-training-device readouts and adversarial
device splits.

Task distance between two devices (or tasks) is read off as the inverse
of their latency (or target) rank correlation. Low train-test
correlation is what makes few-shot transfer hard.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import (ArgumentError, DeviceLookupError, InfeasibleSplitError, RangeError,
                     UndefinedCorrelationError)

if TYPE_CHECKING:
    from .dataio import BenchmarkDataset

logger = logging.getLogger(__name__)

# Binarized correlation chart levels
BUCKET_THRESHOLDS = (0.5, 0.7)


# ============================================================================
# SPEARMAN
# ============================================================================

def spearman_rho(a, b) -> float:
    """Pearson correlation of average-tied ranks."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ArgumentError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelationError(f"need at least 2 points, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ArgumentError("spearman_rho inputs must be finite")

    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    sa = float(np.dot(ra, ra))
    sb = float(np.dot(rb, rb))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("zero rank variance (constant input)")
    rho = float(np.dot(ra, rb)) / np.sqrt(sa * sb)
    return float(min(1.0, max(-1.0, rho)))


def safe_spearman(a, b) -> Optional[float]:
    """spearman_rho, or None when the correlation is undefined."""
    try:
        return spearman_rho(a, b)
    except UndefinedCorrelationError:
        return None


# ============================================================================
# CORRELATION MATRIX
# ============================================================================

@dataclass(frozen=True)
class CorrelationMatrix:
    labels: Tuple[str, ...]
    values: np.ndarray
    missing: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        values = np.asarray(self.values, dtype=np.float64)
        n = len(self.labels)
        if values.shape != (n, n):
            raise ArgumentError(f"matrix shape {values.shape} does not match {n} labels")
        object.__setattr__(self, "values", values)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DeviceLookupError(f"'{label}' is not covered by the correlation matrix") from None

    def rho(self, a: str, b: str) -> float:
        return float(self.values[self.index(a), self.index(b)])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.labels), columns=list(self.labels))


def correlation_from_columns(columns: Dict[str, Dict[str, float]]) -> CorrelationMatrix:
    """
    Pairwise-complete Spearman over shared keys. Pairs with fewer than two
    shared keys (or constant columns) stay NaN and are listed as missing.
    """
    labels = list(columns)
    n = len(labels)
    if n < 2:
        raise ArgumentError(f"need at least 2 columns, got {n}")
    values = np.eye(n)
    missing = []
    for i in range(n):
        for j in range(i + 1, n):
            shared = sorted(set(columns[labels[i]]) & set(columns[labels[j]]))
            rho = None
            if len(shared) >= 2:
                rho = safe_spearman([columns[labels[i]][k] for k in shared],
                                    [columns[labels[j]][k] for k in shared])
            if rho is None:
                values[i, j] = values[j, i] = np.nan
                missing.append((labels[i], labels[j]))
            else:
                values[i, j] = values[j, i] = rho
    if missing:
        logger.warning("%d column pairs have no usable shared architectures", len(missing))
    return CorrelationMatrix(tuple(labels), values, tuple(missing))


def dataset_columns(dataset: "BenchmarkDataset", kind: str) -> Dict[str, Dict[str, float]]:
    """arch_id -> value maps for every device ('latency'), proxy ('proxy') or both ('all')."""
    if kind not in ("latency", "proxy", "all"):
        raise ArgumentError(f"unknown column kind '{kind}'")
    columns: Dict[str, Dict[str, float]] = {}
    if kind in ("latency", "all"):
        for device in dataset.device_ids:
            columns[device] = {r.arch_id: r.latencies[device] for r in dataset.records if device in r.latencies}
    if kind in ("proxy", "all"):
        for proxy in dataset.proxy_names:
            columns[proxy] = {r.arch_id: r.zcp[proxy] for r in dataset.records if proxy in r.zcp}
    return columns


def correlation_matrix(dataset: "BenchmarkDataset", kind: str = "latency") -> CorrelationMatrix:
    return correlation_from_columns(dataset_columns(dataset, kind))


def proxy_target_correlations(dataset: "BenchmarkDataset", target: str = "accuracy",
                              device: Optional[str] = None) -> pd.DataFrame:
    """Spearman of every proxy and every device latency against one target column."""
    target_col = {r.arch_id: r.target(target, device) for r in dataset.records}
    target_col = {k: v for k, v in target_col.items() if v is not None}
    rows = []
    for name, col in dataset_columns(dataset, "all").items():
        if target == "latency" and name == device:
            continue
        shared = sorted(set(col) & set(target_col))
        rho = safe_spearman([col[k] for k in shared], [target_col[k] for k in shared]) if len(shared) >= 2 else None
        rows.append({"feature": name, "kind": "proxy" if name in dataset.proxy_names else "device",
                     "rho": np.nan if rho is None else rho, "n": len(shared)})
    return pd.DataFrame(rows, columns=["feature", "kind", "rho", "n"])


def bucket_correlations(matrix: CorrelationMatrix, thresholds: Sequence[float] = BUCKET_THRESHOLDS) -> pd.DataFrame:
    """1 above the high threshold, 0.5 between, 0 below (NaN stays NaN)."""
    low, high = sorted(thresholds)
    v = matrix.values
    bucketed = np.where(v > high, 1.0, np.where(v > low, 0.5, 0.0))
    bucketed = np.where(np.isnan(v), np.nan, bucketed)
    return pd.DataFrame(bucketed, index=list(matrix.labels), columns=list(matrix.labels))


# ============================================================================
# DEVICE SPLITS
# ============================================================================

@dataclass(frozen=True)
class DeviceSplit:
    train: Tuple[str, ...]
    test: Tuple[str, ...]
    max_train_rho: Dict[str, float] = field(default_factory=dict)
    threshold: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ArgumentError(f"devices in both train and test: {sorted(overlap)}")


def closest_train_device(split: DeviceSplit, matrix: CorrelationMatrix) -> Dict[str, Tuple[str, float]]:
    """Per test device, the training device with the highest rho (first in train order on ties)."""
    for label in split.train + split.test:
        matrix.index(label)
    result = {}
    for test in split.test:
        best, best_rho = None, -np.inf
        for train in split.train:
            rho = matrix.rho(test, train)
            if not np.isnan(rho) and rho > best_rho:
                best, best_rho = train, rho
        if best is None:
            raise UndefinedCorrelationError(f"no training device has a defined rho with '{test}'")
        result[test] = (best, float(best_rho))
    return result


def build_adversarial_split(matrix: CorrelationMatrix, test_ids: Sequence[str], threshold: float,
                            candidates: Optional[Sequence[str]] = None) -> DeviceSplit:
    """
    Keep only training devices whose rho with every test device is below
    the threshold. A threshold of 1.0 keeps every candidate.
    """
    if not 0 < threshold <= 1:
        raise RangeError(f"threshold must lie in (0, 1], got {threshold}")
    test_ids = tuple(test_ids)
    for t in test_ids:
        matrix.index(t)
    pool = [d for d in (candidates or matrix.labels) if d not in test_ids]

    train: List[str] = []
    for device in pool:
        rhos = [matrix.rho(device, t) for t in test_ids]
        if threshold >= 1.0:
            keep = True
        elif any(np.isnan(r) for r in rhos):
            logger.warning("dropping '%s': correlation with a test device is unknown", device)
            keep = False
        else:
            keep = all(r < threshold for r in rhos)
        if keep:
            train.append(device)

    if not train:
        raise InfeasibleSplitError(f"no training device has rho < {threshold} with all of {list(test_ids)}")
    max_rho = {}
    for t in test_ids:
        rhos = [matrix.rho(d, t) for d in train]
        defined = [r for r in rhos if not np.isnan(r)]
        max_rho[t] = float(max(defined)) if defined else float("nan")
    return DeviceSplit(tuple(train), test_ids, max_rho, threshold)
