"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Benchmark Data
==========================
Loads and saves tabular NAS benchmark files, draws train/eval splits and
generates synthetic benchmarks with controllable device correlation.

Dataset file: one JSON object per line
    {"arch_id": "a0", "vec": [...], "zcp": {...}, "latency": {...}, "accuracy": 0.91}
Blank lines and lines starting with '#' are ignored. Latencies are in ms;
a per-file unit multiplier converts other units on load.

Schema file (YAML): space_id, node_count, op_vocabulary, vec_length.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy.special import expit, ndtr

from .config import DEFAULT_PROXIES
from .encoding import ArchitectureRecord, SpaceSchema
from .errors import ArgumentError, IngestionError, IntegrityError, ParseError, SpecError

logger = logging.getLogger(__name__)

RECORD_KEYS = {"arch_id", "space_id", "vec", "zcp", "latency", "accuracy"}
DEFAULT_OPS = ("none", "skip_connect", "conv_1x1", "conv_3x3", "avg_pool_3x3")


# ============================================================================
# DATASET
# ============================================================================

@dataclass(frozen=True)
class BenchmarkDataset:
    """One search space's records plus the devices and proxies they carry."""
    space_id: str
    records: Tuple[ArchitectureRecord, ...]
    schema: Optional[SpaceSchema] = None
    device_ids: Tuple[str, ...] = ()
    proxy_names: Tuple[str, ...] = ()
    _index: Dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        index: Dict[str, int] = {}
        for i, rec in enumerate(records):
            if rec.arch_id in index:
                raise IntegrityError(f"duplicate arch_id '{rec.arch_id}' in space '{self.space_id}'")
            index[rec.arch_id] = i
        # first-seen order, so a saved file reloads with the same feature order
        devices = self.device_ids or list(dict.fromkeys(d for r in records for d in r.latencies))
        proxies = self.proxy_names or list(dict.fromkeys(p for r in records for p in r.zcp))
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "device_ids", tuple(devices))
        object.__setattr__(self, "proxy_names", tuple(proxies))
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def arch_ids(self) -> List[str]:
        return [r.arch_id for r in self.records]

    def get(self, arch_id: str) -> ArchitectureRecord:
        try:
            return self.records[self._index[arch_id]]
        except KeyError:
            raise ArgumentError(f"arch_id '{arch_id}' not in space '{self.space_id}'") from None

    def subset(self, arch_ids: Sequence[str]) -> List[ArchitectureRecord]:
        return [self.get(a) for a in arch_ids]

    def partial_records(self) -> Dict[str, List[str]]:
        """arch_id -> list of absent 'lat:<device>' / 'zcp:<proxy>' features."""
        partial = {}
        for rec in self.records:
            missing = [f"lat:{d}" for d in self.device_ids if d not in rec.latencies]
            missing += [f"zcp:{p}" for p in self.proxy_names if p not in rec.zcp]
            if missing:
                partial[rec.arch_id] = missing
        return partial


# ============================================================================
# LOAD / SAVE
# ============================================================================

def load_schema(path: Path) -> SpaceSchema:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f) or {}
    try:
        return SpaceSchema(str(data["space_id"]), int(data["node_count"]),
                           tuple(data["op_vocabulary"]), int(data["vec_length"]))
    except KeyError as e:
        raise SpecError(f"schema file {path} lacks field {e}") from None


def save_schema(schema: SpaceSchema, path: Path) -> None:
    data = {"space_id": schema.space_id, "node_count": schema.node_count,
            "op_vocabulary": list(schema.op_vocabulary), "vec_length": schema.vec_length}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(data, f, sort_keys=False)


def _parse_line(line: str, line_no: int, space_id: str, unit_multiplier: float) -> ArchitectureRecord:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {line_no}: invalid JSON ({e.msg})", line_no) from None
    if not isinstance(data, dict):
        raise ParseError(f"line {line_no}: record must be a JSON object", line_no)
    unknown = sorted(set(data) - RECORD_KEYS)
    if unknown:
        raise ParseError(f"line {line_no}: unknown fields {unknown}", line_no)
    if not isinstance(data.get("arch_id"), str) or not data["arch_id"]:
        raise ParseError(f"line {line_no}: missing arch_id", line_no)
    for key in ("zcp", "latency"):
        if not isinstance(data.get(key, {}), dict):
            raise ParseError(f"line {line_no}: '{key}' must be a mapping", line_no)
    if data.get("vec") is not None and not isinstance(data["vec"], list):
        raise ParseError(f"line {line_no}: 'vec' must be an integer array", line_no)

    try:
        latencies = {d: float(v) * unit_multiplier for d, v in data.get("latency", {}).items()}
        return ArchitectureRecord(
            arch_id=data["arch_id"],
            space_id=data.get("space_id", space_id),
            vec=data.get("vec"),
            zcp=data.get("zcp", {}),
            latencies=latencies,
            accuracy=data.get("accuracy"),
        )
    except (TypeError, ValueError) as e:
        raise ParseError(f"line {line_no}: {e}", line_no) from None
    except IngestionError as e:
        raise ParseError(f"line {line_no}: {e}", line_no) from None


def load_dataset(path: Path, schema_path: Optional[Path] = None, unit_multiplier: float = 1.0,
                 space_id: Optional[str] = None) -> BenchmarkDataset:
    """Parse a line-record dataset file and validate it against its schema."""
    path = Path(path)
    schema = load_schema(schema_path) if schema_path else None
    space = space_id or (schema.space_id if schema else path.stem)
    if unit_multiplier <= 0:
        raise ArgumentError(f"unit_multiplier must be > 0, got {unit_multiplier}")

    records = []
    seen: Dict[str, int] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rec = _parse_line(line, line_no, space, unit_multiplier)
            if rec.arch_id in seen:
                raise IntegrityError(f"duplicate arch_id '{rec.arch_id}' on lines {seen[rec.arch_id]} and {line_no}")
            seen[rec.arch_id] = line_no
            if schema is not None and rec.vec is not None:
                try:
                    schema.validate_vec(rec.vec, rec.arch_id)
                except IngestionError as e:
                    raise ParseError(f"line {line_no}: {e}", line_no) from None
            records.append(rec)

    dataset = BenchmarkDataset(space, tuple(records), schema)
    partial = dataset.partial_records()
    if partial:
        logger.warning("%s: %d of %d records are partial", path.name, len(partial), len(dataset))
        for arch_id, missing in list(partial.items())[:5]:
            logger.debug("  %s lacks %s", arch_id, missing)
    logger.info("Loaded %d records from %s (%d devices, %d proxies)",
                len(dataset), path.name, len(dataset.device_ids), len(dataset.proxy_names))
    return dataset


def record_to_dict(rec: ArchitectureRecord) -> Dict:
    data: Dict = {"arch_id": rec.arch_id, "space_id": rec.space_id}
    if rec.vec is not None:
        data["vec"] = list(rec.vec)
    if rec.zcp:
        data["zcp"] = dict(rec.zcp)
    if rec.latencies:
        data["latency"] = dict(rec.latencies)
    if rec.accuracy is not None:
        data["accuracy"] = rec.accuracy
    return data


def save_dataset(dataset: BenchmarkDataset, path: Path) -> None:
    """
    Write one JSON line per record; floats keep their shortest exact repr.
    Proxy and latency keys follow the dataset order so a reload rebuilds it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for rec in dataset.records:
            data = record_to_dict(rec)
            if "zcp" in data:
                data["zcp"] = {p: rec.zcp[p] for p in dataset.proxy_names if p in rec.zcp}
            if "latency" in data:
                data["latency"] = {d: rec.latencies[d] for d in dataset.device_ids if d in rec.latencies}
            f.write(json.dumps(data) + "\n")


# ============================================================================
# SPLITS
# ============================================================================

def make_split(dataset: BenchmarkDataset, train_fraction: Optional[float] = None,
               train_count: Optional[int] = None, seed: int = 0,
               eval_count: Optional[int] = None,
               pool: Optional[Sequence[str]] = None) -> Tuple[List[str], List[str]]:
    """
    Uniform random disjoint split. Exactly one of train_fraction and
    train_count must be given; eval is the remainder, optionally capped.
    """
    if (train_fraction is None) == (train_count is None):
        raise ArgumentError("give exactly one of train_fraction or train_count")
    ids = list(pool) if pool is not None else dataset.arch_ids
    n = len(ids)
    if train_fraction is not None:
        if not 0.0 <= train_fraction <= 1.0:
            raise ArgumentError(f"train_fraction must lie in [0, 1], got {train_fraction}")
        train_count = int(math.floor(train_fraction * n + 1e-9))
    if train_count < 0 or train_count > n:
        raise ArgumentError(f"requested {train_count} train ids but only {n} architectures exist")

    order = np.random.default_rng(seed).permutation(n)
    train = [ids[i] for i in order[:train_count]]
    rest = [ids[i] for i in order[train_count:]]
    if eval_count is not None:
        rest = rest[:eval_count]
    if not rest:
        logger.warning("split of %s leaves the eval set empty", dataset.space_id)
    return train, rest


# ============================================================================
# SYNTHETIC BENCHMARKS
# ============================================================================

def spearman_for_pearson(r: float) -> float:
    """Spearman rho of a bivariate Gaussian with Pearson correlation r."""
    return 6.0 / math.pi * math.asin(r / 2.0)


def pearson_for_spearman(rho: float) -> float:
    return 2.0 * math.sin(math.pi * rho / 6.0)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Latent-factor benchmark. Each architecture draws u ~ N(0, I_k):
        latency_h = scale_h * softplus(w_h . u + e_h)
        proxy_p   = v_p . u + e_p
        accuracy  = sigmoid(t . u + e_a)
    Vec bits are thresholded projections of u plus vec_noise.
    Loadings left as None are drawn from N(0, 1) with the SyntheticSpec seed.
    """
    n_archs: int = 1000
    n_devices: int = 4
    n_proxies: int = 12
    latent_dim: int = 8
    device_loadings: Optional[np.ndarray] = None
    proxy_loadings: Optional[np.ndarray] = None
    target_weights: Optional[np.ndarray] = None
    device_noise: float = 0.0
    proxy_noise: float = 0.1
    accuracy_noise: float = 0.05
    vec_noise: float = 0.5
    device_scales: Optional[np.ndarray] = None
    seed: int = 0
    space_id: str = "synthetic"
    node_count: int = 8
    op_slots: int = 3
    op_vocabulary: Tuple[str, ...] = DEFAULT_OPS
    device_ids: Optional[Tuple[str, ...]] = None
    proxy_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.n_archs < 2 or self.latent_dim < 1 or self.n_devices < 0 or self.n_proxies < 0:
            raise SpecError("need n_archs >= 2, latent_dim >= 1 and non-negative device/proxy counts")
        for name in ("device_noise", "proxy_noise", "accuracy_noise", "vec_noise"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise SpecError(f"{name} must be finite and >= 0, got {value}")
        for name, rows in (("device_loadings", self.n_devices), ("proxy_loadings", self.n_proxies)):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.array(value, dtype=np.float64)
            if arr.ndim == 1 and rows == 1:
                arr = arr[None, :]
            if arr.shape != (rows, self.latent_dim):
                raise SpecError(f"{name} must have shape ({rows}, {self.latent_dim}), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise SpecError(f"{name} contains non-finite entries")
            zero = [i for i in range(rows) if not np.any(arr[i])]
            if zero:
                raise SpecError(f"{name} rows {zero} are all zero")
            object.__setattr__(self, name, arr)
        if self.target_weights is not None:
            t = np.array(self.target_weights, dtype=np.float64).reshape(-1)
            if t.shape != (self.latent_dim,) or not np.all(np.isfinite(t)) or not np.any(t):
                raise SpecError(f"target_weights must be a finite non-zero vector of length {self.latent_dim}")
            object.__setattr__(self, "target_weights", t)
        if self.device_scales is not None:
            s = np.array(self.device_scales, dtype=np.float64).reshape(-1)
            if s.shape != (self.n_devices,) or not np.all(s > 0):
                raise SpecError(f"device_scales must be {self.n_devices} positive numbers")
            object.__setattr__(self, "device_scales", s)
        if self.device_ids is not None and len(self.device_ids) != self.n_devices:
            raise SpecError(f"{len(self.device_ids)} device ids for {self.n_devices} devices")
        if self.proxy_names is not None and len(self.proxy_names) != self.n_proxies:
            raise SpecError(f"{len(self.proxy_names)} proxy names for {self.n_proxies} proxies")

    @property
    def schema(self) -> SpaceSchema:
        adjacency = self.node_count * (self.node_count - 1) // 2
        return SpaceSchema(self.space_id, self.node_count, tuple(self.op_vocabulary), adjacency + self.op_slots)

    def device_names(self) -> Tuple[str, ...]:
        return tuple(self.device_ids or [f"dev{i}" for i in range(self.n_devices)])

    def proxy_names_or_default(self) -> Tuple[str, ...]:
        if self.proxy_names:
            return tuple(self.proxy_names)
        base = list(DEFAULT_PROXIES)
        if self.n_proxies <= len(base):
            return tuple(base[:self.n_proxies])
        return tuple(base + [f"proxy{i}" for i in range(len(base), self.n_proxies)])

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticSpec":
        values = dict(data)
        for key in ("op_vocabulary", "device_ids", "proxy_names"):
            if values.get(key) is not None:
                values[key] = tuple(values[key])
        try:
            return cls(**values)
        except TypeError as e:
            raise SpecError(f"bad synthetic spec: {e}") from None


def _draw_loadings(spec: SyntheticSpec, rng: np.random.Generator):
    k = spec.latent_dim
    # Draw order is fixed so supplying one block does not shift the others
    drawn_dev = rng.standard_normal((spec.n_devices, k))
    drawn_proxy = rng.standard_normal((spec.n_proxies, k))
    drawn_target = rng.standard_normal(k)
    dev = spec.device_loadings if spec.device_loadings is not None else drawn_dev
    proxy = spec.proxy_loadings if spec.proxy_loadings is not None else drawn_proxy
    target = spec.target_weights if spec.target_weights is not None else drawn_target
    return dev, proxy, target


def analytic_device_rho(spec: SyntheticSpec, i: int, j: int) -> float:
    """Spearman rho the generator targets between devices i and j."""
    if spec.device_loadings is None:
        raise ArgumentError("analytic rho needs explicit device loadings")
    w = spec.device_loadings
    var_i = float(w[i] @ w[i]) + spec.device_noise ** 2
    var_j = float(w[j] @ w[j]) + spec.device_noise ** 2
    r = float(w[i] @ w[j]) / math.sqrt(var_i * var_j)
    return spearman_for_pearson(r)


def generate_synthetic(spec: SyntheticSpec) -> BenchmarkDataset:
    rng = np.random.default_rng(spec.seed)
    dev_w, proxy_w, target_w = _draw_loadings(spec, rng)
    n, k = spec.n_archs, spec.latent_dim
    schema = spec.schema

    u = rng.standard_normal((n, k))
    lat_pre = u @ dev_w.T + spec.device_noise * rng.standard_normal((n, spec.n_devices))
    latencies = np.logaddexp(0.0, lat_pre)
    if spec.device_scales is not None:
        latencies = latencies * spec.device_scales
    proxies = u @ proxy_w.T + spec.proxy_noise * rng.standard_normal((n, spec.n_proxies))
    accuracy = expit(u @ target_w + spec.accuracy_noise * rng.standard_normal(n))

    adj_w = rng.standard_normal((schema.adjacency_bits, k))
    op_w = rng.standard_normal((schema.op_slots, k)) / math.sqrt(k)
    adj = (u @ adj_w.T + spec.vec_noise * rng.standard_normal((n, schema.adjacency_bits))) > 0
    op_q = ndtr(u @ op_w.T + spec.vec_noise * rng.standard_normal((n, schema.op_slots)))
    ops = np.minimum((op_q * len(schema.op_vocabulary)).astype(int), len(schema.op_vocabulary) - 1)

    devices = spec.device_names()
    proxy_names = spec.proxy_names_or_default()
    # Latencies must stay strictly positive after float rounding
    latencies = np.maximum(latencies, 1e-12)
    records = []
    for a in range(n):
        records.append(ArchitectureRecord(
            arch_id=f"{spec.space_id}-{a:05d}",
            space_id=spec.space_id,
            vec=tuple(int(b) for b in adj[a]) + tuple(int(o) for o in ops[a]),
            zcp={p: float(proxies[a, j]) for j, p in enumerate(proxy_names)},
            latencies={d: float(latencies[a, j]) for j, d in enumerate(devices)},
            accuracy=float(accuracy[a]),
        ))
    logger.info("Generated synthetic space '%s': %d archs, %d devices, %d proxies",
                spec.space_id, n, len(devices), len(proxy_names))
    return BenchmarkDataset(spec.space_id, tuple(records), schema, devices, proxy_names)


def _orthonormal(latent_dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if count > latent_dim:
        raise SpecError(f"need latent_dim >= {count} for {count} orthogonal directions, got {latent_dim}")
    q, _ = np.linalg.qr(rng.standard_normal((latent_dim, count)))
    return q.T


def uniform_correlation_loadings(n_devices: int, rho: float, latent_dim: int,
                                 rng: np.random.Generator, spearman: bool = True) -> np.ndarray:
    """Unit loadings whose devices all share the same pairwise correlation."""
    r = pearson_for_spearman(rho) if spearman else rho
    if not 0.0 <= r <= 1.0:
        raise SpecError(f"uniform correlation must lie in [0, 1], got {rho}")
    basis = _orthonormal(latent_dim, n_devices + 1, rng)
    common, specific = basis[0], basis[1:]
    return math.sqrt(r) * common + math.sqrt(1.0 - r) * specific


def anchored_correlation_loadings(rhos: Sequence[float], latent_dim: int,
                                  rng: np.random.Generator, spearman: bool = True) -> np.ndarray:
    """Row 0 is the anchor device; row i+1 correlates with it at rhos[i]."""
    basis = _orthonormal(latent_dim, len(rhos) + 1, rng)
    anchor = basis[0]
    rows = [anchor]
    for rho, s in zip(rhos, basis[1:]):
        r = pearson_for_spearman(rho) if spearman else rho
        if not -1.0 <= r <= 1.0:
            raise SpecError(f"correlation {rho} outside [-1, 1]")
        rows.append(r * anchor + math.sqrt(max(0.0, 1.0 - r * r)) * s)
    return np.vstack(rows)


def generate_space_pair(spec: SyntheticSpec, target_rho: float, second_space_id: str = "synthetic_b",
                        second_node_count: int = 6, seed: int = 0
                        ) -> Tuple[BenchmarkDataset, BenchmarkDataset]:
    """
    Two search spaces sharing proxy and device loadings. The second space's
    accuracy weights correlate with the first's at target_rho; its Vec
    layout differs, so only ZCP/HWL encodings line up across the pair.
    """
    if not -1.0 <= target_rho <= 1.0:
        raise SpecError(f"target_rho must lie in [-1, 1], got {target_rho}")
    rng = np.random.default_rng(seed)
    dev_w, proxy_w, target_w = _draw_loadings(spec, rng)
    norm = float(np.linalg.norm(target_w))
    t_hat = target_w / norm
    other = rng.standard_normal(spec.latent_dim)
    other = other - (other @ t_hat) * t_hat
    if np.linalg.norm(other) < 1e-12:
        raise SpecError("latent_dim too small to build a second target direction")
    other = other / np.linalg.norm(other)
    target_b = norm * (target_rho * t_hat + math.sqrt(1.0 - target_rho ** 2) * other)

    shared = dict(device_loadings=dev_w, proxy_loadings=proxy_w)
    spec_a = replace(spec, target_weights=target_w, **shared)
    spec_b = replace(spec, target_weights=target_b, space_id=second_space_id,
                     node_count=second_node_count, seed=spec.seed + 1, **shared)
    return generate_synthetic(spec_a), generate_synthetic(spec_b)
