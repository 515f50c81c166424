"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Performance Predictor
=================================
MLP regressor over architecture encodings, optionally conditioned on a
hardware embedding.

    train_scratch    - fit from random init on one task
    register_device  - add a new device to a multi-device latency model
    finetune_device  - few-shot adaptation to that device
    finetune_space   - few-shot adaptation to another search space / task
    predict          - predictions in native units

Targets are min-max scaled to [0, 1] before the loss. Multi-device
models keep one scaler per device since latency magnitudes differ by
orders of magnitude across hardware.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import VERSION
from .config import TrainConfig, config_hash
from .dataio import BenchmarkDataset
from .encoding import (ArchitectureRecord, EncodingKind, EncodingMode, Normalizer, SpaceSchema,
                       encode_batch, encoding_dim, fit_normalizer)
from .errors import (ArgumentError, DeviceLookupError, IngestionError, NumericError, ShapeError,
                     StateError, UnsupportedTransferError)
from .hw_embedding import (DeviceEmbedding, DonorChoice, EmbeddingKind, build_device_embedding,
                           init_new_device)
from .metrics import safe_spearman
from .tensor_core import (LrSchedule, MlpParams, OptimizerState, adamw_step, cosine_lr, init_mlp,
                          mlp_backward_batch, mlp_forward_batch)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "archscope-checkpoint"
CHECKPOINT_VERSION = 1


# ============================================================================
# TARGETS & TASKS
# ============================================================================

@dataclass(frozen=True)
class TargetScaler:
    lo: float
    hi: float

    @classmethod
    def fit(cls, values) -> "TargetScaler":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ArgumentError("cannot fit a target scaler on no values")
        return cls(float(values.min()), float(values.max()))

    def transform(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        span = self.hi - self.lo
        if span <= 0:
            return np.full(values.shape, 0.5)
        return (values - self.lo) / span

    def inverse(self, scaled) -> np.ndarray:
        scaled = np.asarray(scaled, dtype=np.float64)
        # Written as a blend so the extrema come back exactly
        return (1.0 - scaled) * self.lo + scaled * self.hi


@dataclass(frozen=True)
class PredictionTask:
    """What to predict, where, and on which architectures."""
    kind: str
    space_id: str
    train_ids: Tuple[str, ...]
    eval_ids: Tuple[str, ...] = ()
    device_id: Optional[str] = None
    device_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("accuracy", "latency"):
            raise ArgumentError(f"unknown task kind '{self.kind}'")
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        object.__setattr__(self, "eval_ids", tuple(self.eval_ids))
        object.__setattr__(self, "device_ids", tuple(self.device_ids))
        overlap = set(self.train_ids) & set(self.eval_ids)
        if overlap:
            raise ArgumentError(f"{len(overlap)} arch ids in both train and eval sets")
        if self.kind == "latency" and not self.devices:
            raise ArgumentError("latency task needs a device")

    @property
    def devices(self) -> Tuple[str, ...]:
        if self.device_ids:
            return self.device_ids
        return (self.device_id,) if self.device_id else ()

    def check(self, dataset: BenchmarkDataset) -> None:
        if dataset.space_id != self.space_id:
            raise ArgumentError(f"task is for space '{self.space_id}', dataset is '{dataset.space_id}'")
        for arch_id in self.train_ids + self.eval_ids:
            dataset.get(arch_id)


def _targets(records: Sequence[ArchitectureRecord], kind: str, device_id: Optional[str]) -> np.ndarray:
    values = []
    for rec in records:
        value = rec.target(kind, device_id)
        if value is None:
            feature = "accuracy" if kind == "accuracy" else f"lat:{device_id}"
            raise IngestionError(f"{rec.arch_id}: missing target {feature}", arch_id=rec.arch_id, feature=feature)
        values.append(value)
    return np.array(values, dtype=np.float64)


# ============================================================================
# MODEL
# ============================================================================

@dataclass(frozen=True)
class PredictorModel:
    mlp: MlpParams
    mode: EncodingMode
    normalizer: Normalizer
    target_kind: str
    target_scaler: TargetScaler
    schema: Optional[SpaceSchema] = None
    target_device: Optional[str] = None
    embedding: Optional[DeviceEmbedding] = None
    device_scalers: Dict[str, TargetScaler] = field(default_factory=dict)
    provenance: Dict = field(default_factory=dict)
    train_losses: Tuple[float, ...] = ()

    def __post_init__(self):
        expected = self.encoding_size + (self.embedding.dim if self.embedding else 0)
        if self.mlp.input_dim != expected:
            raise ShapeError(f"MLP input {self.mlp.input_dim} != encoding {self.encoding_size}"
                             f" + embedding {self.embedding.dim if self.embedding else 0}")

    @property
    def encoding_size(self) -> int:
        return encoding_dim(self.mode, self.schema)

    @property
    def device_table(self):
        return self.embedding.table if self.embedding else None

    def scaler_for(self, device_id: Optional[str]) -> TargetScaler:
        if self.embedding is None:
            return self.target_scaler
        if device_id not in self.device_scalers:
            raise DeviceLookupError(f"device '{device_id}' has no target scaler")
        return self.device_scalers[device_id]


def _provenance(cfg: TrainConfig, **extra) -> Dict:
    return {"config_hash": config_hash(cfg.to_dict()), "seed": cfg.seed, "version": VERSION, **extra}


# ============================================================================
# TRAINING LOOP
# ============================================================================

def _run_epochs(mlp: MlpParams, X: np.ndarray, y: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
                emb_matrix: Optional[np.ndarray] = None, emb_index: Optional[np.ndarray] = None,
                trainable_rows: Optional[np.ndarray] = None
                ) -> Tuple[MlpParams, Optional[np.ndarray], List[float]]:
    """
    Minibatch AdamW with a per-epoch cosine schedule. Rows of emb_matrix
    are concatenated to X by emb_index; only rows flagged in
    trainable_rows move, and they are never weight-decayed.
    """
    n, enc_dim = X.shape
    train_emb = emb_matrix is not None and trainable_rows is not None and bool(np.any(trainable_rows))
    params = mlp.flat() + ([emb_matrix] if train_emb else [])
    mask = mlp.decay_mask(cfg.decay_biases) + ([False] if train_emb else [])
    opt = OptimizerState.for_params(params, cfg.beta1, cfg.beta2, cfg.eps, cfg.wd)
    schedule = LrSchedule(cfg.lr, cfg.min_lr, max(1, cfg.epochs))
    n_mlp = len(mlp.flat())
    losses: List[float] = []

    for epoch in range(cfg.epochs):
        lr = cosine_lr(schedule, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            current = MlpParams.from_flat(params[:n_mlp])
            inputs = X[batch]
            if emb_matrix is not None:
                E = params[-1] if train_emb else emb_matrix
                inputs = np.hstack([inputs, E[emb_index[batch]]])
            loss, grads = mlp_backward_batch(current, inputs, y[batch])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}", epoch=epoch)
            flat_grads = grads.flat()
            if train_emb:
                g_emb = np.zeros_like(params[-1])
                np.add.at(g_emb, emb_index[batch], grads.inputs[:, enc_dim:])
                g_emb[~trainable_rows] = 0.0
                flat_grads.append(g_emb)
            try:
                new_params, opt = adamw_step(params, flat_grads, opt, lr, mask)
            except NumericError as e:
                raise NumericError(f"{e} (epoch {epoch})", index=e.index, epoch=epoch) from None
            if train_emb:
                # Frozen rows stay bit-identical
                new_params[-1][~trainable_rows] = params[-1][~trainable_rows]
            params = new_params
            total += loss * len(batch)
        losses.append(total / n)
        logger.debug("epoch %d/%d lr=%.6f loss=%.6f", epoch + 1, cfg.epochs, lr, losses[-1])

    final = MlpParams.from_flat(params[:n_mlp])
    return final, (params[-1] if train_emb else emb_matrix), losses


def _device_samples(records: Sequence[ArchitectureRecord], devices: Sequence[str]):
    """(record, device ordinal) pairs for every measured latency."""
    pairs = []
    for rec in records:
        for i, dev in enumerate(devices):
            if dev in rec.latencies:
                pairs.append((rec, i))
    return pairs


def train_scratch(dataset: BenchmarkDataset, task: PredictionTask, mode: EncodingMode, config: TrainConfig,
                  embedding_kind: Optional[EmbeddingKind] = None) -> PredictorModel:
    """
    Fit a fresh predictor on task.train_ids. With an embedding kind, a
    latency task spanning several devices trains one model conditioned
    on the device representation.
    """
    if not task.train_ids:
        raise ArgumentError("training set is empty")
    task.check(dataset)
    rng = np.random.default_rng(config.seed)
    records = dataset.subset(task.train_ids)
    schema = dataset.schema if mode.kind.uses_vec else None
    norm = fit_normalizer(records, mode, config.impute_missing)
    if task.kind == "latency" and set(task.devices) & set(mode.device_list):
        logger.warning("target device(s) %s are also HWL reference devices",
                       sorted(set(task.devices) & set(mode.device_list)))

    if embedding_kind is None:
        device = task.devices[0] if task.kind == "latency" else None
        if task.kind == "latency" and len(task.devices) > 1:
            raise ArgumentError("multi-device latency training needs an embedding kind")
        y = _targets(records, task.kind, device)
        scaler = TargetScaler.fit(y)
        X = encode_batch(records, mode, norm, schema, config.impute_missing)
        mlp = init_mlp(X.shape[1], config.hidden_width, config.depth, rng)
        mlp, _, losses = _run_epochs(mlp, X, scaler.transform(y), config, rng)
        model = PredictorModel(mlp, mode, norm, task.kind, scaler, schema, device,
                               provenance=_provenance(config, space_id=dataset.space_id),
                               train_losses=tuple(losses))
        logger.info("Trained %s predictor on %d archs (final loss %.5f)", mode.kind.value, len(records),
                    losses[-1] if losses else float("nan"))
        return model

    if task.kind != "latency":
        raise ArgumentError("device embeddings apply to latency tasks only")
    devices = task.devices
    columns = {d: {r.arch_id: r.latencies[d] for r in records if d in r.latencies} for d in devices}
    embedding = build_device_embedding(embedding_kind, devices, rng, config.embedding_dim, columns,
                                       task.train_ids, config.num_reference_archs)
    pairs = _device_samples(records, devices)
    if not pairs:
        raise ArgumentError("no training latencies on the requested devices")
    scalers = {d: TargetScaler.fit(list(columns[d].values())) for d in devices if columns[d]}
    pair_records = [rec for rec, _ in pairs]
    emb_index = np.array([i for _, i in pairs])
    y = np.array([scalers[devices[i]].transform(rec.latencies[devices[i]]) for rec, i in pairs], dtype=np.float64)
    X = encode_batch(pair_records, mode, norm, schema, config.impute_missing)
    E = embedding.matrix()
    trainable = np.ones(len(devices), dtype=bool) if embedding.trainable else None
    mlp = init_mlp(X.shape[1] + embedding.dim, config.hidden_width, config.depth, rng)
    mlp, E, losses = _run_epochs(mlp, X, y, config, rng, E, emb_index, trainable)
    if embedding.trainable:
        embedding = embedding.with_matrix(E)
    logger.info("Trained %s/%s predictor on %d devices, %d samples", mode.kind.value,
                embedding.kind.value, len(devices), len(pairs))
    return PredictorModel(mlp, mode, norm, "latency", TargetScaler(0.0, 1.0), schema, None, embedding,
                          scalers, _provenance(config, space_id=dataset.space_id, devices=list(devices)),
                          tuple(losses))


# ============================================================================
# DEVICE TRANSFER
# ============================================================================

def register_device(model: PredictorModel, device_id: str, samples: Sequence[ArchitectureRecord],
                    init_samples: Optional[int] = None) -> Tuple[PredictorModel, Optional[DonorChoice]]:
    """
    Add a new device using its few measured samples. Table rows copy the
    most rank-correlated training device (over the first init_samples
    samples, all by default), Index takes the next ordinal, Sample reads
    the reference architectures among the samples.
    """
    if model.embedding is None:
        raise StateError("model has no device embedding")
    samples = list(samples)
    if not samples:
        raise ArgumentError("register_device needs at least one sample")
    missing = [r.arch_id for r in samples if device_id not in r.latencies]
    if missing:
        raise IngestionError(f"{len(missing)} samples lack latency on '{device_id}'",
                             arch_id=missing[0], feature=f"lat:{device_id}")
    emb = model.embedding
    donor = None

    if emb.kind is EmbeddingKind.TABLE:
        donors = samples[:init_samples] if init_samples else samples
        columns = {d: {r.arch_id: r.latencies[d] for r in donors if d in r.latencies} for d in emb.table.device_ids}
        donor = init_new_device(emb.table, [r.arch_id for r in donors],
                                [r.latencies[device_id] for r in donors], columns)
        emb = emb.register_table_row(device_id, donor.row)
        logger.info("Registered '%s' from donor '%s' (rho=%.3f)", device_id, donor.donor_id, donor.rho)
    elif emb.kind is EmbeddingKind.INDEX:
        emb = emb.register_index(device_id)
    else:
        emb = emb.register_sample(device_id, {r.arch_id: r.latencies[device_id] for r in samples})

    scalers = {**model.device_scalers,
               device_id: TargetScaler.fit([r.latencies[device_id] for r in samples])}
    return replace(model, embedding=emb, device_scalers=scalers), donor


def finetune_device(model: PredictorModel, device_id: str, samples: Sequence[ArchitectureRecord],
                    config: TrainConfig) -> PredictorModel:
    """All MLP weights plus the new device's row; every other row stays frozen."""
    if model.embedding is None:
        raise StateError("finetune_device needs a model with a device embedding")
    emb = model.embedding
    devices = emb.device_ids
    if device_id not in devices:
        raise DeviceLookupError(f"device '{device_id}' is not registered; call register_device first")
    samples = list(samples)
    if not samples:
        raise ArgumentError("finetune_device needs at least one sample")
    cfg = config.transfer()
    rng = np.random.default_rng(cfg.seed)

    ordinal = devices.index(device_id)
    y = model.scaler_for(device_id).transform(_targets(samples, "latency", device_id))
    X = encode_batch(samples, model.mode, model.normalizer, model.schema, cfg.impute_missing)
    E = emb.matrix()
    trainable = None
    if emb.trainable:
        trainable = np.zeros(len(devices), dtype=bool)
        trainable[ordinal] = True
    mlp, E, losses = _run_epochs(model.mlp, X, y, cfg, rng, E, np.full(len(samples), ordinal), trainable)
    if emb.trainable:
        emb = emb.with_matrix(E)
    provenance = {**model.provenance, "finetuned_device": device_id, "finetune_seed": cfg.seed}
    return replace(model, mlp=mlp, embedding=emb, provenance=provenance, train_losses=tuple(losses))


# ============================================================================
# SPACE / TASK TRANSFER
# ============================================================================

def finetune_space(model: PredictorModel, dataset: BenchmarkDataset, sample_ids: Sequence[str],
                   config: TrainConfig, target_kind: Optional[str] = None,
                   device_id: Optional[str] = None) -> PredictorModel:
    """
    Continue training on a few samples of another space (or task). Only
    ZCP and HWL encodings have the same length everywhere. The source
    normalizer is reused unless config.refit_normalizer is set; the
    target scaler is always refitted on the new samples.
    """
    if not model.mode.kind.space_independent:
        raise UnsupportedTransferError(f"{model.mode.kind.value} encoding depends on the search space layout")
    if model.embedding is not None:
        raise UnsupportedTransferError("space transfer of device-embedding models is not supported")
    sample_ids = list(sample_ids)
    if not sample_ids:
        raise ArgumentError("finetune_space needs at least one sample")
    kind = target_kind or model.target_kind
    device = device_id or model.target_device
    if kind == "latency" and not device:
        raise ArgumentError("latency transfer needs a device")
    cfg = config.transfer()
    rng = np.random.default_rng(cfg.seed)

    samples = dataset.subset(sample_ids)
    norm = fit_normalizer(samples, model.mode, cfg.impute_missing) if cfg.refit_normalizer else model.normalizer
    y = _targets(samples, kind, device if kind == "latency" else None)
    scaler = TargetScaler.fit(y)
    X = encode_batch(samples, model.mode, norm, None, cfg.impute_missing)
    mlp, _, losses = _run_epochs(model.mlp, X, scaler.transform(y), cfg, rng)
    provenance = {**model.provenance, "transferred_to": dataset.space_id, "finetune_seed": cfg.seed}
    return replace(model, mlp=mlp, normalizer=norm, target_kind=kind, target_scaler=scaler,
                   target_device=device if kind == "latency" else None,
                   provenance=provenance, train_losses=tuple(losses))


# ============================================================================
# PREDICTION
# ============================================================================

def predict(model: PredictorModel, records: Sequence[ArchitectureRecord], device_id: Optional[str] = None,
            impute_missing: bool = False) -> np.ndarray:
    """Predictions in native units (accuracy fraction or ms)."""
    records = list(records)
    if model.embedding is not None and device_id is None:
        raise ArgumentError("model has a device embedding; pass device_id")
    if model.embedding is None and device_id is not None and device_id != model.target_device:
        raise ArgumentError(f"model predicts for '{model.target_device}', not '{device_id}'")
    if not records:
        return np.zeros(0)
    X = encode_batch(records, model.mode, model.normalizer, model.schema, impute_missing)
    scaler = model.scaler_for(device_id)
    if model.embedding is not None:
        vec = model.embedding.vector(device_id)
        X = np.hstack([X, np.tile(vec, (X.shape[0], 1))])
    return scaler.inverse(mlp_forward_batch(model.mlp, X))


def evaluate(model: PredictorModel, dataset: BenchmarkDataset, arch_ids: Sequence[str],
             device_id: Optional[str] = None) -> float:
    """Spearman rho between predictions and measured targets (NaN if undefined)."""
    records = dataset.subset(arch_ids)
    device = device_id or model.target_device
    truth = _targets(records, model.target_kind, device if model.target_kind == "latency" else None)
    rho = safe_spearman(predict(model, records, device_id), truth)
    return float("nan") if rho is None else rho


# ============================================================================
# PROXY ABLATION
# ============================================================================

def rank_proxies(dataset: BenchmarkDataset, arch_ids: Sequence[str], proxies: Sequence[str],
                 target_kind: str = "accuracy", device_id: Optional[str] = None) -> List[Tuple[str, float]]:
    """Proxies sorted by |rho| with the target on arch_ids, strongest first."""
    records = dataset.subset(arch_ids)
    truth = _targets(records, target_kind, device_id)
    scored = []
    for p in proxies:
        values = [r.zcp.get(p) for r in records]
        keep = [i for i, v in enumerate(values) if v is not None]
        rho = safe_spearman([values[i] for i in keep], truth[keep]) if len(keep) >= 2 else None
        scored.append((p, 0.0 if rho is None else abs(rho)))
    return sorted(scored, key=lambda item: (-item[1], item[0]))


def ablate_proxies(dataset: BenchmarkDataset, task: PredictionTask, proxies: Sequence[str],
                   removals: Sequence[int], config: TrainConfig) -> pd.DataFrame:
    """
    Retrain ZCP predictors after dropping the k best ("good") or k worst
    ("bad") proxies, ranked on the training set.
    """
    ranked = [p for p, _ in rank_proxies(dataset, task.train_ids, proxies, task.kind, task.device_id)]
    rows = []
    for k in removals:
        if k >= len(ranked):
            logger.warning("cannot remove %d of %d proxies; skipping", k, len(ranked))
            continue
        for removed in (("none",) if k == 0 else ("good", "bad")):
            dropped = ranked[:k] if removed == "good" else ranked[len(ranked) - k:] if k else []
            kept = [p for p in proxies if p not in dropped]
            mode = EncodingMode(EncodingKind.ZCP, tuple(kept))
            model = train_scratch(dataset, task, mode, config)
            rows.append({"removed": removed, "k": k, "seed": config.seed,
                         "rho": evaluate(model, dataset, task.eval_ids),
                         "dropped": ";".join(dropped)})
    return pd.DataFrame(rows, columns=["removed", "k", "seed", "rho", "dropped"])


# ============================================================================
# CHECKPOINTS
# ============================================================================

def save_checkpoint(model: PredictorModel, path: Path) -> None:
    """Versioned JSON; float repr round-trips exactly."""
    data = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "tool_version": VERSION,
        "mode": model.mode.to_dict(),
        "normalizer": model.normalizer.to_dict(),
        "schema": None if model.schema is None else {
            "space_id": model.schema.space_id, "node_count": model.schema.node_count,
            "op_vocabulary": list(model.schema.op_vocabulary), "vec_length": model.schema.vec_length},
        "target_kind": model.target_kind,
        "target_device": model.target_device,
        "target_scaler": [model.target_scaler.lo, model.target_scaler.hi],
        "device_scalers": {d: [s.lo, s.hi] for d, s in model.device_scalers.items()},
        "embedding": None if model.embedding is None else model.embedding.to_dict(),
        "weights": [w.tolist() for w in model.mlp.weights],
        "biases": [b.tolist() for b in model.mlp.biases],
        "provenance": model.provenance,
        "train_losses": list(model.train_losses),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=1)


def load_checkpoint(path: Path, dataset: Optional[BenchmarkDataset] = None) -> PredictorModel:
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    if data.get("format") != CHECKPOINT_FORMAT or data.get("format_version") != CHECKPOINT_VERSION:
        raise StateError(f"{path} is not a version {CHECKPOINT_VERSION} ArchScope checkpoint")

    schema = SpaceSchema(**data["schema"]) if data["schema"] else None
    model = PredictorModel(
        mlp=MlpParams(tuple(np.array(w, dtype=np.float64) for w in data["weights"]),
                      tuple(np.array(b, dtype=np.float64) for b in data["biases"])),
        mode=EncodingMode.from_dict(data["mode"]),
        normalizer=Normalizer.from_dict(data["normalizer"]),
        target_kind=data["target_kind"],
        target_scaler=TargetScaler(*data["target_scaler"]),
        schema=schema,
        target_device=data["target_device"],
        embedding=DeviceEmbedding.from_dict(data["embedding"]) if data["embedding"] else None,
        device_scalers={d: TargetScaler(*v) for d, v in data["device_scalers"].items()},
        provenance=data["provenance"],
        train_losses=tuple(data["train_losses"]),
    )
    if dataset is not None:
        needed = encoding_dim(model.mode, dataset.schema if model.mode.kind.uses_vec else None)
        if needed != model.encoding_size:
            raise ShapeError(f"dataset '{dataset.space_id}' encodes to {needed} features, "
                             f"checkpoint expects {model.encoding_size}")
    return model
