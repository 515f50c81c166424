"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Configuration
=========================
Predictor defaults, training configs, YAML experiment configs and
their schema, config hashing and logging setup.

Experiment configs live in configs/*.yaml, one file per experiment.
Command-line flags override file values.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import yaml

from .errors import ConfigError

DATA_ROOT_ENV = "ARCHSCOPE_DATA_ROOT"
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# ============================================================================
# PREDICTOR DEFAULTS
# ============================================================================

class PredictorDefaults:
    """Published transfer-learning hyperparameters for the MLP predictor."""

    # Architecture
    DEPTH = 4
    HIDDEN_WIDTH = 128

    # Pre-training
    LR = 0.004
    EPOCHS = 250
    BATCH_SIZE = 128
    WEIGHT_DECAY = 0.0005
    MIN_LR = 0.0

    # Few-shot transfer
    TRANSFER_LR = 0.0004
    TRANSFER_EPOCHS = 50

    # AdamW constants (only lr/wd are published)
    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8
    DECAY_BIASES = False

    # Hardware embedding
    EMBEDDING_DIM = 8
    EMBEDDING_INIT = 0.1
    NUM_REFERENCE_ARCHS = 10

    # Transfer-time feature clipping
    CLIP_LOW = -0.5
    CLIP_HIGH = 1.5


# Zero-cost proxies carried by NAS-Bench-Suite-Zero style exports
DEFAULT_PROXIES = [
    "fisher", "flops", "grad_norm", "grasp", "l2_norm", "jacov",
    "nwot", "params", "plain", "snip", "synflow", "zen",
]


@dataclass(frozen=True)
class TrainConfig:
    """Everything that controls one predictor training run."""
    epochs: int = PredictorDefaults.EPOCHS
    lr: float = PredictorDefaults.LR
    wd: float = PredictorDefaults.WEIGHT_DECAY
    batch_size: int = PredictorDefaults.BATCH_SIZE
    seed: int = 0
    min_lr: float = PredictorDefaults.MIN_LR
    hidden_width: int = PredictorDefaults.HIDDEN_WIDTH
    depth: int = PredictorDefaults.DEPTH
    beta1: float = PredictorDefaults.BETA1
    beta2: float = PredictorDefaults.BETA2
    eps: float = PredictorDefaults.EPS
    decay_biases: bool = PredictorDefaults.DECAY_BIASES
    transfer_lr: float = PredictorDefaults.TRANSFER_LR
    transfer_epochs: int = PredictorDefaults.TRANSFER_EPOCHS
    embedding_dim: int = PredictorDefaults.EMBEDDING_DIM
    num_reference_archs: int = PredictorDefaults.NUM_REFERENCE_ARCHS
    init_samples: Optional[int] = None
    impute_missing: bool = False
    refit_normalizer: bool = False

    def __post_init__(self):
        problems = []
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.depth < 1:
            problems.append(f"depth must be >= 1, got {self.depth}")
        if self.hidden_width < 1:
            problems.append(f"hidden_width must be >= 1, got {self.hidden_width}")
        if not 0 <= self.min_lr <= self.lr:
            problems.append(f"min_lr must lie in [0, lr], got {self.min_lr}")
        if self.transfer_epochs < 0 or self.transfer_lr <= 0:
            problems.append("transfer_epochs must be >= 0 and transfer_lr > 0")
        if problems:
            raise ConfigError("Invalid training config", problems)

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> "TrainConfig":
        values = dict(values or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError("Unknown training config keys", [f"unknown key '{k}'" for k in unknown])
        return cls(**values)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))

    def transfer(self) -> "TrainConfig":
        """Fine-tuning variant: transfer lr and epochs become the active ones."""
        return replace(self, lr=self.transfer_lr, epochs=self.transfer_epochs,
                       min_lr=min(self.min_lr, self.transfer_lr))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ============================================================================
# EXPERIMENT CONFIG SCHEMA
# ============================================================================

class Field(NamedTuple):
    types: Tuple[type, ...]
    required: bool = False
    item_type: Optional[Tuple[type, ...]] = None
    choices: Optional[Tuple[Any, ...]] = None


NUMBER = (int, float)
MODES = ("Vec", "ZCP", "HWL", "ZCPVec", "HWLVec")
EMBEDDINGS = ("Sample", "Index", "Table")
TARGETS = ("accuracy", "latency")

COMMON_FIELDS = {
    "command": Field((str,), True),
    "seeds": Field((list,), item_type=(int,)),
    "out_dir": Field((str,)),
    "workers": Field((int,)),
    "train": Field((dict,)),
    "plots": Field((bool,)),
    "unit_multiplier": Field(NUMBER),
}

CONFIG_SCHEMAS: Dict[str, Dict[str, Field]] = {
    "train": {
        "dataset": Field((str,), True),
        "schema": Field((str,)),
        "modes": Field((list,), True, (str,), MODES),
        "budgets": Field((list,), True, (int,)),
        "target": Field((str,), choices=TARGETS),
        "device": Field((str,)),
        "proxies": Field((list,), item_type=(str,)),
        "reference_devices": Field((list,), item_type=(str,)),
        "eval_count": Field((int,)),
    },
    "transfer-device": {
        "dataset": Field((str,), True),
        "schema": Field((str,)),
        "train_devices": Field((list,), item_type=(str,)),
        "test_devices": Field((list,), True, (str,)),
        "pretrain_budgets": Field((list,), item_type=(int,)),
        "adapt_budget": Field((int,)),
        "modes": Field((list,), item_type=(str,), choices=MODES),
        "embeddings": Field((list,), item_type=(str,), choices=EMBEDDINGS),
        "adversarial_thresholds": Field((list,), item_type=NUMBER),
        "save_models": Field((bool,)),
        "proxies": Field((list,), item_type=(str,)),
        "reference_devices": Field((list,), item_type=(str,)),
    },
    "transfer-space": {
        "datasets": Field((list,), True, (str,)),
        "schemas": Field((list,), item_type=(str,)),
        "mode": Field((str,), True, choices=MODES),
        "target": Field((str,), choices=TARGETS),
        "device": Field((str,)),
        "proxies": Field((list,), item_type=(str,)),
        "reference_devices": Field((list,), item_type=(str,)),
        "source_fraction": Field(NUMBER),
        "budgets": Field((list,), True, (int,)),
    },
    "search": {
        "dataset": Field((str,), True),
        "schema": Field((str,)),
        "modes": Field((list,), True, (str,), MODES),
        "budget": Field((int,), True),
        "batch": Field((int,)),
        "target": Field((str,), choices=TARGETS),
        "device": Field((str,)),
        "top_fraction": Field(NUMBER),
        "proxies": Field((list,), item_type=(str,)),
        "reference_devices": Field((list,), item_type=(str,)),
    },
    "gen-synthetic": {
        "synthetic": Field((dict,), True),
        "output": Field((str,), True),
        "schema_output": Field((str,)),
        "pair": Field((dict,)),
    },
    "eval": {
        "dataset": Field((str,), True),
        "schema": Field((str,)),
        "test_devices": Field((list,), item_type=(str,)),
        "thresholds": Field((list,), item_type=NUMBER),
        "target": Field((str,), choices=TARGETS),
        "device": Field((str,)),
        "bucket": Field((bool,)),
    },
    "ablate-proxies": {
        "dataset": Field((str,), True),
        "schema": Field((str,)),
        "removals": Field((list,), True, (int,)),
        "budget": Field((int,), True),
        "target": Field((str,), choices=TARGETS),
        "device": Field((str,)),
        "proxies": Field((list,), item_type=(str,)),
    },
}


def _type_ok(value: Any, types: Tuple[type, ...]) -> bool:
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool) and bool not in types:
        return False
    return isinstance(value, types)


def validate_config(command: str, cfg: Dict[str, Any]) -> None:
    """Check a config against CONFIG_SCHEMAS, reporting every problem at once."""
    if command not in CONFIG_SCHEMAS:
        raise ConfigError(f"Unknown command '{command}'", [f"choose one of {sorted(CONFIG_SCHEMAS)}"])
    schema = {**COMMON_FIELDS, **CONFIG_SCHEMAS[command]}
    problems: List[str] = []

    for key in sorted(set(cfg) - set(schema)):
        problems.append(f"unknown key '{key}'")

    for key, spec in schema.items():
        if key not in cfg:
            if spec.required:
                problems.append(f"missing required key '{key}'")
            continue
        value = cfg[key]
        if not _type_ok(value, spec.types):
            problems.append(f"'{key}' must be {'/'.join(t.__name__ for t in spec.types)}, got {type(value).__name__}")
            continue
        if isinstance(value, list) and spec.required and not value:
            problems.append(f"'{key}' must not be empty")
            continue
        items = value if isinstance(value, list) else [value]
        if isinstance(value, list) and spec.item_type:
            bad = [v for v in value if not _type_ok(v, spec.item_type)]
            if bad:
                problems.append(f"'{key}' entries must be {'/'.join(t.__name__ for t in spec.item_type)}: {bad}")
        if spec.choices:
            bad = [v for v in items if v not in spec.choices]
            if bad:
                problems.append(f"'{key}' has invalid values {bad}; allowed {list(spec.choices)}")

    if cfg.get("command", command) != command:
        problems.append(f"config command '{cfg.get('command')}' does not match '{command}'")
    if "train" in cfg and isinstance(cfg["train"], dict):
        try:
            TrainConfig.from_dict(cfg["train"])
        except ConfigError as e:
            problems.extend(f"train.{d}" for d in e.diagnostics)
    for key in ("budgets", "pretrain_budgets", "removals"):
        if isinstance(cfg.get(key), list) and any(isinstance(b, int) and b < 0 for b in cfg[key]):
            problems.append(f"'{key}' entries must be >= 0")
    for key in ("thresholds", "adversarial_thresholds"):
        values = cfg.get(key)
        if isinstance(values, list) and any(_type_ok(t, NUMBER) and not 0 < t <= 1 for t in values):
            problems.append(f"'{key}' entries must lie in (0, 1]")
    if isinstance(cfg.get("workers"), int) and cfg["workers"] < 1:
        problems.append("'workers' must be >= 1")
    if command == "transfer-device":
        overlap = set(cfg.get("train_devices") or []) & set(cfg.get("test_devices") or [])
        if overlap:
            problems.append(f"test devices present in train set: {sorted(overlap)}")
    if command == "transfer-space":
        if cfg.get("mode") not in (None, "ZCP", "HWL"):
            problems.append("transfer-space mode must be ZCP or HWL")
        if isinstance(cfg.get("datasets"), list) and len(cfg["datasets"]) < 2:
            problems.append("transfer-space needs at least two datasets")
    if cfg.get("target") == "latency" and command in ("train", "transfer-space", "search", "ablate-proxies", "eval") \
            and not cfg.get("device"):
        problems.append("latency target requires 'device'")

    if problems:
        raise ConfigError(f"Config for '{command}' failed validation", problems)


def load_experiment_config(path: Path, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Load a YAML experiment config, apply flag overrides, validate it."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            cfg = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file is not valid YAML: {path}", [str(e)]) from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"Config root must be a mapping: {path}")

    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value

    command = cfg.get("command")
    if not isinstance(command, str):
        raise ConfigError("Config lacks a 'command' string", [f"choose one of {sorted(CONFIG_SCHEMAS)}"])
    validate_config(command, cfg)
    cfg["_config_dir"] = str(path.parent.resolve())
    return cfg


# Where and how wide a run executes; results do not depend on them.
HASH_EXCLUDED = frozenset({"out_dir", "workers"})


def config_hash(cfg: Dict[str, Any]) -> str:
    """Short SHA-256 over canonical JSON; private keys (leading '_') and run-placement keys excluded."""
    public = {k: v for k, v in cfg.items() if not str(k).startswith("_") and k not in HASH_EXCLUDED}
    blob = json.dumps(public, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def resolve_data_path(value: str, cfg: Optional[Dict[str, Any]] = None) -> Path:
    """Relative paths resolve against $ARCHSCOPE_DATA_ROOT, else the config's directory."""
    path = Path(value)
    if path.is_absolute():
        return path
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        return Path(root) / path
    if cfg and cfg.get("_config_dir"):
        return Path(cfg["_config_dir"]) / path
    return path


# ============================================================================
# LOGGING
# ============================================================================

def setup_logging(level: str = "INFO") -> None:
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level '{level}'")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
