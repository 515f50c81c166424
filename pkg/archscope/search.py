"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Predictor-Guided Search
===================================
Each round trains a fresh predictor on every architecture measured so
far, scores the rest of the pool and measures the top `batch`. The
first round has no predictor and samples uniformly at random.

Accuracy is maximized, latency minimized.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import TrainConfig
from .dataio import BenchmarkDataset
from .encoding import EncodingMode
from .errors import ArgumentError, IngestionError
from .predictor import PredictionTask, predict, train_scratch

logger = logging.getLogger(__name__)

DEFAULT_BATCH = 10
TRACE_COLUMNS = ["round", "samples", "best_arch", "best_target", "train_loss"]

# (dataset, sampled ids, seed) -> (score function over arch ids, final train loss)
PredictorFactory = Callable[[BenchmarkDataset, List[str], int], Tuple[Callable[[Sequence[str]], np.ndarray], float]]


@dataclass(frozen=True)
class SearchState:
    pool: Tuple[str, ...]
    sampled: Tuple[Tuple[str, float], ...] = ()
    round: int = 0
    best_so_far: Optional[Tuple[str, float]] = None
    history: Tuple[Dict, ...] = ()
    completed: bool = False
    target: str = "accuracy"
    device_id: Optional[str] = None

    @property
    def sampled_ids(self) -> List[str]:
        return [a for a, _ in self.sampled]

    @property
    def remaining(self) -> List[str]:
        taken = set(self.sampled_ids)
        return sorted(a for a in self.pool if a not in taken)

    @property
    def sign(self) -> float:
        return 1.0 if self.target == "accuracy" else -1.0


def new_search(dataset: BenchmarkDataset, pool: Optional[Sequence[str]] = None, target: str = "accuracy",
               device_id: Optional[str] = None) -> SearchState:
    if target == "latency" and not device_id:
        raise ArgumentError("latency search needs a device")
    pool = tuple(pool) if pool is not None else tuple(dataset.arch_ids)
    if len(set(pool)) != len(pool):
        raise ArgumentError("search pool contains duplicate arch ids")
    return SearchState(pool, target=target, device_id=device_id)


def _measure(dataset: BenchmarkDataset, arch_id: str, target: str, device_id: Optional[str]) -> float:
    value = dataset.get(arch_id).target(target, device_id)
    if value is None:
        raise IngestionError(f"{arch_id}: no measured {target}", arch_id=arch_id, feature=target)
    return float(value)


# ============================================================================
# PREDICTOR FACTORIES
# ============================================================================

def mlp_predictor_factory(mode: EncodingMode, config: TrainConfig, target: str = "accuracy",
                          device_id: Optional[str] = None) -> PredictorFactory:
    """Fresh train_scratch model per round; no warm start."""

    def factory(dataset: BenchmarkDataset, sampled: List[str], seed: int):
        task = PredictionTask(target, dataset.space_id, tuple(sampled),
                              device_id=device_id if target == "latency" else None)
        model = train_scratch(dataset, task, mode, config.with_seed(seed))
        loss = model.train_losses[-1] if model.train_losses else float("nan")
        return (lambda ids: predict(model, dataset.subset(ids), impute_missing=config.impute_missing)), loss

    return factory


def oracle_factory(target: str = "accuracy", device_id: Optional[str] = None) -> PredictorFactory:
    """Scores every architecture by its true target."""

    def factory(dataset: BenchmarkDataset, sampled: List[str], seed: int):
        return (lambda ids: np.array([_measure(dataset, a, target, device_id) for a in ids])), 0.0

    return factory


# ============================================================================
# SEARCH LOOP
# ============================================================================

def search_step(state: SearchState, factory: PredictorFactory, dataset: BenchmarkDataset,
                batch: int = DEFAULT_BATCH, seed: int = 0) -> SearchState:
    if batch < 1:
        raise ArgumentError(f"batch must be >= 1, got {batch}")
    remaining = state.remaining
    if not remaining:
        return replace(state, completed=True)
    take = min(batch, len(remaining))

    if len(state.sampled) < 2:
        rng = np.random.default_rng([seed, state.round])
        chosen = [remaining[i] for i in sorted(rng.choice(len(remaining), size=take, replace=False))]
        loss = float("nan")
    else:
        score, loss = factory(dataset, state.sampled_ids, seed + state.round)
        preds = state.sign * np.asarray(score(remaining), dtype=np.float64)
        # remaining is sorted by arch_id, so the positional key breaks ties by id
        order = np.lexsort((np.arange(len(remaining)), -preds))
        chosen = [remaining[i] for i in order[:take]]

    new = tuple((a, _measure(dataset, a, state.target, state.device_id)) for a in chosen)
    sampled = state.sampled + new
    best = state.best_so_far
    for arch_id, value in new:
        if best is None or state.sign * value > state.sign * best[1]:
            best = (arch_id, value)
    record = {"round": state.round + 1, "samples": len(sampled), "best_arch": best[0],
              "best_target": best[1], "train_loss": loss}
    logger.debug("round %d: %d samples, best %s=%.5f", record["round"], len(sampled), best[0], best[1])
    return replace(state, sampled=sampled, round=state.round + 1, best_so_far=best,
                   history=state.history + (record,), completed=len(sampled) == len(state.pool))


def run_search(dataset: BenchmarkDataset, mode: Optional[EncodingMode], budget: int, seed: int = 0,
               batch: int = DEFAULT_BATCH, config: Optional[TrainConfig] = None, target: str = "accuracy",
               device_id: Optional[str] = None, pool: Optional[Sequence[str]] = None,
               factory: Optional[PredictorFactory] = None) -> Tuple[SearchState, pd.DataFrame]:
    """Search until the budget (or the pool) runs out; one trace row per round."""
    if budget < batch:
        raise ArgumentError(f"budget {budget} is smaller than batch {batch}")
    if factory is None:
        if mode is None:
            raise ArgumentError("run_search needs an encoding mode or a predictor factory")
        factory = mlp_predictor_factory(mode, config or TrainConfig(), target, device_id)
    state = new_search(dataset, pool, target, device_id)
    while len(state.sampled) < budget and not state.completed:
        state = search_step(state, factory, dataset, min(batch, budget - len(state.sampled)), seed)
    if len(state.sampled) >= len(state.pool):
        state = replace(state, completed=True)
    logger.info("Search finished: %d samples over %d rounds, best %s", len(state.sampled), state.round,
                state.best_so_far)
    return state, pd.DataFrame(list(state.history), columns=TRACE_COLUMNS)


# ============================================================================
# READOUTS
# ============================================================================

def top_fraction_threshold(dataset: BenchmarkDataset, fraction: float = 0.01, target: str = "accuracy",
                           device_id: Optional[str] = None, pool: Optional[Sequence[str]] = None) -> float:
    """Target value an architecture must reach to sit in the best `fraction` of the pool."""
    if not 0 < fraction <= 1:
        raise ArgumentError(f"fraction must lie in (0, 1], got {fraction}")
    ids = pool if pool is not None else dataset.arch_ids
    sign = 1.0 if target == "accuracy" else -1.0
    values = np.sort(sign * np.array([_measure(dataset, a, target, device_id) for a in ids]))[::-1]
    k = max(1, math.ceil(fraction * len(values)))
    return float(sign * values[k - 1])


def samples_to_reach(state: SearchState, threshold: float) -> Optional[int]:
    """Samples spent when best-so-far first reaches threshold, or None."""
    for i, (_, value) in enumerate(state.sampled, start=1):
        if state.sign * value >= state.sign * threshold:
            return i
    return None
