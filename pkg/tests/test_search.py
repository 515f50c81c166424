"""Predictor-guided search loop."""

import math

import numpy as np
import pytest

from archscope.config import TrainConfig
from archscope.encoding import EncodingKind, EncodingMode
from archscope.errors import ArgumentError
from archscope.search import (new_search, oracle_factory, run_search, samples_to_reach, search_step,
                              top_fraction_threshold)


def _constant_factory(dataset, sampled, seed):
    return (lambda ids: np.zeros(len(ids))), 0.0


def _ranked(dataset, target="accuracy", device_id=None):
    sign = 1.0 if target == "accuracy" else -1.0
    return sorted(dataset.arch_ids, key=lambda a: -sign * dataset.get(a).target(target, device_id))


# ============================================================================
# LOOP
# ============================================================================

def test_oracle_collects_the_best(small_dataset):
    state, trace = run_search(small_dataset, None, budget=40, seed=3, factory=oracle_factory())
    assert len(state.sampled) == 40
    assert set(_ranked(small_dataset)[:30]) <= set(state.sampled_ids)
    assert state.best_so_far[0] == _ranked(small_dataset)[0]
    assert trace["round"].tolist() == [1, 2, 3, 4]
    assert trace["samples"].tolist() == [10, 20, 30, 40]
    assert math.isnan(trace["train_loss"].iloc[0])


def test_best_so_far_never_drops(small_dataset):
    _, trace = run_search(small_dataset, None, budget=60, seed=0, factory=oracle_factory())
    best = trace["best_target"].tolist()
    assert all(a <= b for a, b in zip(best, best[1:]))


def test_round_count_matches_samples(small_dataset):
    for budget in (10, 25, 40, 55):
        state, _ = run_search(small_dataset, None, budget=budget, seed=1, factory=oracle_factory())
        assert len(state.sampled) == budget
        assert state.round == math.ceil(len(state.sampled) / 10)


def test_last_round_may_be_partial(small_dataset):
    _, trace = run_search(small_dataset, None, budget=25, seed=1, factory=oracle_factory())
    assert trace["samples"].tolist() == [10, 20, 25]


def test_small_pool_completes(small_dataset):
    pool = small_dataset.arch_ids[:15]
    state, trace = run_search(small_dataset, None, budget=40, pool=pool, factory=oracle_factory())
    assert state.completed
    assert sorted(state.sampled_ids) == sorted(pool)
    assert len(trace) == 2


def test_no_arch_sampled_twice(small_dataset):
    state, _ = run_search(small_dataset, None, budget=80, seed=5, factory=_constant_factory)
    assert len(set(state.sampled_ids)) == len(state.sampled_ids) == 80


def test_latency_search_minimizes(small_dataset):
    factory = oracle_factory("latency", "dev0")
    state, _ = run_search(small_dataset, None, budget=30, factory=factory, target="latency", device_id="dev0")
    assert state.best_so_far[0] == _ranked(small_dataset, "latency", "dev0")[0]
    assert state.best_so_far[1] == min(r.latencies["dev0"] for r in small_dataset.records)


def test_bootstrap_is_seeded(small_dataset):
    a = search_step(new_search(small_dataset), _constant_factory, small_dataset, 10, seed=2)
    b = search_step(new_search(small_dataset), _constant_factory, small_dataset, 10, seed=2)
    c = search_step(new_search(small_dataset), _constant_factory, small_dataset, 10, seed=3)
    assert a.sampled == b.sampled
    assert a.sampled_ids != c.sampled_ids


def test_ties_break_by_arch_id(small_dataset):
    state = search_step(new_search(small_dataset), _constant_factory, small_dataset, 10, seed=0)
    state = search_step(state, _constant_factory, small_dataset, 10, seed=0)
    expected = sorted(a for a in small_dataset.arch_ids if a not in state.sampled_ids[:10])[:10]
    assert state.sampled_ids[10:] == expected


def test_single_bootstrap_sample_stays_random(small_dataset):
    state = search_step(new_search(small_dataset), _constant_factory, small_dataset, 1, seed=0)
    state = search_step(state, _constant_factory, small_dataset, 1, seed=0)
    assert state.history[1]["train_loss"] != 0.0


def test_exhausted_pool_step(small_dataset):
    pool = small_dataset.arch_ids[:3]
    state = search_step(new_search(small_dataset, pool), oracle_factory(), small_dataset, 10)
    assert state.completed
    assert search_step(state, oracle_factory(), small_dataset, 10).completed


def test_argument_errors(small_dataset):
    with pytest.raises(ArgumentError):
        run_search(small_dataset, None, budget=5, batch=10, factory=oracle_factory())
    with pytest.raises(ArgumentError):
        run_search(small_dataset, None, budget=20)
    with pytest.raises(ArgumentError):
        new_search(small_dataset, target="latency")
    with pytest.raises(ArgumentError):
        new_search(small_dataset, ["a", "a"])
    with pytest.raises(ArgumentError):
        search_step(new_search(small_dataset), oracle_factory(), small_dataset, batch=0)


def test_mlp_guided_search_runs(small_dataset):
    mode = EncodingMode(EncodingKind.ZCP, small_dataset.proxy_names)
    cfg = TrainConfig(epochs=5, hidden_width=16, batch_size=32)
    state, trace = run_search(small_dataset, mode, budget=30, seed=0, config=cfg)
    assert len(state.sampled) == 30
    assert np.all(np.isfinite(trace["train_loss"].iloc[1:]))


# ============================================================================
# READOUTS
# ============================================================================

def test_top_fraction_threshold(small_dataset):
    ranked = _ranked(small_dataset)
    threshold = top_fraction_threshold(small_dataset, 0.01)
    assert threshold == small_dataset.get(ranked[1]).accuracy
    lat = top_fraction_threshold(small_dataset, 0.05, "latency", "dev2")
    fastest = _ranked(small_dataset, "latency", "dev2")
    assert lat == small_dataset.get(fastest[7]).latencies["dev2"]
    with pytest.raises(ArgumentError):
        top_fraction_threshold(small_dataset, 0.0)


def test_samples_to_reach(small_dataset):
    state, _ = run_search(small_dataset, None, budget=40, seed=3, factory=oracle_factory())
    needed = samples_to_reach(state, top_fraction_threshold(small_dataset, 0.01))
    assert needed is not None and needed <= 20
    assert samples_to_reach(state, 2.0) is None
