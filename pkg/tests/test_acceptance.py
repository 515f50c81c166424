"""
Synthetic end-to-end experiments: few-shot device and space transfer,
embedding ablation, guided search and adversarial device splits.

Run with: pytest -m slow
"""

from dataclasses import replace

import numpy as np
import pytest

from archscope.config import TrainConfig
from archscope.dataio import (BenchmarkDataset, SyntheticSpec, anchored_correlation_loadings, generate_space_pair,
                              generate_synthetic, make_split, uniform_correlation_loadings)
from archscope.encoding import EncodingKind, EncodingMode
from archscope.errors import UnsupportedTransferError
from archscope.hw_embedding import EmbeddingKind
from archscope.metrics import build_adversarial_split, correlation_matrix
from archscope.predictor import (PredictionTask, evaluate, finetune_device, finetune_space, register_device,
                                 train_scratch)
from archscope.search import run_search, samples_to_reach, top_fraction_threshold

pytestmark = pytest.mark.slow

SEEDS = range(10)
CFG = TrainConfig(epochs=100, hidden_width=64, batch_size=128, transfer_epochs=50)
VEC = EncodingMode(EncodingKind.VEC)


def _zcp(dataset):
    return EncodingMode(EncodingKind.ZCP, dataset.proxy_names)


def _rho(value):
    # A constant prediction has no rank correlation; score it as chance
    return 0.0 if np.isnan(value) else value


def _device_transfer(dataset, train_devices, test_device, mode, kind, seed, pretrain=300, adapt=10):
    """(transfer rho, adaptation ids, eval ids) for one pretrain + few-shot adaptation."""
    cfg = CFG.with_seed(seed)
    pretrain_ids, rest = make_split(dataset, train_count=pretrain, seed=seed)
    task = PredictionTask("latency", dataset.space_id, pretrain_ids, device_ids=train_devices)
    model = train_scratch(dataset, task, mode, cfg, kind)
    refs = list(model.embedding.reference_archs)
    extra, eval_ids = make_split(dataset, train_count=adapt - len(refs), seed=seed, pool=rest)
    samples = dataset.subset(refs + extra)
    grown, _ = register_device(model, test_device, samples)
    tuned = finetune_device(grown, test_device, samples, cfg)
    return _rho(evaluate(tuned, dataset, eval_ids, test_device)), refs + extra, eval_ids


def _scratch(dataset, ids, eval_ids, mode, seed, kind="accuracy", device=None):
    task = PredictionTask(kind, dataset.space_id, ids, eval_ids, device_id=device)
    return _rho(evaluate(train_scratch(dataset, task, mode, CFG.with_seed(seed)), dataset, eval_ids))


# ============================================================================
# DEVICE TRANSFER
# ============================================================================

def _uniform_devices(rho):
    loadings = uniform_correlation_loadings(5, rho, 8, np.random.default_rng(17))
    return generate_synthetic(SyntheticSpec(n_archs=1000, n_devices=5, n_proxies=12, latent_dim=8,
                                            device_loadings=loadings, seed=23))


def _device_margin(rho):
    dataset = _uniform_devices(rho)
    margins = []
    for seed in SEEDS:
        transfer, ids, eval_ids = _device_transfer(dataset, ("dev0", "dev1", "dev2", "dev3"), "dev4", VEC,
                                                   EmbeddingKind.TABLE, seed)
        margins.append(transfer - _scratch(dataset, ids, eval_ids, VEC, seed, "latency", "dev4"))
    return float(np.mean(margins))


def test_device_transfer_beats_scratch_and_degrades_with_distance():
    margins = {rho: _device_margin(rho) for rho in (0.9, 0.8, 0.3)}
    assert margins[0.9] >= 0.05
    assert margins[0.8] >= 0.05
    assert margins[0.3] < margins[0.9]


def test_clone_device_matches_donor():
    base = _uniform_devices(0.8)
    records = tuple(replace(r, latencies={**r.latencies, "clone": 2.0 * r.latencies["dev1"]}) for r in base.records)
    dataset = BenchmarkDataset(base.space_id, records, base.schema)
    mode = _zcp(dataset)
    for seed in range(3):
        pretrain_ids, rest = make_split(dataset, train_count=300, seed=seed)
        task = PredictionTask("latency", dataset.space_id, pretrain_ids, device_ids=("dev1", "dev0", "dev2"))
        model = train_scratch(dataset, task, mode, CFG.with_seed(seed), EmbeddingKind.TABLE)
        samples, eval_ids = make_split(dataset, train_count=10, seed=seed, pool=rest)
        grown, donor = register_device(model, "clone", dataset.subset(samples))
        assert donor.donor_id == "dev1" and donor.rho == pytest.approx(1.0)
        tuned = finetune_device(grown, "clone", dataset.subset(samples), CFG.with_seed(seed))
        donor_rho = evaluate(model, dataset, eval_ids, "dev1")
        assert abs(evaluate(tuned, dataset, eval_ids, "clone") - donor_rho) <= 0.02


def test_learned_table_is_the_strongest_embedding():
    """
    The new device is slower than every training device while ranking
    architectures like the fastest one; rank-based donor choice is immune
    to the magnitude gap.
    """
    loadings = anchored_correlation_loadings([0.95, 0.8, 0.6, 0.4, 0.2], 8, np.random.default_rng(3))
    spec = SyntheticSpec(n_archs=1000, n_devices=6, n_proxies=12, latent_dim=8, device_loadings=loadings,
                         device_scales=[300.0, 1.0, 3.0, 10.0, 30.0, 100.0], seed=31)
    dataset = generate_synthetic(spec)
    train = ("dev1", "dev2", "dev3", "dev4", "dev5")
    mode = _zcp(dataset)
    means = {}
    for kind in EmbeddingKind:
        means[kind] = np.mean([_device_transfer(dataset, train, "dev0", mode, kind, seed)[0] for seed in SEEDS])
    assert means[EmbeddingKind.TABLE] >= means[EmbeddingKind.INDEX]
    assert means[EmbeddingKind.TABLE] >= means[EmbeddingKind.SAMPLE]


def test_adversarial_threshold_lowers_transfer_quality():
    loadings = anchored_correlation_loadings([0.95, 0.85, 0.65, 0.5, 0.2], 8, np.random.default_rng(5))
    spec = SyntheticSpec(n_archs=1000, n_devices=6, n_proxies=12, latent_dim=8, device_loadings=loadings, seed=41)
    dataset = generate_synthetic(spec)
    matrix = correlation_matrix(dataset, "latency")
    mode = _zcp(dataset)
    means = []
    for threshold in (1.0, 0.7, 0.6, 0.3):
        split = build_adversarial_split(matrix, ["dev0"], threshold)
        for d in split.train:
            assert matrix.rho(d, "dev0") < threshold
        rhos = [_device_transfer(dataset, split.train, "dev0", mode, EmbeddingKind.TABLE, seed)[0]
                for seed in range(5)]
        means.append(float(np.mean(rhos)))
    assert all(later <= earlier for earlier, later in zip(means, means[1:]))
    assert means[-1] < means[0]


# ============================================================================
# SPACE TRANSFER
# ============================================================================

@pytest.fixture(scope="module")
def correlated_spaces():
    spec = SyntheticSpec(n_archs=1000, n_devices=2, n_proxies=24, latent_dim=16, seed=51)
    return generate_space_pair(spec, 0.9, second_space_id="space_b", second_node_count=6, seed=52)


def test_space_transfer_beats_scratch(correlated_spaces):
    source, target = correlated_spaces
    mode = _zcp(source)
    margins = {5: [], 10: [], 20: []}
    for seed in SEEDS:
        src_ids, _ = make_split(source, train_fraction=0.3, seed=seed)
        model = train_scratch(source, PredictionTask("accuracy", source.space_id, src_ids), mode, CFG.with_seed(seed))
        for budget in margins:
            ids, eval_ids = make_split(target, train_count=budget, seed=seed)
            moved = finetune_space(model, target, ids, CFG.with_seed(seed))
            margins[budget].append(_rho(evaluate(moved, target, eval_ids))
                                   - _scratch(target, ids, eval_ids, mode, seed))
    for budget, values in margins.items():
        assert np.mean(values) >= 0.05, budget


def test_vec_transfer_refuses(correlated_spaces):
    source, target = correlated_spaces
    model = train_scratch(source, PredictionTask("accuracy", source.space_id, source.arch_ids[:100]), VEC,
                          replace(CFG, epochs=2))
    with pytest.raises(UnsupportedTransferError):
        finetune_space(model, target, target.arch_ids[:10], CFG)


def test_self_transfer_does_not_hurt(correlated_spaces):
    source, _ = correlated_spaces
    mode = _zcp(source)
    frozen, moved = [], []
    for seed in range(5):
        train_ids, rest = make_split(source, train_count=200, seed=seed)
        extra, eval_ids = make_split(source, train_count=20, seed=seed, pool=rest)
        model = train_scratch(source, PredictionTask("accuracy", source.space_id, train_ids), mode, CFG.with_seed(seed))
        frozen.append(_rho(evaluate(model, source, eval_ids)))
        moved.append(_rho(evaluate(finetune_space(model, source, extra, CFG.with_seed(seed)), source, eval_ids)))
    assert np.mean(moved) >= np.mean(frozen) - 0.02


# ============================================================================
# SCRATCH BUDGET
# ============================================================================

def test_more_samples_never_hurt_much():
    dataset = generate_synthetic(SyntheticSpec(n_archs=1500, n_devices=1, n_proxies=12, latent_dim=8, seed=61))
    mode = _zcp(dataset)
    means = []
    for budget in (10, 40, 160, 640):
        rhos = []
        for seed in SEEDS:
            ids, eval_ids = make_split(dataset, train_count=budget, seed=seed, eval_count=500)
            rhos.append(_scratch(dataset, ids, eval_ids, mode, seed))
        means.append(float(np.mean(rhos)))
    drops = [earlier - later for earlier, later in zip(means, means[1:]) if later < earlier]
    assert len(drops) <= 1 and all(d <= 0.01 for d in drops)


# ============================================================================
# SEARCH
# ============================================================================

def test_zcp_search_finds_top_architectures_sooner():
    spec = SyntheticSpec(n_archs=4096, n_devices=1, n_proxies=12, latent_dim=8, vec_noise=10.0, seed=71)
    dataset = generate_synthetic(spec)
    threshold = top_fraction_threshold(dataset, 0.01)
    cfg = TrainConfig(epochs=100, hidden_width=32, batch_size=64)
    budget = 100
    medians = {}
    for name, mode in (("ZCP", _zcp(dataset)), ("Vec", VEC)):
        spent = []
        for seed in range(20):
            state, _ = run_search(dataset, mode, budget, seed=seed, config=cfg)
            found = samples_to_reach(state, threshold)
            spent.append(budget + 1 if found is None else found)
        medians[name] = float(np.median(spent))
    assert medians["ZCP"] <= 100
    assert medians["ZCP"] < medians["Vec"]
