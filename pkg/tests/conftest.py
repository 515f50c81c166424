"""
Shared fixtures: a small synthetic benchmark, a hand-built record
factory and a training config small enough for unit tests.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT_DIR = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT_DIR))

from archscope.config import TrainConfig  # noqa: E402
from archscope.dataio import BenchmarkDataset, SyntheticSpec, generate_synthetic  # noqa: E402
from archscope.encoding import ArchitectureRecord, SpaceSchema  # noqa: E402


@pytest.fixture(scope="session")
def fast_config() -> TrainConfig:
    return TrainConfig(epochs=40, hidden_width=32, batch_size=64, transfer_epochs=20)


@pytest.fixture(scope="session")
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(n_archs=160, n_devices=4, n_proxies=6, latent_dim=6, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_spec) -> BenchmarkDataset:
    return generate_synthetic(small_spec)


@pytest.fixture
def tiny_schema() -> SpaceSchema:
    # 3 nodes -> 3 adjacency bits, then 2 op slots
    return SpaceSchema("tiny", 3, ("none", "conv", "pool"), 5)


@pytest.fixture
def make_record():
    def _make(arch_id, zcp=None, latency=None, accuracy=None, vec=None, space_id="tiny"):
        return ArchitectureRecord(arch_id, space_id, vec, zcp or {}, latency or {}, accuracy)
    return _make


@pytest.fixture
def linear_zcp_dataset() -> BenchmarkDataset:
    """Accuracy = mean of six uniform proxy scores + N(0, 0.01)."""
    rng = np.random.default_rng(11)
    scores = rng.uniform(0.0, 1.0, size=(1000, 6))
    acc = np.clip(scores.mean(axis=1) + rng.normal(0.0, 0.01, size=1000), 0.0, 1.0)
    names = [f"p{j}" for j in range(6)]
    records = tuple(
        ArchitectureRecord(f"lin-{i:04d}", "linear", None,
                           {n: float(scores[i, j]) for j, n in enumerate(names)}, {}, float(acc[i]))
        for i in range(1000)
    )
    return BenchmarkDataset("linear", records)
