"""Device representations: embedding table, Index bits, Sample vectors, donor initialization."""

import numpy as np
import pytest

from archscope.errors import ArgumentError, DataError, DeviceLookupError, RangeError, ShapeError
from archscope.hw_embedding import (DeviceEmbedding, EmbeddingKind, EmbeddingTable, build_device_embedding,
                                    decode_index, fit_sample_normalizer, index_embedding, index_width,
                                    init_new_device, init_table, load_registry, lookup, sample_embedding,
                                    save_registry)


def _columns(ids, **devices):
    return {d: dict(zip(ids, map(float, vals))) for d, vals in devices.items()}


# ============================================================================
# TABLE
# ============================================================================

def test_lookup_returns_row():
    table = EmbeddingTable(("a", "b"), np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert lookup(table, "a").tolist() == [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(table.one_hot("b") @ table.matrix, lookup(table, "b"))


def test_lookup_stable_after_register():
    table = init_table(["a", "b"], 8, np.random.default_rng(0))
    grown = table.register("c", np.full(8, 0.05))
    first = lookup(grown, "c")
    assert np.array_equal(first, lookup(grown, "c"))
    assert np.array_equal(lookup(grown, "a"), lookup(table, "a"))
    assert grown.dim == 8 and len(table.device_ids) == 2


def test_lookup_does_not_alias_table():
    table = EmbeddingTable(("a",), np.zeros((1, 2)))
    row = lookup(table, "a")
    row[0] = 9.0
    assert table.matrix[0, 0] == 0.0


def test_unknown_device():
    table = init_table(["a"], 4, np.random.default_rng(0))
    with pytest.raises(DeviceLookupError):
        lookup(table, "zz")


def test_table_init_range():
    table = init_table([f"d{i}" for i in range(20)], 8, np.random.default_rng(1))
    assert table.matrix.shape == (20, 8)
    assert np.all(np.abs(table.matrix) <= 0.1)


def test_register_checks_width_and_duplicates():
    table = init_table(["a"], 4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        table.register("b", np.zeros(3))
    with pytest.raises(ArgumentError):
        table.register("a", np.zeros(4))


# ============================================================================
# INDEX
# ============================================================================

@pytest.mark.parametrize("ordinal, width, bits", [
    (5, 4, [0, 1, 0, 1]),
    (0, 3, [0, 0, 0]),
    (7, 3, [1, 1, 1]),
])
def test_index_embedding_bits(ordinal, width, bits):
    assert index_embedding(ordinal, width).tolist() == bits


def test_index_round_trip():
    for width in range(1, 7):
        for ordinal in range(2 ** width):
            assert decode_index(index_embedding(ordinal, width)) == ordinal


def test_index_overflow():
    with pytest.raises(RangeError):
        index_embedding(8, 3)


def test_index_width_leaves_room_for_new_devices():
    assert index_width(1) == 2
    assert index_width(4) == 4
    assert 2 ** index_width(18) >= 36


# ============================================================================
# SAMPLE
# ============================================================================

def test_sample_embedding_length_and_order():
    refs = [f"r{i}" for i in range(10)]
    latencies = {a: float(i + 1) for i, a in enumerate(refs)}
    vec = sample_embedding(latencies, refs)
    assert vec.shape == (10,)
    assert sample_embedding(latencies, refs[::-1]).tolist() == vec[::-1].tolist()


def test_sample_embedding_scaled_by_training_devices():
    refs = ["r0", "r1", "r2"]
    columns = _columns(refs, gpu=[1, 5, 3], cpu=[9, 1, 4])
    norm = fit_sample_normalizer(columns, refs)
    new = {"r0": 5.0, "r1": 3.0, "r2": 3.5}
    expected = [(5 - 1) / (9 - 1), (3 - 1) / (5 - 1), (3.5 - 3) / (4 - 3)]
    np.testing.assert_allclose(sample_embedding(new, refs, norm), expected)


def test_sample_embedding_lists_missing():
    with pytest.raises(DataError) as info:
        sample_embedding({"r0": 1.0}, ["r0", "r1", "r2"])
    assert info.value.missing == ["r1", "r2"]


# ============================================================================
# NEW DEVICE INITIALIZATION
# ============================================================================

def test_identical_latencies_pick_that_device():
    ids = ["a0", "a1", "a2", "a3"]
    columns = _columns(ids, cpu=[4, 1, 3, 2], gpu=[1, 2, 3, 4])
    table = init_table(["cpu", "gpu"], 8, np.random.default_rng(0))
    donor = init_new_device(table, ids, [1.0, 2.0, 3.0, 4.0], columns)
    assert donor.donor_id == "gpu"
    assert donor.rho == pytest.approx(1.0)
    np.testing.assert_array_equal(donor.row, lookup(table, "gpu"))


def test_highest_rho_donor_wins():
    ids = [f"a{i}" for i in range(5)]
    new = [1.0, 2.0, 3.0, 4.0, 5.0]
    columns = _columns(ids, d0=[1, 2, 3, 5, 4], d1=[3, 5, 2, 1, 4], d2=[4, 1, 2, 3, 5])
    table = init_table(["d0", "d1", "d2"], 4, np.random.default_rng(0))
    donor = init_new_device(table, ids, new, columns)
    assert donor.candidates == pytest.approx({"d0": 0.9, "d1": -0.2, "d2": 0.4})
    assert donor.donor_id == "d0"

    reordered = init_table(["d2", "d1", "d0"], 4, np.random.default_rng(0))
    assert init_new_device(reordered, ids, new, columns).donor_id == "d0"


def test_tie_goes_to_lowest_ordinal():
    ids = ["a0", "a1", "a2"]
    columns = _columns(ids, late=[1, 2, 3], early=[10, 20, 30])
    table = init_table(["early", "late"], 4, np.random.default_rng(0))
    assert init_new_device(table, ids, [5.0, 6.0, 7.0], columns).donor_id == "early"


def test_donor_matches_exhaustive_argmax():
    rng = np.random.default_rng(77)
    checked = 0
    while checked < 200:
        n_dev = int(rng.integers(2, 7))
        n = int(rng.integers(3, 13))
        ids = [f"a{i}" for i in range(n)]
        devices = [f"d{j}" for j in range(n_dev)]
        lat = rng.uniform(1.0, 100.0, size=(n_dev, n))
        new = rng.uniform(1.0, 100.0, size=n)
        columns = {d: dict(zip(ids, lat[j])) for j, d in enumerate(devices)}

        # Without ties, rho ordering is the reverse of the summed squared rank differences
        new_rank = np.argsort(np.argsort(new))
        dist = [int(np.sum((np.argsort(np.argsort(lat[j])) - new_rank) ** 2)) for j in range(n_dev)]
        if dist.count(min(dist)) > 1:
            continue
        expected = devices[int(np.argmin(dist))]

        table = init_table(devices, 4, rng)
        assert init_new_device(table, ids, new, columns).donor_id == expected
        checked += 1


def test_init_errors():
    table = init_table(["d0"], 4, np.random.default_rng(0))
    with pytest.raises(ArgumentError):
        init_new_device(table, ["a0"], [1.0], {"d0": {"a0": 1.0}})
    with pytest.raises(DataError) as info:
        init_new_device(table, ["a0", "a1"], [1.0, 2.0], {"d0": {"a0": 1.0}})
    assert info.value.missing == ["a1"]


def test_undefined_donor_is_skipped():
    ids = ["a0", "a1", "a2"]
    columns = _columns(ids, flat=[2, 2, 2], slope=[3, 1, 2])
    table = init_table(["flat", "slope"], 4, np.random.default_rng(0))
    donor = init_new_device(table, ids, [1.0, 2.0, 3.0], columns)
    assert donor.donor_id == "slope"
    assert "flat" not in donor.candidates

    only_flat = init_table(["flat"], 4, np.random.default_rng(0))
    with pytest.raises(DataError):
        init_new_device(only_flat, ids, [1.0, 2.0, 3.0], columns)


# ============================================================================
# DEVICE EMBEDDING
# ============================================================================

def _latency_columns(n_archs=30, devices=("d0", "d1", "d2")):
    rng = np.random.default_rng(4)
    ids = [f"a{i}" for i in range(n_archs)]
    return ids, {d: dict(zip(ids, rng.uniform(1, 20, n_archs))) for d in devices}


def test_build_each_kind():
    ids, columns = _latency_columns()
    rng = np.random.default_rng(0)
    table = build_device_embedding("Table", list(columns), rng, dim=8)
    index = build_device_embedding(EmbeddingKind.INDEX, list(columns), rng)
    sample = build_device_embedding(EmbeddingKind.SAMPLE, list(columns), rng, latency_columns=columns,
                                    num_reference_archs=10)
    assert (table.dim, index.dim, sample.dim) == (8, index_width(3), 10)
    assert table.trainable and not index.trainable and not sample.trainable
    assert sample.matrix().shape == (3, 10)
    assert set(sample.reference_archs) <= set(ids)
    assert index.vector("d2").tolist() == index_embedding(2, index.width).tolist()


def test_registering_new_devices():
    ids, columns = _latency_columns()
    rng = np.random.default_rng(0)
    index = build_device_embedding(EmbeddingKind.INDEX, list(columns), rng).register_index("new")
    assert index.ordinals["new"] == 3
    assert index.device_ids[-1] == "new"

    sample = build_device_embedding(EmbeddingKind.SAMPLE, list(columns), rng, latency_columns=columns,
                                    num_reference_archs=5)
    grown = sample.register_sample("new", {a: 2.0 * columns["d0"][a] for a in sample.reference_archs})
    assert grown.vector("new").shape == (5,)
    with pytest.raises(DataError):
        sample.register_sample("bad", {})


def test_sample_needs_enough_covered_archs():
    _, columns = _latency_columns(n_archs=4)
    with pytest.raises(DataError):
        build_device_embedding(EmbeddingKind.SAMPLE, list(columns), np.random.default_rng(0),
                               latency_columns=columns, num_reference_archs=10)


def test_embedding_dict_round_trip():
    ids, columns = _latency_columns()
    rng = np.random.default_rng(0)
    for kind in EmbeddingKind:
        emb = build_device_embedding(kind, list(columns), rng, latency_columns=columns, num_reference_archs=6)
        back = DeviceEmbedding.from_dict(emb.to_dict())
        assert back.kind is kind
        assert back.device_ids == emb.device_ids
        np.testing.assert_array_equal(back.matrix(), emb.matrix())


def test_registry_file(tmp_path):
    ids, columns = _latency_columns()
    emb = build_device_embedding(EmbeddingKind.SAMPLE, list(columns), np.random.default_rng(0),
                                 latency_columns=columns, num_reference_archs=4)
    path = tmp_path / "registry.yaml"
    save_registry(emb, path)
    data = load_registry(path)
    assert data["kind"] is EmbeddingKind.SAMPLE
    assert data["device_ids"] == ["d0", "d1", "d2"]
    assert data["reference_archs"] == list(emb.reference_archs)
