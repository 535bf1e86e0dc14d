from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedagg.data import (
    PartitionConfig,
    dirichlet_partition,
    generate_synthetic,
    load_dataset,
    mean_label_tv,
    save_dataset,
    split_train_test,
)


# ---------------------------------------------------------------- generator


def test_balanced_labels_two_classes():
    ds = generate_synthetic(2, 4, 100, 1.0, 0)
    counts = ds.label_counts()
    assert counts.tolist() == [50, 50]


def test_balanced_labels_within_one():
    ds = generate_synthetic(4, 4, 102, 1.0, 0)
    counts = ds.label_counts()
    assert counts.max() - counts.min() <= 1
    assert counts.sum() == 102


def test_spread_zero_collapses_to_class_means():
    ds = generate_synthetic(3, 5, 30, 0.0, 7)
    by_class: dict[int, list[np.ndarray]] = {}
    for s in ds.samples:
        by_class.setdefault(s.y, []).append(s.x)
    for xs in by_class.values():
        for x in xs[1:]:
            assert np.array_equal(x, xs[0])


def test_component_means_separated():
    spread = 1.0
    ds = generate_synthetic(4, 8, 4000, spread, 3)
    X, y = ds.matrix()
    means = np.stack([X[y == c].mean(axis=0) for c in range(4)])
    for i in range(4):
        for j in range(i + 1, 4):
            # empirical means are within ~spread/sqrt(n_c) of the true ones
            assert np.linalg.norm(means[i] - means[j]) >= 4.0 * spread - 0.2


def test_generator_deterministic_bytes(tmp_path):
    a = generate_synthetic(3, 4, 50, 1.0, 5)
    b = generate_synthetic(3, 4, 50, 1.0, 5)
    save_dataset(tmp_path / "a.txt", a)
    save_dataset(tmp_path / "b.txt", b)
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_generator_seed_variation():
    a = generate_synthetic(3, 4, 50, 1.0, 5)
    b = generate_synthetic(3, 4, 50, 1.0, 6)
    assert not np.array_equal(a.matrix()[0], b.matrix()[0])


def test_generator_placement_prefix_property():
    # same seed: the public mixture's first components coincide with the
    # private mixture's components
    small = generate_synthetic(3, 6, 3000, 0.0, 11)
    big = generate_synthetic(6, 6, 6000, 0.0, 11)
    small_means = {tuple(s.x) for s in small.samples}
    big_means = {tuple(s.x) for s in big.samples}
    assert small_means <= big_means


def test_generator_input_validation():
    with pytest.raises(ValueError):
        generate_synthetic(1, 4, 10, 1.0, 0)
    with pytest.raises(ValueError):
        generate_synthetic(4, 4, 3, 1.0, 0)
    with pytest.raises(ValueError):
        generate_synthetic(2, 0, 10, 1.0, 0)


def test_sample_ids_unique_and_dense():
    ds = generate_synthetic(3, 4, 30, 1.0, 1)
    assert sorted(s.sample_id for s in ds.samples) == list(range(30))


# ---------------------------------------------------------------- partition


def test_partition_single_client_gets_everything():
    ds = generate_synthetic(3, 4, 30, 1.0, 2)
    parts = dirichlet_partition(ds, PartitionConfig(k=1, alpha=1.0, seed=0))
    assert len(parts) == 1
    assert {s.sample_id for s in parts[0].samples} == set(range(30))


def test_partition_exact_and_disjoint():
    ds = generate_synthetic(4, 4, 200, 1.0, 3)
    parts = dirichlet_partition(ds, PartitionConfig(k=5, alpha=0.5, seed=1))
    ids = [s.sample_id for p in parts for s in p.samples]
    assert len(ids) == 200 and len(set(ids)) == 200
    assert all(p.size > 0 for p in parts)


def test_partition_high_alpha_approaches_global_ratio():
    for seed in range(20):
        ds = generate_synthetic(2, 4, 200, 1.0, seed)
        parts = dirichlet_partition(ds, PartitionConfig(k=4, alpha=1000.0, seed=seed))
        for p in parts:
            ones = sum(1 for s in p.samples if s.y == 1)
            assert abs(ones / p.size - 0.5) < 0.1


def test_partition_low_alpha_more_heterogeneous():
    tv_low, tv_high = [], []
    for seed in range(20):
        ds = generate_synthetic(4, 4, 400, 1.0, seed)
        low = dirichlet_partition(ds, PartitionConfig(k=8, alpha=0.1, seed=seed))
        high = dirichlet_partition(ds, PartitionConfig(k=8, alpha=3.0, seed=seed))
        tv_low.append(mean_label_tv(low, 4))
        tv_high.append(mean_label_tv(high, 4))
    assert np.mean(tv_low) > np.mean(tv_high)


def test_partition_deterministic():
    ds = generate_synthetic(3, 4, 90, 1.0, 4)
    cfg = PartitionConfig(k=3, alpha=0.5, seed=9)
    a = dirichlet_partition(ds, cfg)
    b = dirichlet_partition(ds, cfg)
    assert [[s.sample_id for s in p.samples] for p in a] == [
        [s.sample_id for s in p.samples] for p in b
    ]


def test_partition_respects_client_ids():
    ds = generate_synthetic(2, 4, 20, 1.0, 0)
    parts = dirichlet_partition(
        ds, PartitionConfig(k=2, alpha=1.0, seed=0), client_ids=["dev-a", "dev-b"]
    )
    assert [p.client for p in parts] == ["dev-a", "dev-b"]


def test_partition_rejects_small_dataset():
    ds = generate_synthetic(2, 4, 4, 1.0, 0)
    with pytest.raises(ValueError):
        dirichlet_partition(ds, PartitionConfig(k=5, alpha=1.0, seed=0))


def test_partition_config_validation():
    with pytest.raises(ValueError):
        PartitionConfig(k=0, alpha=1.0, seed=0)
    with pytest.raises(ValueError):
        PartitionConfig(k=2, alpha=0.0, seed=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.3, 1.0, 5.0]), st.integers(2, 6))
def test_partition_property_exactness(seed, alpha, k):
    ds = generate_synthetic(3, 3, 60, 1.0, seed % 7)
    parts = dirichlet_partition(ds, PartitionConfig(k=k, alpha=alpha, seed=seed))
    ids = sorted(s.sample_id for p in parts for s in p.samples)
    assert ids == list(range(60))


# -------------------------------------------------------------------- split


def test_split_half_balanced():
    ds = generate_synthetic(2, 4, 100, 1.0, 6)
    train, test = split_train_test(ds, 0.5, 0)
    assert len(train) == 50 and len(test) == 50
    assert train.label_counts().tolist() == [25, 25]
    assert test.label_counts().tolist() == [25, 25]


def test_split_union_is_original():
    ds = generate_synthetic(3, 4, 90, 1.0, 6)
    train, test = split_train_test(ds, 0.25, 3)
    ids = sorted([s.sample_id for s in train.samples] + [s.sample_id for s in test.samples])
    assert ids == sorted(s.sample_id for s in ds.samples)
    assert not ({s.sample_id for s in train.samples} & {s.sample_id for s in test.samples})


def test_split_deterministic():
    ds = generate_synthetic(3, 4, 90, 1.0, 6)
    a_train, a_test = split_train_test(ds, 0.3, 4)
    b_train, b_test = split_train_test(ds, 0.3, 4)
    assert [s.sample_id for s in a_test.samples] == [s.sample_id for s in b_test.samples]


def test_split_fraction_bounds():
    ds = generate_synthetic(2, 4, 10, 1.0, 0)
    for frac in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            split_train_test(ds, frac, 0)


# ------------------------------------------------------------ serialization


def test_save_load_round_trip_exact(tmp_path):
    ds = generate_synthetic(3, 5, 40, 1.3, 8)
    path = tmp_path / "ds.txt"
    save_dataset(path, ds)
    loaded = load_dataset(path)
    assert loaded.input_dim == 5 and loaded.classes == 3
    for a, b in zip(ds.samples, loaded.samples):
        assert a.sample_id == b.sample_id and a.y == b.y
        assert np.array_equal(a.x, b.x)
    # a second save of the loaded data is byte-identical
    save_dataset(tmp_path / "ds2.txt", loaded)
    assert path.read_bytes() == (tmp_path / "ds2.txt").read_bytes()


def test_load_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("nonsense 3 4 2\n")
    with pytest.raises(ValueError):
        load_dataset(p)


def test_load_rejects_duplicate_ids(tmp_path):
    p = tmp_path / "dup.txt"
    p.write_text(
        "fedagg-dataset/1 2 2 2\n0 0 1.0 2.0\n0 1 3.0 4.0\n"
    )
    with pytest.raises(ValueError):
        load_dataset(p)


def test_load_rejects_wrong_count(tmp_path):
    p = tmp_path / "count.txt"
    p.write_text("fedagg-dataset/1 3 2 2\n0 0 1.0 2.0\n")
    with pytest.raises(ValueError):
        load_dataset(p)
