import itertools

import numpy as np
import pytest

from momaplan import primitive
from momaplan.path import Path, TASK, path_distance
from momaplan.rngs import seeded_rng


def make_paths(arrs):
    return [Path(a, TASK) for a in arrs]


def random_dataset(rng, n, n_states=8, n_joints=2):
    return make_paths(rng.normal(size=(n, n_states, 4 + n_joints)))


def brute_force_two_clusters(X):
    """Optimal 2-cluster assignment by enumerating all labelings."""
    best = None
    for labels in itertools.product([0, 1], repeat=len(X)):
        labels = np.array(labels)
        if labels.min() == labels.max():
            continue
        inertia = 0.0
        for j in (0, 1):
            members = X[labels == j]
            inertia += ((members - members.mean(axis=0)) ** 2).sum()
        if best is None or inertia < best[0]:
            best = (inertia, labels)
    return best


def test_two_separated_pairs_recovered():
    rng = seeded_rng(70)
    base_a = rng.normal(size=(6, 6))
    base_b = base_a + 40.0
    arrs = np.stack([base_a + 0.1, base_a - 0.1, base_b + 0.1, base_b - 0.1])
    dataset = make_paths(arrs)
    lib = primitive.build_library(dataset, k=2, seed=1)
    X = arrs.reshape(4, -1)
    opt_inertia, opt_labels = brute_force_two_clusters(X)
    labels = np.array([primitive.truth_primitive(lib, p)[0] for p in dataset])
    assert labels[0] == labels[1] and labels[2] == labels[3] and labels[0] != labels[2]
    assert lib.inertia == pytest.approx(opt_inertia, rel=1e-9)
    means = {tuple(np.round(c.ravel(), 6)) for c in lib.centroids}
    expect = {tuple(np.round(X[opt_labels == j].mean(axis=0), 6)) for j in (0, 1)}
    assert means == expect


def test_k_equals_dataset_size_zero_inertia():
    rng = seeded_rng(71)
    dataset = random_dataset(rng, 5)
    lib = primitive.build_library(dataset, k=5, seed=3)
    assert lib.inertia == pytest.approx(0.0, abs=1e-18)
    for p in dataset:
        idx, cent = primitive.truth_primitive(lib, p)
        assert path_distance(p, cent) < 1e-9


def test_inertia_non_increasing():
    rng = seeded_rng(72)
    dataset = random_dataset(rng, 60)
    lib = primitive.build_library(dataset, k=5, seed=4)
    h = lib.inertia_history
    assert all(h[i + 1] <= h[i] + 1e-9 for i in range(len(h) - 1))


def test_build_deterministic():
    rng = seeded_rng(73)
    dataset = random_dataset(rng, 40)
    a = primitive.build_library(dataset, k=4, seed=9)
    b = primitive.build_library(dataset, k=4, seed=9)
    assert np.array_equal(a.centroids, b.centroids)
    assert a.iterations == b.iterations and a.inertia == b.inertia


def test_dataset_smaller_than_k_rejected():
    rng = seeded_rng(74)
    with pytest.raises(ValueError):
        primitive.build_library(random_dataset(rng, 3), k=4, seed=0)


def test_truth_primitive_exact_match():
    rng = seeded_rng(75)
    dataset = random_dataset(rng, 30)
    lib = primitive.build_library(dataset, k=6, seed=2)
    idx, cent = primitive.truth_primitive(lib, Path(lib.centroids[5].copy(), TASK))
    assert idx == 5


def test_truth_primitive_tie_breaks_low_index():
    cents = np.zeros((3, 4, 6))
    cents[0, 0, 0] = 1.0
    cents[1, 0, 0] = -1.0
    cents[2, 0, 0] = 5.0
    lib = primitive.PrimitiveLibrary(cents)
    query = Path(np.zeros((4, 6)), TASK)   # equidistant from 0 and 1
    idx, _ = primitive.truth_primitive(lib, query)
    assert idx == 0


def test_truth_primitive_matches_linear_scan():
    rng = seeded_rng(76)
    dataset = random_dataset(rng, 50)
    lib = primitive.build_library(dataset, k=7, seed=5)
    for _ in range(20):
        q = Path(rng.normal(size=(8, 6)), TASK)
        idx, _ = primitive.truth_primitive(lib, q)
        dists = [path_distance(q, lib.centroid_path(j)) for j in range(lib.k)]
        assert idx == int(np.argmin(dists))
        assert dists[idx] <= min(dists) + 1e-15


def test_every_member_closest_to_own_centroid():
    rng = seeded_rng(77)
    dataset = random_dataset(rng, 80)
    lib = primitive.build_library(dataset, k=6, seed=6)
    for p in dataset:
        idx, cent = primitive.truth_primitive(lib, p)
        d = path_distance(p, cent)
        for j in range(lib.k):
            assert d <= path_distance(p, lib.centroid_path(j)) + 1e-12


def test_library_round_trip(tmp_path):
    rng = seeded_rng(78)
    dataset = random_dataset(rng, 40)
    lib = primitive.build_library(dataset, k=4, seed=7)
    f1 = tmp_path / "lib.bin"
    f2 = tmp_path / "lib2.bin"
    primitive.save_library(lib, f1)
    lib2 = primitive.load_library(f1)
    primitive.save_library(lib2, f2)
    assert f1.read_bytes() == f2.read_bytes()
    assert lib2.k == lib.k and lib2.n_states == lib.n_states and lib2.n_joints == lib.n_joints
    assert np.array_equal(lib2.centroids.astype("<f4"), lib.centroids.astype("<f4"))


def test_world_frame_paths_rejected():
    rng = seeded_rng(79)
    bad = [Path(rng.normal(size=(8, 6)), "world") for _ in range(4)]
    with pytest.raises(ValueError):
        primitive.build_library(bad, k=2, seed=0)
