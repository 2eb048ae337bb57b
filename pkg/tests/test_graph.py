import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poselift.graph import (
    SkeletonError,
    SkeletonSpec,
    build_skeleton_adjacency,
    build_temporal_knn_adjacency,
    chain_skeleton,
    default_skeleton,
    knn_edges,
    normalize_adjacency,
    top_k_indices,
)


def test_two_node_chain():
    np.testing.assert_array_equal(build_skeleton_adjacency(chain_skeleton(2)), [[0.5, 0.5], [0.5, 0.5]])


def test_single_node():
    np.testing.assert_array_equal(build_skeleton_adjacency(chain_skeleton(1)), [[1.0]])


def test_three_node_path_hand_values():
    s6 = 1 / np.sqrt(6)
    expected = np.array([[1 / 2, s6, 0], [s6, 1 / 3, s6], [0, s6, 1 / 2]])
    np.testing.assert_array_equal(build_skeleton_adjacency(chain_skeleton(3)), expected)


def test_disconnected_allowed_and_bad_edges_rejected():
    spec = SkeletonSpec(3, ((0, 1),), (0, 1, 2), 0)
    adj = build_skeleton_adjacency(spec)
    assert adj[2, 2] == 1.0
    with pytest.raises(SkeletonError):
        SkeletonSpec(3, ((0, 3),), (0, 1, 2), 0)
    with pytest.raises(SkeletonError):
        SkeletonSpec(3, ((1, 1),), (0, 1, 2), 0)
    with pytest.raises(SkeletonError):
        SkeletonSpec(3, ((0, 1), (1, 0)), (0, 1, 2), 0)
    with pytest.raises(SkeletonError, match="involution"):
        SkeletonSpec(3, (), (1, 2, 0), 0)


def test_default_skeleton_properties(tmp_path):
    spec = default_skeleton()
    assert spec.joint_count == 17 and spec.root_index == 0 and len(spec.edges) == 16
    m = spec.mirror_map
    assert all(m[m[i]] == i for i in range(17))
    path = tmp_path / "skel.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert SkeletonSpec.load(path) == spec


def _spectral_radius(m, iters=500):
    v = np.ones(m.shape[0])
    for _ in range(iters):
        v = m @ v
        v /= np.linalg.norm(v)
    return float(np.linalg.norm(m @ v))


def test_default_skeleton_normalized_adjacency_invariants():
    adj = build_skeleton_adjacency(default_skeleton())
    np.testing.assert_array_equal(adj, adj.T)
    assert (adj >= 0).all()
    assert _spectral_radius(adj) <= 1 + 1e-9


def _random_graph(rng, n):
    upper = np.triu(rng.random((n, n)) < 0.4, 1)
    return (upper | upper.T).astype(float)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_normalization_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    A = _random_graph(rng, n)
    P = np.eye(n)[rng.permutation(n)]
    np.testing.assert_allclose(normalize_adjacency(P @ A @ P.T), P @ normalize_adjacency(A) @ P.T, atol=1e-12)
    assert _spectral_radius(normalize_adjacency(A)) <= 1 + 1e-9


def test_top_k_examples():
    assert list(top_k_indices(np.array([0.9, 0.1, 0.5]), 1, 0)) == [2]
    assert list(top_k_indices(np.array([0.5, 0.5, 0.5, 0.5]), 2, 3)) == [0, 1]


def test_top_k_matches_sort_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        row = rng.normal(size=20)
        self_idx, k = int(rng.integers(20)), int(rng.integers(1, 19))
        ranked = sorted((i for i in range(20) if i != self_idx), key=lambda i: (-row[i], i))
        assert list(top_k_indices(row, k, self_idx)) == ranked[:k]


def test_knn_single_frame_is_identity():
    np.testing.assert_array_equal(build_temporal_knn_adjacency(np.ones((1, 4)), 3), [[1.0]])


def test_knn_k_equals_t_minus_one_is_complete():
    A = knn_edges(np.random.default_rng(0).normal(size=(3, 5)), 2)
    np.testing.assert_array_equal(A, 1 - np.eye(3))
    np.testing.assert_allclose(build_temporal_knn_adjacency(np.ones((3, 2)), 5), np.full((3, 3), 1 / 3))


def test_knn_pairs_brute_force():
    feats = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0], [0.1, 1.0]])
    # exhaustive oracle: each frame's best non-self partner by dot product
    best = {}
    for i in range(4):
        best[i] = max((j for j in range(4) if j != i), key=lambda j: (feats[i] @ feats[j], -j))
    directed = knn_edges(feats, 1)
    expected = np.zeros((4, 4))
    for i, j in best.items():
        expected[i, j] = 1
    np.testing.assert_array_equal(directed, expected)
    sym = np.maximum(directed, directed.T)
    edges = {(i, j) for i, j in itertools.combinations(range(4), 2) if sym[i, j]}
    assert edges == {(0, 1), (2, 3)}


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_knn_row_degree(T, k, seed):
    feats = np.random.default_rng(seed).normal(size=(T, 4))
    directed = knn_edges(feats, k)
    np.testing.assert_array_equal(directed.sum(axis=1), min(k, T - 1))
    assert np.all(np.diag(directed) == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_knn_permutes_with_frames(T, k, seed):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(T, 3))
    perm = rng.permutation(T)
    P = np.eye(T)[perm]
    # continuous random features: no ties, so relabeling cannot change choices
    np.testing.assert_allclose(
        build_temporal_knn_adjacency(feats[perm], k), P @ build_temporal_knn_adjacency(feats, k) @ P.T, atol=1e-12
    )


def test_batched_knn_matches_per_graph():
    feats = np.random.default_rng(5).normal(size=(2, 3, 6, 4))
    batched = build_temporal_knn_adjacency(feats, 2)
    for a in range(2):
        for b in range(3):
            np.testing.assert_array_equal(batched[a, b], build_temporal_knn_adjacency(feats[a, b], 2))


def test_chain_union_flag_adds_neighbours():
    feats = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0], [0.1, 1.0]])
    plain = build_temporal_knn_adjacency(feats, 1)
    chained = build_temporal_knn_adjacency(feats, 1, chain_union=True)
    assert plain[1, 2] == 0 and chained[1, 2] > 0
