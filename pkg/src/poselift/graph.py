"""Skeleton and frame-similarity graphs for the GCN mixers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonSpec:
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    mirror_map: tuple[int, ...]
    root_index: int = 0
    joint_names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        J = self.joint_count
        if J < 1:
            raise SkeletonError("joint_count must be positive")
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < J and 0 <= b < J):
                raise SkeletonError(f"edge ({a}, {b}) references a joint outside [0, {J})")
            if a == b:
                raise SkeletonError(f"self-edge on joint {a}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise SkeletonError(f"duplicate edge {key}")
            seen.add(key)
        m = self.mirror_map
        if len(m) != J or sorted(m) != list(range(J)):
            raise SkeletonError("mirror_map must be a permutation of the joints")
        if any(m[m[i]] != i for i in range(J)):
            raise SkeletonError("mirror_map must be an involution")
        if not 0 <= self.root_index < J:
            raise SkeletonError("root index out of range")
        if m[self.root_index] != self.root_index:
            raise SkeletonError("root joint must mirror onto itself")
        if self.joint_names and len(self.joint_names) != J:
            raise SkeletonError("joint_names length differs from joint_count")

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSpec":
        names = tuple(d.get("joints", ()))
        J = int(d.get("joint_count", len(names)))
        return cls(
            joint_count=J,
            edges=tuple((int(a), int(b)) for a, b in d["edges"]),
            mirror_map=tuple(int(i) for i in d.get("mirror", range(J))),
            root_index=int(d.get("root", 0)),
            joint_names=names,
        )

    def to_dict(self) -> dict:
        return {
            "joints": list(self.joint_names) or [f"j{i}" for i in range(self.joint_count)],
            "edges": [list(e) for e in self.edges],
            "mirror": list(self.mirror_map),
            "root": self.root_index,
        }

    @classmethod
    def load(cls, path: str | Path) -> "SkeletonSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def permuted(self, perm) -> "SkeletonSpec":
        """Relabel joints so that new joint ``i`` is old joint ``perm[i]``."""
        inv = np.argsort(perm)
        return SkeletonSpec(
            joint_count=self.joint_count,
            edges=tuple((int(inv[a]), int(inv[b])) for a, b in self.edges),
            mirror_map=tuple(int(inv[self.mirror_map[perm[i]]]) for i in range(self.joint_count)),
            root_index=int(inv[self.root_index]),
            joint_names=tuple(self.joint_names[p] for p in perm) if self.joint_names else (),
        )


def default_skeleton() -> SkeletonSpec:
    """17-joint Human3.6M layout rooted at the pelvis."""
    text = resources.files("poselift.resources").joinpath("h36m_17.json").read_text()
    return SkeletonSpec.from_dict(json.loads(text))


def chain_skeleton(n: int) -> SkeletonSpec:
    return SkeletonSpec(n, tuple((i, i + 1) for i in range(n - 1)), tuple(range(n)), 0)


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    a = np.asarray(adj, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    a_tilde = a + np.eye(a.shape[-1])
    deg = a_tilde.sum(axis=-1)
    # one rounding per entry: A_ij / sqrt(d_i d_j) is exact for the small hand-checked cases
    return a_tilde / np.sqrt(deg[..., :, None] * deg[..., None, :])


def skeleton_adjacency_matrix(spec: SkeletonSpec) -> np.ndarray:
    A = np.zeros((spec.joint_count, spec.joint_count))
    for a, b in spec.edges:
        A[a, b] = A[b, a] = 1.0
    return A


def build_skeleton_adjacency(spec: SkeletonSpec) -> np.ndarray:
    return normalize_adjacency(skeleton_adjacency_matrix(spec))


def top_k_indices(row: np.ndarray, k: int, self_index: int) -> np.ndarray:
    """Indices of the ``k`` largest entries excluding ``self_index``; ties go to the lower index."""
    row = np.asarray(row)
    order = np.argsort(-row, kind="stable")
    order = order[order != self_index]
    return order[:k]


def knn_edges(features: np.ndarray, k: int) -> np.ndarray:
    """Directed 0/1 matrix: row t marks the ``k`` frames most similar to frame t.

    ``features`` is ``(..., T, d)``; leading axes are independent graphs.
    """
    f = np.asarray(features, dtype=np.float64)
    T = f.shape[-2]
    k = min(k, T - 1)
    out = np.zeros(f.shape[:-2] + (T, T))
    if k <= 0:
        return out
    sim = f @ np.swapaxes(f, -1, -2)
    # push self out of reach, then a stable sort keeps lower indices first on ties
    idx = np.arange(T)
    sim[..., idx, idx] = -np.inf
    order = np.argsort(-sim, axis=-1, kind="stable")[..., :k]
    np.put_along_axis(out, order, 1.0, axis=-1)
    return out


def build_temporal_knn_adjacency(features: np.ndarray, k: int, chain_union: bool = False) -> np.ndarray:
    """Normalized K-NN frame graph from dot-product similarity of ``(..., T, d)`` features."""
    directed = knn_edges(features, k)
    A = np.maximum(directed, np.swapaxes(directed, -1, -2))
    if chain_union:
        T = A.shape[-1]
        t = np.arange(T - 1)
        A[..., t, t + 1] = 1.0
        A[..., t + 1, t] = 1.0
    return normalize_adjacency(A)
