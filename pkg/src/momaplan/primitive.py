"""Motion-primitive library: K-means over flattened whole-body paths.

Centroids live in the task frame. The truth primitive of a path is the
centroid with the smallest Frobenius distance, ties to the lowest index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .path import Path, TASK, path_distance
from .rngs import seeded_rng

LIBRARY_MAGIC = b"NMPL"
LIBRARY_VERSION = 1
DEFAULT_K = 32


@dataclass(eq=False)
class PrimitiveLibrary:
    centroids: np.ndarray          # (K, N_tau, 4 + N_m), task frame
    iterations: int = 0
    inertia: float = 0.0
    inertia_history: list = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        if self.centroids.ndim != 3 or self.centroids.shape[0] < 2:
            raise ValueError("library needs K >= 2 centroids of shape (N_tau, 4+N_m)")

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def n_states(self):
        return self.centroids.shape[1]

    @property
    def n_joints(self):
        return self.centroids.shape[2] - 4

    def centroid_path(self, i):
        return Path(self.centroids[i].copy(), TASK)


def _flatten(dataset, base_only=False):
    arrs = []
    for p in dataset:
        if p.frame != TASK:
            raise ValueError("library paths must be in the task frame")
        arrs.append(p.states[:, :2].ravel() if base_only else p.states.ravel())
    return np.stack(arrs)


def build_library(dataset, k=DEFAULT_K, seed=0, max_iters=100, base_only=False):
    """Lloyd iterations with k-means++ seeding over path vectors.

    Empty clusters are reseeded from the point farthest from its centroid.
    Deterministic for fixed (dataset order, k, seed, max_iters).
    """
    if len(dataset) < k:
        raise ValueError(f"dataset of {len(dataset)} paths is smaller than k={k}")
    shape = dataset[0].states.shape
    X = _flatten(dataset, base_only)
    rng = seeded_rng(seed, 404)
    centers = _kmeanspp_init(X, k, rng)
    labels = np.full(len(X), -1, dtype=int)
    iterations = 0
    history = []
    for iterations in range(1, max_iters + 1):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        converged = np.array_equal(new_labels, labels)
        for j in range(k):
            mask = new_labels == j
            if mask.any():
                centers[j] = X[mask].mean(axis=0)
            else:
                worst = d2[np.arange(len(X)), new_labels].argmax()
                centers[j] = X[worst]
                new_labels[worst] = j
                converged = False
        labels = new_labels
        history.append(float(((X - centers[labels]) ** 2).sum()))
        if converged:
            break
    inertia = history[-1]
    if base_only:
        # lift base-only centroids back to full rows by averaging members
        full = _flatten(dataset, base_only=False)
        lifted = np.stack([full[labels == j].mean(axis=0) if (labels == j).any() else full[0]
                           for j in range(k)])
        centroids = lifted.reshape(k, *shape)
    else:
        centroids = centers.reshape(k, *shape)
    return PrimitiveLibrary(centroids=centroids, iterations=iterations, inertia=inertia,
                            inertia_history=history)


def _kmeanspp_init(X, k, rng):
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(0, n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = X[int(rng.integers(0, n))]
            continue
        centers[j] = X[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def truth_primitive(lib, path):
    """(index, centroid path) of the library entry nearest to the given path."""
    if path.states.shape != lib.centroids.shape[1:]:
        raise ValueError("path shape does not match the library")
    d = np.linalg.norm(lib.centroids - path.states[None], axis=(1, 2))
    idx = int(d.argmin())   # argmin takes the first minimum: lowest index
    return idx, lib.centroid_path(idx)


def assignment_inertia(lib, dataset):
    """Sum of squared distances of each path to its truth primitive."""
    total = 0.0
    for p in dataset:
        idx, _ = truth_primitive(lib, p)
        total += path_distance(p, lib.centroid_path(idx)) ** 2
    return total


# ---------------------------------------------------------------------------
# persistence


def save_library(lib, filename):
    with open(filename, "wb") as f:
        f.write(LIBRARY_MAGIC)
        f.write(struct.pack("<IIII", LIBRARY_VERSION, lib.k, lib.n_states, lib.n_joints))
        f.write(struct.pack("<If", lib.iterations, lib.inertia))
        f.write(lib.centroids.astype("<f4").tobytes())


def load_library(filename):
    with open(filename, "rb") as f:
        magic = f.read(4)
        if magic != LIBRARY_MAGIC:
            raise ValueError(f"bad library magic {magic!r}")
        version, k, n_states, n_joints = struct.unpack("<IIII", f.read(16))
        if version != LIBRARY_VERSION:
            raise ValueError(f"unsupported library version {version}")
        iterations, inertia = struct.unpack("<If", f.read(8))
        data = np.frombuffer(f.read(4 * k * n_states * (4 + n_joints)), dtype="<f4")
        centroids = data.reshape(k, n_states, 4 + n_joints).astype(float)
    return PrimitiveLibrary(centroids=centroids, iterations=iterations, inertia=inertia)
