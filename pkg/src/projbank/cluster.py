"""Grouping the feature dimensions into subspaces.

Dimension clustering treats each dimension as a point: the row of the
``D x N`` transposed data matrix holding that dimension's value for every
sample.  K-means on those points groups dimensions that behave alike.

Partition file layout::

    b"PBSP" | u32 version=1 | u64 n_dims | u64 n_subspaces | u32[n_dims] assignment
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeMismatch, TooManyClusters
from .io import FeatureMatrix, _open_for_read, atomic_write, read_array, read_header, read_u64, write_header

PARTITION_MAGIC = b"PBSP"


@dataclass(frozen=True, eq=False)
class SubspacePartition:
    """Assignment of ``n_dims`` dimensions to ``n_subspaces`` nonempty groups."""

    assignment: np.ndarray
    n_subspaces: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 1 or a.size < 1:
            raise ValueError("assignment must be a nonempty 1-D array")
        d = int(self.n_subspaces)
        if d < 1 or d > a.size:
            raise TooManyClusters(f"{d} subspaces over {a.size} dimensions")
        if a.min() < 0 or a.max() >= d:
            raise ValueError("assignment entries must lie in [0, n_subspaces)")
        sizes = np.bincount(a, minlength=d)
        if np.any(sizes == 0):
            raise ValueError(f"empty subspaces: {np.flatnonzero(sizes == 0).tolist()}")
        a.flags.writeable = False
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "n_subspaces", d)
        order = np.argsort(a, kind="stable")
        bounds = np.cumsum(sizes)[:-1]
        members = tuple(m for m in np.split(order, bounds))
        for m in members:
            m.flags.writeable = False
        object.__setattr__(self, "_members", members)

    @classmethod
    def from_members(cls, members, n_dims: Optional[int] = None) -> "SubspacePartition":
        members = [np.asarray(m, dtype=np.int64) for m in members]
        if n_dims is None:
            n_dims = sum(m.size for m in members)
        a = np.full(n_dims, -1, dtype=np.int64)
        for p, m in enumerate(members):
            if np.any(a[m] != -1):
                raise ValueError("member lists overlap")
            a[m] = p
        if np.any(a < 0):
            raise ValueError("member lists do not cover every dimension")
        return cls(a, len(members))

    @property
    def n_dims(self) -> int:
        return self.assignment.size

    @property
    def member_lists(self) -> tuple[np.ndarray, ...]:
        """Ascending dimension indices of each subspace."""
        return self._members

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_subspaces)

    def __eq__(self, other):
        if not isinstance(other, SubspacePartition):
            return NotImplemented
        return self.n_subspaces == other.n_subspaces and np.array_equal(self.assignment, other.assignment)

    __hash__ = None


def canonical(assignment: np.ndarray, d: int) -> SubspacePartition:
    """Relabel clusters in order of their smallest member dimension."""
    assignment = np.asarray(assignment)
    _, first = np.unique(assignment, return_index=True)
    old_labels = assignment[np.sort(first)]
    remap = np.empty(d, dtype=np.int64)
    remap[old_labels] = np.arange(old_labels.size)
    return SubspacePartition(remap[assignment], d)


def _check_d(n_dims: int, d: int):
    if d < 1:
        raise ValueError("need at least one subspace")
    if d > n_dims:
        raise TooManyClusters(f"cannot split {n_dims} dimensions into {d} nonempty subspaces")


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeanspp(points: np.ndarray, d: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen]).ravel()
    for _ in range(1, d):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen centre
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        np.minimum(closest, _sq_dists(points, points[idx : idx + 1]).ravel(), out=closest)
    return points[chosen].copy()


def _centroids(points: np.ndarray, labels: np.ndarray, d: int) -> np.ndarray:
    sums = np.zeros((d, points.shape[1]))
    np.add.at(sums, labels, points)
    counts = np.bincount(labels, minlength=d)
    return sums / np.maximum(counts, 1)[:, None]


def _repair_empty(points, labels, centers, d):
    """Give each empty cluster the dimension farthest from its own centroid."""
    counts = np.bincount(labels, minlength=d)
    for c in np.flatnonzero(counts == 0):
        own = np.einsum("ij,ij->i", points - centers[labels], points - centers[labels])
        movable = counts[labels] > 1
        own[~movable] = -1.0
        idx = int(np.argmax(own))
        counts[labels[idx]] -= 1
        labels[idx] = c
        counts[c] = 1
        centers[:] = _centroids(points, labels, d)
    return labels


def _sse(points, labels, d) -> float:
    centers = _centroids(points, labels, d)
    diff = points - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def cluster_dimensions(
    x: FeatureMatrix,
    d: int,
    seed: int = 0,
    max_iters: int = 100,
    sample_size: Optional[int] = None,
    trace: Optional[list] = None,
) -> SubspacePartition:
    """Lloyd's K-means over dimensions with k-means++ seeding.

    ``sample_size`` optionally clusters on a random subset of samples
    (columns of the transposed matrix); off by default.  When ``trace`` is
    a list, the within-cluster SSE after every Lloyd iteration is appended
    to it.
    """
    _check_d(x.n_dims, d)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    points = x.values.T
    if sample_size is not None and sample_size < x.n_samples:
        cols = np.sort(rng.choice(x.n_samples, size=sample_size, replace=False))
        points = points[:, cols]
    points = np.ascontiguousarray(points)

    centers = _kmeanspp(points, d, rng)
    labels = np.argmin(_sq_dists(points, centers), axis=1)
    for _ in range(max_iters):
        centers = _centroids(points, labels, d)
        labels = _repair_empty(points, labels, centers, d)
        if trace is not None:
            trace.append(_sse(points, labels, d))
        # argmin returns the lowest index on ties
        new = np.argmin(_sq_dists(points, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    else:
        centers = _centroids(points, labels, d)
        labels = _repair_empty(points, labels, centers, d)
    return canonical(labels, d)


def random_split(n_dims: int, d: int, seed: int = 0) -> SubspacePartition:
    """Shuffle the dimensions and deal them round-robin into ``d`` groups."""
    _check_d(n_dims, d)
    perm = np.random.default_rng(seed).permutation(n_dims)
    assignment = np.empty(n_dims, dtype=np.int64)
    assignment[perm] = np.arange(n_dims) % d
    return SubspacePartition(assignment, d)


def within_cluster_sse(x: FeatureMatrix, p: SubspacePartition) -> float:
    if p.n_dims != x.n_dims:
        raise ShapeMismatch(f"partition covers {p.n_dims} dims, matrix has {x.n_dims}")
    return _sse(np.ascontiguousarray(x.values.T), p.assignment, p.n_subspaces)


# -- file format -------------------------------------------------------------


def write_partition(fh, p: SubspacePartition) -> None:
    write_header(fh, PARTITION_MAGIC)
    fh.write(struct.pack("<QQ", p.n_dims, p.n_subspaces))
    fh.write(p.assignment.astype("<u4").tobytes())


def read_partition(fh) -> SubspacePartition:
    read_header(fh, PARTITION_MAGIC)
    n_dims, d = read_u64(fh), read_u64(fh)
    a = read_array(fh, "<u4", n_dims).astype(np.int64)
    return SubspacePartition(a, d)


def save_partition(p: SubspacePartition, path) -> None:
    with atomic_write(path) as fh:
        write_partition(fh, p)


def load_partition(path) -> SubspacePartition:
    with _open_for_read(path) as fh:
        p = read_partition(fh)
        if fh.read(1):
            raise ShapeMismatch("trailing bytes after partition payload")
    return p
