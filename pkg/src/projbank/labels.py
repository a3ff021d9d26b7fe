"""Pseudo-labels from k-nearest neighbours and training-pair sampling.

A pair ``(i, j)`` is positive when either sample is among the other's
``k`` nearest neighbours (Euclidean, full feature space), and every sample
is positive with itself.  Only the positive off-diagonal pairs are stored.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.spatial.distance import cdist

from .errors import KTooLarge, NotEnoughPairs
from .io import FeatureMatrix, atomic_write

DEFAULT_K = 100


def _keys(i, j, n):
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return np.minimum(i, j) * n + np.maximum(i, j)


@dataclass(frozen=True, eq=False)
class PairLabelSet:
    n_samples: int
    k: int
    positive_pairs: np.ndarray  # (P, 2) int64, rows (i, j) with i < j, sorted

    def __post_init__(self):
        pairs = np.asarray(self.positive_pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size:
            if pairs.min() < 0 or pairs.max() >= self.n_samples:
                raise ValueError("pair endpoint outside [0, n_samples)")
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise ValueError("diagonal pairs are implicit and must not be stored")
        keys = np.unique(_keys(pairs[:, 0], pairs[:, 1], self.n_samples))
        pairs = np.stack([keys // self.n_samples, keys % self.n_samples], axis=1)
        keys.flags.writeable = False
        pairs.flags.writeable = False
        object.__setattr__(self, "positive_pairs", pairs)
        object.__setattr__(self, "_keys", keys)

    @property
    def n_positive(self) -> int:
        return len(self._keys)

    @property
    def n_negative(self) -> int:
        n = self.n_samples
        return n * (n - 1) // 2 - self.n_positive

    def label(self, i: int, j: int) -> int:
        return int(self.labels(np.array([i]), np.array([j]))[0])

    def _has_keys(self, keys: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self._keys, keys)
        hit = np.zeros(keys.shape, dtype=bool)
        inside = pos < len(self._keys)
        hit[inside] = self._keys[pos[inside]] == keys[inside]
        return hit

    def labels(self, i, j) -> np.ndarray:
        """Vectorised ``label(i, j)``; returns an int8 array of +1/-1."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        hit = self._has_keys(_keys(i, j, self.n_samples)) | (i == j)
        return np.where(hit, 1, -1).astype(np.int8)

    def dense(self) -> np.ndarray:
        """Full ``N x N`` label matrix (small N only)."""
        n = self.n_samples
        out = -np.ones((n, n), dtype=np.int8)
        out[self.positive_pairs[:, 0], self.positive_pairs[:, 1]] = 1
        out[self.positive_pairs[:, 1], self.positive_pairs[:, 0]] = 1
        np.fill_diagonal(out, 1)
        return out

    def restrict(self, indices) -> "PairLabelSet":
        """Labels among ``indices`` only, renumbered ``0..len(indices)-1``."""
        indices = np.asarray(indices, dtype=np.int64)
        local = -np.ones(self.n_samples, dtype=np.int64)
        local[indices] = np.arange(indices.size)
        a = local[self.positive_pairs[:, 0]]
        b = local[self.positive_pairs[:, 1]]
        keep = (a >= 0) & (b >= 0)
        return PairLabelSet(indices.size, self.k, np.stack([a[keep], b[keep]], axis=1))

    def to_csv(self, path) -> None:
        lines = "i,j\n" + "".join(f"{i},{j}\n" for i, j in self.positive_pairs)
        with atomic_write(path) as fh:
            fh.write(lines.encode())

    @classmethod
    def from_csv(cls, path, n_samples: int, k: int = 0) -> "PairLabelSet":
        pairs = np.loadtxt(path, dtype=np.int64, delimiter=",", skiprows=1, ndmin=2)
        return cls(n_samples, k, pairs.reshape(-1, 2))


def knn_indices(x: np.ndarray, k: int, block: int = 256) -> np.ndarray:
    """Indices of the k nearest other rows, nearest first, ties to lower index."""
    n = x.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block):
        stop = min(n, start + block)
        d2 = cdist(x[start:stop], x, "sqeuclidean")
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort keeps equal distances in index order
        out[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def build_labels(x: FeatureMatrix, k: int = DEFAULT_K) -> PairLabelSet:
    n = x.n_samples
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise KTooLarge(f"k={k} needs more than {n} samples")
    nn = knn_indices(x.values, k)
    i = np.repeat(np.arange(n), k)
    return PairLabelSet(n, k, np.stack([i, nn.ravel()], axis=1))


@dataclass(frozen=True)
class PairBatch:
    """Training pairs as parallel arrays ``(i, j, label)``."""

    i: np.ndarray
    j: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.i)

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        return zip(self.i.tolist(), self.j.tolist(), self.label.tolist())


def _sample_negative_keys(labels: PairLabelSet, n_neg: int, rng: np.random.Generator) -> np.ndarray:
    n = labels.n_samples
    total = n * (n - 1) // 2
    if 2 * n_neg > labels.n_negative or total <= 4096:
        # enumerate the negatives when a large share of them is requested
        iu, ju = np.triu_indices(n, k=1)
        keys = iu * n + ju
        keys = keys[~labels._has_keys(keys)]
        return np.sort(rng.choice(keys, size=n_neg, replace=False))
    got = np.empty(0, dtype=np.int64)
    while got.size < n_neg:
        m = 2 * (n_neg - got.size) + 16
        a = rng.integers(n, size=m)
        b = rng.integers(n, size=m)
        keep = a != b
        keys = _keys(a[keep], b[keep], n)
        keys = keys[~labels._has_keys(keys)]
        # keep first occurrences in draw order
        merged = np.concatenate([got, keys])
        _, first = np.unique(merged, return_index=True)
        got = merged[np.sort(first)][:n_neg]
    return np.sort(got)


def sample_pairs(
    labels: PairLabelSet,
    n_pos: int,
    n_neg: int,
    include_diagonal: bool = True,
    seed=0,
) -> PairBatch:
    """Uniform samples without replacement within each polarity.

    With ``include_diagonal`` every ``(i, i, +1)`` pair is appended.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if n_pos > labels.n_positive:
        raise NotEnoughPairs(f"asked for {n_pos} positive pairs, only {labels.n_positive} exist")
    if n_neg > labels.n_negative:
        raise NotEnoughPairs(f"asked for {n_neg} negative pairs, only {labels.n_negative} exist")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = labels.n_samples
    pos = np.sort(rng.choice(labels.n_positive, size=n_pos, replace=False)) if n_pos else np.empty(0, np.int64)
    pos_keys = labels._keys[pos]
    neg_keys = _sample_negative_keys(labels, n_neg, rng) if n_neg else np.empty(0, np.int64)
    keys = np.concatenate([pos_keys, neg_keys])
    i, j = keys // n, keys % n
    lab = np.concatenate([np.ones(n_pos, np.int8), -np.ones(n_neg, np.int8)])
    if include_diagonal:
        diag = np.arange(n, dtype=np.int64)
        i = np.concatenate([i, diag])
        j = np.concatenate([j, diag])
        lab = np.concatenate([lab, np.ones(n, np.int8)])
    return PairBatch(i.astype(np.int64), j.astype(np.int64), lab)
