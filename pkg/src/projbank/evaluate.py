"""Hamming search, retrieval metrics and the subspace pairwise-error diagnostic."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from . import _kernels
from .agd import TrainerConfig, subspace_rng
from .bpb import train_bank, train_subspace
from .cluster import SubspacePartition
from .encode import BinaryCodeSet, linear_projections
from .errors import BitWidthMismatch, FingerprintMismatch, NoRelevantItems, ShapeMismatch, TooManyPairs
from .io import FeatureMatrix, atomic_write
from .labels import PairLabelSet

MAX_DIAGNOSTIC_SAMPLES = 2000


@dataclass(frozen=True)
class RetrievalResult:
    """Per-query gallery rankings, nearest first."""

    indices: np.ndarray  # (n_queries, k) int64
    distances: np.ndarray  # (n_queries, k) int32
    gallery_size: int

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def hamming_distances(gallery: BinaryCodeSet, queries: BinaryCodeSet) -> np.ndarray:
    if gallery.n_bits != queries.n_bits:
        raise BitWidthMismatch(f"gallery has {gallery.n_bits}-bit codes, queries {queries.n_bits}-bit")
    if gallery.fingerprint != queries.fingerprint:
        raise FingerprintMismatch(
            f"codes come from different banks ({gallery.fingerprint.hex()} vs {queries.fingerprint.hex()})"
        )
    return _kernels.hamming_distances(queries.words(), gallery.words())


def hamming_search(gallery: BinaryCodeSet, queries: BinaryCodeSet, k: Optional[int] = None) -> RetrievalResult:
    """Exact top-k by Hamming distance; equal distances rank the lower gallery index first."""
    dist = hamming_distances(gallery, queries)
    g = gallery.n_samples
    k = g if k is None else int(k)
    if not 1 <= k <= g:
        raise ValueError(f"k must be in [1, {g}], got {k}")
    key = dist.astype(np.int64) * g + np.arange(g, dtype=np.int64)
    if k < g:
        part = np.argpartition(key, k - 1, axis=1)[:, :k]
        order = np.take_along_axis(key, part, axis=1).argsort(axis=1)
        idx = np.take_along_axis(part, order, axis=1)
    else:
        idx = key.argsort(axis=1)
    return RetrievalResult(idx, np.take_along_axis(dist, idx, axis=1), g)


def _relevance(result: RetrievalResult, gallery_labels, query_labels) -> np.ndarray:
    gallery_labels = np.asarray(gallery_labels)
    query_labels = np.asarray(query_labels)
    if gallery_labels.shape != (result.gallery_size,):
        raise ShapeMismatch("one label per gallery item required")
    if query_labels.shape != (result.indices.shape[0],):
        raise ShapeMismatch("one label per query required")
    return gallery_labels[result.indices] == query_labels[:, None]


def precision_at_k(result: RetrievalResult, gallery_labels, query_labels, k: int) -> float:
    if not 1 <= k <= result.k:
        raise ValueError(f"k={k} exceeds the {result.k} retrieved items")
    rel = _relevance(result, gallery_labels, query_labels)[:, :k]
    return float(rel.sum(axis=1).mean() / k)


@dataclass(frozen=True)
class PRCurve:
    cutoffs: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float


def precision_recall_curve(result: RetrievalResult, gallery_labels, query_labels) -> PRCurve:
    """Macro-averaged precision/recall at every cutoff, AUC by trapezoid over recall.

    The curve starts at recall 0 with the precision of the first cutoff.
    """
    if result.k != result.gallery_size:
        raise ValueError("precision-recall needs full rankings (hamming_search with k=None)")
    rel = _relevance(result, gallery_labels, query_labels)
    n_rel = rel.sum(axis=1)
    missing = np.flatnonzero(n_rel == 0)
    if missing.size:
        raise NoRelevantItems(missing.tolist())
    hits = np.cumsum(rel, axis=1)
    cutoffs = np.arange(1, result.k + 1)
    precision = (hits / cutoffs).mean(axis=0)
    recall = (hits / n_rel[:, None]).mean(axis=0)
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([[precision[0]], precision])
    auc = float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))
    return PRCurve(cutoffs, precision, recall, auc)


# -- pairwise error ----------------------------------------------------------


def pairwise_error(projections: np.ndarray, labels: PairLabelSet) -> np.ndarray:
    """Fraction of all N^2 ordered pairs whose sign product disagrees with the label.

    ``projections`` is ``N`` or ``N x d``; returns one rate per column.
    """
    proj = np.asarray(projections, dtype=np.float64)
    if proj.ndim == 1:
        proj = proj[:, None]
    n = proj.shape[0]
    if n != labels.n_samples:
        raise ShapeMismatch(f"{n} samples but labels cover {labels.n_samples}")
    if n > MAX_DIAGNOSTIC_SAMPLES:
        raise TooManyPairs(f"{n}^2 pairs exceed the diagnostic limit of {MAX_DIAGNOSTIC_SAMPLES}^2")
    s = np.where(proj >= 0.0, 1.0, -1.0)
    agree = np.einsum("ip,ip->p", s, labels.dense().astype(np.float64) @ s)
    # entries of s s^T and L are +-1: #disagreements = (N^2 - <s s^T, L>) / 2
    errors = np.rint((n * n - agree) / 2.0)
    return errors / float(n * n)


def pairwise_error_diagnostic(
    x: FeatureMatrix,
    partition: SubspacePartition,
    labels: PairLabelSet,
    cfg: TrainerConfig = TrainerConfig(),
    lam: Optional[float] = None,
    threads: int = 1,
) -> tuple[float, float]:
    """Average per-subspace pairwise error versus the error of one full-space classifier."""
    if x.n_samples > MAX_DIAGNOSTIC_SAMPLES:
        raise TooManyPairs(f"{x.n_samples}^2 pairs exceed the diagnostic limit of {MAX_DIAGNOSTIC_SAMPLES}^2")
    if lam is not None:
        cfg = replace(cfg, lam=lam)
    bank = train_bank(x, partition, labels, cfg, threads=threads)
    e_avg = float(pairwise_error(linear_projections(bank, x), labels).mean())
    w = train_subspace(x.values, labels, cfg, subspace_rng(cfg.seed, 0))
    xs = x.values
    if cfg.augment_bias:
        proj = xs @ w[:-1] - w[-1]
    else:
        proj = xs @ w
    e_org = float(pairwise_error(proj, labels)[0])
    return e_avg, e_org


# -- CSV output --------------------------------------------------------------


def _write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    with atomic_write(path) as fh:
        fh.write(buf.getvalue().encode())


def write_precision_csv(path, rows) -> None:
    """rows: (method, bits, k, precision)."""
    _write_csv(path, ["method", "bits", "k", "precision"], ([m, b, k, f"{p:.6f}"] for m, b, k, p in rows))


def write_pr_csv(path, rows) -> None:
    """rows: (method, bits, cutoff, precision, recall); macro-averaged over queries."""
    _write_csv(
        path,
        ["method", "bits", "cutoff", "precision", "recall"],
        ([m, b, c, f"{p:.6f}", f"{r:.6f}"] for m, b, c, p, r in rows),
    )


def write_diagnostic_csv(path, rows) -> None:
    """rows: (d, e_avg, e_org)."""
    _write_csv(path, ["d", "e_avg", "e_org"], ([d, f"{a:.6f}", f"{o:.6f}"] for d, a, o in rows))
