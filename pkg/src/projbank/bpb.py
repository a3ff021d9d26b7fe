"""Linear projection bank: one max-margin weight vector per subspace.

For a subspace with data ``x_(p)`` the weight vector ``w`` minimises::

    0.5 * ||w||^2 + lam * sum_ij max(0, 1 - l_ij * (w . x_i) * (w . x_j))

Bank file layout (little-endian)::

    b"PBLB" | u32 version=1 | <partition record> | u8 has_bias
            | float64[D] weights in subspace order | float64[d] biases (if has_bias)
"""
from __future__ import annotations

import hashlib
import io
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .agd import Trace, TrainerConfig, minimize, random_direction, subspace_rng
from .cluster import SubspacePartition, read_partition, write_partition
from .errors import DegenerateSubspaceWarning, DimensionMismatch, ShapeMismatch
from .io import FeatureMatrix, _open_for_read, atomic_write, read_array, read_exact, read_header, write_header
from .labels import PairLabelSet, sample_pairs

LINEAR_BANK_MAGIC = b"PBLB"


def hinge_term(w, xi, xj, l) -> float:
    return max(0.0, 1.0 - l * float(np.dot(w, xi)) * float(np.dot(w, xj)))


def hinge_gradient(w, xi, xj, l) -> np.ndarray:
    w, xi, xj = (np.asarray(a, dtype=np.float64) for a in (w, xi, xj))
    pi, pj = float(w @ xi), float(w @ xj)
    if 1.0 - l * pi * pj <= 0.0:
        return np.zeros_like(w)
    # -l (xi xj^T + xj xi^T) w
    return -l * (xi * pj + xj * pi)


def objective(w, pairs: Iterable, lam: float) -> float:
    w = np.asarray(w, dtype=np.float64)
    total = sum(hinge_term(w, xi, xj, l) for xi, xj, l in pairs)
    return 0.5 * float(w @ w) + lam * total


@dataclass(frozen=True, eq=False)
class LinearBank:
    partition: SubspacePartition
    weights: tuple  # one float64 vector per subspace
    biases: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.weights) != self.partition.n_subspaces:
            raise ShapeMismatch("one weight vector per subspace required")
        ws = []
        for p, (w, m) in enumerate(zip(self.weights, self.partition.sizes)):
            w = np.array(w, dtype=np.float64)
            if w.shape != (m,):
                raise ShapeMismatch(f"subspace {p}: weight length {w.size}, subspace size {m}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"subspace {p}: non-finite weights")
            w.flags.writeable = False
            ws.append(w)
        object.__setattr__(self, "weights", tuple(ws))
        if self.biases is not None:
            b = np.array(self.biases, dtype=np.float64)
            if b.shape != (self.partition.n_subspaces,):
                raise ShapeMismatch("one bias per subspace required")
            b.flags.writeable = False
            object.__setattr__(self, "biases", b)

    @property
    def n_bits(self) -> int:
        return self.partition.n_subspaces

    @property
    def n_scalars(self) -> int:
        """Stored weight scalars (biases excluded)."""
        return sum(w.size for w in self.weights)

    def flat(self):
        """Dimension order, segment offsets and concatenated weights for encoding."""
        dims = np.concatenate(self.partition.member_lists)
        offsets = np.concatenate([[0], np.cumsum(self.partition.sizes)])
        return dims, offsets, np.concatenate(self.weights)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_linear_bank(buf, self)
        return buf.getvalue()

    def fingerprint(self) -> bytes:
        return hashlib.blake2b(self.to_bytes(), digest_size=8).digest()

    def __eq__(self, other):
        if not isinstance(other, LinearBank):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    __hash__ = None


def _is_degenerate(x_sub: np.ndarray) -> bool:
    return bool(np.all(x_sub == x_sub[0]))


def _linear_problem(x_sub: np.ndarray, lam: float):
    def problem(w, batch, need_grad):
        hinge, hgrad, n_zero = _kernels.linear_hinge(x_sub, w, batch.i, batch.j, batch.label, need_grad)
        obj = 0.5 * float(w @ w) + lam * hinge
        grad = w + lam * hgrad if need_grad else None
        return obj, grad, n_zero

    return problem


def _batch_drawer(labels: PairLabelSet, cfg: TrainerConfig, rng: np.random.Generator):
    n_pos = min(cfg.n_pos, labels.n_positive)
    n_neg = min(cfg.n_neg, labels.n_negative)

    def draw():
        return sample_pairs(labels, n_pos, n_neg, cfg.include_diagonal, rng)

    return draw


def train_subspace(
    x_sub,
    labels: PairLabelSet,
    cfg: TrainerConfig = TrainerConfig(),
    rng: Optional[np.random.Generator] = None,
    trace: Optional[Trace] = None,
) -> np.ndarray:
    """Learn one weight vector for the data of a single subspace.

    ``x_sub`` is an ``N x m`` array (or FeatureMatrix).  With
    ``cfg.augment_bias`` a constant ``-1`` coordinate is appended and the
    returned vector has ``m + 1`` entries, the last being the bias.
    """
    x_sub = np.asarray(x_sub.values if isinstance(x_sub, FeatureMatrix) else x_sub, dtype=np.float64)
    if x_sub.ndim != 2 or x_sub.shape[0] < 1 or x_sub.shape[1] < 1:
        raise ValueError("x_sub must be a nonempty 2-D array")
    if x_sub.shape[0] != labels.n_samples:
        raise ShapeMismatch(f"{x_sub.shape[0]} samples but labels cover {labels.n_samples}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    m = x_sub.shape[1]
    if _is_degenerate(x_sub):
        warnings.warn("all samples coincide in this subspace; using a fixed unit vector",
                      DegenerateSubspaceWarning, stacklevel=2)
        w = np.full(m, 1.0 / np.sqrt(m))
        return np.append(w, 0.0) if cfg.augment_bias else w
    if cfg.augment_bias:
        x_sub = np.hstack([x_sub, -np.ones((x_sub.shape[0], 1))])
    x_sub = np.ascontiguousarray(x_sub)
    w0 = random_direction(rng, x_sub.shape[1], 1.0)
    return minimize(w0, _linear_problem(x_sub, cfg.lam), _batch_drawer(labels, cfg, rng), cfg, rng, trace)


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def train_bank(
    x: FeatureMatrix,
    partition: SubspacePartition,
    labels: PairLabelSet,
    cfg: TrainerConfig = TrainerConfig(),
    threads: int = 1,
    traces: Optional[Sequence[Trace]] = None,
) -> LinearBank:
    if partition.n_dims != x.n_dims:
        raise DimensionMismatch(f"partition covers {partition.n_dims} dims, data has {x.n_dims}")

    def one(p):
        members = partition.member_lists[p]
        tr = traces[p] if traces is not None else None
        return train_subspace(x.columns(members), labels, cfg, subspace_rng(cfg.seed, p), tr)

    with warnings.catch_warnings():
        warnings.simplefilter("always", DegenerateSubspaceWarning)
        ws = _map(one, range(partition.n_subspaces), threads)
    if cfg.augment_bias:
        return LinearBank(partition, tuple(w[:-1] for w in ws), np.array([w[-1] for w in ws]))
    return LinearBank(partition, tuple(ws))


# -- file format -------------------------------------------------------------


def write_linear_bank(fh, bank: LinearBank) -> None:
    write_header(fh, LINEAR_BANK_MAGIC)
    write_partition(fh, bank.partition)
    fh.write(struct.pack("<B", bank.biases is not None))
    fh.write(np.concatenate(bank.weights).astype("<f8").tobytes())
    if bank.biases is not None:
        fh.write(bank.biases.astype("<f8").tobytes())


def read_linear_bank(fh) -> LinearBank:
    read_header(fh, LINEAR_BANK_MAGIC)
    partition = read_partition(fh)
    (has_bias,) = struct.unpack("<B", read_exact(fh, 1))
    flat = read_array(fh, "<f8", partition.n_dims)
    bounds = np.cumsum(partition.sizes)[:-1]
    biases = read_array(fh, "<f8", partition.n_subspaces) if has_bias else None
    return LinearBank(partition, tuple(np.split(flat, bounds)), biases)


def save_linear_bank(bank: LinearBank, path) -> None:
    with atomic_write(path) as fh:
        write_linear_bank(fh, bank)


def load_linear_bank(path) -> LinearBank:
    with _open_for_read(path) as fh:
        bank = read_linear_bank(fh)
        if fh.read(1):
            raise ShapeMismatch("trailing bytes after bank payload")
    return bank
