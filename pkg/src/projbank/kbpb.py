"""Kernel projection bank.

Each subspace bit is the sign of a kernel expansion over ``n`` basis
samples shared by all subspaces::

    g_p(x) = sum_i a_i k(b_i, x) - sum_i a_i mu_i,    mu_i = mean_j k(b_i, b_j)

The offset makes ``g_p`` sum to zero over the basis samples.

Kernel bank file layout (little-endian)::

    b"PBKB" | u32 version=1 | u8 kind (0 poly, 1 rbf) | u32 tau | f64 sigma (NaN = auto)
            | u64 n | <partition record> | u64[n] basis_indices
            | per subspace p: f64[n * m_p] basis_data, f64[n] mu, f64[n] a, f64 b, f64 sigma_p
"""
from __future__ import annotations

import hashlib
import io
import math
import struct
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import _kernels
from .agd import Trace, TrainerConfig, minimize, random_direction, subspace_rng
from .bpb import _batch_drawer, _map
from .cluster import SubspacePartition, read_partition, write_partition
from .errors import DegenerateSubspaceWarning, DimensionMismatch, NTooLarge, ShapeMismatch
from .io import FeatureMatrix, _open_for_read, atomic_write, read_array, read_exact, read_header, read_u64, write_header
from .labels import PairLabelSet

KERNEL_BANK_MAGIC = b"PBKB"
DEFAULT_N_BASIS = 1500
_KINDS = ("poly", "rbf")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    tau: int = 2
    sigma: Union[float, str] = "auto"

    def __post_init__(self):
        kind = {"polynomial": "poly"}.get(self.kind, self.kind)
        if kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "poly" and (int(self.tau) != self.tau or self.tau < 1):
            raise ValueError("polynomial degree tau must be a positive integer")
        if self.sigma != "auto" and not float(self.sigma) > 0:
            raise ValueError("sigma must be > 0 or 'auto'")

    @property
    def auto_sigma(self) -> bool:
        return self.kind == "rbf" and self.sigma == "auto"

    def resolved(self, sigma: float) -> "KernelSpec":
        return KernelSpec(self.kind, self.tau, sigma)


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray, sigma: Optional[float] = None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if spec.kind == "poly":
        return (a @ b.T + 1.0) ** int(spec.tau)
    s = float(spec.sigma if sigma is None else sigma)
    return np.exp(-cdist(a, b, "sqeuclidean") / (s * s))


def gram(spec: KernelSpec, basis: np.ndarray, sigma: Optional[float] = None) -> np.ndarray:
    k = kernel_matrix(spec, basis, basis, sigma)
    return 0.5 * (k + k.T)


def kernel_eval(spec: KernelSpec, u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if spec.kind == "poly":
        return float((u @ v + 1.0) ** int(spec.tau))
    diff = u - v
    return math.exp(-float(diff @ diff) / float(spec.sigma) ** 2)


def median_sigma(basis_sub: np.ndarray) -> float:
    """Median pairwise Euclidean distance; 1.0 when the samples coincide."""
    if basis_sub.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(basis_sub)))
    return med if med > 0 else 1.0


def select_basis(n_total: int, n: int, seed: int = 0) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > n_total:
        raise NTooLarge(f"cannot pick {n} basis samples from {n_total}")
    return np.sort(np.random.default_rng(seed).choice(n_total, size=n, replace=False))


def compute_mu(spec: KernelSpec, basis_sub, normalizer: Optional[int] = None, sigma=None) -> np.ndarray:
    """Row means of the basis kernel matrix (divide by ``normalizer`` instead of n if given)."""
    k = gram(spec, np.asarray(basis_sub, dtype=np.float64), sigma)
    return k.sum(axis=1) / (k.shape[0] if normalizer is None else normalizer)


@dataclass(frozen=True, eq=False)
class KernelBank:
    spec: KernelSpec
    partition: SubspacePartition
    basis_indices: np.ndarray
    basis_data: tuple  # per subspace, n x m_p
    coeffs: tuple  # per subspace, length n
    bias: np.ndarray  # per subspace
    mu: tuple  # per subspace, length n
    sigmas: np.ndarray  # resolved RBF bandwidth per subspace (0 for poly)

    def __post_init__(self):
        d = self.partition.n_subspaces
        idx = np.asarray(self.basis_indices, dtype=np.int64)
        n = idx.size
        if n < 1 or np.unique(idx).size != n:
            raise ValueError("basis_indices must be nonempty and distinct")
        if not (len(self.basis_data) == len(self.coeffs) == len(self.mu) == d):
            raise ShapeMismatch("one basis block, coefficient vector and mu vector per subspace required")
        bias = np.asarray(self.bias, dtype=np.float64).reshape(d)
        sigmas = np.asarray(self.sigmas, dtype=np.float64).reshape(d)
        data, coeffs, mus = [], [], []
        for p in range(d):
            m = self.partition.sizes[p]
            bd = np.array(self.basis_data[p], dtype=np.float64).reshape(n, m)
            a = np.array(self.coeffs[p], dtype=np.float64).reshape(n)
            mu = np.array(self.mu[p], dtype=np.float64).reshape(n)
            for arr in (bd, a, mu):
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"subspace {p}: non-finite values")
                arr.flags.writeable = False
            expected = float(a @ mu)
            if not math.isclose(bias[p], expected, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError(f"subspace {p}: bias {bias[p]} != a.mu = {expected}")
            data.append(bd)
            coeffs.append(a)
            mus.append(mu)
        if not (np.all(np.isfinite(bias)) and np.all(np.isfinite(sigmas))):
            raise ValueError("non-finite bias or sigma")
        for arr in (idx, bias, sigmas):
            arr.flags.writeable = False
        object.__setattr__(self, "basis_indices", idx)
        object.__setattr__(self, "basis_data", tuple(data))
        object.__setattr__(self, "coeffs", tuple(coeffs))
        object.__setattr__(self, "mu", tuple(mus))
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def n_basis(self) -> int:
        return self.basis_indices.size

    @property
    def n_bits(self) -> int:
        return self.partition.n_subspaces

    def subspace_spec(self, p: int) -> KernelSpec:
        return self.spec.resolved(float(self.sigmas[p])) if self.spec.kind == "rbf" else self.spec

    def predict(self, p: int, x_sub: np.ndarray) -> np.ndarray:
        """``g_p`` for each row of ``x_sub`` (samples restricted to subspace p)."""
        k = kernel_matrix(self.subspace_spec(p), x_sub, self.basis_data[p])
        return k @ self.coeffs[p] - self.bias[p]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_kernel_bank(buf, self)
        return buf.getvalue()

    def fingerprint(self) -> bytes:
        return hashlib.blake2b(self.to_bytes(), digest_size=8).digest()

    def __eq__(self, other):
        if not isinstance(other, KernelBank):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    __hash__ = None


def predict_kernel(bank: KernelBank, p: int, x_sub) -> float:
    x_sub = np.asarray(x_sub, dtype=np.float64)
    if x_sub.shape != (bank.partition.sizes[p],):
        raise DimensionMismatch(f"subspace {p} has {bank.partition.sizes[p]} dims, got {x_sub.shape}")
    return float(bank.predict(p, x_sub[None, :])[0])


def _as_batch(pairs):
    if hasattr(pairs, "label"):
        return pairs.i, pairs.j, pairs.label
    arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int8)


def kernel_objective(a, K, pairs, mu, lam) -> float:
    a, K, mu = (np.asarray(v, dtype=np.float64) for v in (a, K, mu))
    ii, jj, lab = _as_batch(pairs)
    g = K.T @ a - a @ mu
    margin = 1.0 - lab * g[ii] * g[jj]
    return 0.5 * float(a @ K @ a) + lam * float(np.maximum(margin, 0.0).sum())


def kernel_gradient(a, K, pairs, mu, lam) -> np.ndarray:
    a, K, mu = (np.asarray(v, dtype=np.float64) for v in (a, K, mu))
    ii, jj, lab = _as_batch(pairs)
    centered = K - mu[:, None]  # column i is k_i - mu
    g = centered.T @ a
    _, coeff, _ = _kernels.kernel_hinge(g, ii, jj, lab)
    return K @ a + lam * (centered @ coeff)


def _kernel_problem(K: np.ndarray, mu: np.ndarray, lam: float):
    centered = np.ascontiguousarray(K - mu[:, None])
    centered_t = np.ascontiguousarray(centered.T)

    def problem(a, batch, need_grad):
        g = centered_t @ a
        hinge, coeff, n_zero = _kernels.kernel_hinge(g, batch.i, batch.j, batch.label)
        ka = K @ a
        obj = 0.5 * float(a @ ka) + lam * hinge
        grad = ka + lam * (centered @ coeff) if need_grad else None
        return obj, grad, n_zero

    return problem


def _train_kernel_subspace(basis_sub, local_labels, spec, cfg, rng, normalizer, trace):
    n = basis_sub.shape[0]
    sigma = median_sigma(basis_sub) if spec.auto_sigma else (float(spec.sigma) if spec.kind == "rbf" else 0.0)
    K = gram(spec, basis_sub, sigma if spec.kind == "rbf" else None)
    mu = K.sum(axis=1) / (n if normalizer is None else normalizer)
    if np.all(basis_sub == basis_sub[0]):
        warnings.warn("all basis samples coincide in this subspace; using fixed coefficients",
                      DegenerateSubspaceWarning, stacklevel=3)
        a = np.full(n, 1.0 / np.sqrt(n))
    else:
        a0 = random_direction(rng, n, 1.0)
        a = minimize(a0, _kernel_problem(K, mu, cfg.lam), _batch_drawer(local_labels, cfg, rng), cfg, rng, trace)
    return a, mu, float(a @ mu), sigma


def train_kernel_bank(
    x: FeatureMatrix,
    partition: SubspacePartition,
    labels: PairLabelSet,
    spec: KernelSpec = KernelSpec(),
    n: int = DEFAULT_N_BASIS,
    cfg: TrainerConfig = TrainerConfig(),
    threads: int = 1,
    mu_normalizer: str = "n",
    traces: Optional[Sequence[Trace]] = None,
) -> KernelBank:
    """Train one kernel expansion per subspace.

    ``mu_normalizer="N"`` divides the kernel row sums by the training-set
    size instead of ``n``; the expansion is then no longer zero-centred.
    """
    if partition.n_dims != x.n_dims:
        raise DimensionMismatch(f"partition covers {partition.n_dims} dims, data has {x.n_dims}")
    if labels.n_samples != x.n_samples:
        raise ShapeMismatch(f"{x.n_samples} samples but labels cover {labels.n_samples}")
    if mu_normalizer not in ("n", "N"):
        raise ValueError("mu_normalizer must be 'n' or 'N'")
    basis = select_basis(x.n_samples, n, cfg.seed)
    local = labels.restrict(basis)
    xb = x.values[basis]
    normalizer = x.n_samples if mu_normalizer == "N" else None

    def one(p):
        tr = traces[p] if traces is not None else None
        block = np.ascontiguousarray(xb[:, partition.member_lists[p]])
        return (block,) + _train_kernel_subspace(block, local, spec, cfg, subspace_rng(cfg.seed, p), normalizer, tr)

    with warnings.catch_warnings():
        warnings.simplefilter("always", DegenerateSubspaceWarning)
        out = _map(one, range(partition.n_subspaces), threads)
    return KernelBank(
        spec=spec,
        partition=partition,
        basis_indices=basis,
        basis_data=tuple(o[0] for o in out),
        coeffs=tuple(o[1] for o in out),
        mu=tuple(o[2] for o in out),
        bias=np.array([o[3] for o in out]),
        sigmas=np.array([o[4] for o in out]),
    )


# -- file format -------------------------------------------------------------


def write_kernel_bank(fh, bank: KernelBank) -> None:
    spec = bank.spec
    sigma = float("nan") if spec.sigma == "auto" else float(spec.sigma)
    write_header(fh, KERNEL_BANK_MAGIC)
    fh.write(struct.pack("<BIdQ", _KINDS.index(spec.kind), int(spec.tau), sigma, bank.n_basis))
    write_partition(fh, bank.partition)
    fh.write(bank.basis_indices.astype("<u8").tobytes())
    for p in range(bank.partition.n_subspaces):
        fh.write(bank.basis_data[p].astype("<f8").tobytes())
        fh.write(bank.mu[p].astype("<f8").tobytes())
        fh.write(bank.coeffs[p].astype("<f8").tobytes())
        fh.write(struct.pack("<dd", bank.bias[p], bank.sigmas[p]))


def read_kernel_bank(fh) -> KernelBank:
    read_header(fh, KERNEL_BANK_MAGIC)
    kind, tau, sigma, n = struct.unpack("<BIdQ", read_exact(fh, struct.calcsize("<BIdQ")))
    if kind >= len(_KINDS):
        raise ShapeMismatch(f"unknown kernel kind code {kind}")
    spec = KernelSpec(_KINDS[kind], tau, "auto" if math.isnan(sigma) else sigma)
    partition = read_partition(fh)
    basis = read_array(fh, "<u8", n).astype(np.int64)
    data, mus, coeffs, bias, sigmas = [], [], [], [], []
    for m in partition.sizes:
        data.append(read_array(fh, "<f8", n * m).reshape(n, m))
        mus.append(read_array(fh, "<f8", n))
        coeffs.append(read_array(fh, "<f8", n))
        b, s = struct.unpack("<dd", read_exact(fh, 16))
        bias.append(b)
        sigmas.append(s)
    return KernelBank(spec, partition, basis, tuple(data), tuple(coeffs), np.array(bias), tuple(mus), np.array(sigmas))


def save_kernel_bank(bank: KernelBank, path) -> None:
    with atomic_write(path) as fh:
        write_kernel_bank(fh, bank)


def load_kernel_bank(path) -> KernelBank:
    with _open_for_read(path) as fh:
        bank = read_kernel_bank(fh)
        if fh.read(1):
            raise ShapeMismatch("trailing bytes after kernel bank payload")
    return bank
