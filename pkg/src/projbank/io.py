"""Feature matrices, dataset splits and the shared binary-file plumbing.

All on-disk formats are little-endian and start with a 4-byte magic
followed by a ``u32`` format version.  The feature-matrix file is::

    b"PBFM" | u32 version=1 | u64 n_samples | u64 n_dims | float32[n_samples * n_dims]

with samples stored row-major.
"""
from __future__ import annotations

import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, Optional, Sequence

import numpy as np

from .errors import BadMagic, IoFailure, NonFiniteValue, ShapeMismatch, UnsupportedVersion

FORMAT_VERSION = 1
MATRIX_MAGIC = b"PBFM"

_DISK_FLOAT = np.dtype("<f4")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """An immutable ``n_samples x n_dims`` block of real features.

    Values are kept in float64 for arithmetic but are rounded through
    float32 on construction, so that every matrix can be written to disk
    and read back without loss.
    """

    values: np.ndarray
    ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"feature matrix needs n_samples >= 1 and n_dims >= 1, got {v.shape}")
        v = np.ascontiguousarray(v, dtype=_DISK_FLOAT).astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            flat = int(bad[0])
            raise NonFiniteValue(flat, float(v.reshape(-1)[flat]))
        object.__setattr__(self, "values", _readonly(v))
        if self.ids is not None:
            ids = tuple(self.ids)
            if len(ids) != v.shape[0]:
                raise ValueError("ids must have one entry per sample")
            object.__setattr__(self, "ids", ids)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def take(self, rows) -> "FeatureMatrix":
        ids = None if self.ids is None else [self.ids[i] for i in np.asarray(rows)]
        return FeatureMatrix(self.values[np.asarray(rows)], ids)

    def columns(self, dims) -> np.ndarray:
        """Return the (writable copy of) values restricted to ``dims``."""
        return self.values[:, np.asarray(dims)]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: FeatureMatrix
    gallery: FeatureMatrix
    query: FeatureMatrix
    gallery_labels: np.ndarray
    query_labels: np.ndarray
    train_labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        dims = {self.train.n_dims, self.gallery.n_dims, self.query.n_dims}
        if len(dims) != 1:
            raise ShapeMismatch(f"train/gallery/query disagree on n_dims: {sorted(dims)}")
        if len(self.gallery_labels) != self.gallery.n_samples:
            raise ShapeMismatch("one gallery label per gallery sample required")
        if len(self.query_labels) != self.query.n_samples:
            raise ShapeMismatch("one query label per query sample required")


# -- binary header helpers ---------------------------------------------------


def write_header(fh: BinaryIO, magic: bytes, version: int = FORMAT_VERSION) -> None:
    fh.write(magic)
    fh.write(struct.pack("<I", version))


def read_header(fh: BinaryIO, magic: bytes) -> int:
    got = fh.read(4)
    if got != magic:
        raise BadMagic(f"expected magic {magic!r}, found {got!r}")
    raw = fh.read(4)
    if len(raw) != 4:
        raise ShapeMismatch("truncated header")
    (version,) = struct.unpack("<I", raw)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{magic.decode()} version {version} (supported: {FORMAT_VERSION})")
    return version


def read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ShapeMismatch(f"expected {n} bytes, file ended after {len(buf)}")
    return buf


def read_u64(fh: BinaryIO) -> int:
    return struct.unpack("<Q", read_exact(fh, 8))[0]


def read_array(fh: BinaryIO, dtype, count: int) -> np.ndarray:
    dtype = np.dtype(dtype)
    return np.frombuffer(read_exact(fh, dtype.itemsize * count), dtype=dtype).copy()


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


_UMASK = _current_umask()


@contextmanager
def atomic_write(path) -> Iterator[BinaryIO]:
    """Open a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except OSError as exc:
        _unlink_quietly(tmp)
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    except BaseException:
        _unlink_quietly(tmp)
        raise


def _unlink_quietly(p):
    try:
        os.unlink(p)
    except OSError:
        pass


def _open_for_read(path) -> BinaryIO:
    try:
        return open(path, "rb")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


# -- feature matrices --------------------------------------------------------


def save_matrix(m: FeatureMatrix, path) -> None:
    with atomic_write(path) as fh:
        write_header(fh, MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", m.n_samples, m.n_dims))
        fh.write(m.values.astype(_DISK_FLOAT).tobytes(order="C"))


def load_matrix(path) -> FeatureMatrix:
    with _open_for_read(path) as fh:
        read_header(fh, MATRIX_MAGIC)
        n, d = read_u64(fh), read_u64(fh)
        payload = fh.read()
    expected = n * d * _DISK_FLOAT.itemsize
    if len(payload) != expected:
        raise ShapeMismatch(
            f"header declares {n}x{d} float32 ({expected} bytes), payload has {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype=_DISK_FLOAT).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        flat = int(bad[0])
        raise NonFiniteValue(flat, float(values.reshape(-1)[flat]))
    return FeatureMatrix(values)


def save_labels(labels, path) -> None:
    """Write one integer label per line."""
    text = "".join(f"{int(v)}\n" for v in np.asarray(labels))
    with atomic_write(path) as fh:
        fh.write(text.encode())


def load_labels(path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.int64, ndmin=1)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


# -- synthetic data ----------------------------------------------------------


def _split_sizes(total: int) -> tuple[int, int, int]:
    n_gallery = max(1, round(0.1 * total))
    n_query = max(1, round(0.1 * total))
    n_train = total - n_gallery - n_query
    if n_train < 1:
        raise ValueError(f"need at least 3 samples to form a split, got {total}")
    return n_train, n_gallery, n_query


def generate_synthetic(
    n_clusters: int,
    samples_per_cluster: int,
    n_dims: int,
    noise_scale: float,
    seed: int,
) -> DatasetSplit:
    """Gaussian-mixture data split 80/10/10 into train/gallery/query.

    Cluster centres are uniform in ``[-1, 1]^n_dims``; each sample adds
    isotropic Gaussian noise of standard deviation ``noise_scale``.  The
    cluster index is the ground-truth label.
    """
    if min(n_clusters, samples_per_cluster, n_dims) < 1:
        raise ValueError("all counts must be >= 1")
    if not noise_scale > 0:
        raise ValueError("noise_scale must be > 0")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1.0, 1.0, size=(n_clusters, n_dims))
    labels = np.repeat(np.arange(n_clusters), samples_per_cluster)
    x = centers[labels] + noise_scale * rng.standard_normal((labels.size, n_dims))
    order = rng.permutation(labels.size)
    x, labels = x[order], labels[order]
    n_train, n_gallery, _ = _split_sizes(labels.size)
    a, b = n_train, n_train + n_gallery
    return DatasetSplit(
        train=FeatureMatrix(x[:a]),
        gallery=FeatureMatrix(x[a:b]),
        query=FeatureMatrix(x[b:]),
        gallery_labels=labels[a:b].copy(),
        query_labels=labels[b:].copy(),
        train_labels=labels[:a].copy(),
    )


def generate_blocked(
    n_samples: int,
    n_dims: int,
    n_groups: int,
    n_clusters: int,
    seed: int,
    noise_scale: float = 0.3,
) -> tuple[FeatureMatrix, np.ndarray]:
    """Samples whose dimensions come in correlated groups.

    Every group of dimensions is driven by one latent factor per sample;
    the latent factors themselves come from ``n_clusters`` mixture
    components.  Returns the matrix and the per-dimension group index.
    """
    if n_groups > n_dims:
        raise ValueError("n_groups must not exceed n_dims")
    rng = np.random.default_rng(seed)
    group_of_dim = rng.permutation(np.arange(n_dims) % n_groups)
    centers = rng.uniform(-1.0, 1.0, size=(n_clusters, n_groups))
    cluster = rng.integers(n_clusters, size=n_samples)
    latent = centers[cluster] + 0.25 * rng.standard_normal((n_samples, n_groups))
    loadings = rng.uniform(0.5, 1.5, size=n_dims) * rng.choice([-1.0, 1.0], size=n_dims)
    x = latent[:, group_of_dim] * loadings + noise_scale * rng.standard_normal((n_samples, n_dims))
    return FeatureMatrix(x), group_of_dim
