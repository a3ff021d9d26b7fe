"""Binary codes: encoding with a bank, the sign/LSH baselines, packing.

Bit ``p`` of a code is 1 when the p-th projection is ``>= 0``.  Bits are
packed little-endian within bytes (bit p lives in byte ``p // 8`` at
position ``p % 8``); each sample occupies ``ceil(n_bits / 8)`` bytes and
unused high bits are zero.

Code file layout::

    b"PBBC" | u32 version=1 | u64 n_samples | u64 n_bits | 8-byte bank fingerprint | packed rows
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _kernels
from .bpb import LinearBank
from .errors import DimensionMismatch, ShapeMismatch
from .io import FeatureMatrix, _open_for_read, atomic_write, read_exact, read_header, read_u64, write_header
from .kbpb import KernelBank, kernel_eval

CODE_MAGIC = b"PBBC"


def pack_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=bool)
    return np.packbits(bits, axis=1, bitorder="little")


def unpack_bits(packed: np.ndarray, n_bits: int) -> np.ndarray:
    return np.unpackbits(packed, axis=1, count=n_bits, bitorder="little").astype(bool)


@dataclass(frozen=True, eq=False)
class BinaryCodeSet:
    n_bits: int
    packed: np.ndarray  # (n_samples, ceil(n_bits / 8)) uint8
    fingerprint: bytes

    def __post_init__(self):
        packed = np.ascontiguousarray(self.packed, dtype=np.uint8)
        if packed.ndim != 2 or packed.shape[1] != (self.n_bits + 7) // 8:
            raise ShapeMismatch(f"packed rows must hold {(self.n_bits + 7) // 8} bytes, got shape {packed.shape}")
        if len(self.fingerprint) != 8:
            raise ValueError("fingerprint must be 8 bytes")
        spare = packed.shape[1] * 8 - self.n_bits
        if spare and np.any(packed[:, -1] >> (8 - spare)):
            raise ValueError("padding bits must be zero")
        packed.flags.writeable = False
        object.__setattr__(self, "packed", packed)

    @classmethod
    def from_bits(cls, bits: np.ndarray, fingerprint: bytes) -> "BinaryCodeSet":
        bits = np.atleast_2d(np.asarray(bits, dtype=bool))
        return cls(bits.shape[1], pack_bits(bits), fingerprint)

    @property
    def n_samples(self) -> int:
        return self.packed.shape[0]

    def bits(self) -> np.ndarray:
        return unpack_bits(self.packed, self.n_bits)

    def words(self) -> np.ndarray:
        """Rows as little-endian uint64 words (zero padded)."""
        nbytes = self.packed.shape[1]
        width = -(-nbytes // 8) * 8
        buf = np.zeros((self.n_samples, width), dtype=np.uint8)
        buf[:, :nbytes] = self.packed
        return buf.view("<u8")

    def take(self, rows) -> "BinaryCodeSet":
        return BinaryCodeSet(self.n_bits, self.packed[np.asarray(rows)], self.fingerprint)

    def __eq__(self, other):
        if not isinstance(other, BinaryCodeSet):
            return NotImplemented
        return (
            self.n_bits == other.n_bits
            and self.fingerprint == other.fingerprint
            and np.array_equal(self.packed, other.packed)
        )

    __hash__ = None


def _tag_fingerprint(*parts) -> bytes:
    return hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()


def _check_dims(x: FeatureMatrix, n_dims: int):
    if x.n_dims != n_dims:
        raise DimensionMismatch(f"bank expects {n_dims} dims, data has {x.n_dims}")


def linear_projections(bank: LinearBank, x: FeatureMatrix) -> np.ndarray:
    _check_dims(x, bank.partition.n_dims)
    dims, offsets, weights = bank.flat()
    proj = _kernels.segment_dot(x.values, dims, offsets, weights)
    if bank.biases is not None:
        proj = proj - bank.biases
    return proj


def encode_linear(bank: LinearBank, x: FeatureMatrix) -> BinaryCodeSet:
    return BinaryCodeSet.from_bits(linear_projections(bank, x) >= 0.0, bank.fingerprint())


class OpCounter:
    """Counts multiply-accumulates and kernel evaluations in the scalar encoders."""

    def __init__(self):
        self.macs = 0
        self.kernel_evals = 0


def encode_linear_sample(bank: LinearBank, x_row, counter: Optional[OpCounter] = None) -> np.ndarray:
    """Scalar reference encoder for one sample; returns the unpacked bits."""
    x_row = np.asarray(x_row, dtype=np.float64)
    if x_row.shape != (bank.partition.n_dims,):
        raise DimensionMismatch(f"bank expects {bank.partition.n_dims} dims, got {x_row.shape}")
    bits = np.zeros(bank.n_bits, dtype=bool)
    for p, (members, w) in enumerate(zip(bank.partition.member_lists, bank.weights)):
        acc = 0.0
        for dim, coef in zip(members.tolist(), w.tolist()):
            acc += x_row[dim] * coef
            if counter is not None:
                counter.macs += 1
        if bank.biases is not None:
            acc -= bank.biases[p]
        bits[p] = acc >= 0.0
    return bits


def kernel_projections(bank: KernelBank, x: FeatureMatrix) -> np.ndarray:
    _check_dims(x, bank.partition.n_dims)
    out = np.empty((x.n_samples, bank.n_bits))
    for p, members in enumerate(bank.partition.member_lists):
        out[:, p] = bank.predict(p, x.values[:, members])
    return out


def encode_kernel(bank: KernelBank, x: FeatureMatrix) -> BinaryCodeSet:
    return BinaryCodeSet.from_bits(kernel_projections(bank, x) >= 0.0, bank.fingerprint())


def encode_kernel_sample(bank: KernelBank, x_row, counter: Optional[OpCounter] = None) -> np.ndarray:
    x_row = np.asarray(x_row, dtype=np.float64)
    if x_row.shape != (bank.partition.n_dims,):
        raise DimensionMismatch(f"bank expects {bank.partition.n_dims} dims, got {x_row.shape}")
    bits = np.zeros(bank.n_bits, dtype=bool)
    for p, members in enumerate(bank.partition.member_lists):
        spec = bank.subspace_spec(p)
        xs = x_row[members]
        g = -bank.bias[p]
        for a_i, b_i in zip(bank.coeffs[p], bank.basis_data[p]):
            g += a_i * kernel_eval(spec, b_i, xs)
            if counter is not None:
                counter.kernel_evals += 1
        bits[p] = g >= 0.0
    return bits


def encode(bank: Union[LinearBank, KernelBank], x: FeatureMatrix) -> BinaryCodeSet:
    if isinstance(bank, KernelBank):
        return encode_kernel(bank, x)
    return encode_linear(bank, x)


def encode_sign_baseline(x: FeatureMatrix) -> BinaryCodeSet:
    return BinaryCodeSet.from_bits(x.values >= 0.0, _tag_fingerprint("sign", x.n_dims))


def lsh_matrix(n_dims: int, d: int, seed: int) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    return np.random.default_rng(seed).standard_normal((n_dims, d))


def encode_lsh_baseline(x: FeatureMatrix, d: int, seed: int = 0) -> BinaryCodeSet:
    g = lsh_matrix(x.n_dims, d, seed)
    return BinaryCodeSet.from_bits(x.values @ g >= 0.0, _tag_fingerprint("lsh", x.n_dims, d, seed))


# -- file format -------------------------------------------------------------


def save_codes(codes: BinaryCodeSet, path) -> None:
    with atomic_write(path) as fh:
        write_header(fh, CODE_MAGIC)
        fh.write(struct.pack("<QQ", codes.n_samples, codes.n_bits))
        fh.write(codes.fingerprint)
        fh.write(codes.packed.tobytes())


def load_codes(path) -> BinaryCodeSet:
    with _open_for_read(path) as fh:
        read_header(fh, CODE_MAGIC)
        n, n_bits = read_u64(fh), read_u64(fh)
        fp = read_exact(fh, 8)
        payload = fh.read()
    row = (n_bits + 7) // 8
    if len(payload) != n * row:
        raise ShapeMismatch(f"header declares {n} codes of {row} bytes, payload has {len(payload)} bytes")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(n, row)
    return BinaryCodeSet(n_bits, packed, fp)
