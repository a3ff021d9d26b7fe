import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from projbank.bpb import LinearBank
from projbank.cluster import random_split
from projbank.encode import (
    BinaryCodeSet,
    OpCounter,
    encode,
    encode_kernel_sample,
    encode_linear_sample,
    encode_lsh_baseline,
    encode_sign_baseline,
    load_codes,
    lsh_matrix,
    pack_bits,
    save_codes,
    unpack_bits,
)
from projbank.errors import DimensionMismatch, ShapeMismatch
from projbank.io import FeatureMatrix
from projbank.kbpb import KernelSpec

from tests.test_kbpb import random_bank


def random_linear_bank(rng, dims, d, bias=False):
    part = random_split(dims, d, seed=int(rng.integers(1000)))
    ws = tuple(rng.standard_normal(m) for m in part.sizes)
    return LinearBank(part, ws, rng.standard_normal(d) if bias else None)


@given(hnp.arrays(bool, st.tuples(st.integers(1, 8), st.integers(1, 140))))
def test_pack_unpack_exact(bits):
    packed = pack_bits(bits)
    assert packed.shape[1] == (bits.shape[1] + 7) // 8
    assert np.array_equal(unpack_bits(packed, bits.shape[1]), bits)


def test_bit_order_little_endian():
    bits = np.zeros((1, 10), bool)
    bits[0, [0, 9]] = True
    assert pack_bits(bits).tolist() == [[1, 2]]


def test_padding_must_be_zero():
    with pytest.raises(ValueError):
        BinaryCodeSet(3, np.array([[0b1000]], np.uint8), b"\0" * 8)


@pytest.mark.parametrize("bias", [False, True])
def test_linear_encode_vs_per_bit(rng, bias):
    bank = random_linear_bank(rng, 24, 8, bias)
    x = FeatureMatrix(rng.standard_normal((20, 24)))
    got = encode(bank, x).bits()
    for n in range(20):
        for p, members in enumerate(bank.partition.member_lists):
            v = sum(x.values[n, t] * w for t, w in zip(members, bank.weights[p]))
            if bias:
                v -= bank.biases[p]
            assert got[n, p] == (v >= 0)
        assert np.array_equal(got[n], encode_linear_sample(bank, x.values[n]))


def test_sample_encoder_counts_dims_macs(rng):
    for _ in range(20):
        dims = int(rng.integers(2, 300))
        d = int(rng.integers(1, dims + 1))
        bank = random_linear_bank(rng, dims, d)
        c = OpCounter()
        encode_linear_sample(bank, rng.standard_normal(dims), c)
        assert c.macs == dims == bank.n_scalars


@pytest.mark.parametrize("kind", ["poly", "rbf"])
def test_kernel_encode_vs_scalar(rng, kind):
    bank = random_bank(rng, KernelSpec(kind, 2), n=8, dims=6, d=3)
    x = FeatureMatrix(rng.standard_normal((20, 6)))
    got = encode(bank, x).bits()
    c = OpCounter()
    for n in range(20):
        assert np.array_equal(got[n], encode_kernel_sample(bank, x.values[n], c))
    assert c.kernel_evals == 20 * 3 * 8


def test_sign_baseline_per_entry(rng):
    a = rng.standard_normal((6, 11))
    a[0, 0] = 0.0
    bits = encode_sign_baseline(FeatureMatrix(a)).bits()
    assert bits.shape == (6, 11)
    for i in range(6):
        for j in range(11):
            assert bits[i, j] == (a[i, j] >= 0)


def test_lsh_matches_dense_multiply(rng):
    x = FeatureMatrix(rng.standard_normal((15, 4)))
    g = lsh_matrix(4, 1, seed=2)
    bits = encode_lsh_baseline(x, 1, seed=2).bits()[:, 0]
    assert np.array_equal(bits, x.values @ g[:, 0] >= 0)
    assert encode_lsh_baseline(x, 5, seed=2) == encode_lsh_baseline(x, 5, seed=2)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.0, 3.0])
def test_lsh_collision_rate(theta):
    u = np.array([[1.0, 0.0], [np.cos(theta), np.sin(theta)]])
    bits = encode_lsh_baseline(FeatureMatrix(u), 10000, seed=0).bits()
    agree = np.mean(bits[0] == bits[1])
    assert abs(agree - (1 - theta / np.pi)) < 0.02


def test_dimension_mismatch(rng):
    bank = random_linear_bank(rng, 10, 2)
    with pytest.raises(DimensionMismatch):
        encode(bank, FeatureMatrix(np.zeros((2, 9))))


def test_codes_roundtrip_and_fingerprint(tmp_path, rng):
    bank = random_linear_bank(rng, 40, 13)
    codes = encode(bank, FeatureMatrix(rng.standard_normal((9, 40))))
    assert codes.fingerprint == bank.fingerprint()
    save_codes(codes, tmp_path / "c.pbbc")
    assert load_codes(tmp_path / "c.pbbc") == codes
    raw = (tmp_path / "c.pbbc").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(ShapeMismatch):
        load_codes(tmp_path / "short")
