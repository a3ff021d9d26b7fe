"""Compiled and numpy backends against each other and against naive loops."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from projbank import _kernels
from tests.conftest import BACKENDS


def naive_hamming(q, g, n_bits):
    out = np.zeros((q.shape[0], g.shape[0]), dtype=np.int64)
    for a in range(q.shape[0]):
        for b in range(g.shape[0]):
            out[a, b] = sum(int(q[a, t]) != int(g[b, t]) for t in range(n_bits))
    return out


def words_of(bits):
    packed = np.packbits(bits, axis=1, bitorder="little")
    width = -(-packed.shape[1] // 8) * 8
    buf = np.zeros((bits.shape[0], width), np.uint8)
    buf[:, : packed.shape[1]] = packed
    return buf.view("<u8")


@pytest.mark.parametrize("n_bits", [1, 7, 64, 65, 130])
def test_hamming_vs_naive(backend, n_bits):
    rng = np.random.default_rng(n_bits)
    q = rng.integers(0, 2, (6, n_bits)).astype(bool)
    g = rng.integers(0, 2, (9, n_bits)).astype(bool)
    got = _kernels.hamming_distances(words_of(q), words_of(g), impl=backend)
    assert got.dtype == np.int32
    assert np.array_equal(got, naive_hamming(q, g, n_bits))


def test_hamming_hand_case(backend):
    q = np.array([[0b1010]], dtype=np.uint64)
    g = np.array([[0b0101]], dtype=np.uint64)
    assert _kernels.hamming_distances(q, g, impl=backend)[0, 0] == 4


def _hinge_instance(seed, n=30, m=5, p=80):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, m))
    w = rng.standard_normal(m)
    ii = rng.integers(0, n, p)
    jj = rng.integers(0, n, p)
    lab = rng.choice(np.array([-1, 1], np.int8), p)
    return x, w, ii, jj, lab


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
@given(st.integers(0, 2**32 - 1))
def test_linear_hinge_backends_agree(seed):
    x, w, ii, jj, lab = _hinge_instance(seed)
    impls = _kernels.backends()
    a = _kernels.linear_hinge(x, w, ii, jj, lab, impl=impls["numpy"])
    b = _kernels.linear_hinge(x, w, ii, jj, lab, impl=impls["cython"])
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
    assert a[2] == b[2]


def test_linear_hinge_vs_loop(backend):
    x, w, ii, jj, lab = _hinge_instance(4)
    total, grad = 0.0, np.zeros_like(w)
    for i, j, l in zip(ii, jj, lab):
        m = 1 - l * (x[i] @ w) * (x[j] @ w)
        if m > 0:
            total += m
            grad += -l * (x[i] * (x[j] @ w) + x[j] * (x[i] @ w))
    t, g, _ = _kernels.linear_hinge(x, w, ii, jj, lab, impl=backend)
    assert t == pytest.approx(total, rel=1e-12)
    np.testing.assert_allclose(g, grad, rtol=1e-10, atol=1e-12)


def test_zero_margin_counted(backend):
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    w = np.array([1.0, 1.0])
    # margin 1 - 1*1*1 = 0
    t, g, n_zero = _kernels.linear_hinge(x, w, [0], [1], [1], impl=backend)
    assert (t, n_zero) == (0.0, 1)
    assert np.all(g == 0)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
@given(st.integers(0, 2**32 - 1))
def test_kernel_hinge_backends_agree(seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(25)
    ii, jj = rng.integers(0, 25, 60), rng.integers(0, 25, 60)
    lab = rng.choice(np.array([-1, 1], np.int8), 60)
    impls = _kernels.backends()
    a = _kernels.kernel_hinge(g, ii, jj, lab, impl=impls["numpy"])
    b = _kernels.kernel_hinge(g, ii, jj, lab, impl=impls["cython"])
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
    assert a[2] == b[2]


def test_segment_dot_vs_loop(backend):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 10))
    dims = rng.permutation(10)
    offsets = np.array([0, 3, 4, 10])
    weights = rng.standard_normal(10)
    got = _kernels.segment_dot(x, dims, offsets, weights, impl=backend)
    want = np.zeros((7, 3))
    for p in range(3):
        for t in range(offsets[p], offsets[p + 1]):
            want[:, p] += x[:, dims[t]] * weights[t]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def _run(code, **env):
    import os
    import subprocess
    import sys

    full = dict(os.environ, **env)
    return subprocess.run([sys.executable, "-c", code], env=full, capture_output=True, text=True, check=True).stdout


def test_pure_fallback_selected_by_env():
    out = _run("import projbank; print(projbank.BACKEND)", PROJBANK_PURE="1")
    assert out.strip() == "numpy"


def test_benchmark_script_runs():
    from pathlib import Path

    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    out = _run(f"import sys; sys.argv=['b', '--repeat', '1', '--scale', '0.1']; exec(open({str(script)!r}).read())")
    assert "segment_dot" in out
