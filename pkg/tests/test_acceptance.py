"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py``; the summary lines are
printed at the end of the session.
"""
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from projbank.agd import Trace, TrainerConfig
from projbank.bpb import LinearBank, hinge_gradient, hinge_term, load_linear_bank, save_linear_bank, train_bank
from projbank.cluster import cluster_dimensions, load_partition, random_split, save_partition
from projbank.encode import (
    BinaryCodeSet,
    OpCounter,
    encode,
    encode_linear_sample,
    encode_lsh_baseline,
    encode_sign_baseline,
    kernel_projections,
    linear_projections,
    load_codes,
    pack_bits,
    save_codes,
    unpack_bits,
)
from projbank.evaluate import hamming_search, pairwise_error, pairwise_error_diagnostic, precision_at_k
from projbank.io import FeatureMatrix, generate_blocked, generate_synthetic, load_matrix, save_matrix
from projbank.kbpb import (
    KernelBank,
    KernelSpec,
    compute_mu,
    gram,
    kernel_gradient,
    kernel_objective,
    load_kernel_bank,
    median_sigma,
    save_kernel_bank,
    train_kernel_bank,
)
from projbank.labels import build_labels

from tests._data import xor_data
from tests.conftest import ACCEPTANCE_LINES
from tests.test_cluster import brute_force_two_way, groups, two_group_matrix
from tests.test_evaluate import naive_search
from tests.test_labels import brute_force_labels


@contextmanager
def criterion(number, title, limit_s=None):
    start = time.perf_counter()
    info = {}
    try:
        yield info
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        reason = info.get("detail") or (str(exc).splitlines() or [type(exc).__name__])[0]
        ACCEPTANCE_LINES.append(f"[FAIL] {number}. {title} ({elapsed:.1f}s) {reason}")
        raise
    elapsed = time.perf_counter() - start
    if limit_s is not None and elapsed >= limit_s:
        ACCEPTANCE_LINES.append(f"[FAIL] {number}. {title} ({elapsed:.1f}s >= {limit_s}s budget)")
        pytest.fail(f"criterion {number} took {elapsed:.1f}s, budget {limit_s}s")
    ACCEPTANCE_LINES.append(f"[PASS] {number}. {title} ({elapsed:.1f}s) {info.get('detail', '')}")


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-8)


def test_1_gradient_fidelity():
    with criterion(1, "hinge and kernel gradients match central differences", 10) as info:
        rng = np.random.default_rng(2024)
        h = 1e-6
        checked = [0, 0]
        worst = [0.0, 0.0]
        while checked[0] < 1000:
            m = int(rng.integers(1, 9))
            w, xi, xj = rng.standard_normal((3, m))
            l = int(rng.choice([-1, 1]))
            if abs(1 - l * (w @ xi) * (w @ xj)) < 1e-3:
                continue
            fd = np.array([(hinge_term(w + h * e, xi, xj, l) - hinge_term(w - h * e, xi, xj, l)) / (2 * h)
                           for e in np.eye(m)])
            g = hinge_gradient(w, xi, xj, l)
            if np.abs(fd).max() == 0 and np.abs(g).max() == 0:
                err = 0.0
            else:
                err = rel_err(g, fd)
            worst[0] = max(worst[0], err)
            checked[0] += 1
        while checked[1] < 1000:
            n = int(rng.integers(2, 9))
            b = rng.standard_normal((n, 3))
            spec = KernelSpec("rbf", sigma=float(rng.uniform(0.5, 2))) if checked[1] % 2 else KernelSpec("poly", 2)
            K = gram(spec, b)
            mu = K.mean(axis=1)
            a = rng.standard_normal(n)
            p = int(rng.integers(1, 10))
            pairs = list(zip(rng.integers(0, n, p).tolist(), rng.integers(0, n, p).tolist(),
                             rng.choice([-1, 1], p).tolist()))
            g = K @ a - a @ mu
            if min(abs(1 - l * g[i] * g[j]) for i, j, l in pairs) < 1e-3:
                continue
            lam = float(rng.uniform(0.1, 2))
            fd = np.array([(kernel_objective(a + h * e, K, pairs, mu, lam)
                            - kernel_objective(a - h * e, K, pairs, mu, lam)) / (2 * h) for e in np.eye(n)])
            worst[1] = max(worst[1], rel_err(kernel_gradient(a, K, pairs, mu, lam), fd))
            checked[1] += 1
        info["detail"] = f"max rel err hinge={worst[0]:.1e} kernel={worst[1]:.1e}"
        assert worst[0] < 1e-5 and worst[1] < 1e-5


def test_2_storage_and_coding_cost():
    with criterion(2, "bank stores D scalars, encoding one sample costs D MACs", 5) as info:
        rng = np.random.default_rng(7)
        for _ in range(20):
            dims = int(rng.integers(2, 2000))
            d = int(rng.integers(1, min(dims, 512) + 1))
            part = random_split(dims, d, seed=int(rng.integers(1 << 30)))
            bank = LinearBank(part, tuple(rng.standard_normal(m) for m in part.sizes))
            counter = OpCounter()
            bits = encode_linear_sample(bank, rng.standard_normal(dims), counter)
            assert bank.n_scalars == dims
            assert counter.macs == dims
            assert bits.shape == (d,)
        info["detail"] = "20 random (D, d) configurations"


def test_3_oracle_equivalence():
    with criterion(3, "k-NN labels, Hamming top-k and K-means match brute force", 60) as info:
        rng = np.random.default_rng(3)
        for t in range(5):
            n = int(rng.integers(50, 201))
            x = FeatureMatrix(rng.standard_normal((n, int(rng.integers(2, 10)))))
            k = int(rng.integers(1, 15))
            assert np.array_equal(build_labels(x, k).dense(), brute_force_labels(x.values, k))
        for t in range(3):
            g = BinaryCodeSet.from_bits(rng.integers(0, 2, (1000, 64)).astype(bool), b"oracle00")
            q = BinaryCodeSet.from_bits(rng.integers(0, 2, (10, 64)).astype(bool), b"oracle00")
            r = hamming_search(g, q, k=50)
            for a, want in enumerate(naive_search(g, q, 50)):
                assert [(int(d), int(i)) for d, i in zip(r.distances[a], r.indices[a])] == want
        for t in range(20):
            x = FeatureMatrix(two_group_matrix(rng, int(rng.integers(3, 13))))
            assert groups(cluster_dimensions(x, 2, seed=t)) == brute_force_two_way(x.values)[1]
        info["detail"] = "5 label sets, 3 searches, 20 partitions"


@pytest.mark.slow
def test_4_subspace_error_below_full_space():
    with criterion(4, "E_avg <= E_org on blocked data (median of 10 seeds)", 600) as info:
        cfg = TrainerConfig()
        results = {16: [], 32: [], 64: []}
        for seed in range(10):
            x, _ = generate_blocked(500, 256, n_groups=32, n_clusters=10, seed=seed)
            labels = build_labels(x, 100)
            for d in results:
                part = cluster_dimensions(x, d, seed=seed)
                results[d].append(pairwise_error_diagnostic(x, part, labels, replace(cfg, seed=seed)))
        med = {d: (float(np.median([r[0] for r in v])), float(np.median([r[1] for r in v])))
               for d, v in results.items()}
        info["detail"] = " ".join(f"d={d}: E_avg={a:.4f} E_org={o:.4f}" for d, (a, o) in med.items())
        for d, (e_avg, e_org) in med.items():
            assert e_avg <= e_org, info["detail"]


@pytest.mark.slow
def test_5_retrieval_ordering():
    with criterion(5, "precision@10: BPB >= RandST+BPB, sign, LSH (median of 5 seeds)", 900) as info:
        cfg = TrainerConfig()
        scores = {"bpb": [], "randst": [], "sign": [], "lsh": []}
        for seed in range(5):
            ds = generate_synthetic(10, 200, 512, 0.05, seed)
            labels = build_labels(ds.train, 100)
            c = replace(cfg, seed=seed)
            banks = {
                "bpb": train_bank(ds.train, cluster_dimensions(ds.train, 64, seed=seed), labels, c),
                "randst": train_bank(ds.train, random_split(512, 64, seed=seed), labels, c),
            }
            codes = {m: (encode(b, ds.gallery), encode(b, ds.query)) for m, b in banks.items()}
            codes["sign"] = (encode_sign_baseline(ds.gallery), encode_sign_baseline(ds.query))
            codes["lsh"] = (encode_lsh_baseline(ds.gallery, 64, seed), encode_lsh_baseline(ds.query, 64, seed))
            for m, (g, q) in codes.items():
                r = hamming_search(g, q, k=10)
                scores[m].append(precision_at_k(r, ds.gallery_labels, ds.query_labels, 10))
        med = {m: float(np.median(v)) for m, v in scores.items()}
        info["detail"] = " ".join(f"{m}={v:.4f}" for m, v in med.items())
        assert med["bpb"] >= med["randst"]
        assert med["bpb"] >= med["sign"]
        assert med["bpb"] >= med["lsh"]


def test_6_kernel_advantage_on_xor():
    with criterion(6, "RBF-KBPB pairwise error below BPB by >= 0.05 on XOR subspaces", 300) as info:
        gaps, lin, ker = [], [], []
        for seed in range(5):
            x, part, labels = xor_data(400, 4, seed)
            cfg = TrainerConfig(seed=seed)
            e_lin = pairwise_error(linear_projections(train_bank(x, part, labels, cfg), x), labels).mean()
            kb = train_kernel_bank(x, part, labels, KernelSpec("rbf"), n=200, cfg=cfg)
            e_ker = pairwise_error(kernel_projections(kb, x), labels).mean()
            lin.append(e_lin)
            ker.append(e_ker)
            gaps.append(e_lin - e_ker)
        info["detail"] = f"median BPB={np.median(lin):.4f} KBPB={np.median(ker):.4f}"
        assert np.median(gaps) >= 0.05


def test_7_zero_centred_expansion():
    with criterion(7, "kernel expansion has zero mean over the basis", None) as info:
        rng = np.random.default_rng(11)
        worst = 0.0
        for kind in ("poly", "rbf"):
            for _ in range(100):
                n = int(rng.integers(2, 40))
                b = rng.standard_normal((n, int(rng.integers(1, 6))))
                spec = KernelSpec(kind, int(rng.integers(1, 4)))
                sigma = median_sigma(b) if kind == "rbf" else None
                mu = compute_mu(spec, b, sigma=sigma)
                a = rng.standard_normal(n)
                part = random_split(b.shape[1], 1)
                bank = KernelBank(spec, part, np.arange(n), (b,), (a,), np.array([a @ mu]), (mu,),
                                  np.array([sigma or 0.0]))
                worst = max(worst, abs(bank.predict(0, b).mean()))
        info["detail"] = f"max |mean g| = {worst:.1e}"
        assert worst < 1e-10


def _check_schedule(trace, cfg):
    steps = trace.steps
    assert steps and steps[0].gamma == cfg.initial_step == 1.0
    for s, nxt in zip(steps, steps[1:]):
        factor = cfg.grow_factor if s.accepted else cfg.shrink_factor
        assert nxt.gamma == s.gamma * factor
        assert factor in (1.2, 0.5)
    for s in steps:
        if s.accepted:
            assert s.trial_objective <= s.objective


def test_8_step_schedule():
    with criterion(8, "step length x1.2 on accept, x0.5 on reject, from 1; objective non-increasing", None) as info:
        x = FeatureMatrix(np.random.default_rng(0).standard_normal((200, 24)))
        labels = build_labels(x, 10)
        part = random_split(24, 4, seed=0)
        n_steps = n_rejects = 0
        for resample in (True, False):
            cfg = TrainerConfig(resample=resample, n_pos=300, n_neg=300)
            traces = [Trace() for _ in range(4)]
            train_bank(x, part, labels, cfg, traces=traces)
            kb_traces = [Trace() for _ in range(4)]
            train_kernel_bank(x, part, labels, KernelSpec("rbf"), n=60, cfg=cfg, traces=kb_traces)
            for tr in traces + kb_traces:
                _check_schedule(tr, cfg)
                n_steps += len(tr.steps)
                n_rejects += sum(not s.accepted for s in tr.steps)
                if not resample:
                    # one fixed batch: the accepted objectives form one comparable sequence
                    acc = tr.accepted_objectives
                    for a, b in zip(acc, acc[1:]):
                        assert b <= a + cfg.stop_tolerance * max(1.0, abs(a))
        info["detail"] = f"{n_steps} steps, {n_rejects} rejected"
        assert n_rejects > 0


def test_9_determinism_and_roundtrips(tmp_path):
    with criterion(9, "fixed seeds give identical banks/codes; formats round-trip", None) as info:
        ds = generate_synthetic(5, 40, 48, 0.1, seed=4)
        labels = build_labels(ds.train, 10)
        cfg = TrainerConfig(seed=3, max_iters=30, n_pos=300, n_neg=300)
        part = cluster_dimensions(ds.train, 12, seed=3)
        lin = [train_bank(ds.train, part, labels, cfg, threads=1) for _ in range(2)]
        ker = [train_kernel_bank(ds.train, part, labels, KernelSpec("rbf"), 80, cfg, threads=1) for _ in range(2)]
        assert lin[0].to_bytes() == lin[1].to_bytes()
        assert ker[0].to_bytes() == ker[1].to_bytes()
        assert encode(lin[0], ds.query) == encode(lin[1], ds.query)
        assert encode(ker[0], ds.query) == encode(ker[1], ds.query)

        save_matrix(ds.train, tmp_path / "m.pbfm")
        assert load_matrix(tmp_path / "m.pbfm") == ds.train
        save_partition(part, tmp_path / "p.pbsp")
        assert load_partition(tmp_path / "p.pbsp") == part
        save_linear_bank(lin[0], tmp_path / "b.pblb")
        assert load_linear_bank(tmp_path / "b.pblb") == lin[0]
        save_kernel_bank(ker[0], tmp_path / "k.pbkb")
        assert load_kernel_bank(tmp_path / "k.pbkb") == ker[0]
        codes = encode(ker[0], ds.gallery)
        save_codes(codes, tmp_path / "c.pbbc")
        assert load_codes(tmp_path / "c.pbbc") == codes

        rng = np.random.default_rng(0)
        for n_bits in range(1, 200):
            bits = rng.integers(0, 2, (3, n_bits)).astype(bool)
            assert np.array_equal(unpack_bits(pack_bits(bits), n_bits), bits)
        info["detail"] = "linear+kernel banks, 4 formats, pack/unpack widths 1..199"
