"""Command-line pipeline.

Stages exchange data only through the binary file formats, and every
command writes a JSON manifest (argv plus all resolved parameters) next to
its outputs.  Errors are reported as one JSON line on stderr; usage errors
exit with status 2, data errors with status 1.
"""
from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .agd import TrainerConfig
from .bpb import LinearBank, load_linear_bank, save_linear_bank, train_bank
from .cluster import cluster_dimensions, load_partition, random_split, save_partition
from .encode import encode, encode_lsh_baseline, encode_sign_baseline, load_codes, save_codes
from .errors import ProjBankError
from .evaluate import (
    hamming_search,
    pairwise_error_diagnostic,
    precision_at_k,
    precision_recall_curve,
    write_diagnostic_csv,
    write_pr_csv,
    write_precision_csv,
)
from .io import _open_for_read, atomic_write, generate_synthetic, load_labels, load_matrix, save_labels, save_matrix
from .kbpb import KERNEL_BANK_MAGIC, KernelSpec, load_kernel_bank, save_kernel_bank, train_kernel_bank
from .labels import DEFAULT_K, PairLabelSet, build_labels


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _sigma(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sigma takes 'auto' or a number, got {text!r}")


# -- argument groups ---------------------------------------------------------


def _add_common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $PB_THREADS or 1)")


def _add_trainer(p):
    d = TrainerConfig()
    g = p.add_argument_group("training")
    g.add_argument("--k", type=int, default=DEFAULT_K, help="neighbours for pseudo-labels")
    g.add_argument("--labels", default=None, help="positive-pair CSV from `labels` (overrides --k)")
    g.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    g.add_argument("--iters", type=int, default=d.max_iters)
    g.add_argument("--gamma0", type=float, default=d.initial_step)
    g.add_argument("--grow", type=float, default=d.grow_factor)
    g.add_argument("--shrink", type=float, default=d.shrink_factor)
    g.add_argument("--tol", type=float, default=d.stop_tolerance)
    g.add_argument("--perturb", type=float, default=d.perturbation_scale)
    g.add_argument("--pairs-pos", type=int, default=d.n_pos)
    g.add_argument("--pairs-neg", type=int, default=d.n_neg)
    g.add_argument("--no-diagonal", action="store_true", help="omit the (i, i) pairs from batches")
    g.add_argument("--fixed-pairs", action="store_true", help="draw one pair batch instead of one per step")
    g.add_argument("--bias", action="store_true", help="learn a bias via an appended -1 coordinate")


def _add_kernel(p):
    g = p.add_argument_group("kernel")
    g.add_argument("--kernel", choices=["poly", "rbf"], default="rbf")
    g.add_argument("--tau", type=int, default=2)
    g.add_argument("--sigma", type=_sigma, default="auto")
    g.add_argument("--n-basis", type=int, default=1500)
    g.add_argument("--mu-norm", choices=["n", "N"], default="n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="projbank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic Gaussian-mixture dataset")
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--per", type=int, default=200)
    p.add_argument("--dims", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--output", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("cluster", help="partition dimensions into subspaces")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--method", choices=["kmeans", "random"], default="kmeans")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--output", required=True)
    _add_common(p)

    p = sub.add_parser("labels", help="dump k-NN positive pairs as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--output", required=True)
    _add_common(p, seed=False)

    p = sub.add_parser("train-bpb", help="train a linear projection bank")
    p.add_argument("--input", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--output", required=True)
    _add_trainer(p)
    _add_common(p)

    p = sub.add_parser("train-kbpb", help="train a kernel projection bank")
    p.add_argument("--input", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--output", required=True)
    _add_trainer(p)
    _add_kernel(p)
    _add_common(p)

    p = sub.add_parser("encode", help="encode a feature matrix with a trained bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_common(p, seed=False)

    p = sub.add_parser("encode-baseline", help="encode with a baseline method")
    p.add_argument("method", choices=["sign", "lsh", "randst-bpb"])
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--d", type=int, default=64, help="bits for lsh / randst-bpb")
    p.add_argument("--train", default=None, help="training matrix (randst-bpb)")
    p.add_argument("--bank-output", default=None, help="also save the randst-bpb bank")
    _add_trainer(p)
    _add_common(p)

    p = sub.add_parser("search", help="Hamming top-k search")
    p.add_argument("--gallery", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--output", required=True, help="rankings CSV")
    _add_common(p, seed=False)

    p = sub.add_parser("eval", help="precision@k and precision-recall for one code set")
    p.add_argument("--gallery", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gallery-labels", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--k", type=_int_list, default=[10, 50, 100])
    p.add_argument("--method", default="bpb")
    p.add_argument("--output", required=True, help="output directory")
    _add_common(p, seed=False)

    p = sub.add_parser("diag", help="average subspace pairwise error vs full-space error")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=_int_list, required=True)
    p.add_argument("--output", required=True, help="diagnostic CSV")
    _add_trainer(p)
    _add_common(p)

    p = sub.add_parser("bench", help="end-to-end desk-scale retrieval comparison")
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--per", type=int, default=200)
    p.add_argument("--dims", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--lambdas", type=_float_list, default=None, help="sweep these lambda values for bpb")
    p.add_argument("--methods", default="bpb,randst-bpb,sign,lsh")
    p.add_argument("--eval-k", type=_int_list, default=[10, 50, 100])
    p.add_argument("--output", required=True, help="output directory")
    _add_trainer(p)
    _add_kernel(p)
    _add_common(p, seed=False)
    return parser


# -- helpers -----------------------------------------------------------------


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("PB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"PB_THREADS must be an integer, got {env!r}")
    return 1


def trainer_config(args) -> TrainerConfig:
    try:
        return TrainerConfig(
            lam=args.lam,
            max_iters=args.iters,
            initial_step=args.gamma0,
            grow_factor=args.grow,
            shrink_factor=args.shrink,
            stop_tolerance=args.tol,
            perturbation_scale=args.perturb,
            n_pos=args.pairs_pos,
            n_neg=args.pairs_neg,
            include_diagonal=not args.no_diagonal,
            resample=not args.fixed_pairs,
            augment_bias=args.bias,
            seed=getattr(args, "seed", 0),
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _labels_for(args, x) -> PairLabelSet:
    if args.labels:
        return PairLabelSet.from_csv(args.labels, x.n_samples, args.k)
    return build_labels(x, args.k)


def _load_bank(path):
    with _open_for_read(path) as fh:
        magic = fh.read(4)
    if magic == KERNEL_BANK_MAGIC:
        return load_kernel_bank(path)
    return load_linear_bank(path)


def _manifest_path(output: str) -> Path:
    out = Path(output)
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def write_manifest(args, argv, outputs, extra=None) -> None:
    params = {k: v for k, v in vars(args).items() if k != "func"}
    params["threads"] = _threads(args)
    manifest = {
        "tool": "projbank",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "params": params,
        "outputs": [str(o) for o in outputs],
    }
    if extra:
        manifest.update(extra)
    with atomic_write(_manifest_path(args.output)) as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True, default=str).encode())


# -- commands ----------------------------------------------------------------


def cmd_gen(args):
    ds = generate_synthetic(args.clusters, args.per, args.dims, args.noise, args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "train.pbfm": lambda p: save_matrix(ds.train, p),
        "gallery.pbfm": lambda p: save_matrix(ds.gallery, p),
        "query.pbfm": lambda p: save_matrix(ds.query, p),
        "train_labels.txt": lambda p: save_labels(ds.train_labels, p),
        "gallery_labels.txt": lambda p: save_labels(ds.gallery_labels, p),
        "query_labels.txt": lambda p: save_labels(ds.query_labels, p),
    }
    for name, write in files.items():
        write(out / name)
    return [out / n for n in files], None


def cmd_cluster(args):
    x = load_matrix(args.input)
    if args.method == "random":
        part = random_split(x.n_dims, args.d, args.seed)
    else:
        part = cluster_dimensions(x, args.d, args.seed, args.max_iters, args.sample_size)
    save_partition(part, args.output)
    return [args.output], {"subspace_sizes": part.sizes.tolist()}


def cmd_labels(args):
    labels = build_labels(load_matrix(args.input), args.k)
    labels.to_csv(args.output)
    return [args.output], {"n_positive": labels.n_positive}


def cmd_train_bpb(args):
    cfg = trainer_config(args)
    x = load_matrix(args.input)
    bank = train_bank(x, load_partition(args.partition), _labels_for(args, x), cfg, threads=_threads(args))
    save_linear_bank(bank, args.output)
    return [args.output], {"trainer": cfg.to_dict(), "fingerprint": bank.fingerprint().hex()}


def _kernel_spec(args) -> KernelSpec:
    try:
        return KernelSpec(args.kernel, args.tau, args.sigma)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_train_kbpb(args):
    cfg = trainer_config(args)
    spec = _kernel_spec(args)
    x = load_matrix(args.input)
    bank = train_kernel_bank(
        x, load_partition(args.partition), _labels_for(args, x), spec, args.n_basis, cfg,
        threads=_threads(args), mu_normalizer=args.mu_norm,
    )
    save_kernel_bank(bank, args.output)
    return [args.output], {
        "trainer": cfg.to_dict(),
        "resolved_sigmas": bank.sigmas.tolist(),
        "fingerprint": bank.fingerprint().hex(),
    }


def cmd_encode(args):
    bank = _load_bank(args.bank)
    codes = encode(bank, load_matrix(args.input))
    save_codes(codes, args.output)
    return [args.output], {"n_bits": codes.n_bits, "fingerprint": codes.fingerprint.hex()}


def cmd_encode_baseline(args):
    x = load_matrix(args.input)
    outputs = [args.output]
    extra = {}
    if args.method == "sign":
        codes = encode_sign_baseline(x)
    elif args.method == "lsh":
        codes = encode_lsh_baseline(x, args.d, args.seed)
    else:
        if not args.train:
            raise UsageError("randst-bpb needs --train")
        cfg = trainer_config(args)
        train = load_matrix(args.train)
        part = random_split(train.n_dims, args.d, args.seed)
        bank = train_bank(train, part, _labels_for(args, train), cfg, threads=_threads(args))
        codes = encode(bank, x)
        extra["trainer"] = cfg.to_dict()
        if args.bank_output:
            save_linear_bank(bank, args.bank_output)
            outputs.append(args.bank_output)
    save_codes(codes, args.output)
    extra.update(n_bits=codes.n_bits, fingerprint=codes.fingerprint.hex())
    return outputs, extra


def cmd_search(args):
    res = hamming_search(load_codes(args.gallery), load_codes(args.queries), args.k)
    rows = ["query,rank,gallery_index,distance\n"]
    for q in range(res.indices.shape[0]):
        for r in range(res.k):
            rows.append(f"{q},{r},{res.indices[q, r]},{res.distances[q, r]}\n")
    with atomic_write(args.output) as fh:
        fh.write("".join(rows).encode())
    return [args.output], None


def _eval_rows(method, gallery, queries, g_labels, q_labels, ks):
    res = hamming_search(gallery, queries)
    bits = gallery.n_bits
    prec = [(method, bits, k, precision_at_k(res, g_labels, q_labels, k)) for k in ks if k <= res.k]
    curve = precision_recall_curve(res, g_labels, q_labels)
    pr = [(method, bits, int(c), p, r) for c, p, r in zip(curve.cutoffs, curve.precision, curve.recall)]
    return prec, pr, curve.auc


def cmd_eval(args):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    prec, pr, auc = _eval_rows(
        args.method, load_codes(args.gallery), load_codes(args.queries),
        load_labels(args.gallery_labels), load_labels(args.query_labels), args.k,
    )
    write_precision_csv(out / "precision_at_k.csv", prec)
    write_pr_csv(out / "pr_curve.csv", pr)
    return [out / "precision_at_k.csv", out / "pr_curve.csv"], {"auc": auc, "pr_averaging": "macro"}


def cmd_diag(args):
    cfg = trainer_config(args)
    x = load_matrix(args.input)
    labels = _labels_for(args, x)
    rows = []
    for d in args.d:
        part = cluster_dimensions(x, d, args.seed)
        e_avg, e_org = pairwise_error_diagnostic(x, part, labels, cfg, threads=_threads(args))
        rows.append((d, e_avg, e_org))
    write_diagnostic_csv(args.output, rows)
    return [args.output], {"trainer": cfg.to_dict()}


def run_bench(args, log=None):
    """Run every method on every seed; returns per-seed rows and median tables."""
    cfg0 = trainer_config(args)
    methods = [m for m in args.methods.split(",") if m]
    lambdas = args.lambdas or [cfg0.lam]
    threads = _threads(args)
    runs = []  # (method, bits, seed, k, precision, auc)
    pr_first = []
    for seed in args.seeds:
        ds = generate_synthetic(args.clusters, args.per, args.dims, args.noise, seed)
        labels = build_labels(ds.train, args.k) if any(m in ("bpb", "randst-bpb", "kbpb") for m in methods) else None
        cfg_seed = replace(cfg0, seed=seed)
        jobs = []
        for m in methods:
            if m in ("bpb", "randst-bpb"):
                for lam in lambdas:
                    name = m if len(lambdas) == 1 else f"{m}[lambda={lam:g}]"
                    jobs.append((name, m, replace(cfg_seed, lam=lam)))
            else:
                jobs.append((m, m, cfg_seed))
        for name, m, cfg in jobs:
            t0 = time.perf_counter()
            if m == "sign":
                g, q = encode_sign_baseline(ds.gallery), encode_sign_baseline(ds.query)
            elif m == "lsh":
                g, q = encode_lsh_baseline(ds.gallery, args.d, seed), encode_lsh_baseline(ds.query, args.d, seed)
            else:
                if m == "randst-bpb":
                    part = random_split(ds.train.n_dims, args.d, seed)
                else:
                    part = cluster_dimensions(ds.train, args.d, seed)
                if m == "kbpb":
                    n = min(args.n_basis, ds.train.n_samples)
                    bank = train_kernel_bank(ds.train, part, labels, _kernel_spec(args), n, cfg,
                                             threads=threads, mu_normalizer=args.mu_norm)
                else:
                    bank = train_bank(ds.train, part, labels, cfg, threads=threads)
                g, q = encode(bank, ds.gallery), encode(bank, ds.query)
            prec, pr, auc = _eval_rows(name, g, q, ds.gallery_labels, ds.query_labels, args.eval_k)
            for _, bits, k, p in prec:
                runs.append((name, bits, seed, k, p, auc))
            if seed == args.seeds[0]:
                pr_first.extend(pr)
            if log:
                log(f"seed={seed} method={name} bits={g.n_bits} "
                    f"p@{args.eval_k[0]}={prec[0][3]:.4f} auc={auc:.4f} ({time.perf_counter() - t0:.1f}s)")
    medians = {}
    for name, bits, seed, k, p, auc in runs:
        medians.setdefault((name, bits, k), []).append(p)
    table = [(name, bits, k, statistics.median(v)) for (name, bits, k), v in medians.items()]
    return runs, table, pr_first


def cmd_bench(args):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    runs, table, pr_first = run_bench(args, log=lambda s: print(s, file=sys.stderr))
    write_precision_csv(out / "precision_at_k.csv", table)
    write_pr_csv(out / "pr_curve.csv", pr_first)
    runs_text = "method,bits,seed,k,precision,auc\n" + "".join(
        f"{m},{b},{s},{k},{p:.6f},{a:.6f}\n" for m, b, s, k, p, a in runs
    )
    with atomic_write(out / "runs.csv") as fh:
        fh.write(runs_text.encode())
    files = [out / "precision_at_k.csv", out / "pr_curve.csv", out / "runs.csv"]
    return files, {"precision_aggregate": "median over seeds", "pr_curve_seed": args.seeds[0]}


COMMANDS = {
    "gen": cmd_gen,
    "cluster": cmd_cluster,
    "labels": cmd_labels,
    "train-bpb": cmd_train_bpb,
    "train-kbpb": cmd_train_kbpb,
    "encode": cmd_encode,
    "encode-baseline": cmd_encode_baseline,
    "search": cmd_search,
    "eval": cmd_eval,
    "diag": cmd_diag,
    "bench": cmd_bench,
}


def _emit_error(kind, exc):
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _threads(args)
        outputs, extra = COMMANDS[args.command](args)
        write_manifest(args, argv, outputs, extra)
    except UsageError as exc:
        _emit_error("usage", exc)
        return 2
    except (ProjBankError, OSError, ValueError) as exc:
        _emit_error("data", exc)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
