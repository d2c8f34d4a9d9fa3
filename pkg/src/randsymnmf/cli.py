"""Command-line interface: ``randsymnmf factorize | eval | verify | synth``."""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy.io

from . import __version__
from .datasets import planted_partition, sparse_block_graph
from .eval import (Clustering, adjusted_rand_index, assign_clusters, metrics_json, read_labels,
                   silhouette_similarity, write_labels)
from .matrix import MatrixFormatError, load_matrix_market, normalize_graph, read_dense, write_dense
from .randlin import CholeskyBreakdown
from .solvers import ADAPTIVE, AUTO, METHODS, SolverConfig, SolverError, factorize, normalized_residual
from .update import UpdateError
from .verify import (SPECTRA, empirical_sample_threshold, verify_matmul_expectation, verify_nls_bound,
                     verify_rrf_bound, verify_sc1_hybrid, verify_sc2_hybrid)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SOLVER = 4


class UsageError(Exception):
    pass


def _auto_or(cast, keyword):
    def parse(text):
        if text == keyword:
            return keyword
        try:
            return cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number or '{keyword}', got '{text}'")
    return parse


def _samples(text):
    try:
        if any(c in text for c in ".eE"):
            return float(text)
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a fraction or a count, got '{text}'")


def _switch(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _write_json(text: str, path):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# factorize

CONFIG_FLAGS = {
    "rank": "rank", "method": "method", "alpha": "alpha", "tol": "tol", "patience": "patience",
    "rho": "rho", "q": "q", "samples": "samples", "tau": "tau", "refine": "refine", "seed": "seed",
    "max_iters": "max_iters", "cg_iters": "cg_iters",
}


def _load_input(path: Path, normalize: bool):
    X = load_matrix_market(path)
    return normalize_graph(X) if normalize else X


def cmd_factorize(args) -> int:
    manifest_in = None
    if args.from_manifest:
        manifest_in = json.loads(Path(args.from_manifest).read_text())
        cfg_dict = dict(manifest_in["config"])
        options = cfg_dict.pop("run_options", {})
        input_path = Path(args.input or manifest_in["input"])
        if _sha256(input_path) != manifest_in["checksum_sha256"]:
            raise OSError(f"{input_path}: checksum differs from the manifest")
        outputs = dict(manifest_in.get("outputs", {}))
        normalize = options.get("normalize", False)
        timing = options.get("timing", True)
    else:
        if args.input is None or args.rank is None:
            raise UsageError("--input and --rank are required")
        input_path = Path(args.input)
        cfg_dict = {}
        outputs = {}
        normalize = bool(args.normalize)
        timing = bool(args.timing)
    for flag, key in CONFIG_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            cfg_dict[key] = value
    for name in ("factors", "trace", "labels"):
        if getattr(args, name):
            outputs[name] = getattr(args, name)
    try:
        cfg = SolverConfig(**cfg_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    X = _load_input(input_path, normalize)
    if cfg.rank > X.dim:
        raise UsageError(f"rank {cfg.rank} exceeds matrix dimension {X.dim}")
    with _threads(args.threads):
        H, trace = factorize(X, cfg)
        residual = normalized_residual(X, H)

    if outputs.get("factors"):
        write_dense(outputs["factors"], H)
    if outputs.get("trace"):
        trace.to_csv(outputs["trace"], timing=timing)
    if outputs.get("labels"):
        write_labels(outputs["labels"], assign_clusters(H))
    manifest_path = args.manifest
    if manifest_path:
        manifest = {
            "config": {**cfg.to_dict(), "run_options": {"normalize": normalize, "timing": timing}},
            "input": str(input_path),
            "checksum_sha256": _sha256(input_path),
            "seed": cfg.seed,
            "outputs": outputs,
            "version": __version__,
        }
        Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"method={cfg.method} iterations={trace.last_iteration} final_normalized_residual={residual:.10g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    if (args.factors is None) == (args.labels is None):
        raise UsageError("give exactly one of --factors or --labels")
    if args.factors is not None:
        clustering = assign_clusters(read_dense(args.factors))
    else:
        clustering = Clustering.from_labels(read_labels(args.labels))
    m = len(clustering)
    ari = None
    if args.truth:
        truth = read_labels(args.truth)
        if truth.size != m:
            raise UsageError(f"truth has {truth.size} labels, clustering has {m}")
        ari = adjusted_rand_index(clustering, truth)
    per_cluster = None
    if args.input:
        A = _load_input(Path(args.input), bool(args.normalize))
        if A.dim != m:
            raise UsageError(f"matrix has {A.dim} rows, clustering has {m}")
        try:
            per_cluster, _ = silhouette_similarity(A, clustering)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if args.out_labels:
        write_labels(args.out_labels, clustering)
    _write_json(metrics_json(ari, per_cluster, clustering.sizes), args.metrics)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    try:
        if args.check == "nls-bound":
            report = verify_nls_bound(args.k, args.m, args.delta, args.eps_r, args.trials, rng, s=args.samples)
            if args.scan:
                report.extra["empirical_min_samples"] = empirical_sample_threshold(
                    args.k, args.m, args.delta, args.eps_r, args.trials, np.random.default_rng(args.seed + 1))
        elif args.check == "sc1":
            report = verify_sc1_hybrid(args.k, args.m, args.eps_s, args.delta, args.tau, args.trials, rng,
                                       factor=args.factor)
        elif args.check == "sc2":
            report = verify_sc2_hybrid(args.k, args.m, args.eps_r, args.delta, args.tau, args.trials, rng,
                                       factor=args.factor)
        elif args.check == "matmul":
            report = verify_matmul_expectation((args.m, args.ka, args.kb), args.beta, args.s, args.trials, rng,
                                               same=args.same)
        else:
            report = verify_rrf_bound(args.spectrum, args.r, args.rho, args.q, args.delta, args.trials, rng,
                                      m=args.m)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write_json(report.to_json(), args.output)
    return EXIT_OK if report.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.degree is not None:
        A, labels = sparse_block_graph(args.m, args.blocks, args.degree, args.in_fraction, rng)
    else:
        A, labels = planted_partition(args.m, args.blocks, args.p_in, args.p_out, rng)
    scipy.io.mmwrite(args.output, A.data, symmetry="symmetric")
    if args.labels:
        write_labels(args.labels, Clustering(labels, args.blocks))
    print(f"wrote {args.output}: m={A.dim} nnz={A.nnz}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randsymnmf", description="Randomized symmetric NMF for graph clustering")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("factorize", help="factorize a symmetric matrix X ~ H H^T")
    f.add_argument("--input", help="Matrix Market file")
    f.add_argument("--rank", type=int)
    f.add_argument("--method", choices=METHODS)
    f.add_argument("--alpha", type=_auto_or(float, AUTO))
    f.add_argument("--tol", type=float)
    f.add_argument("--patience", type=int)
    f.add_argument("--rho", type=_auto_or(int, AUTO))
    f.add_argument("--q", type=_auto_or(int, ADAPTIVE))
    f.add_argument("--samples", type=_samples, help="fraction (e.g. 0.05) or count of sampled rows")
    f.add_argument("--tau", type=_auto_or(float, AUTO))
    f.add_argument("--refine", type=_switch)
    f.add_argument("--normalize", type=_switch, default=False)
    f.add_argument("--seed", type=int)
    f.add_argument("--max-iters", dest="max_iters", type=int)
    f.add_argument("--cg-iters", dest="cg_iters", type=int)
    f.add_argument("--trace", help="trace CSV output")
    f.add_argument("--factors", help="factor output (.mtx or .csv)")
    f.add_argument("--labels", help="cluster labels CSV output")
    f.add_argument("--manifest", help="run manifest JSON output")
    f.add_argument("--from-manifest", dest="from_manifest", help="re-run the configuration of a manifest")
    f.add_argument("--timing", type=_switch, default=True, help="write wall-clock times in the trace (on|off)")
    f.add_argument("--threads", type=int)
    f.set_defaults(handler=cmd_factorize)

    e = sub.add_parser("eval", help="cluster assignment and quality metrics")
    e.add_argument("--factors")
    e.add_argument("--labels")
    e.add_argument("--input", help="similarity matrix for silhouettes")
    e.add_argument("--normalize", type=_switch, default=False)
    e.add_argument("--truth", help="reference labels CSV for ARI")
    e.add_argument("--metrics", help="metrics JSON output (default stdout)")
    e.add_argument("--out-labels", dest="out_labels")
    e.set_defaults(handler=cmd_eval)

    v = sub.add_parser("verify", help="statistical checks of the sketching bounds")
    vsub = v.add_subparsers(dest="check", required=True)

    def common(p):
        p.add_argument("--trials", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output")
        p.set_defaults(handler=cmd_verify)

    p = vsub.add_parser("nls-bound")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--m", type=int, default=100000)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--eps-r", dest="eps_r", type=float, default=0.5)
    p.add_argument("--samples", type=int)
    p.add_argument("--scan", action="store_true", help="also search for the smallest passing sample count")
    common(p)
    for name in ("sc1", "sc2"):
        p = vsub.add_parser(name)
        p.add_argument("--k", type=int, default=4)
        p.add_argument("--m", type=int, default=2000)
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--tau", type=float, default=1.0)
        p.add_argument("--factor", choices=("gaussian", "skewed"), default="gaussian")
        if name == "sc1":
            p.add_argument("--eps-s", dest="eps_s", type=float, default=0.5)
        else:
            p.add_argument("--eps-r", dest="eps_r", type=float, default=0.5)
        common(p)
    p = vsub.add_parser("matmul")
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--ka", type=int, default=5)
    p.add_argument("--kb", type=int, default=5)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--s", type=int, default=50)
    p.add_argument("--same", action="store_true")
    common(p)
    p.set_defaults(trials=10000)
    p = vsub.add_parser("rrf-bound")
    p.add_argument("--spectrum", choices=SPECTRA, default="flat-tail")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--r", type=int, default=10)
    p.add_argument("--rho", type=int, default=10)
    p.add_argument("--q", type=int, default=0)
    p.add_argument("--delta", type=float, default=0.1)
    common(p)

    s = sub.add_parser("synth", help="write a planted-partition graph")
    s.add_argument("--m", type=int, default=600)
    s.add_argument("--blocks", type=int, default=3)
    s.add_argument("--p-in", dest="p_in", type=float, default=0.3)
    s.add_argument("--p-out", dest="p_out", type=float, default=0.02)
    s.add_argument("--degree", type=int, help="use the sparse fixed-degree generator")
    s.add_argument("--in-fraction", dest="in_fraction", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.add_argument("--labels")
    s.set_defaults(handler=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MatrixFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UpdateError, CholeskyBreakdown, SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
