"""Command-line front end: ``dpca gen | eig | track | detect``.

Every failure prints one line ``error: CODE: message`` to stderr and exits
nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import synthetic
from .anomaly import dense_pca_residuals, detect, fit_model, residual_norms, track
from .estimation import BlockSparseConcentration, ml_concentration
from .files import fmt, read_samples, write_csv, write_matrix
from .graph import load_graph, random_decomposable, save_graph
from .runtime import DimensionMismatch, message_stats, run_protocol, spawn_cliques

PRESETS = ("paper-tracking", "two-clique-toy", "anomaly", "random")


class UsageError(ValueError):
    code = "USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive(kind):
    def conv(s):
        try:
            v = kind(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {s!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s}")
        return v

    return conv


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dpca", description="Distributed PCA for decomposable Gaussian graphical models")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic graph, samples and ground-truth manifest")
    g.add_argument("--preset", choices=PRESETS, default="two-clique-toy")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=_positive(int), default=None, help="number of samples (preset default)")
    g.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eig", help="smallest eigenpairs of the ML concentration")
    e.add_argument("--graph", required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--matrix", help="dense concentration matrix CSV instead of samples")
    e.add_argument("--components", "-j", type=_positive(int), default=1)
    e.add_argument("--tol", type=_positive(float), default=1e-8)
    e.add_argument("--oracle", action="store_true", help="compare against a dense eigendecomposition")
    e.add_argument("--center", action="store_true")
    e.add_argument("--vectors", action="store_true", help="also print eigenvectors")
    e.add_argument("--out")

    t = sub.add_parser("track", help="sliding-window smallest eigenvalue")
    t.add_argument("--graph", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--window", type=_positive(int), default=500)
    t.add_argument("--overlap", type=_nonneg_int, default=400)
    t.add_argument("--tol", type=_positive(float), default=1e-3)
    t.add_argument("--warm-margin", type=float, default=0.1)
    t.add_argument("--iters", action="store_true", help="append the estimate after every iteration")
    t.add_argument("--oracle", action="store_true")
    t.add_argument("--center", action="store_true")
    t.add_argument("--out")

    d = sub.add_parser("detect", help="residual-subspace anomaly scores")
    d.add_argument("--graph", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--components", "-j", type=_positive(int), default=4)
    d.add_argument("--tol", type=_positive(float), default=1e-10)
    d.add_argument("--quantile", type=float, default=0.995)
    d.add_argument("--threshold", type=_positive(float), default=None)
    d.add_argument("--compare", nargs="+", default=[], metavar="GRAPH", help="extra graphs to score side by side")
    d.add_argument("--center", action="store_true")
    d.add_argument("--out")
    return ap


# -- gen ---------------------------------------------------------------------


def cmd_gen(args, out) -> None:
    rng = np.random.default_rng(args.seed)
    manifest = {"preset": args.preset, "seed": args.seed, "generator": "numpy.random.default_rng (PCG64)"}
    if args.preset == "paper-tracking":
        graph = synthetic.tracking_graph()
        n = args.n or 5500
        x = rng.standard_normal((n, graph.p))
        truth = np.eye(graph.p)
    elif args.preset == "two-clique-toy":
        graph = synthetic.two_clique_graph()
        n = args.n or 200
        x = rng.standard_normal((n, graph.p))
        truth = np.eye(graph.p)
    elif args.preset == "random":
        graph = random_decomposable(40, 5, 4, seed=int(rng.integers(2**63)))
        A = rng.standard_normal((graph.p, graph.p))
        truth = synthetic.project_to_graph(graph, A @ A.T / graph.p + 0.2 * np.eye(graph.p)).to_dense()
        n = args.n or 500
        sigma = np.linalg.inv(truth)
        x = synthetic.sample_gaussian(0.5 * (sigma + sigma.T), n, seed=int(rng.integers(2**63)))
    else:
        sc = synthetic.anomaly_scenario(n=args.n or 1000, seed=int(rng.integers(2**63)))
        graph, x, truth, n = sc.graph, sc.samples, sc.concentration, sc.samples.shape[0]
        manifest["injections"] = sc.injections
        manifest["amplitude"] = sc.amplitude
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    save_graph(graph, d / "graph.json")
    write_matrix(d / "samples.csv", x)
    write_matrix(d / "truth.csv", truth)
    manifest.update(p=graph.p, n=n, graph="graph.json", samples="samples.csv", concentration="truth.csv")
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    out.write(f"wrote {d / 'graph.json'}, {d / 'samples.csv'}, {d / 'truth.csv'}, {d / 'manifest.json'}\n")


# -- eig ---------------------------------------------------------------------


def cmd_eig(args, out) -> None:
    graph = load_graph(args.graph)
    if args.components > graph.p:
        raise UsageError(f"--components {args.components} exceeds p={graph.p}")
    if args.matrix:
        K = BlockSparseConcentration.from_dense(graph, read_samples(args.matrix, graph.p))
        net = spawn_cliques(graph)
    else:
        data = read_samples(args.data)
        if data.shape[1] != graph.p:
            raise DimensionMismatch(f"data has {data.shape[1]} columns, graph has p={graph.p}")
        if args.center:
            data = data - data.mean(axis=0)
        net = spawn_cliques(graph, data)
        K = run_protocol(net, "assemble").value
    result = run_protocol(net, "spectrum", K=K, j=args.components, tol=args.tol)
    pairs = result.value

    header = ["component", "lambda", "bracket_width", "iterations"]
    oracle = None
    if args.oracle:
        oracle = np.linalg.eigvalsh(K.to_dense())
        header.append("oracle_delta")
    if args.vectors:
        header += [f"u{i}" for i in range(graph.p)]
    rows = []
    for i, pr in enumerate(pairs):
        row = [i + 1, pr.value, pr.bracket_width, pr.iterations]
        if oracle is not None:
            row.append(abs(pr.value - oracle[i]))
        if args.vectors:
            row += pr.vector.tolist()
        rows.append(row)
    stats = message_stats(result.log, graph.p)
    write_csv(args.out, header, rows, out)
    out.write(
        f"# messages count={stats.count} max_dim={stats.max_dim} total_bytes={stats.total_bytes} "
        f"centralized_dim={stats.centralized_dim} within_bound={str(stats.within_bound).lower()}\n"
    )


# -- track -------------------------------------------------------------------


def cmd_track(args, out) -> None:
    graph = load_graph(args.graph)
    data = read_samples(args.data)
    if data.shape[0] < args.window:
        raise UsageError(f"stream has {data.shape[0]} samples, fewer than --window {args.window}")
    if args.overlap >= args.window:
        raise UsageError("--overlap must be smaller than --window")
    trace = track(data, graph, args.window, args.overlap, args.tol, args.warm_margin, center=args.center)
    header = ["window_start", "lambda", "bracket_width", "iterations", "messages_bytes"]
    if args.oracle:
        header.append("oracle_error")
    n_iter = max(trace.iterations) if args.iters else 0
    header += [f"iter_{i + 1}" for i in range(n_iter)]
    rows = []
    for pt in trace.points:
        row = [pt.start, pt.value, pt.width, pt.iterations, pt.messages_bytes]
        if args.oracle:
            K, _ = ml_concentration(graph, data[pt.start : pt.stop], center=args.center)
            row.append(abs(pt.value - np.linalg.eigvalsh(K.to_dense())[0]))
        if n_iter:
            row += pt.estimates + [""] * (n_iter - len(pt.estimates))
        rows.append(row)
    write_csv(args.out, header, rows, out)


# -- detect ------------------------------------------------------------------


def cmd_detect(args, out) -> None:
    graph = load_graph(args.graph)
    data = read_samples(args.data)
    if data.shape[1] != graph.p:
        raise DimensionMismatch(f"data has {data.shape[1]} columns, graph has p={graph.p}")
    if args.components > graph.p:
        raise UsageError(f"--components {args.components} exceeds p={graph.p}")
    if args.threshold is None and not 0 < args.quantile < 1:
        raise UsageError("--quantile must be in (0, 1)")
    model = fit_model(data, graph, args.components, tol=args.tol, center=args.center)
    res = residual_norms(model, data)
    flagged = detect(res, threshold=args.threshold, quantile=args.quantile)
    fset = set(flagged)

    header = ["index", "residual", "flagged"]
    cols = []
    if args.compare:
        dense = dense_pca_residuals(data, args.components, center=args.center)
        others = []
        for path in args.compare:
            g2 = load_graph(path)
            if g2.p != graph.p:
                raise DimensionMismatch(f"{path} has p={g2.p}, expected {graph.p}")
            m2 = fit_model(data, g2, args.components, tol=args.tol, center=args.center)
            others.append((Path(path).stem, residual_norms(m2, data)))
        header += [f"residual_{name}" for name, _ in others] + ["dense"]
        cols = [r for _, r in others] + [dense]
    rows = []
    for i in range(len(res)):
        rows.append([i, res[i], int(i in fset)] + [c[i] for c in cols])
    write_csv(args.out, header, rows, out)
    out.write("# flagged " + ",".join(map(str, flagged)) + "\n")
    if args.compare:
        out.write(f"# mean_abs_error {Path(args.graph).stem} {fmt(np.abs(res - dense).mean())}\n")
        for name, r in others:
            out.write(f"# mean_abs_error {name} {fmt(np.abs(r - dense).mean())}\n")


COMMANDS = {"gen": cmd_gen, "eig": cmd_eig, "track": cmd_track, "detect": cmd_detect}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        err.write(f"error: USAGE: {exc}\n")
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        code = getattr(exc, "code", None) or ("IO" if isinstance(exc, OSError) else type(exc).__name__.upper())
        msg = " ".join(str(exc).split())
        err.write(f"error: {code}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
