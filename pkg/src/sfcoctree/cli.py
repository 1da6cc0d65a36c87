"""Command-line benchmark harness.

Every report is CSV with a fixed header, written to ``--csv`` or stdout.
Exit status is 0 on success, 2 on bad usage and 1 on any other failure.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time
from contextlib import contextmanager

import numpy as np

from .geometry import KernelShape
from .io import SYNTHETIC_KINDS, SyntheticSpec, generate_cloud, read_cloud, write_cloud
from .linear_octree import build_linear_octree
from .locality import locality_histogram, locality_histogram_approx
from .memory_model import memory_report
from .pointer_octree import build_pointer_octree
from .reorder import reorder_cloud
from .search import BatchQuerySpec, TreeView, run_batch

TREE_METHODS = ("lin", "prune", "struct")
RADIUS_METHODS = ("ptr", "brute") + TREE_METHODS

RADIUS_HEADER = ["sfc", "method", "kernel", "radius", "mode", "queries", "threads",
                 "wall_seconds", "per_query_seconds", "mu"]
KNN_HEADER = ["sfc", "method", "k", "mode", "queries", "threads", "wall_seconds", "per_query_seconds", "mu"]
BUILD_HEADER = ["structure", "sfc", "N", "n_max", "nodes", "leaves", "build_seconds"]
MEMORY_HEADER = ["structure", "N", "n_max", "nodes", "rho", "bytes_total", "omega_expected", "omega_measured"]
BENCH_HEADER = ["sfc", "method", "kernel", "radius", "mode", "queries", "threads", "repeat",
                "wall_seconds", "mu"]


class UsageError(Exception):
    pass


@contextmanager
def _csv_out(path):
    if path is None or path == "-":
        yield csv.writer(sys.stdout, lineterminator="\n")
        sys.stdout.flush()
        return
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    with fh:
        yield csv.writer(fh, lineterminator="\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _mode(text: str):
    """``full`` or ``random:COUNT``."""
    if text == "full":
        return ("full", 0)
    kind, _, count = text.partition(":")
    if kind == "random" and count.isdigit() and int(count) > 0:
        return ("random", int(count))
    raise argparse.ArgumentTypeError(f"mode must be 'full' or 'random:COUNT', got {text!r}")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _batch_spec(args, method, **query) -> BatchQuerySpec:
    mode, size = args.mode
    if mode == "random" and args.seed is None:
        raise UsageError("--seed is required with --mode random:COUNT")
    return BatchQuerySpec(method=method, mode=mode, size=size or 5000, seed=args.seed, **query)


def _prepare(cloud, sfc: str, n_max: int, need_pointer: bool, need_linear: bool):
    """Coordinates, original-index map and whichever trees are needed."""
    if sfc == "none":
        return cloud.xyz, np.arange(len(cloud)), None, (build_pointer_octree(cloud, n_max) if need_pointer else None)
    coded = reorder_cloud(cloud, sfc)
    lin = TreeView(build_linear_octree(coded, n_max), coded) if need_linear else None
    ptr = build_pointer_octree(coded.cloud, n_max) if need_pointer else None
    return coded.xyz, np.asarray(coded.permutation), lin, ptr


def _dump(path, result, to_original):
    """One row per query: original center index, count, members (original indices)."""
    with _csv_out(path) as w:
        w.writerow(["center", "count", "members"])
        for c, res in zip(result.centers, result.results):
            members = res.to_array() if hasattr(res, "to_array") else np.asarray(res)
            orig = np.sort(to_original[members])
            w.writerow([int(to_original[c]), len(orig), " ".join(map(str, orig.tolist()))])


# --- subcommands ------------------------------------------------------------

def cmd_gen(args):
    spec = SyntheticSpec(kind=args.kind, n=args.n, seed=args.seed, extent=args.extent)
    write_cloud(generate_cloud(spec), args.out)


def cmd_reorder(args):
    coded = reorder_cloud(read_cloud(args.input), args.sfc)
    write_cloud(coded.cloud, args.out)


def cmd_build(args):
    cloud = read_cloud(args.input)
    t0 = time.perf_counter()
    if args.sfc == "none":
        tree = build_pointer_octree(cloud, args.nmax)
        elapsed = time.perf_counter() - t0
        nodes = tree.node_count()
        leaves = sum(1 for _ in tree.leaves())
        name = "pointer_octree"
    else:
        coded = reorder_cloud(cloud, args.sfc)
        t0 = time.perf_counter()
        tree = build_linear_octree(coded, args.nmax, threads=args.threads)
        elapsed = time.perf_counter() - t0
        nodes, leaves, name = tree.n_nodes, tree.n_leaves, "linear_octree"
    with _csv_out(args.csv) as w:
        if args.report_memory:
            _memory_rows(w, [tree])
        else:
            w.writerow(BUILD_HEADER)
            w.writerow([name, args.sfc, len(cloud), args.nmax, nodes, leaves, _fmt(elapsed)])


def _memory_rows(w, trees):
    w.writerow(MEMORY_HEADER)
    for tree in trees:
        r = memory_report(tree)
        w.writerow([r.structure, r.n_points, r.n_max, r.nodes, _fmt(r.rho), r.bytes_total,
                    _fmt(r.omega_expected), _fmt(r.omega_measured)])


def cmd_radius(args):
    if args.sfc == "none" and args.method in TREE_METHODS:
        raise UsageError(f"--method {args.method} needs a curve order; the linear octree cannot be built "
                         "on an unordered cloud (use --sfc morton|hilbert, or --method ptr|brute)")
    spec = _batch_spec(args, args.method, shape=args.kernel, radius=args.radius)
    cloud = read_cloud(args.input)
    xyz, to_original, lin, ptr = _prepare(cloud, args.sfc, args.nmax, args.method == "ptr",
                                          args.method in TREE_METHODS)
    tree = ptr if args.method == "ptr" else lin
    res = run_batch(tree, xyz, spec, args.threads, keep_results=args.dump is not None)
    with _csv_out(args.csv) as w:
        w.writerow(RADIUS_HEADER)
        w.writerow([args.sfc, args.method, args.kernel, _fmt(args.radius), _mode_text(args.mode),
                    res.n_queries, args.threads, _fmt(res.wall_time), _fmt(res.per_query_mean), _fmt(res.mu)])
    if args.dump is not None:
        _dump(args.dump, res, to_original)


def cmd_knn(args):
    method = "brute_knn" if args.sfc == "none" else "knn"
    spec = _batch_spec(args, method, k=args.k)
    cloud = read_cloud(args.input)
    xyz, to_original, lin, _ = _prepare(cloud, args.sfc, args.nmax, False, method == "knn")
    res = run_batch(lin, xyz, spec, args.threads, keep_results=args.dump is not None)
    with _csv_out(args.csv) as w:
        w.writerow(KNN_HEADER)
        w.writerow([args.sfc, method, args.k, _mode_text(args.mode), res.n_queries, args.threads,
                    _fmt(res.wall_time), _fmt(res.per_query_mean), _fmt(res.mu)])
    if args.dump is not None:
        _dump(args.dump, res, to_original)


def cmd_locality(args):
    cloud = read_cloud(args.input)
    if args.sample is not None and args.seed is None:
        raise UsageError("--seed is required with --sample")
    if args.sfc == "none":
        # the cloud's own storage order, scanned exhaustively
        tree, xyz, brute = None, cloud.xyz, True
    else:
        coded = reorder_cloud(cloud, args.sfc)
        tree, xyz, brute = TreeView(build_linear_octree(coded, args.nmax), coded), coded.xyz, False
    if args.sample is None:
        h = locality_histogram(tree, xyz, args.k, args.threads, brute=brute)
    else:
        h = locality_histogram_approx(tree, xyz, args.k, args.sample, args.seed, args.threads, brute=brute)
    q1, q2, q3 = h.quantiles()
    summary = [("N", h.n), ("centers", h.n_centers), ("k", h.k), ("mean", h.mean()), ("stddev", h.std()),
               ("G1", h.skewness()), ("Q1", q1), ("Q2", q2), ("Q3", q3)]
    with _csv_out(args.csv) as w:
        w.writerow(["d", "count"])
        for d, c in zip(h.distances.tolist(), h.counts.tolist()):
            w.writerow([d, c])
        for key, value in summary:
            w.writerow([key, _fmt(value)])
    if args.csv not in (None, "-"):
        print(" ".join(f"{k}={_fmt(v)}" for k, v in summary))


def cmd_bench(args):
    cloud = read_cloud(args.input)
    if args.sfc == "none":
        bad = [m for m in args.methods if m in TREE_METHODS]
        if bad:
            raise UsageError(f"methods {bad} need a curve order (--sfc morton|hilbert)")
    methods = args.methods
    xyz, _, lin, ptr = _prepare(cloud, args.sfc, args.nmax, "ptr" in methods or args.report_memory,
                                any(m in TREE_METHODS for m in methods) or args.report_memory)
    rows = []
    for r in args.radii:
        for m in methods:
            spec = _batch_spec(args, m, shape=args.kernel, radius=r)
            tree = ptr if m == "ptr" else lin
            for rep in range(args.repeats):
                res = run_batch(tree, xyz, spec, args.threads)
                rows.append([args.sfc, m, args.kernel, _fmt(r), _mode_text(args.mode), res.n_queries,
                             args.threads, rep, _fmt(res.wall_time), _fmt(res.mu)])
    with _csv_out(args.csv) as w:
        w.writerow(BENCH_HEADER)
        w.writerows(rows)
    if args.report_memory:
        trees = [t for t in (lin.tree if lin is not None else None, ptr) if t is not None]
        with _csv_out(args.memory_csv) as w:
            _memory_rows(w, trees)
    if args.csv not in (None, "-"):
        for m in methods:
            for r in args.radii:
                times = [float(row[8]) for row in rows if row[1] == m and row[3] == _fmt(r)]
                print(f"{m} r={r}: median {statistics.median(times):.4f} s over {len(times)} runs")


def _mode_text(mode) -> str:
    return "full" if mode[0] == "full" else f"random:{mode[1]}"


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfcoctree", description="Curve-ordered point clouds, octrees and "
                                "neighbourhood-search benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    def cloud_in(sp):
        sp.add_argument("--in", dest="input", required=True, help="input cloud (.xyz or .pcb)")

    def tree_opts(sp, allow_none=True):
        choices = ("none", "morton", "hilbert") if allow_none else ("morton", "hilbert")
        sp.add_argument("--sfc", choices=choices, default="hilbert")
        sp.add_argument("--nmax", type=_positive_int, default=128, help="leaf capacity")

    def batch_opts(sp):
        sp.add_argument("--mode", type=_mode, default=("full", 0), help="full or random:COUNT")
        sp.add_argument("--seed", type=int, help="required for random mode")
        sp.add_argument("--threads", type=_positive_int, default=1)
        sp.add_argument("--csv", help="report path (default stdout)")

    sp = sub.add_parser("gen", help="write a seeded synthetic cloud")
    sp.add_argument("--kind", choices=SYNTHETIC_KINDS, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--extent", type=_positive_float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("reorder", help="sort a cloud along a space-filling curve")
    cloud_in(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sfc", choices=("morton", "hilbert"), required=True)
    sp.set_defaults(func=cmd_reorder)

    sp = sub.add_parser("build", help="build an octree and report its size")
    cloud_in(sp)
    tree_opts(sp)
    sp.add_argument("--threads", type=_positive_int, default=1)
    sp.add_argument("--report-memory", action="store_true")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("radius", help="batch of fixed-radius searches")
    cloud_in(sp)
    tree_opts(sp)
    sp.add_argument("--method", choices=RADIUS_METHODS, default="struct")
    sp.add_argument("--kernel", choices=[s.name.lower() for s in KernelShape], default="sphere")
    sp.add_argument("--radius", type=_positive_float, required=True)
    batch_opts(sp)
    sp.add_argument("--dump", help="also write every neighbourhood to this CSV")
    sp.set_defaults(func=cmd_radius)

    sp = sub.add_parser("knn", help="batch of k-nearest-neighbour searches")
    cloud_in(sp)
    tree_opts(sp)
    sp.add_argument("--k", type=_positive_int, required=True)
    batch_opts(sp)
    sp.add_argument("--dump", help="also write every neighbourhood to this CSV")
    sp.set_defaults(func=cmd_knn)

    sp = sub.add_parser("locality", help="kNN locality histogram of a storage order")
    cloud_in(sp)
    tree_opts(sp)
    sp.add_argument("--k", type=_positive_int, required=True)
    sp.add_argument("--sample", type=_positive_int, help="approximate from this many centers")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=_positive_int, default=1)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_locality)

    sp = sub.add_parser("bench", help="timed radius-search grid, optionally with memory report")
    cloud_in(sp)
    tree_opts(sp)
    sp.add_argument("--methods", nargs="+", choices=RADIUS_METHODS, default=list(TREE_METHODS))
    sp.add_argument("--kernel", choices=[s.name.lower() for s in KernelShape], default="sphere")
    sp.add_argument("--radii", nargs="+", type=_positive_float, required=True)
    sp.add_argument("--repeats", type=_positive_int, default=5)
    batch_opts(sp)
    sp.add_argument("--report-memory", action="store_true")
    sp.add_argument("--memory-csv", help="memory report path (default stdout)")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, TypeError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
