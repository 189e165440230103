"""Command-line front end.

Verbs: ``generate`` synthetic inputs, ``run`` one application, ``bench``
all strategies/policies with a stats CSV, ``dump`` an array file, ``diff``
two array files (exit 1 when they differ).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import apps
from .core import diff_count, dump_text, parse_text
from .errors import GridfixError
from .fixpoint import iterate
from .incremental import STRATEGIES
from .multires import PyramidSpec, run_multires
from .operators import AggregateSpec
from .parallel import ShufflePolicy


def _ints(text, sep=","):
    return tuple(int(x) for x in text.split(sep))


def _write_stats(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=apps.STATS_FIELDS)
        w.writeheader()
        w.writerows(rows)


def _load(path):
    return parse_text(Path(path).read_text())


def _save(path, a):
    Path(path).write_text(dump_text(a))


def _cmd_generate(args):
    if args.what == "stack":
        nx, ny, nt = _ints(args.size, "x")
        a = apps.generate_images(
            args.seed, nx, ny, nt,
            n_sources=args.sources, noise=args.noise,
            chunk=_ints(args.chunks) if args.chunks else (8, 8, 8),
        )
    else:
        nx, ny = _ints(args.size, "x")
        a = apps.generate_mask(
            nx, ny, seed=args.seed, density=args.density,
            chunk=_ints(args.chunks) if args.chunks else (8, 8),
        )
    _save(args.out, a)
    print(f"{args.what}: {a.cell_count()} cells -> {args.out}")
    return 0


def _pyramid_for(args, block_volume):
    keep = args.keep or f"count == {block_volume}"
    return PyramidSpec(
        levels=args.levels,
        block=_ints(args.grid, "x"),
        aggs=[
            AggregateSpec("label", args.multires_agg, "label"),
            AggregateSpec("count", "count", "label"),
        ],
        keep=keep,
        value_attrs=("label",),
        seed_exprs=("ext.label",),
    )


def _cmd_run(args):
    if args.app == "sigmaclip":
        a = _load(args.infile)
        final, trace = apps.run_sigmaclip(a, k=args.k, strategy=args.strategy)
        rows = apps.stats_rows(trace)
    elif args.app == "sourcedetect":
        a = _load(args.infile)
        if args.multires:
            block = _ints(args.grid, "x")
            vol = 1
            for b in block:
                vol *= b
            pyr = _pyramid_for(args, vol)
            final, state = run_multires(a, apps.sourcedetect_spec(args.radius), pyr)
            rows = apps.stats_rows(state.traces[0])
        else:
            policy = ShufflePolicy.parse(args.policy) if args.policy else None
            final, trace, stats = apps.run_sourcedetect(
                a, r=args.radius, policy=policy, workers=args.workers
            )
            rows = apps.stats_rows(trace, stats)
    else:  # kmeans
        a = _load(args.infile)
        centroids, final, trace = apps.kmeans_run(
            a, args.k_clusters, seed=args.seed
        )
        rows = apps.stats_rows(trace)
        print(
            "centroids:",
            " ".join(f"{c}:({cx:.3f},{cy:.3f})" for c, (cx, cy) in centroids.items()),
        )
    if args.out:
        _save(args.out, final)
    if args.stats:
        _write_stats(args.stats, rows)
    print(f"{args.app}: {len(rows)} iterations, {final.cell_count()} cells")
    return 0


def _cmd_bench(args):
    a = _load(args.infile)
    all_rows = []
    try:
        if args.app == "sigmaclip":
            ref, results = apps.bench_sigmaclip(a, k=args.k)
            for s in STRATEGIES:
                trace, rows = results[s]
                print(f"sigmaclip {s}: {len(trace)} iterations")
                all_rows.extend(rows)
        else:
            policies = args.policies.split(",")
            workers = _ints(args.workers_list)
            ref, results = apps.bench_sourcedetect(
                a, r=args.radius, policies=policies, workers_list=workers
            )
            for (label, w), (trace, stats, rows) in results.items():
                majors = stats[-1].major_iteration_index if stats else len(trace)
                print(
                    f"sourcedetect policy={label} workers={w}: "
                    f"{len(trace)} mini / {majors} major iterations"
                )
                all_rows.extend(rows)
    except AssertionError as e:
        print(f"MISMATCH: {e}", file=sys.stderr)
        return 1
    print(f"all runs agree: {ref}")
    if args.stats:
        _write_stats(args.stats, all_rows)
    return 0


def _cmd_dump(args):
    sys.stdout.write(dump_text(_load(args.infile)))
    return 0


def _cmd_diff(args):
    n = diff_count(_load(args.a), _load(args.b))
    print(f"{n} differing cells")
    return 0 if n == 0 else 1


def build_parser():
    p = argparse.ArgumentParser(prog="gridfix")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="write a synthetic input array")
    g.add_argument("what", choices=("stack", "mask"))
    g.add_argument("--out", required=True)
    g.add_argument("--size", required=True, help="e.g. 32x32x16 or 64x64")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--chunks", help="chunk extents, e.g. 8,8,8")
    g.add_argument("--density", type=float, default=0.3)
    g.add_argument("--sources", type=int, default=4)
    g.add_argument("--noise", type=int, default=3)
    g.set_defaults(fn=_cmd_generate)

    r = sub.add_parser("run", help="run one application")
    r.add_argument("app", choices=("sigmaclip", "sourcedetect", "kmeans"))
    r.add_argument("--in", dest="infile")
    r.add_argument("--out")
    r.add_argument("--stats", help="write per-iteration stats CSV")
    r.add_argument("--k", type=float, default=2.0, help="clip width in sigmas")
    r.add_argument("--strategy", choices=STRATEGIES, default="naive")
    r.add_argument("--radius", type=int, default=1)
    r.add_argument("--policy", help="t1|t5|t10|tK=<k>|converge|thresh=<n>")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--multires", action="store_true")
    r.add_argument("--levels", type=int, default=2)
    r.add_argument("--grid", default="2x2", help="downscale block, e.g. 2x2")
    r.add_argument("--multires-agg", default="min", dest="multires_agg")
    r.add_argument("--keep", help="block-keep predicate (default: full blocks)")
    r.add_argument("--k-clusters", type=int, default=2, dest="k_clusters")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(fn=_cmd_run)

    b = sub.add_parser("bench", help="compare strategies / shuffle policies")
    b.add_argument("app", choices=("sigmaclip", "sourcedetect"))
    b.add_argument("--in", dest="infile", required=True)
    b.add_argument("--stats")
    b.add_argument("--k", type=float, default=2.0)
    b.add_argument("--radius", type=int, default=1)
    b.add_argument("--policies", default="t1,t5,t10,converge")
    b.add_argument("--workers-list", default="1", dest="workers_list")
    b.set_defaults(fn=_cmd_bench)

    d = sub.add_parser("dump", help="print an array file")
    d.add_argument("infile")
    d.set_defaults(fn=_cmd_dump)

    f = sub.add_parser("diff", help="count differing cells of two array files")
    f.add_argument("a")
    f.add_argument("b")
    f.set_defaults(fn=_cmd_diff)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GridfixError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
