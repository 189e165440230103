"""Reference applications built on the fixpoint engine.

Three iterative workloads exercise the three assignment-function shapes:
sigma-clipping an image stack (group-by), connected component labeling
(window), and k-means over point values (attribute grouping).  Each has an
independent brute-force counterpart in the test suite.

The synthetic generators emit integer-valued float64 data on purpose: sums of
integers stay exact under the add/subtract combining the incremental
strategies rely on, so all strategies produce bit-identical arrays.
"""

from __future__ import annotations

import hashlib
import math
import random
import time

from .core import ArraySchema, ChunkedArray, Dim, diff_count, dump_text
from .errors import BadParams, NonConvergence, TooFewPoints
from .fixpoint import AssignmentFunction, FixPointSpec, IterationRecord, iterate
from .incremental import STRATEGIES, rewrite_incremental, run_incremental
from .operators import ALGEBRAIC, AggregateSpec, groupby_aggregate
from .parallel import ShufflePolicy, run_parallel
from .store import VersionedStore


def array_hash(a: ChunkedArray) -> str:
    """Content hash over dims, attrs, and cells; chunking and overlap are
    physical layout and deliberately excluded."""
    sch = a.schema
    head = ";".join(f"{d.name}:{d.lower}:{d.upper}" for d in sch.dims)
    head += "|" + ";".join(f"{n}:{k}" for n, k in sch.attrs)
    h = hashlib.sha256(head.encode())
    for coord, tup in a.nonempty_cells():
        h.update(repr((coord, tup)).encode())
    return h.hexdigest()


# -- sigma-clipping --------------------------------------------------------


def sigmaclip_spec(k: float = 2.0, array: str = "img") -> FixPointSpec:
    """Repeatedly drop pixels more than k standard deviations from their
    (x, y) column's mean across the stack."""
    if k <= 0:
        raise BadParams(f"clip width must be positive, got {k}")
    return FixPointSpec(
        array=array,
        pi=AssignmentFunction.groupby(("x", "y")),
        f=[
            AggregateSpec("mu", "avg", "d"),
            AggregateSpec("sigma", "stdv", "d"),
        ],
        delta=f"mu - {k} * sigma <= d <= mu + {k} * sigma ? d : null",
    )


def run_sigmaclip(a: ChunkedArray, k: float = 2.0, strategy: str = "naive",
                  store: VersionedStore = None):
    """Run sigma-clipping under one of the four strategies; all of them
    produce bit-identical final arrays on integer-valued input."""
    if strategy not in STRATEGIES:
        raise BadParams(f"unknown strategy {strategy!r}")
    spec = sigmaclip_spec(k)
    if strategy == "naive":
        return iterate(a, spec)
    if strategy == "manual-incr":
        return sigmaclip_manual(a, k, spec.max_iterations)
    if store is None:
        store = VersionedStore()
    store.store(spec.array, a)
    plan = rewrite_incremental(spec, a.schema)
    return run_incremental(
        plan, store, use_storage=(strategy == "efficient-incr+storage")
    )


def sigmaclip_manual(a: ChunkedArray, k: float = 2.0,
                     max_iterations: int = 10000):
    """Hand-maintained incremental sigma-clipping.

    Per-group partial sums are built once; each pass splits cells into the
    ones that remain and the ones to collect, and the collected cells'
    contributions are subtracted from their group's partials.
    """
    gdims = [a.schema.dim_index(n) for n in ("x", "y")]
    partials = {}  # (x, y) -> [count, sum, sum_sq]
    alive = {}
    for coord, tup in a.nonempty_cells():
        d = tup[0]
        if d is None:
            continue
        key = tuple(coord[i] for i in gdims)
        p = partials.setdefault(key, [0, 0.0, 0.0])
        p[0] += 1
        p[1] += d
        p[2] += d * d
        alive[coord] = tup

    finalize = ALGEBRAIC["stdv"][1]
    trace = []
    for i in range(1, max_iterations + 1):
        t0 = time.perf_counter()
        bounds = {}
        for key, (c, s, s2) in partials.items():
            if c == 0:
                continue
            mu = s / c
            sigma = finalize(c, s, s2)
            bounds[key] = (mu - k * sigma, mu + k * sigma)
        collect = []
        for coord in sorted(alive):
            key = tuple(coord[i] for i in gdims)
            lo_hi = bounds.get(key)
            d = alive[coord][0]
            if lo_hi is None or not (lo_hi[0] <= d <= lo_hi[1]):
                collect.append(coord)
        for coord in collect:
            key = tuple(coord[i] for i in gdims)
            d = alive.pop(coord)[0]
            p = partials[key]
            p[0] -= 1
            p[1] -= d
            p[2] -= d * d
        trace.append(
            IterationRecord(
                i, len(collect), len(alive) + len(collect), False,
                time.perf_counter() - t0,
            )
        )
        if not collect:
            out = ChunkedArray(a.schema)
            for coord in sorted(alive):
                out.set(coord, alive[coord])
            return out, trace
    raise NonConvergence(
        f"no convergence within {max_iterations} iterations", trace=trace
    )


def coadd(a: ChunkedArray) -> ChunkedArray:
    """Per-(x, y) sum across the stack of the surviving pixels."""
    return groupby_aggregate(a, ("x", "y"), [AggregateSpec("coadd", "sum", "d")])


# -- connected component labeling ------------------------------------------


def sourcedetect_spec(r: int = 1, array: str = "labels") -> FixPointSpec:
    """Propagate the minimum label over a (2r+1)^d window until components
    carry one label each."""
    if r < 1:
        raise BadParams(f"window radius must be >= 1, got {r}")
    return FixPointSpec(
        array=array,
        pi=AssignmentFunction.window((r, r)),
        f=[AggregateSpec("m", "min", "label")],
        delta="m",
    )


def linear_index(schema: ArraySchema, coord) -> int:
    """Row-major ordinal of a coordinate within the array domain."""
    idx = 0
    for c, d in zip(coord, schema.dims):
        idx = idx * d.size + (c - d.lower)
    return idx


def label_seed(nx: int, ny: int, coords, chunk=(8, 8)) -> ChunkedArray:
    """Initial labeling: each masked cell gets its row-major ordinal."""
    schema = ArraySchema(
        (Dim("x", 0, nx - 1), Dim("y", 0, ny - 1)),
        (("label", "int64"),),
        (min(chunk[0], nx), min(chunk[1], ny)),
    )
    a = ChunkedArray(schema)
    for coord in coords:
        a.set(coord, (linear_index(schema, coord),))
    return a


def run_sourcedetect(a: ChunkedArray, r: int = 1,
                     policy: ShufflePolicy = None, workers: int = 1):
    """Label connected components; returns (final, trace, stats)."""
    spec = sourcedetect_spec(r)
    if policy is None:
        final, trace = iterate(a, spec)
        return final, trace, None
    return run_parallel(spec, a, policy, workers=workers)


# -- k-means ---------------------------------------------------------------


def kmeans_spec(array: str = "points") -> FixPointSpec:
    """Lloyd iteration over points in the plane: centroids are per-cluster
    means of the coordinates, and each point moves to its nearest centroid
    (Euclidean, ties to the lowest cluster index)."""

    def reassign(coord, tup, centroids):
        x, y = coord
        best = None
        best_dist = None
        for (c,), (cx, cy) in centroids.nonempty_cells():
            if cx is None or cy is None:
                continue
            dist = (x - cx) ** 2 + (y - cy) ** 2
            if best_dist is None or dist < best_dist:
                best, best_dist = c, dist
        return (best if best is not None else tup[0],)

    return FixPointSpec(
        array=array,
        pi=AssignmentFunction.attribute("label"),
        f=[
            AggregateSpec("cx", "avg", "x"),
            AggregateSpec("cy", "avg", "y"),
        ],
        delta=reassign,
    )


def assign_random(a: ChunkedArray, k: int, seed: int = 0) -> ChunkedArray:
    """Seeded uniform random initial cluster assignment of the points."""
    if k < 1:
        raise BadParams(f"cluster count must be >= 1, got {k}")
    if a.cell_count() < k:
        raise TooFewPoints(f"{a.cell_count()} points cannot seed {k} clusters")
    rng = random.Random(seed)
    out = ChunkedArray(a.schema)
    for coord, _ in a.nonempty_cells():
        out.set(coord, (rng.randrange(k),))
    return out


def kmeans_run(a: ChunkedArray, k: int, seed: int = 0,
               max_iterations: int = 1000):
    """Cluster the non-empty cells of a labeled (x, y) array.

    Returns (centroid dict, final labeled array, trace).
    """
    a0 = assign_random(a, k, seed)
    spec = kmeans_spec()
    spec.max_iterations = max_iterations
    final, trace = iterate(a0, spec)
    groups = {}
    for (x, y), (c,) in final.nonempty_cells():
        groups.setdefault(c, []).append((x, y))
    centroids = {
        c: (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts))
        for c, pts in sorted(groups.items())
    }
    return centroids, final, trace


# -- synthetic data --------------------------------------------------------


BACKGROUND = 100  # generator sky level


def generate_images(seed: int, nx: int, ny: int, nt: int,
                    n_sources: int = 4, noise: int = 3,
                    chunk=(8, 8, 8), outlier_rate: float = 0.01):
    """Deterministic (x, y, t) image stack: Gaussian-profile sources on a
    constant background, integer noise, and rare large positive spikes (about
    one pixel in a hundred, +10 noise widths) for clipping to remove.

    Values are integer-valued floats so every aggregation strategy sums them
    exactly.
    """
    if nx < 1 or ny < 1 or nt < 1 or n_sources < 0 or noise < 0:
        raise BadParams("extents must be positive and source/noise counts >= 0")
    rng = random.Random(seed)
    centers = [
        (rng.randrange(nx), rng.randrange(ny), rng.randrange(40, 80))
        for _ in range(n_sources)
    ]
    schema = ArraySchema(
        (Dim("x", 0, nx - 1), Dim("y", 0, ny - 1), Dim("t", 0, nt - 1)),
        (("d", "float64"),),
        (min(chunk[0], nx), min(chunk[1], ny), min(chunk[2], nt)),
    )
    a = ChunkedArray(schema)
    psf2 = 2.0 * 2.0**2  # 2-pixel source width
    for x in range(nx):
        for y in range(ny):
            flux = BACKGROUND
            for sx, sy, amp in centers:
                flux += round(amp * math.exp(-((x - sx) ** 2 + (y - sy) ** 2) / psf2))
            for t in range(nt):
                v = flux + (rng.randint(-noise, noise) if noise else 0)
                if rng.random() < outlier_rate:
                    v += 10 * noise
                a.set((x, y, t), (float(v),))
    return a


def initial_labels(image2d: ChunkedArray, threshold: float) -> ChunkedArray:
    """Threshold a 2-D image into a labeled mask: every cell whose value
    exceeds the threshold gets its row-major ordinal as the label."""
    schema = ArraySchema(
        image2d.schema.dims, (("label", "int64"),), image2d.schema.chunk_extents
    )
    out = ChunkedArray(schema)
    for coord, (v,) in image2d.nonempty_cells():
        if v is not None and v > threshold:
            out.set(coord, (linear_index(schema, coord),))
    return out


def generate_mask(nx: int, ny: int, seed: int = 0, density: float = 0.3,
                  chunk=(8, 8)) -> ChunkedArray:
    """Sparse labeled mask for component detection."""
    rng = random.Random(seed)
    coords = [
        (x, y)
        for x in range(nx)
        for y in range(ny)
        if rng.random() < density
    ]
    return label_seed(nx, ny, coords, chunk)


# -- bench harness ---------------------------------------------------------

STATS_FIELDS = (
    "iteration",
    "mini_index",
    "major_index",
    "changed_cells",
    "shuffled_chunks",
    "shuffled_cells",
)


def stats_rows(trace, stats=None):
    """Flatten a run's trace (and optional parallel stats) into CSV rows."""
    rows = []
    for i, rec in enumerate(trace):
        st = stats[i] if stats else None
        rows.append(
            {
                "iteration": rec.iteration,
                "mini_index": st.mini_iteration_index if st else rec.iteration,
                "major_index": st.major_iteration_index if st else rec.iteration,
                "changed_cells": rec.changed_cells,
                "shuffled_chunks": st.shuffled_chunks if st else 0,
                "shuffled_cells": st.shuffled_cells if st else 0,
            }
        )
    return rows


def bench_sigmaclip(a: ChunkedArray, k: float = 2.0, strategies=STRATEGIES):
    """Run every strategy and check all final arrays are bit-identical.

    Returns (reference hash, {strategy: (trace, rows)}).
    """
    results = {}
    ref_hash = None
    ref_strategy = None
    for s in strategies:
        final, trace = run_sigmaclip(a, k, s)
        h = array_hash(final)
        if ref_hash is None:
            ref_hash, ref_strategy = h, s
        elif h != ref_hash:
            raise AssertionError(
                f"strategy {s!r} diverged from {ref_strategy!r}: {h} != {ref_hash}"
            )
        results[s] = (trace, stats_rows(trace))
    return ref_hash, results


def bench_sourcedetect(a: ChunkedArray, r: int = 1,
                       policies=("t1", "t5", "t10", "converge"),
                       workers_list=(1,)):
    """Run labeling under each shuffle policy and worker count; every
    configuration must converge to the same array as the sequential run.

    Returns (reference hash, {(policy, workers): (trace, stats, rows)}).
    """
    ref, _, _ = run_sourcedetect(a, r)
    ref_hash = array_hash(ref)
    results = {}
    for p in policies:
        policy = p if isinstance(p, ShufflePolicy) else ShufflePolicy.parse(p)
        for w in workers_list:
            final, trace, stats = run_sourcedetect(a, r, policy, w)
            if diff_count(final, ref) != 0:
                raise AssertionError(
                    f"policy {policy.label} with {w} workers diverged from "
                    "the sequential result"
                )
            results[(policy.label, w)] = (trace, stats, stats_rows(trace, stats))
    return ref_hash, results
