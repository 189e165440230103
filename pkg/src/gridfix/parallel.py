"""Parallel chunk execution with halo (overlap) replication.

Each chunk carries replicas of its neighbors' border cells within a halo
radius, so window operators can run per-chunk.  Between synchronization
barriers chunks iterate locally on possibly stale halos (mini-iterations);
a configurable policy decides when halos are refreshed (a major iteration).
Halo refresh is chunk-granular: whole neighbor chunks are exchanged and
counted even when few cells changed.

Workers are threads standing in for shared-nothing nodes; chunk updates are
pure functions of a chunk's own core and halo, so results are bit-identical
for any worker count.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import expr as E
from .core import ChunkedArray
from .errors import (
    NonConvergence,
    OverlapTooLarge,
    OverlapTooSmall,
    StrategyUnavailable,
)
from .fixpoint import FixPointSpec, IterationRecord, classify, iterate
from .operators import _Acc, _coerce, _value_getter


@dataclass(frozen=True)
class ShufflePolicy:
    kind: str  # "every_k" | "on_local_convergence" | "change_threshold"
    k: int = None
    n: int = None

    @classmethod
    def every_k(cls, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        return cls("every_k", k=k)

    @classmethod
    def on_local_convergence(cls):
        return cls("on_local_convergence")

    @classmethod
    def change_threshold(cls, n: int):
        if n < 0:
            raise ValueError("threshold must be >= 0")
        return cls("change_threshold", n=n)

    @classmethod
    def parse(cls, text: str) -> "ShufflePolicy":
        if text in ("t1", "t5", "t10"):
            return cls.every_k(int(text[1:]))
        if text.startswith("tK="):
            return cls.every_k(int(text[3:]))
        if text == "converge":
            return cls.on_local_convergence()
        if text.startswith("thresh="):
            return cls.change_threshold(int(text[7:]))
        raise ValueError(f"unknown shuffle policy {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "every_k":
            return f"t{self.k}"
        if self.kind == "on_local_convergence":
            return "converge"
        return f"thresh={self.n}"


@dataclass
class WorkerPartition:
    workers: int
    assignment: dict  # chunk-id -> worker index

    @classmethod
    def round_robin(cls, chunk_ids, workers: int) -> "WorkerPartition":
        ids = sorted(chunk_ids)
        return cls(workers, {cid: i % workers for i, cid in enumerate(ids)})


@dataclass
class ExecutorStats:
    mini_iteration_index: int
    major_iteration_index: int
    shuffled_chunks: int
    shuffled_cells: int


def signal_opt(policy: ShufflePolicy, iteration: int, local_delta_sizes) -> bool:
    """True iff halos must be synchronized before this mini-iteration.

    ``local_delta_sizes`` holds per-chunk change counts from the previous
    mini-iteration; None on the first iteration, where only the every_k
    policy can fire.
    """
    if policy.kind == "every_k":
        return iteration % policy.k == 0
    if local_delta_sizes is None:
        return False
    sizes = list(local_delta_sizes.values()) if isinstance(
        local_delta_sizes, dict
    ) else list(local_delta_sizes)
    if policy.kind == "on_local_convergence":
        return all(s == 0 for s in sizes)
    return sum(sizes) <= policy.n


# -- halo construction and refresh ----------------------------------------


def _halo_for_chunk(a: ChunkedArray, cid, radius):
    """Collect neighbor core cells inside the chunk's halo band."""
    sch = a.schema
    lo, hi = sch.chunk_box(cid)
    band_lo = tuple(max(d.lower, l - r) for l, r, d in zip(lo, radius, sch.dims))
    band_hi = tuple(min(d.upper, h + r) for h, r, d in zip(hi, radius, sch.dims))
    halo = {}
    grid = sch.chunk_grid()
    for off in itertools.product(*[(-1, 0, 1)] * sch.ndim):
        if all(o == 0 for o in off):
            continue
        ncid = tuple(c + o for c, o in zip(cid, off))
        if any(n < 0 or n >= g for n, g in zip(ncid, grid)):
            continue
        nch = a.chunks.get(ncid)
        if nch is None:
            continue
        for coord, tup in nch.core.items():
            if all(bl <= c <= bh for c, bl, bh in zip(coord, band_lo, band_hi)):
                halo[coord] = tup
    return halo


def partition_with_overlap(a: ChunkedArray, radius) -> ChunkedArray:
    """Populate every chunk's halo from neighbor cores within the radius."""
    radius = tuple(radius)
    sch = a.schema
    if len(radius) != sch.ndim or any(r < 0 for r in radius):
        raise OverlapTooLarge(f"bad halo radius {radius}")
    if any(r >= e for r, e in zip(radius, sch.chunk_extents)):
        raise OverlapTooLarge(
            f"halo radius {radius} must be < chunk extents {sch.chunk_extents}"
        )
    out = a.copy(with_halo=False)
    out.schema = sch.with_overlap(radius)
    for cid, ch in out.chunks.items():
        ch.halo = _halo_for_chunk(out, cid, radius)
    return out


def shuffle_overlap(a: ChunkedArray):
    """Refresh all halo replicas from current cores.

    Returns (set of chunk ids whose halo changed, chunks exchanged, cells
    exchanged).  Accounting is chunk-granular: every neighbor chunk that
    intersects a halo band counts as one whole-chunk transfer.
    """
    radius = a.schema.overlap
    sch = a.schema
    grid = sch.chunk_grid()
    changed = set()
    n_chunks = 0
    n_cells = 0
    new_halos = {}
    for cid, ch in a.chunks.items():
        if all(r == 0 for r in radius):
            new_halos[cid] = {}
            continue
        for off in itertools.product(*[(-1, 0, 1)] * sch.ndim):
            if all(o == 0 for o in off):
                continue
            ncid = tuple(c + o for c, o in zip(cid, off))
            if any(n < 0 or n >= g for n, g in zip(ncid, grid)):
                continue
            nch = a.chunks.get(ncid)
            if nch is None:
                continue
            n_chunks += 1
            n_cells += len(nch.core)
        new_halos[cid] = _halo_for_chunk(a, cid, radius)
    for cid, halo in new_halos.items():
        if a.chunks[cid].halo != halo:
            changed.add(cid)
        a.chunks[cid].halo = halo
    return changed, n_chunks, n_cells


# -- local chunk step ------------------------------------------------------


class _WindowStep:
    """Per-chunk window-aggregate + cell-update, reading core plus halo."""

    def __init__(self, spec: FixPointSpec, schema, offsets):
        self.offsets = offsets
        self.dims = schema.dims
        self.aggs = spec.f
        self.getters = [_value_getter_from(schema, g) for g in spec.f]
        self.kinds = [k for _, k in schema.attrs]
        self.attr_names = schema.attr_names
        self.dim_names = schema.dim_names
        self.agg_names = [g.name for g in spec.f]
        delta = spec.delta
        self.delta = E.parse(delta) if isinstance(delta, str) else delta
        E.type_check(
            self.delta, self.attr_names + self.dim_names, tuple(self.agg_names)
        )
        # min-propagation (one min aggregate, identity update) dominates the
        # workloads here; skip the accumulator/interpreter machinery for it
        g = self.aggs[0]
        self.fast_min = (
            len(self.aggs) == 1
            and g.kind == "min"
            and len(self.attr_names) == 1
            and (g.attr is None or g.attr == self.attr_names[0])
            and isinstance(self.delta, E.Ref)
            and self.delta.name == g.name
        )

    def run(self, chunk):
        if self.fast_min:
            return self._run_min(chunk)
        return self._run_general(chunk)

    def _run_min(self, chunk):
        cells = dict(chunk.halo)
        cells.update(chunk.core)
        dims = self.dims
        offsets = self.offsets
        new_core = {}
        changed = 0
        for coord, tup in chunk.core.items():
            ranges = [
                range(max(d.lower, c - o), min(d.upper, c + o) + 1)
                for c, o, d in zip(coord, offsets, dims)
            ]
            m = None
            for nc in itertools.product(*ranges):
                ntup = cells.get(nc)
                if ntup is not None:
                    v = ntup[0]
                    if v is not None and (m is None or v < m):
                        m = v
            if m is None:
                changed += 1
                continue
            new = (m,)
            new_core[coord] = new
            if new != tup:
                changed += 1
        return new_core, changed

    def _run_general(self, chunk):
        core, halo = chunk.core, chunk.halo
        new_core = {}
        changed = 0
        for coord, tup in core.items():
            ranges = [
                range(max(d.lower, c - o), min(d.upper, c + o) + 1)
                for c, o, d in zip(coord, self.offsets, self.dims)
            ]
            accs = [_Acc(g.kind) for g in self.aggs]
            for nc in itertools.product(*ranges):
                ntup = core.get(nc)
                if ntup is None:
                    ntup = halo.get(nc)
                if ntup is None:
                    continue
                for acc, get in zip(accs, self.getters):
                    acc.fold(get(nc, ntup))
            senv = dict(zip(self.attr_names, tup))
            senv.update(zip(self.dim_names, coord))
            eenv = {n: acc.result() for n, acc in zip(self.agg_names, accs)}
            v = E.evaluate(self.delta, senv, eenv)
            vals = v if isinstance(v, tuple) else (v,)
            if not all(x is None for x in vals):
                new = tuple(_coerce(x, k) for x, k in zip(vals, self.kinds))
                new_core[coord] = new
                if new != tup:
                    changed += 1
            else:
                changed += 1
        return new_core, changed


def _value_getter_from(schema, agg):
    shim = type("S", (), {"schema": schema})()
    return _value_getter(shim, agg)


# -- parallel driver -------------------------------------------------------


def run_parallel(
    spec: FixPointSpec,
    a0: ChunkedArray,
    policy: ShufflePolicy,
    partition: WorkerPartition = None,
    workers: int = 1,
    halo_radius=None,
):
    """Run a fixpoint with per-chunk mini-iterations and policy-driven halo
    synchronization.  Returns (final array, trace, per-iteration stats).

    Only window fixpoints run with stale halos; group-by fixpoints must
    synchronize every iteration and are executed as plain major steps.
    """
    strategy = classify(spec.pi, a0.schema)
    if strategy.kind == "as_groupby":
        if policy.kind != "every_k" or policy.k != 1:
            raise StrategyUnavailable(
                "group-by fixpoints synchronize every iteration; "
                "mini-iteration policies are unavailable"
            )
        final, trace = iterate(a0, spec)
        stats = [ExecutorStats(r.iteration, r.iteration, 0, 0) for r in trace]
        for r in trace:
            r.shuffle_performed = True
        return final, trace, stats
    if strategy.kind != "as_window":
        raise StrategyUnavailable("parallel execution supports window fixpoints")

    offsets = strategy.offsets
    radius = tuple(halo_radius) if halo_radius is not None else offsets
    if any(r < o for r, o in zip(radius, offsets)):
        raise OverlapTooSmall(
            f"halo radius {radius} smaller than window offsets {offsets}"
        )

    a = partition_with_overlap(a0, radius)
    if partition is None:
        partition = WorkerPartition.round_robin(a.chunks.keys(), workers)
    step = _WindowStep(spec, a.schema, offsets)

    by_worker = {}
    for cid in sorted(a.chunks):
        by_worker.setdefault(partition.assignment.get(cid, 0), []).append(cid)

    trace = []
    stats = []
    dirty = set(a.chunks)
    local_sizes = None
    coherent = True  # halos fresh from partitioning
    major = 0
    pool = (
        ThreadPoolExecutor(max_workers=partition.workers)
        if partition.workers > 1
        else None
    )
    try:
        for mini in range(1, spec.max_iterations + 1):
            t0 = time.perf_counter()
            did_shuffle = False
            sh_chunks = sh_cells = 0
            if signal_opt(policy, mini, local_sizes):
                halo_changed, sh_chunks, sh_cells = shuffle_overlap(a)
                major += 1
                did_shuffle = True
                dirty |= halo_changed
                coherent = True

            work = sorted(dirty)
            touched = sum(len(a.chunks[cid].core) for cid in work)

            def run_chunks(cids):
                return [(cid, step.run(a.chunks[cid])) for cid in cids]

            if pool is None or len(work) <= 1:
                results = run_chunks(work)
            else:
                batches = [
                    [cid for cid in work if partition.assignment.get(cid, 0) == w]
                    for w in range(partition.workers)
                ]
                results = []
                for part in pool.map(run_chunks, batches):
                    results.extend(part)
                results.sort(key=lambda r: r[0])

            local_sizes = {cid: 0 for cid in a.chunks}
            for cid, (new_core, changed) in results:
                a.chunks[cid].core = new_core
                local_sizes[cid] = changed
            total_changed = sum(local_sizes.values())

            trace.append(
                IterationRecord(
                    mini, total_changed, touched, did_shuffle,
                    time.perf_counter() - t0,
                )
            )
            stats.append(ExecutorStats(mini, major, sh_chunks, sh_cells))

            if total_changed == 0 and coherent:
                return a, trace, stats
            if total_changed > 0:
                coherent = False
            dirty = {cid for cid, n in local_sizes.items() if n > 0}
    finally:
        if pool is not None:
            pool.shutdown()
    raise NonConvergence(
        f"no convergence within {spec.max_iterations} mini-iterations",
        final=a,
        trace=trace,
    )
