"""Incremental rewrite of group-aggregate fixpoints.

Instead of re-aggregating the whole array each iteration, the plan aggregates
only the delta arrays, merges the resulting partials into a carried state
array (one cell of partial aggregates per group), finalizes only the groups
that changed, and applies the cell-update expression through a merge that
touches only cells of those groups.

The carried state is maintained by cellwise subtraction (deleted cells) and
addition (inserted cells) of partials, so after every iteration it equals the
partial aggregates computed from scratch over the current array.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .core import ChunkedArray, ArraySchema
from .errors import NonConvergence, NotIncrementalizable
from .fixpoint import FixPointSpec, IterationRecord, classify
from .operators import AggregateSpec, groupby_aggregate, merge_with_stats, _coerce
from .store import VersionedStore

# Strategy flag values understood by the CLI and bench harness.
STRATEGIES = ("naive", "manual-incr", "efficient-incr", "efficient-incr+storage")


@dataclass(frozen=True)
class RegistryEntry:
    partials: tuple  # partial aggregate kinds, in finalize argument order
    finalize: object  # callable over partial values
    subtractable: bool


class AlgebraicRegistry:
    """Aggregate kind -> (partials, finalize, combine capability)."""

    def __init__(self):
        self.entries = {}

    def register(self, kind, partials, finalize, subtractable=True):
        self.entries[kind] = RegistryEntry(tuple(partials), finalize, subtractable)

    def get(self, kind):
        return self.entries.get(kind)

    @classmethod
    def default(cls) -> "AlgebraicRegistry":
        reg = cls()
        ident = lambda v: v
        reg.register("count", ("count",), ident)
        reg.register("sum", ("sum",), ident)
        reg.register("sum_sq", ("sum_sq",), ident)
        reg.register("avg", ("sum", "count"), lambda s, c: s / c if c else None)
        reg.register(
            "stdv",
            ("count", "sum", "sum_sq"),
            lambda c, s, s2: __import__("math").sqrt(max(s2 / c - (s / c) ** 2, 0.0))
            if c
            else None,
        )
        reg.register("min", ("min",), ident, subtractable=False)
        reg.register("max", ("max",), ident, subtractable=False)
        return reg


@dataclass
class IncrementalPlan:
    spec: FixPointSpec
    dims: tuple  # group dimensions
    source_attr: str
    partial_specs: list  # AggregateSpec list over the source attribute
    finalizers: list  # (output name, out kind, RegistryEntry)
    workload: str  # "delete_only" | "insert_only" | "general"


def rewrite_incremental(
    spec: FixPointSpec,
    schema: ArraySchema,
    registry: AlgebraicRegistry = None,
    workload: str = "delete_only",
) -> IncrementalPlan:
    """Expand the aggregates of a group-aggregate fixpoint into partials and
    build the incremental plan; rejects non-subtractable aggregates under
    workloads with deletions."""
    registry = registry or AlgebraicRegistry.default()
    strategy = classify(spec.pi, schema)
    if strategy.kind != "as_groupby":
        raise NotIncrementalizable(
            "incremental rewriting applies to group-aggregate fixpoints only"
        )
    has_deletions = workload != "insert_only"
    partial_kinds = []
    finalizers = []
    source_attr = None
    for g in spec.f:
        entry = registry.get(g.kind)
        if entry is None:
            raise NotIncrementalizable(f"aggregate {g.kind!r} is not registered")
        if not entry.subtractable and has_deletions:
            raise NotIncrementalizable(
                f"aggregate {g.kind!r} is not subtractable under a deleting workload"
            )
        if not entry.subtractable:
            raise NotIncrementalizable(
                f"aggregate {g.kind!r} has no add/subtract combine rule"
            )
        attr = g.attr or schema.attrs[0][0]
        if source_attr is None:
            source_attr = attr
        elif attr != source_attr:
            raise NotIncrementalizable(
                "all aggregates must read the same source attribute"
            )
        for pk in entry.partials:
            if pk not in partial_kinds:
                partial_kinds.append(pk)
        out_kind = "int64" if g.kind == "count" else "float64"
        finalizers.append((g.name, out_kind, entry))
    partial_specs = [AggregateSpec(pk, pk, source_attr) for pk in partial_kinds]
    return IncrementalPlan(
        spec, strategy.dims, source_attr, partial_specs, finalizers, workload
    )


def _finalize_groups(changed: ChunkedArray, C: ChunkedArray, plan: IncrementalPlan):
    """Build the finalized extrusion array over the groups present in the
    positive state delta, reading partial values from the merged state."""
    attrs = tuple((name, kind) for name, kind, _ in plan.finalizers)
    schema = ArraySchema(changed.schema.dims, attrs, changed.schema.chunk_extents)
    pidx = {g.name: i for i, g in enumerate(plan.partial_specs)}
    out = ChunkedArray(schema)
    for coord, _ in changed.nonempty_cells():
        ptup = C.get(coord)
        if ptup is None:
            continue
        vals = []
        for name, kind, entry in plan.finalizers:
            args = [ptup[pidx[pk]] for pk in entry.partials]
            v = None if any(a is None for a in args) else entry.finalize(*args)
            vals.append(_coerce(v, kind))
        if all(v is None for v in vals):
            continue
        out.set(coord, tuple(vals))
    return out


def _delta_split(prev: ChunkedArray, new: ChunkedArray):
    """(minus, plus) in-plan: old values of removed/changed cells and new
    values of inserted/changed cells."""
    minus = ChunkedArray(prev.schema)
    plus = ChunkedArray(prev.schema)
    for coord, tup in prev.nonempty_cells():
        ntup = new.get(coord)
        if ntup != tup:
            minus.set(coord, tup)
    for coord, tup in new.nonempty_cells():
        if prev.get(coord) != tup:
            plus.set(coord, tup)
    return minus, plus


def _combine_inplan(C: ChunkedArray, partials: ChunkedArray, sign: int):
    """Cellwise C + sign*partials on partials' coordinates; returns the new
    state and the set of changed group keys."""
    out = C.copy(with_halo=False)
    changed = ChunkedArray(C.schema)
    for coord, ptup in partials.nonempty_cells():
        ctup = C.get(coord)
        if ctup is None:
            newtup = tuple(None if v is None else sign * v for v in ptup)
        else:
            newtup = tuple(
                None if (x is None or y is None) else x + sign * y
                for x, y in zip(ctup, ptup)
            )
        out.set(coord, newtup)
        changed.set(coord, newtup)
    return out, changed


def run_incremental(
    plan: IncrementalPlan,
    store: VersionedStore,
    use_storage: bool = False,
):
    """Drive the incremental plan to convergence.

    With ``use_storage`` the carried state and the iterative array's deltas
    are routed through annotated stores and delta scans; otherwise deltas are
    computed in-plan.  Both paths produce identical arrays and counters.
    """
    spec = plan.spec
    name = spec.array
    state_name = name + ".state"
    a = store.scan(name)
    trace = []
    C = None
    dminus = dplus = None
    for i in range(1, spec.max_iterations + 1):
        t0 = time.perf_counter()
        if i == 1:
            # Seed pass: the negative delta is the whole array.
            C = groupby_aggregate(a, plan.dims, plan.partial_specs)
            touched = a.cell_count()
            if use_storage:
                store.store(state_name, C)
                changed_groups = store.scan(state_name, "delta_plus")
            else:
                changed_groups = C
        else:
            touched = 0
            changed_keys = ChunkedArray(C.schema)
            if dminus.cell_count():
                pm = groupby_aggregate(dminus, plan.dims, plan.partial_specs)
                touched += dminus.cell_count()
                if use_storage:
                    ver = store.store_annotated(state_name, pm, "subtract")
                    C = store.scan(state_name, "full", ver)
                    part_changed = store.scan(state_name, "delta_plus", ver)
                else:
                    C, part_changed = _combine_inplan(C, pm, -1)
                for coord, tup in part_changed.nonempty_cells():
                    changed_keys.set(coord, tup)
            if dplus.cell_count():
                pp = groupby_aggregate(dplus, plan.dims, plan.partial_specs)
                touched += dplus.cell_count()
                if use_storage:
                    ver = store.store_annotated(state_name, pp, "add")
                    C = store.scan(state_name, "full", ver)
                    part_changed = store.scan(state_name, "delta_plus", ver)
                else:
                    C, part_changed = _combine_inplan(C, pp, +1)
                for coord, tup in part_changed.nonempty_cells():
                    changed_keys.set(coord, tup)
            changed_groups = changed_keys

        S = _finalize_groups(changed_groups, C, plan)
        a_new, matched = merge_with_stats(a, S, spec.delta)
        touched += matched
        changed = spec.termination(a, a_new)
        store.store(name, a_new)
        if use_storage:
            dminus = store.scan(name, "delta_minus")
            raw_plus = store.scan(name, "delta_plus")
            dplus = ChunkedArray(raw_plus.schema)
            for coord, tup in raw_plus.nonempty_cells():
                if not all(v is None for v in tup):
                    dplus.set(coord, tup)
        else:
            dminus, dplus = _delta_split(a, a_new)
        trace.append(
            IterationRecord(i, changed, touched, False, time.perf_counter() - t0)
        )
        a = a_new
        if changed <= spec.epsilon:
            return a, trace
    raise NonConvergence(
        f"no convergence within {spec.max_iterations} iterations",
        final=a,
        trace=trace,
    )


def carried_state(a: ChunkedArray, plan: IncrementalPlan) -> ChunkedArray:
    """From-scratch partial aggregates, for checking the state invariant."""
    return groupby_aggregate(a, plan.dims, plan.partial_specs)
