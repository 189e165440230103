"""The fixpoint operator: assignment-function classification, rewrite of the
iterative computation into an aggregate/merge loop, and the driver that
iterates a plan to convergence.

A computation is the sextuple (array, pi, f, delta, T, epsilon): pi maps each
cell to the group of cells that determine it, f aggregates each group, delta
combines a cell with its group's aggregate (null result deletes the cell),
and iteration stops on the first step where T(A_i, A_{i+1}) <= epsilon.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import expr as E
from .core import ChunkedArray, Dim, ArraySchema, diff_count
from .errors import NonConvergence, UnsupportedAssignment
from .operators import (
    AggregateSpec,
    groupby_aggregate,
    merge_with_stats,
    window_aggregate,
    _coerce,
    _derived_schema,
    _Acc,
    _value_getter,
)


@dataclass(frozen=True)
class AssignmentFunction:
    """Mapping from each output cell to its determining input cells."""

    kind: str  # "window" | "groupby" | "attribute"
    offsets: tuple = None  # window: per-dimension radius
    dims: tuple = None  # groupby target dims; optionally set on window kind
    attr: str = None  # attribute kind: grouping attribute

    @classmethod
    def window(cls, offsets):
        return cls("window", offsets=tuple(offsets))

    @classmethod
    def groupby(cls, dims):
        return cls("groupby", dims=tuple(dims))

    @classmethod
    def attribute(cls, attr):
        return cls("attribute", attr=attr)


@dataclass(frozen=True)
class Strategy:
    kind: str  # "as_groupby" | "as_window" | "as_attribute"
    dims: tuple = None
    offsets: tuple = None
    attr: str = None


def classify(pi: AssignmentFunction, schema: ArraySchema) -> Strategy:
    """Pick the execution strategy for an assignment function.

    A window-style mapping onto a strict subset of the dimensions is a
    group-by aggregate; a mapping onto the full dimension set with offsets is
    a window aggregate; mixing the two is rejected.
    """
    all_dims = set(schema.dim_names)
    if pi.kind == "attribute":
        if pi.attr not in schema.attr_names:
            raise UnsupportedAssignment(f"unknown grouping attribute {pi.attr!r}")
        return Strategy("as_attribute", attr=pi.attr)
    if pi.kind == "groupby":
        dims = tuple(pi.dims or ())
        if not dims or not set(dims) <= all_dims:
            raise UnsupportedAssignment(f"bad group-by dimensions {dims!r}")
        return Strategy("as_groupby", dims=dims)
    if pi.kind == "window":
        dims = tuple(pi.dims) if pi.dims is not None else schema.dim_names
        if not set(dims) <= all_dims:
            raise UnsupportedAssignment(f"bad window dimensions {dims!r}")
        has_offsets = pi.offsets is not None and any(o != 0 for o in pi.offsets)
        if set(dims) == all_dims:
            offsets = tuple(pi.offsets or (0,) * schema.ndim)
            if len(offsets) != schema.ndim or any(o < 0 for o in offsets):
                raise UnsupportedAssignment(f"bad window offsets {offsets!r}")
            return Strategy("as_window", offsets=offsets)
        if has_offsets:
            raise UnsupportedAssignment(
                "combined group-by and window assignment is not supported"
            )
        return Strategy("as_groupby", dims=dims)
    raise UnsupportedAssignment(f"unknown assignment kind {pi.kind!r}")


@dataclass
class FixPointSpec:
    array: str
    pi: AssignmentFunction
    f: list  # list[AggregateSpec]
    delta: object  # expression text/AST, or callable(coord, tuple, agg_array)
    T: object = None  # termination aggregate; defaults to diff_count
    epsilon: float = 0.0
    max_iterations: int = 10000

    def termination(self, a, b):
        return (self.T or diff_count)(a, b)


@dataclass
class IterationRecord:
    iteration: int
    changed_cells: int
    cells_touched: int
    shuffle_performed: bool = False
    wall_time: float = 0.0


def attribute_aggregate(a: ChunkedArray, attr: str, aggs) -> ChunkedArray:
    """Group cells by an attribute's value, treated as a derived dimension."""
    idx = a.schema.attr_index(attr)
    getters = [_value_getter(a, g) for g in aggs]
    groups = {}
    for coord, tup in a.nonempty_cells():
        key = tup[idx]
        accs = groups.get(key)
        if accs is None:
            accs = groups[key] = [_Acc(g.kind) for g in aggs]
        for acc, get in zip(accs, getters):
            acc.fold(get(coord, tup))
    hi = max(groups) if groups else 0
    out_dims = [Dim(attr, 0, max(hi, 0))]
    out = ChunkedArray(_derived_schema(out_dims, a, aggs))
    kinds = [k for _, k in out.schema.attrs]
    for key, accs in sorted(groups.items()):
        out.set((key,), tuple(_coerce(acc.result(), k) for acc, k in zip(accs, kinds)))
    return out


@dataclass
class Plan:
    spec: FixPointSpec
    strategy: Strategy

    def step(self, a: ChunkedArray):
        """One major step: aggregate, then apply delta.  Returns the next
        array state and the number of cells touched."""
        st = self.strategy
        if st.kind == "as_groupby":
            agg = groupby_aggregate(a, st.dims, self.spec.f)
        elif st.kind == "as_window":
            agg = window_aggregate(a, st.offsets, self.spec.f)
        else:
            agg = attribute_aggregate(a, st.attr, self.spec.f)
        touched = a.cell_count()

        if callable(self.spec.delta):
            out = ChunkedArray(a.schema)
            for coord, tup in a.nonempty_cells():
                new = self.spec.delta(coord, tup, agg)
                if new is not None and not all(v is None for v in new):
                    out.set(coord, tuple(new))
            return out, touched + a.cell_count()
        out, matched = merge_with_stats(a, agg, self.spec.delta)
        return out, touched + a.cell_count()


def rewrite_naive(spec: FixPointSpec, schema: ArraySchema) -> Plan:
    """Rewrite a fixpoint into the naive aggregate/merge loop."""
    return Plan(spec, classify(spec.pi, schema))


def iterate(a: ChunkedArray, spec: FixPointSpec, store=None):
    """Drive a plan to convergence from an in-memory array.

    Stores every produced state under ``spec.array`` when a store is given.
    Raises NonConvergence (carrying the final state and trace) if the safety
    bound is hit first.
    """
    plan = rewrite_naive(spec, a.schema)
    trace = []
    for i in range(1, spec.max_iterations + 1):
        t0 = time.perf_counter()
        a_new, touched = plan.step(a)
        changed = spec.termination(a, a_new)
        trace.append(
            IterationRecord(i, changed, touched, False, time.perf_counter() - t0)
        )
        if store is not None:
            store.store(spec.array, a_new)
        a = a_new
        if changed <= spec.epsilon:
            return a, trace
    raise NonConvergence(
        f"no convergence within {spec.max_iterations} iterations",
        final=a,
        trace=trace,
    )


def run(spec: FixPointSpec, store, executor=None):
    """Run a fixpoint on the latest stored version of ``spec.array``."""
    a = store.scan(spec.array)
    return iterate(a, spec, store=store)


# -- config document -------------------------------------------------------


def spec_to_config(spec: FixPointSpec) -> str:
    """Serialize an expression-based spec as a key-value text document."""
    lines = [f"array={spec.array}", f"pi.kind={spec.pi.kind}"]
    if spec.pi.offsets is not None:
        lines.append("pi.offsets=" + ",".join(str(o) for o in spec.pi.offsets))
    if spec.pi.dims is not None:
        lines.append("pi.dims=" + ",".join(spec.pi.dims))
    if spec.pi.attr is not None:
        lines.append(f"pi.attr={spec.pi.attr}")
    for g in spec.f:
        attr = g.attr or ""
        lines.append(f"agg={g.name}:{g.kind}:{attr}")
    delta = spec.delta
    if callable(delta):
        raise ValueError("callable delta cannot be serialized")
    if not isinstance(delta, str):
        delta = E.pretty(delta)
    lines.append(f"delta={delta}")
    lines.append(f"epsilon={spec.epsilon}")
    lines.append(f"max_iterations={spec.max_iterations}")
    return "\n".join(lines) + "\n"


def spec_from_config(text: str) -> FixPointSpec:
    fields = {"agg": []}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        key, val = ln.split("=", 1)
        if key == "agg":
            fields["agg"].append(val)
        else:
            fields[key] = val
    kind = fields["pi.kind"]
    pi = AssignmentFunction(
        kind,
        offsets=tuple(int(x) for x in fields["pi.offsets"].split(","))
        if "pi.offsets" in fields
        else None,
        dims=tuple(fields["pi.dims"].split(",")) if "pi.dims" in fields else None,
        attr=fields.get("pi.attr"),
    )
    aggs = []
    for item in fields["agg"]:
        name, akind, attr = item.split(":")
        aggs.append(AggregateSpec(name, akind, attr or None))
    return FixPointSpec(
        array=fields["array"],
        pi=pi,
        f=aggs,
        delta=fields["delta"],
        epsilon=float(fields.get("epsilon", 0.0)),
        max_iterations=int(fields.get("max_iterations", 10000)),
    )
