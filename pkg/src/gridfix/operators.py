"""Array operator library: aggregates, filter, join, merge, grid/xgrid.

All operators are pure: inputs are never modified and a fresh array is
returned.  Every aggregate folds its input values in canonical (row-major)
cell order, so results are bit-reproducible.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from . import expr as E
from .core import ArraySchema, ChunkedArray, Dim
from .errors import (
    ArityMismatch,
    BadBlock,
    BadOffsets,
    EmptyAggList,
    ExpressionTypeError,
    NoCommonDims,
    NotASubsetOfDims,
    UnknownDimension,
)

AGG_KINDS = ("min", "max", "count", "sum", "sum_sq", "avg", "stdv")

# Algebraic decomposition: aggregate -> (partial kinds, finalize function).
ALGEBRAIC = {
    "avg": (("sum", "count"), lambda s, c: s / c if c else None),
    "stdv": (
        ("count", "sum", "sum_sq"),
        lambda c, s, s2: math.sqrt(max(s2 / c - (s / c) ** 2, 0.0)) if c else None,
    ),
}


@dataclass(frozen=True)
class AggregateSpec:
    """An aggregate over one input attribute (or dimension), with output name."""

    name: str
    kind: str
    attr: str = None  # defaults to the array's sole attribute

    def __post_init__(self):
        if self.kind not in AGG_KINDS:
            raise ExpressionTypeError(f"unknown aggregate kind {self.kind!r}")


class _Acc:
    """Partial-state accumulator for one aggregate, folded in input order."""

    __slots__ = ("kind", "count", "total", "total_sq", "lo", "hi")

    def __init__(self, kind):
        self.kind = kind
        self.count = 0
        self.total = 0
        self.total_sq = 0
        self.lo = None
        self.hi = None

    def fold(self, v):
        if v is None:
            return
        self.count += 1
        self.total += v
        self.total_sq += v * v
        if self.lo is None or v < self.lo:
            self.lo = v
        if self.hi is None or v > self.hi:
            self.hi = v

    def result(self):
        k = self.kind
        if k == "count":
            return self.count
        if k == "sum":
            return self.total
        if k == "sum_sq":
            return self.total_sq
        if k == "min":
            return self.lo
        if k == "max":
            return self.hi
        if k == "avg":
            return ALGEBRAIC["avg"][1](self.total, self.count)
        if k == "stdv":
            return ALGEBRAIC["stdv"][1](self.count, self.total, self.total_sq)
        raise AssertionError(k)


def _value_getter(a: ChunkedArray, agg: AggregateSpec):
    """Resolve the aggregate input: an attribute value or a coordinate."""
    sch = a.schema
    name = agg.attr
    if name is None:
        if len(sch.attrs) != 1:
            raise ExpressionTypeError(
                f"aggregate {agg.name!r} needs an explicit attr on a multi-attribute array"
            )
        name = sch.attrs[0][0]
    if name in sch.attr_names:
        idx = sch.attr_index(name)
        return lambda coord, tup: tup[idx]
    if name in sch.dim_names:
        idx = sch.dim_index(name)
        return lambda coord, tup: coord[idx]
    raise ExpressionTypeError(f"unknown aggregate input {name!r}")


def _out_kind(a: ChunkedArray, agg: AggregateSpec) -> str:
    if agg.kind == "count":
        return "int64"
    if agg.kind in ("avg", "stdv"):
        return "float64"
    name = agg.attr or a.schema.attrs[0][0]
    if name in a.schema.attr_names:
        return a.schema.attrs[a.schema.attr_index(name)][1]
    return "int64"


def _coerce(v, kind):
    if v is None:
        return None
    if kind == "int64":
        if isinstance(v, bool):
            return int(v)
        if isinstance(v, float):
            if not v.is_integer():
                raise ExpressionTypeError(f"non-integer value {v} for int64 attribute")
            return int(v)
        return int(v)
    return float(v)


def _derived_schema(dims, a: ChunkedArray, aggs) -> ArraySchema:
    attrs = tuple((g.name, _out_kind(a, g)) for g in aggs)
    extents = tuple(
        min(a.schema.chunk_extents[a.schema.dim_index(d.name)], d.size)
        if d.name in a.schema.dim_names
        else d.size
        for d in dims
    )
    return ArraySchema(tuple(dims), attrs, extents)


# -- aggregation operators -------------------------------------------------


def groupby_aggregate(a: ChunkedArray, dims, aggs) -> ChunkedArray:
    """Group cells by a subset of dimensions and aggregate each group."""
    aggs = list(aggs)
    if not aggs:
        raise EmptyAggList("at least one aggregate required")
    dim_names = list(dims)
    for d in dim_names:
        if d not in a.schema.dim_names:
            raise UnknownDimension(f"unknown dimension {d!r}")
    if not dim_names:
        raise UnknownDimension("group-by needs at least one dimension")
    # output dims follow the input array's dimension order
    idxs = sorted(a.schema.dim_index(d) for d in set(dim_names))
    out_dims = [a.schema.dims[i] for i in idxs]
    getters = [_value_getter(a, g) for g in aggs]

    groups = {}
    for coord, tup in a.nonempty_cells():
        key = tuple(coord[i] for i in idxs)
        accs = groups.get(key)
        if accs is None:
            accs = groups[key] = [_Acc(g.kind) for g in aggs]
        for acc, get in zip(accs, getters):
            acc.fold(get(coord, tup))

    out = ChunkedArray(_derived_schema(out_dims, a, aggs))
    kinds = [k for _, k in out.schema.attrs]
    for key, accs in groups.items():
        out.set(key, tuple(_coerce(acc.result(), k) for acc, k in zip(accs, kinds)))
    return out


def window_aggregate(a: ChunkedArray, offsets, aggs) -> ChunkedArray:
    """Aggregate, for each non-empty cell, over its clipped offset box."""
    aggs = list(aggs)
    if not aggs:
        raise EmptyAggList("at least one aggregate required")
    offsets = tuple(offsets)
    if len(offsets) != a.schema.ndim or any(
        not isinstance(o, int) or o < 0 for o in offsets
    ):
        raise BadOffsets(f"offsets {offsets} invalid for {a.schema.ndim}-d array")
    getters = [_value_getter(a, g) for g in aggs]

    out = ChunkedArray(_derived_schema(a.schema.dims, a, aggs))
    kinds = [k for _, k in out.schema.attrs]
    dims = a.schema.dims
    for coord, _ in a.nonempty_cells():
        ranges = [
            range(max(d.lower, c - o), min(d.upper, c + o) + 1)
            for c, o, d in zip(coord, offsets, dims)
        ]
        accs = [_Acc(g.kind) for g in aggs]
        for ncoord in itertools.product(*ranges):
            tup = a.get(ncoord)
            if tup is None:
                continue
            for acc, get in zip(accs, getters):
                acc.fold(get(ncoord, tup))
        out.set(coord, tuple(_coerce(acc.result(), k) for acc, k in zip(accs, kinds)))
    return out


# -- filter / join / merge -------------------------------------------------


def _as_ast(e):
    return E.parse(e) if isinstance(e, str) else e


def filter_cells(a: ChunkedArray, predicate) -> ChunkedArray:
    """Keep cells where the predicate over attrs and dims is true."""
    ast = _as_ast(predicate)
    names = a.schema.attr_names + a.schema.dim_names
    E.type_check(ast, names)
    out = ChunkedArray(a.schema)
    attr_names = a.schema.attr_names
    dim_names = a.schema.dim_names
    for coord, tup in a.nonempty_cells():
        env = dict(zip(attr_names, tup))
        env.update(zip(dim_names, coord))
        v = E.evaluate(ast, env)
        if v is not None and bool(v):
            out.set(coord, tup)
    return out


def dim_join(a: ChunkedArray, b: ChunkedArray) -> ChunkedArray:
    """Equi-join on shared dimension names; output spans a's dimensions."""
    shared = set(a.schema.dim_names) & set(b.schema.dim_names)
    if not shared:
        raise NoCommonDims("arrays share no dimension names")
    if not set(b.schema.dim_names) <= set(a.schema.dim_names):
        raise NoCommonDims("right array has dimensions absent from the left array")
    a_attr_names = set(a.schema.attr_names)
    battrs = tuple(
        (n + "_r" if n in a_attr_names else n, k) for n, k in b.schema.attrs
    )
    schema = ArraySchema(
        a.schema.dims, a.schema.attrs + battrs, a.schema.chunk_extents
    )
    proj = [a.schema.dim_index(n) for n in b.schema.dim_names]
    out = ChunkedArray(schema)
    for coord, tup in a.nonempty_cells():
        btup = b.get(tuple(coord[i] for i in proj))
        if btup is None:
            continue
        out.set(coord, tup + btup)
    return out


def merge(source: ChunkedArray, extrusion: ChunkedArray, exps) -> ChunkedArray:
    """Extrusion merge: pair each source cell with the extrusion cell at the
    projection of its coordinates onto the shared dimensions, and rewrite the
    source tuple through one expression per attribute.

    Source cells with no matching extrusion cell are kept unchanged; an
    all-null result removes the cell.
    """
    out, _ = merge_with_stats(source, extrusion, exps)
    return out


def merge_with_stats(source, extrusion, exps):
    """merge() plus the count of source cells that found an extrusion match."""
    if isinstance(exps, (str, E.Num, E.Null, E.Ref, E.Unary, E.Bin, E.Cmp, E.Cond, E.Call)):
        exps = [exps]
    exps = [_as_ast(e) for e in exps]
    n_attrs = len(source.schema.attrs)
    if len(exps) != n_attrs:
        raise ArityMismatch(
            f"{len(exps)} merge expressions for {n_attrs} source attributes"
        )
    if not set(extrusion.schema.dim_names) <= set(source.schema.dim_names):
        raise NotASubsetOfDims(
            "extrusion dimensions must be a subset of source dimensions"
        )
    src_names = source.schema.attr_names + source.schema.dim_names
    ext_names = extrusion.schema.attr_names
    for e in exps:
        E.type_check(e, src_names, ext_names)

    proj = [source.schema.dim_index(n) for n in extrusion.schema.dim_names]
    out = ChunkedArray(source.schema)
    kinds = [k for _, k in source.schema.attrs]
    attr_names = source.schema.attr_names
    dim_names = source.schema.dim_names
    ext_attr_names = extrusion.schema.attr_names
    matched = 0
    for coord, tup in source.nonempty_cells():
        etup = extrusion.get(tuple(coord[i] for i in proj))
        if etup is None:
            out.set(coord, tup)
            continue
        matched += 1
        senv = dict(zip(attr_names, tup))
        senv.update(zip(dim_names, coord))
        eenv = dict(zip(ext_attr_names, etup))
        vals = tuple(E.evaluate(e, senv, eenv) for e in exps)
        if all(v is None for v in vals):
            continue
        out.set(coord, tuple(_coerce(v, k) for v, k in zip(vals, kinds)))
    return out, matched


# -- rescaling -------------------------------------------------------------


def _check_block(a, block):
    block = tuple(block)
    if len(block) != a.schema.ndim or any(
        not isinstance(b, int) or b < 1 for b in block
    ):
        raise BadBlock(f"block {block} invalid for {a.schema.ndim}-d array")
    return block


def grid(a: ChunkedArray, block, aggs) -> ChunkedArray:
    """Downscale: aggregate each block of cells into one output cell.

    The output domain is zero-based with extents ceil(size/block); blocks
    with no non-empty cells stay empty.
    """
    block = _check_block(a, block)
    if isinstance(aggs, AggregateSpec):
        aggs = [aggs]
    aggs = list(aggs)
    if not aggs:
        raise EmptyAggList("at least one aggregate required")
    out_dims = [
        Dim(d.name, 0, -(-d.size // b) - 1) for d, b in zip(a.schema.dims, block)
    ]
    getters = [_value_getter(a, g) for g in aggs]
    lowers = [d.lower for d in a.schema.dims]

    blocks = {}
    for coord, tup in a.nonempty_cells():
        key = tuple((c - lo) // b for c, lo, b in zip(coord, lowers, block))
        accs = blocks.get(key)
        if accs is None:
            accs = blocks[key] = [_Acc(g.kind) for g in aggs]
        for acc, get in zip(accs, getters):
            acc.fold(get(coord, tup))

    out = ChunkedArray(_derived_schema(out_dims, a, aggs))
    kinds = [k for _, k in out.schema.attrs]
    for key, accs in blocks.items():
        out.set(key, tuple(_coerce(acc.result(), k) for acc, k in zip(accs, kinds)))
    return out


def xgrid(a: ChunkedArray, block) -> ChunkedArray:
    """Upscale: replicate each cell's tuple across its block."""
    block = _check_block(a, block)
    out_dims = [
        Dim(d.name, 0, d.size * b - 1) for d, b in zip(a.schema.dims, block)
    ]
    extents = tuple(
        min(e * b, d.size)
        for e, b, d in zip(a.schema.chunk_extents, block, out_dims)
    )
    schema = ArraySchema(tuple(out_dims), a.schema.attrs, extents)
    out = ChunkedArray(schema)
    lowers = [d.lower for d in a.schema.dims]
    for coord, tup in a.nonempty_cells():
        base = [(c - lo) * b for c, lo, b in zip(coord, lowers, block)]
        for off in itertools.product(*(range(b) for b in block)):
            out.set(tuple(c + o for c, o in zip(base, off)), tup)
    return out


# -- plumbing --------------------------------------------------------------


def project(a: ChunkedArray, attr_names) -> ChunkedArray:
    """Keep only the named attributes, in the order given."""
    idxs = [a.schema.attr_index(n) for n in attr_names]
    schema = ArraySchema(
        a.schema.dims,
        tuple(a.schema.attrs[i] for i in idxs),
        a.schema.chunk_extents,
        a.schema.overlap,
    )
    out = ChunkedArray(schema)
    for coord, tup in a.nonempty_cells():
        out.set(coord, tuple(tup[i] for i in idxs))
    return out


def rechunk(a: ChunkedArray, chunk_extents, overlap=None) -> ChunkedArray:
    """Re-partition into chunks of the given extents (halos dropped)."""
    schema = ArraySchema(
        a.schema.dims, a.schema.attrs, tuple(chunk_extents), overlap
    )
    out = ChunkedArray(schema, a.version)
    for coord, tup in a.nonempty_cells():
        out.set(coord, tup)
    return out
