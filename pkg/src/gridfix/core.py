"""Sparse chunked d-dimensional arrays.

An array is a mapping from integer coordinates to fixed-arity value tuples.
Cells are stored sparsely inside regular chunks; a coordinate absent from
every chunk is an *empty* cell, which is distinct from a present tuple that
contains null (None) scalars.  ``nonempty_cells`` yields cells in row-major
coordinate order; every aggregate in the engine folds values in that order so
results are deterministic regardless of parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .errors import (
    ArityMismatch,
    InvalidSchema,
    OutOfDomain,
    SchemaMismatch,
)

Coordinate = tuple  # tuple of ints, one per dimension
CellTuple = tuple  # tuple of scalars (float/int/None), one per attribute

SCALAR_KINDS = ("float64", "int64")


@dataclass(frozen=True)
class Dim:
    name: str
    lower: int
    upper: int

    @property
    def size(self) -> int:
        return self.upper - self.lower + 1


@dataclass(frozen=True)
class ArraySchema:
    dims: tuple  # tuple[Dim, ...]
    attrs: tuple  # tuple[(name, kind), ...]
    chunk_extents: tuple  # tuple[int, ...]
    overlap: tuple = None  # tuple[int, ...], defaults to all zeros

    def __post_init__(self):
        dims = tuple(d if isinstance(d, Dim) else Dim(*d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "attrs", tuple(tuple(a) for a in self.attrs))
        object.__setattr__(self, "chunk_extents", tuple(self.chunk_extents))
        if self.overlap is None:
            object.__setattr__(self, "overlap", (0,) * len(dims))
        else:
            object.__setattr__(self, "overlap", tuple(self.overlap))
        self._validate()

    def _validate(self):
        d = len(self.dims)
        if d == 0:
            raise InvalidSchema("array needs at least one dimension")
        dim_names = [dm.name for dm in self.dims]
        if len(set(dim_names)) != d:
            raise InvalidSchema("dimension names must be unique")
        attr_names = [a[0] for a in self.attrs]
        if len(set(attr_names)) != len(attr_names):
            raise InvalidSchema("attribute names must be unique")
        if set(attr_names) & set(dim_names):
            raise InvalidSchema("dimension and attribute names must be disjoint")
        if not self.attrs:
            raise InvalidSchema("array needs at least one attribute")
        for _, kind in self.attrs:
            if kind not in SCALAR_KINDS:
                raise InvalidSchema(f"unsupported scalar kind {kind!r}")
        for dm in self.dims:
            if dm.upper < dm.lower:
                raise InvalidSchema(f"dimension {dm.name} has empty interval")
        if len(self.chunk_extents) != d or len(self.overlap) != d:
            raise InvalidSchema("chunk_extents/overlap length must match dims")
        for i, dm in enumerate(self.dims):
            e = self.chunk_extents[i]
            if e < 1 or e > dm.size:
                raise InvalidSchema(
                    f"chunk extent {e} invalid for dimension {dm.name} of size {dm.size}"
                )
            if self.overlap[i] < 0 or self.overlap[i] >= e:
                raise InvalidSchema(
                    f"overlap {self.overlap[i]} must be in [0, {e}) for {dm.name}"
                )

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def dim_names(self) -> tuple:
        return tuple(dm.name for dm in self.dims)

    @property
    def attr_names(self) -> tuple:
        return tuple(a[0] for a in self.attrs)

    def attr_index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.attrs):
            if n == name:
                return i
        raise KeyError(name)

    def dim_index(self, name: str) -> int:
        for i, dm in enumerate(self.dims):
            if dm.name == name:
                return i
        raise KeyError(name)

    def in_domain(self, coord: Sequence[int]) -> bool:
        if len(coord) != self.ndim:
            return False
        return all(
            dm.lower <= c <= dm.upper for c, dm in zip(coord, self.dims)
        )

    def chunk_id_of(self, coord: Sequence[int]) -> tuple:
        return tuple(
            (c - dm.lower) // e
            for c, dm, e in zip(coord, self.dims, self.chunk_extents)
        )

    def chunk_box(self, chunk_id: Sequence[int]) -> tuple:
        """(lower, upper) inclusive corner coordinates of a chunk's core box."""
        lo = tuple(
            dm.lower + cid * e
            for cid, dm, e in zip(chunk_id, self.dims, self.chunk_extents)
        )
        hi = tuple(
            min(dm.upper, l + e - 1)
            for l, dm, e in zip(lo, self.dims, self.chunk_extents)
        )
        return lo, hi

    def chunk_grid(self) -> tuple:
        """Number of chunks along each dimension."""
        return tuple(
            -(-dm.size // e) for dm, e in zip(self.dims, self.chunk_extents)
        )

    def with_overlap(self, overlap: Sequence[int]) -> "ArraySchema":
        return ArraySchema(self.dims, self.attrs, self.chunk_extents, tuple(overlap))


@dataclass
class Chunk:
    id: tuple
    core: dict = field(default_factory=dict)  # Coordinate -> CellTuple
    halo: dict = field(default_factory=dict)  # replicas of neighbor core cells


class ChunkedArray:
    """Sparse array partitioned into regular chunks.

    Mutation is only meaningful while an array is being built; engine
    operators never modify their inputs and always return fresh arrays.
    """

    def __init__(self, schema: ArraySchema, version: int = 0):
        self.schema = schema
        self.chunks: dict = {}  # chunk-id tuple -> Chunk
        self.version = version

    # -- cell access -------------------------------------------------------
    def get(self, coord: Sequence[int]) -> Optional[CellTuple]:
        coord = tuple(coord)
        cid = self.schema.chunk_id_of(coord)
        ch = self.chunks.get(cid)
        if ch is None:
            return None
        return ch.core.get(coord)

    def set(self, coord: Sequence[int], value: Optional[Sequence]) -> None:
        """Write a cell; ``None`` removes it.  Halo replicas are untouched."""
        coord = tuple(coord)
        if not self.schema.in_domain(coord):
            raise OutOfDomain(f"coordinate {coord} outside array domain")
        cid = self.schema.chunk_id_of(coord)
        if value is None:
            ch = self.chunks.get(cid)
            if ch is not None:
                ch.core.pop(coord, None)
                if not ch.core and not ch.halo:
                    del self.chunks[cid]
            return
        value = tuple(value)
        if len(value) != len(self.schema.attrs):
            raise ArityMismatch(
                f"tuple arity {len(value)} != {len(self.schema.attrs)} attributes"
            )
        ch = self.chunks.get(cid)
        if ch is None:
            ch = self.chunks[cid] = Chunk(cid)
        ch.core[coord] = value

    # -- iteration ---------------------------------------------------------
    def nonempty_cells(self) -> Iterator:
        """Yield (coord, tuple) core cells in row-major coordinate order."""
        items = []
        for ch in self.chunks.values():
            items.extend(ch.core.items())
        items.sort(key=lambda kv: kv[0])
        return iter(items)

    def cell_count(self) -> int:
        return sum(len(ch.core) for ch in self.chunks.values())

    def coords(self) -> set:
        out = set()
        for ch in self.chunks.values():
            out.update(ch.core.keys())
        return out

    # -- copies ------------------------------------------------------------
    def copy(self, with_halo: bool = True) -> "ChunkedArray":
        out = ChunkedArray(self.schema, self.version)
        for cid, ch in self.chunks.items():
            out.chunks[cid] = Chunk(
                cid, dict(ch.core), dict(ch.halo) if with_halo else {}
            )
        return out

    def equals(self, other: "ChunkedArray") -> bool:
        """Cellwise (core) equality; bit-exact on scalar values."""
        return self.schema == other.schema and diff_count(self, other) == 0

    def __repr__(self):
        return (
            f"ChunkedArray(dims={self.schema.dim_names}, "
            f"cells={self.cell_count()}, version={self.version})"
        )


# -- module-level operations ----------------------------------------------

def create_array(schema: ArraySchema) -> ChunkedArray:
    return ChunkedArray(schema)


def set_cell(a: ChunkedArray, coord, value) -> ChunkedArray:
    a.set(coord, value)
    return a


def nonempty_cells(a: ChunkedArray):
    return a.nonempty_cells()


def diff_count(a: ChunkedArray, b: ChunkedArray) -> int:
    """Number of coordinates whose cell state differs between two arrays."""
    if a.schema.dims != b.schema.dims or a.schema.attrs != b.schema.attrs:
        raise SchemaMismatch("diff_count requires identical dims and attrs")
    n = 0
    bcoords_seen = 0
    for ch in a.chunks.values():
        for coord, val in ch.core.items():
            other = b.get(coord)
            if other is None:
                n += 1
            else:
                bcoords_seen += 1
                if other != val:
                    n += 1
    n += b.cell_count() - bcoords_seen
    return n


# -- text dump format ------------------------------------------------------

def _fmt_scalar(v) -> str:
    if v is None:
        return "_"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(s: str, kind: str):
    if s == "_":
        return None
    if kind == "int64":
        return int(s)
    return float(s)


def dump_text(a: ChunkedArray) -> str:
    """Serialize an array to the line-oriented text format (bit-exact)."""
    sch = a.schema
    dims = ",".join(f"{d.name}:{d.lower}:{d.upper}" for d in sch.dims)
    attrs = ",".join(f"{n}:{k}" for n, k in sch.attrs)
    chunks = ",".join(str(e) for e in sch.chunk_extents)
    overlap = ",".join(str(o) for o in sch.overlap)
    lines = [f"dims={dims} attrs={attrs} chunks={chunks} overlap={overlap}"]
    for coord, val in a.nonempty_cells():
        cs = ",".join(str(c) for c in coord)
        vs = ",".join(_fmt_scalar(v) for v in val)
        lines.append(f"{cs}|{vs}")
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> ChunkedArray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidSchema("empty dump")
    header = dict(part.split("=", 1) for part in lines[0].split())
    dims = tuple(
        Dim(n, int(lo), int(hi))
        for n, lo, hi in (item.split(":") for item in header["dims"].split(","))
    )
    attrs = tuple(
        tuple(item.split(":")) for item in header["attrs"].split(",")
    )
    chunk_extents = tuple(int(x) for x in header["chunks"].split(","))
    overlap = tuple(int(x) for x in header["overlap"].split(","))
    schema = ArraySchema(dims, attrs, chunk_extents, overlap)
    a = ChunkedArray(schema)
    kinds = [k for _, k in attrs]
    for ln in lines[1:]:
        cs, vs = ln.split("|")
        coord = tuple(int(c) for c in cs.split(","))
        val = tuple(
            _parse_scalar(s, k) for s, k in zip(vs.split(","), kinds)
        )
        a.set(coord, val)
    return a
