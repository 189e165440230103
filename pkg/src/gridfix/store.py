"""Versioned array storage with positive/negative delta tracking.

Every store of a named array records a DeltaPair against the previous
version: the negative delta holds the old values of updated cells, the
positive delta the new values, with an all-null tuple in the positive delta
marking a deletion.  The first version's positive delta is the full array, so
incremental pipelines can read ``delta_plus`` uniformly from iteration one.

Annotated stores apply a cellwise add/subtract of another array directly at
the storage level, recording deltas the same way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core import ChunkedArray, dump_text, parse_text
from .errors import SchemaMismatch, UnknownArray, UnknownVersion


@dataclass
class DeltaPair:
    plus: ChunkedArray  # new values of updated cells; all-null tuple = deletion
    minus: ChunkedArray  # old values of updated cells


def _compatible(a: ChunkedArray, b: ChunkedArray) -> bool:
    return a.schema.dims == b.schema.dims and a.schema.attrs == b.schema.attrs


def compute_delta(prev: ChunkedArray, new: ChunkedArray) -> DeltaPair:
    plus = ChunkedArray(new.schema)
    minus = ChunkedArray(new.schema)
    null_tuple = (None,) * len(new.schema.attrs)
    for coord, tup in new.nonempty_cells():
        old = prev.get(coord)
        if old != tup:
            plus.set(coord, tup)
            if old is not None:
                minus.set(coord, old)
    for coord, tup in prev.nonempty_cells():
        if new.get(coord) is None:
            minus.set(coord, tup)
            plus.set(coord, null_tuple)
    return DeltaPair(plus, minus)


def apply_delta_forward(prev: ChunkedArray, delta: DeltaPair) -> ChunkedArray:
    """Reconstruct the next version from the previous one."""
    out = prev.copy(with_halo=False)
    for coord, tup in delta.plus.nonempty_cells():
        if all(v is None for v in tup):
            out.set(coord, None)
        else:
            out.set(coord, tup)
    return out


def apply_delta_backward(new: ChunkedArray, delta: DeltaPair) -> ChunkedArray:
    """Reconstruct the previous version from the next one."""
    out = new.copy(with_halo=False)
    for coord, _ in delta.plus.nonempty_cells():
        out.set(coord, None)
    for coord, tup in delta.minus.nonempty_cells():
        out.set(coord, tup)
    return out


@dataclass
class _Version:
    array: ChunkedArray
    delta: DeltaPair
    annotation: str = None  # None | "add" | "subtract"


class VersionedStore:
    """In-memory store of named, versioned arrays with delta bookkeeping."""

    def __init__(self):
        self._arrays = {}  # name -> list[_Version]; index i holds version i+1

    def names(self):
        return sorted(self._arrays)

    def versions(self, name) -> int:
        return len(self._entries(name))

    def _entries(self, name):
        if name not in self._arrays:
            raise UnknownArray(f"unknown array {name!r}")
        return self._arrays[name]

    def exists(self, name) -> bool:
        return name in self._arrays

    def store(self, name: str, a: ChunkedArray) -> int:
        entries = self._arrays.setdefault(name, [])
        if entries:
            if not _compatible(entries[-1].array, a):
                raise SchemaMismatch(f"schema change on store of {name!r}")
            delta = compute_delta(entries[-1].array, a)
        else:
            delta = DeltaPair(a.copy(with_halo=False), ChunkedArray(a.schema))
        stored = a.copy(with_halo=False)
        stored.version = len(entries) + 1
        entries.append(_Version(stored, delta))
        return stored.version

    def store_annotated(self, name: str, b: ChunkedArray, mode: str) -> int:
        """New version = cellwise (latest op b).  Cells missing in b are kept;
        cells missing in the base are inserted (negated under subtract)."""
        if mode not in ("add", "subtract"):
            raise ValueError(f"bad merge annotation {mode!r}")
        entries = self._entries(name)
        base = entries[-1].array
        if not _compatible(base, b):
            raise SchemaMismatch(f"schema mismatch on annotated store of {name!r}")
        sign = 1 if mode == "add" else -1
        out = base.copy(with_halo=False)
        for coord, btup in b.nonempty_cells():
            atup = base.get(coord)
            if atup is None:
                out.set(coord, tuple(None if v is None else sign * v for v in btup))
            else:
                out.set(
                    coord,
                    tuple(
                        None if (x is None or y is None) else x + sign * y
                        for x, y in zip(atup, btup)
                    ),
                )
        delta = compute_delta(base, out)
        out.version = len(entries) + 1
        entries.append(_Version(out, delta, annotation=mode))
        return out.version

    def scan(self, name: str, which: str = "full", version: int = None) -> ChunkedArray:
        entries = self._entries(name)
        if version is None:
            version = len(entries)
        if not 1 <= version <= len(entries):
            raise UnknownVersion(f"{name!r} has no version {version}")
        entry = entries[version - 1]
        if which == "full":
            return entry.array
        if which == "delta_plus":
            return entry.delta.plus
        if which == "delta_minus":
            return entry.delta.minus
        raise ValueError(f"bad scan target {which!r}")

    # -- disk layout -------------------------------------------------------

    def save(self, root) -> None:
        """One directory per array; per version a full dump plus two delta
        dumps, and a manifest listing versions and annotations."""
        root = Path(root)
        for name, entries in self._arrays.items():
            d = root / name
            d.mkdir(parents=True, exist_ok=True)
            manifest = {"name": name, "versions": []}
            for i, entry in enumerate(entries, start=1):
                (d / f"v{i}.full.txt").write_text(dump_text(entry.array))
                (d / f"v{i}.plus.txt").write_text(dump_text(entry.delta.plus))
                (d / f"v{i}.minus.txt").write_text(dump_text(entry.delta.minus))
                manifest["versions"].append(
                    {"version": i, "annotation": entry.annotation}
                )
            (d / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, root) -> "VersionedStore":
        root = Path(root)
        store = cls()
        for d in sorted(p for p in root.iterdir() if p.is_dir()):
            manifest = json.loads((d / "manifest.json").read_text())
            entries = []
            for v in manifest["versions"]:
                i = v["version"]
                array = parse_text((d / f"v{i}.full.txt").read_text())
                array.version = i
                delta = DeltaPair(
                    parse_text((d / f"v{i}.plus.txt").read_text()),
                    parse_text((d / f"v{i}.minus.txt").read_text()),
                )
                entries.append(_Version(array, delta, v["annotation"]))
            store._arrays[manifest["name"]] = entries
        return store
