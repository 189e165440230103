import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfix.core import ArraySchema, ChunkedArray, Dim, diff_count
from gridfix.errors import SchemaMismatch, UnknownArray, UnknownVersion
from gridfix.store import (
    VersionedStore,
    apply_delta_backward,
    apply_delta_forward,
    compute_delta,
)

SCHEMA = ArraySchema((Dim("x", 0, 5), Dim("y", 0, 5)), (("v", "float64"),), (3, 3))


def arr(cells):
    a = ChunkedArray(SCHEMA)
    for coord, v in cells.items():
        a.set(coord, (v,))
    return a


class TestDelta:
    def test_update_insert_delete(self):
        prev = arr({(0, 0): 1.0, (1, 1): 2.0})
        new = arr({(0, 0): 9.0, (2, 2): 3.0})
        d = compute_delta(prev, new)
        assert d.plus.get((0, 0)) == (9.0,)
        assert d.minus.get((0, 0)) == (1.0,)
        assert d.plus.get((2, 2)) == (3.0,)
        assert d.minus.get((2, 2)) is None
        # deletion: old value in minus, all-null marker in plus
        assert d.minus.get((1, 1)) == (2.0,)
        assert d.plus.get((1, 1)) == (None,)

    def test_replay_both_directions(self):
        prev = arr({(0, 0): 1.0, (1, 1): 2.0})
        new = arr({(0, 0): 9.0, (2, 2): 3.0})
        d = compute_delta(prev, new)
        assert diff_count(apply_delta_forward(prev, d), new) == 0
        assert diff_count(apply_delta_backward(new, d), prev) == 0

    def test_unchanged_cells_absent_from_delta(self):
        prev = arr({(0, 0): 1.0, (5, 5): 4.0})
        new = arr({(0, 0): 1.0, (5, 5): 8.0})
        d = compute_delta(prev, new)
        assert d.plus.coords() == {(5, 5)}
        assert d.minus.coords() == {(5, 5)}


class TestStore:
    def test_first_version_delta_is_full_array(self):
        s = VersionedStore()
        a = arr({(0, 0): 1.0, (1, 2): 2.0})
        assert s.store("a", a) == 1
        assert diff_count(s.scan("a", "delta_plus"), a) == 0
        assert s.scan("a", "delta_minus").cell_count() == 0

    def test_scan_versions(self):
        s = VersionedStore()
        s.store("a", arr({(0, 0): 1.0}))
        s.store("a", arr({(0, 0): 2.0}))
        assert s.scan("a", version=1).get((0, 0)) == (1.0,)
        assert s.scan("a").get((0, 0)) == (2.0,)
        assert s.versions("a") == 2

    def test_unknown_errors(self):
        s = VersionedStore()
        with pytest.raises(UnknownArray):
            s.scan("missing")
        s.store("a", arr({}))
        with pytest.raises(UnknownVersion):
            s.scan("a", version=2)
        with pytest.raises(UnknownVersion):
            s.scan("a", version=0)

    def test_schema_change_rejected(self):
        s = VersionedStore()
        s.store("a", arr({}))
        other = ChunkedArray(
            ArraySchema((Dim("x", 0, 5), Dim("y", 0, 5)), (("w", "float64"),), (3, 3))
        )
        with pytest.raises(SchemaMismatch):
            s.store("a", other)

    def test_stored_array_is_snapshot(self):
        s = VersionedStore()
        a = arr({(0, 0): 1.0})
        s.store("a", a)
        a.set((0, 0), (99.0,))
        assert s.scan("a").get((0, 0)) == (1.0,)


class TestAnnotatedStore:
    def test_add_and_subtract(self):
        s = VersionedStore()
        s.store("c", arr({(0, 0): 10.0, (1, 1): 5.0}))
        s.store_annotated("c", arr({(0, 0): 3.0}), "add")
        assert s.scan("c").get((0, 0)) == (13.0,)
        assert s.scan("c").get((1, 1)) == (5.0,)
        s.store_annotated("c", arr({(0, 0): 3.0, (1, 1): 5.0}), "subtract")
        assert s.scan("c").get((0, 0)) == (10.0,)
        assert s.scan("c").get((1, 1)) == (0.0,)

    def test_missing_base_cell_inserts(self):
        s = VersionedStore()
        s.store("c", arr({}))
        s.store_annotated("c", arr({(2, 2): 4.0}), "subtract")
        assert s.scan("c").get((2, 2)) == (-4.0,)

    def test_annotated_records_delta(self):
        s = VersionedStore()
        s.store("c", arr({(0, 0): 10.0}))
        v = s.store_annotated("c", arr({(0, 0): 1.0}), "add")
        assert s.scan("c", "delta_plus", v).get((0, 0)) == (11.0,)
        assert s.scan("c", "delta_minus", v).get((0, 0)) == (10.0,)

    def test_bad_mode(self):
        s = VersionedStore()
        s.store("c", arr({}))
        with pytest.raises(ValueError):
            s.store_annotated("c", arr({}), "multiply")


def test_disk_roundtrip(tmp_path):
    s = VersionedStore()
    s.store("a", arr({(0, 0): 1.5}))
    s.store("a", arr({(0, 0): 2.5, (3, 3): -1.0}))
    s.store_annotated("a", arr({(0, 0): 1.0}), "add")
    s.store("b", arr({(5, 5): 7.0}))
    s.save(tmp_path)
    loaded = VersionedStore.load(tmp_path)
    assert loaded.names() == ["a", "b"]
    for name in ("a", "b"):
        for v in range(1, s.versions(name) + 1):
            for which in ("full", "delta_plus", "delta_minus"):
                assert diff_count(
                    loaded.scan(name, which, v), s.scan(name, which, v)
                ) == 0


# -- replay property --------------------------------------------------------

cells_strategy = st.dictionaries(
    st.tuples(st.integers(0, 5), st.integers(0, 5)),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    max_size=12,
)


@given(st.lists(cells_strategy, min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_version_chain_replays_bit_exact(states):
    """Any stored version is reconstructible by replaying deltas forward from
    the first version and backward from the last."""
    s = VersionedStore()
    arrays = [arr(c) for c in states]
    for a in arrays:
        s.store("chain", a)

    forward = ChunkedArray(SCHEMA)
    for v in range(1, len(arrays) + 1):
        forward = apply_delta_forward(
            forward,
            type(
                "D", (), {
                    "plus": s.scan("chain", "delta_plus", v),
                    "minus": s.scan("chain", "delta_minus", v),
                },
            ),
        )
        assert diff_count(forward, arrays[v - 1]) == 0

    backward = s.scan("chain").copy()
    for v in range(len(arrays), 1, -1):
        backward = apply_delta_backward(
            backward,
            type(
                "D", (), {
                    "plus": s.scan("chain", "delta_plus", v),
                    "minus": s.scan("chain", "delta_minus", v),
                },
            ),
        )
        assert diff_count(backward, arrays[v - 2]) == 0
