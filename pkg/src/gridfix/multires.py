"""Coarse-to-fine cascade execution of fixpoints.

A pyramid of pixelated arrays is built bottom-up with grid/filter/project:
each level aggregates blocks of the level below, keeps only blocks passing a
predicate (typically fully-covered blocks), and projects the carried value
attributes.  The fixpoint runs on the coarsest level first; each result is
upsampled with xgrid and merged into the next finer level as its seed, so the
fine iterations start close to their fixpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import ChunkedArray
from .errors import BadPyramidSpec, NoPriorState, SeedInvalid
from .fixpoint import FixPointSpec, iterate
from .operators import filter_cells, grid, merge, project, xgrid


@dataclass(frozen=True)
class PyramidSpec:
    levels: int  # number of pixelated levels above the base
    block: tuple  # per-dimension downscale factor
    aggs: list  # grid aggregates producing each coarser level
    keep: object  # predicate over grid outputs selecting blocks to keep
    value_attrs: tuple  # attributes carried up the pyramid
    seed_exprs: tuple  # merge expressions seeding a level from above

    def __post_init__(self):
        object.__setattr__(self, "block", tuple(self.block))
        object.__setattr__(self, "value_attrs", tuple(self.value_attrs))
        object.__setattr__(self, "seed_exprs", tuple(self.seed_exprs))
        if self.levels < 1:
            raise BadPyramidSpec("pyramid needs at least one coarse level")
        if any(not isinstance(b, int) or b < 1 for b in self.block):
            raise BadPyramidSpec(f"bad block {self.block}")
        if not self.aggs or not self.value_attrs:
            raise BadPyramidSpec("pyramid needs aggregates and value attributes")
        if len(self.seed_exprs) != len(self.value_attrs):
            raise SeedInvalid(
                "one seed expression per carried value attribute is required"
            )


@dataclass
class PyramidState:
    inputs: list = field(default_factory=list)  # level 0 (base) .. coarsest
    results: list = field(default_factory=list)  # final array per level
    traces: list = field(default_factory=list)  # iteration trace per level


def _coarser(a: ChunkedArray, pyr: PyramidSpec) -> ChunkedArray:
    g = grid(a, pyr.block, pyr.aggs)
    return project(filter_cells(g, pyr.keep), pyr.value_attrs)


def build_pyramid(a: ChunkedArray, pyr: PyramidSpec) -> list:
    """Pixelated level inputs, base first.  Requires zero-based dimensions so
    block coordinates line up across levels."""
    if any(d.lower != 0 for d in a.schema.dims):
        raise BadPyramidSpec("pyramid levels require zero-based dimensions")
    if len(pyr.block) != a.schema.ndim:
        raise BadPyramidSpec(
            f"block {pyr.block} does not match {a.schema.ndim} dimensions"
        )
    if tuple(a.schema.attr_names) != pyr.value_attrs:
        raise BadPyramidSpec(
            "base attributes must equal the carried value attributes"
        )
    levels = [a]
    for _ in range(pyr.levels):
        levels.append(_coarser(levels[-1], pyr))
    return levels


def seed_level(fine: ChunkedArray, coarse_result: ChunkedArray, pyr: PyramidSpec):
    """Merge the upsampled coarse result into the finer level's input."""
    up = xgrid(coarse_result, pyr.block)
    if up.schema.attr_names != fine.schema.attr_names:
        raise SeedInvalid(
            f"coarse result attributes {up.schema.attr_names} do not match "
            f"level attributes {fine.schema.attr_names}"
        )
    return merge(fine, up, list(pyr.seed_exprs))


def _run_levels(state: PyramidState, spec: FixPointSpec, pyr: PyramidSpec,
                top: int, store=None):
    """(Re)run levels top..0; coarser results stay as-is above ``top``."""
    n = len(state.inputs)
    state.results.extend([None] * (n - len(state.results)))
    state.traces.extend([None] * (n - len(state.traces)))
    for lvl in range(top, -1, -1):
        a = state.inputs[lvl]
        if lvl + 1 < n and state.results[lvl + 1] is not None:
            a = seed_level(a, state.results[lvl + 1], pyr)
        final, trace = iterate(a, spec)
        state.results[lvl] = final
        state.traces[lvl] = trace
        if store is not None:
            store.store(f"{spec.array}@L{lvl}", final)
    return state


def run_multires(a: ChunkedArray, spec: FixPointSpec, pyr: PyramidSpec,
                 store=None):
    """Cascade the fixpoint from the coarsest pyramid level down to the base.

    Returns (base-level final array, PyramidState).
    """
    state = PyramidState(inputs=build_pyramid(a, pyr))
    _run_levels(state, spec, pyr, top=len(state.inputs) - 1, store=store)
    return state.results[0], state


def rerun_on_change(state: PyramidState, a_new: ChunkedArray,
                    spec: FixPointSpec, pyr: PyramidSpec, store=None):
    """Re-execute after the base input changed.

    The pyramid is rebuilt and only levels at or below the coarsest changed
    pixelated level are recomputed; coarser results are reused as seeds.
    Returns (base final array, new state, number of levels recomputed).
    """
    if state is None or not state.results or state.results[0] is None:
        raise NoPriorState("rerun_on_change needs a completed cascade run")
    new_inputs = build_pyramid(a_new, pyr)
    changed = [
        i for i, (old, new) in enumerate(zip(state.inputs, new_inputs))
        if not old.equals(new)
    ]
    if not changed:
        return state.results[0], state, 0
    top = max(changed)
    new_state = PyramidState(
        inputs=new_inputs,
        results=list(state.results),
        traces=list(state.traces),
    )
    _run_levels(new_state, spec, pyr, top=top, store=store)
    return new_state.results[0], new_state, top + 1
