"""Chunked sparse array engine with a native iterate-to-fixpoint operator."""

from .core import (
    ArraySchema,
    Chunk,
    ChunkedArray,
    Dim,
    create_array,
    diff_count,
    dump_text,
    nonempty_cells,
    parse_text,
    set_cell,
)
from .errors import *  # noqa: F401,F403
from .expr import evaluate, parse, pretty, type_check
from .fixpoint import (
    AssignmentFunction,
    FixPointSpec,
    IterationRecord,
    Strategy,
    classify,
    iterate,
    rewrite_naive,
    run,
    spec_from_config,
    spec_to_config,
)
from .incremental import (
    STRATEGIES,
    AlgebraicRegistry,
    IncrementalPlan,
    rewrite_incremental,
    run_incremental,
)
from .multires import PyramidSpec, PyramidState, build_pyramid, rerun_on_change, run_multires
from .operators import (
    AGG_KINDS,
    AggregateSpec,
    dim_join,
    filter_cells,
    grid,
    groupby_aggregate,
    merge,
    project,
    rechunk,
    window_aggregate,
    xgrid,
)
from .parallel import (
    ExecutorStats,
    ShufflePolicy,
    WorkerPartition,
    partition_with_overlap,
    run_parallel,
    shuffle_overlap,
    signal_opt,
)
from .store import (
    DeltaPair,
    VersionedStore,
    apply_delta_backward,
    apply_delta_forward,
    compute_delta,
)

__version__ = "0.1.0"
