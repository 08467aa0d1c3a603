"""Dense optical flow and stereo disparity from event streams by feature matching."""

from ._core import (
    BoundsError,
    DomainError,
    Error,
    EventStream,
    FormatError,
    ParseError,
    ShapeError,
    Weights,
    cli,
    deterministic,
    disparity_metrics,
    estimate,
    flow_metrics,
    init_weights,
    load_weights,
    read_events,
    read_tensor,
    selfcheck,
    selfcheck_names,
    set_deterministic,
    set_threads,
    synthesize,
    voxel_grid,
    write_events,
    write_tensor,
)

__all__ = [name for name in dir() if not name.startswith("_")]
