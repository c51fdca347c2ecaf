"""Python bindings for the SCOT toolkit core."""

from ._scot import (
    CombinerParams,
    GalleryIndex,
    ScotError,
    clip_i2t_loss,
    compose_query,
    cosine_matrix,
    init_params,
    l2_normalize,
    load_checkpoint,
    logsumexp,
    read_table,
    recall_at_k,
    save_checkpoint,
    total_loss,
    write_table,
)

__all__ = [
    "CombinerParams",
    "GalleryIndex",
    "ScotError",
    "clip_i2t_loss",
    "compose_query",
    "cosine_matrix",
    "init_params",
    "l2_normalize",
    "load_checkpoint",
    "logsumexp",
    "read_table",
    "recall_at_k",
    "save_checkpoint",
    "total_loss",
    "write_table",
]
