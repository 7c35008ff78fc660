"""Layer engines: dense (with spike grouping), convolution, hard attention."""

from .attention import AttentionConfig, PipelineReport, run_hard_attention
from .conv import LineBufferState, PixelEvent, depth_first_conv_event, stateful_conv_event
from .dense import GroupBuffer, MappingFault, process_dense_event, process_dense_group

__all__ = [
    "AttentionConfig",
    "GroupBuffer",
    "LineBufferState",
    "MappingFault",
    "PipelineReport",
    "PixelEvent",
    "depth_first_conv_event",
    "process_dense_event",
    "process_dense_group",
    "run_hard_attention",
    "stateful_conv_event",
]
