"""
Sequential and pipelined stage execution with timing reports.
"""

from blockcraft.pipeline.channel import BoundedChannel, ChannelStats
from blockcraft.pipeline.report import (
    PipelineTiming,
    StageStats,
    ThroughputSummary,
    throughput_report,
    write_timing_csv,
)
from blockcraft.pipeline.executor import (
    PipelineResult,
    StageMessage,
    StageWorker,
    run_pipeline,
    run_sequential,
)

__all__ = [
    "BoundedChannel",
    "ChannelStats",
    "PipelineTiming",
    "StageStats",
    "ThroughputSummary",
    "throughput_report",
    "write_timing_csv",
    "PipelineResult",
    "StageMessage",
    "StageWorker",
    "run_pipeline",
    "run_sequential",
]
