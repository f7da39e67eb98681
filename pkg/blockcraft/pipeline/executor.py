"""
Sequential and pipelined execution of the block stages.

The pipeline runs one worker thread per block plus one for the output
layer, connected by bounded channels. Each worker owns a disjoint set of
parameters and momentum buffers; only detached activations (downstream)
and by-value classifier snapshots (upstream, to the last block) cross
thread boundaries. Every worker runs the same stage code the sequential
executor runs, in the same order per batch, so both modes end in bitwise
identical parameters.
"""

from __future__ import annotations
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from sortedcontainers import SortedList

from blockcraft.core.tensor import Tensor
from blockcraft.data.batching import Batch
from blockcraft.errors import PipelineError
from blockcraft.models.network import DecoupledModel, LossWeights
from blockcraft.pipeline.channel import CLOSED, BoundedChannel, ChannelAborted
from blockcraft.pipeline.report import PipelineTiming, StageStats
from blockcraft.training.stages import (
    BlockStage,
    ClassifierSnapshot,
    OutputResult,
    OutputStage,
)
from blockcraft.training.state import StepMetrics, TrainState, combine_losses

logger = logging.getLogger("blockcraft.pipeline")

StageDelay = Union[None, float, Sequence[float]]


@dataclass(frozen=True)
class StageMessage:
    """
    Unit of work passed downstream.

    Attributes
    ----------
    batch_id : int
        Global step index of the batch
    activation : Tensor
        Detached output of the previous stage (the images for block 1)
    labels : np.ndarray
        Batch labels, forwarded unchanged
    """

    batch_id: int
    activation: Tensor
    labels: np.ndarray


@dataclass(frozen=True)
class StageRecord:
    """Per-stage outcome of one batch, collected by the metrics sink."""

    batch_id: int
    stage: int
    loss: float
    errors: int = 0
    count: int = 0
    completed_ms: float = 0.0


@dataclass
class PipelineResult:
    """
    Outcome of one execution.

    Attributes
    ----------
    metrics : List[StepMetrics]
        One record per batch, in batch order
    timing : PipelineTiming
        Per-stage busy/idle accounting
    ownership : List[List[str]]
        Parameter names owned by each stage
    max_occupancy : Dict[str, int]
        Peak items waiting in each channel (pipeline mode only)
    max_in_flight : Dict[str, int]
        Peak activations per stage, waiting or held, keyed by stage name
        (pipeline mode only); never above channel capacity + 1
    """

    metrics: List[StepMetrics]
    timing: PipelineTiming
    ownership: List[List[str]] = field(default_factory=list)
    max_occupancy: Dict[str, int] = field(default_factory=dict)
    max_in_flight: Dict[str, int] = field(default_factory=dict)


def stage_names(k: int) -> List[str]:
    """Names of the K block stages followed by the output stage."""
    return [f"block{i + 1}" for i in range(k)] + ["classifier"]


def resolve_delays(stage_delay: StageDelay, k: int) -> List[float]:
    """
    Per-stage injected delay in seconds.

    A scalar applies to every stage; a sequence must give K+1 values.
    """
    if stage_delay is None:
        return [0.0] * (k + 1)
    if isinstance(stage_delay, (int, float)):
        values = [float(stage_delay)] * (k + 1)
    else:
        values = [float(d) for d in stage_delay]
        if len(values) != k + 1:
            raise ValueError(f"stage_delay needs {k + 1} values, got {len(values)}")
    if any(d < 0 for d in values):
        raise ValueError(f"stage delays must be >= 0, got {values}")
    return values


def check_ownership(model: DecoupledModel) -> List[List[str]]:
    """
    Parameter names per stage, verified to partition the model.

    Raises
    ------
    PipelineError
        If two stages share a parameter or one is owned by none
    """
    ownership = [model.stage_parameter_names(s) for s in range(model.k + 1)]
    seen: Dict[str, int] = {}
    for stage, names in enumerate(ownership):
        for name in names:
            if name in seen:
                raise PipelineError(
                    f"parameter {name!r} owned by stages {seen[name]} and {stage}", stage="setup"
                )
            seen[name] = stage
    missing = set(model.named_parameters()) - set(seen)
    if missing:
        raise PipelineError(f"parameters owned by no stage: {sorted(missing)}", stage="setup")
    return ownership


def _elapsed_ms(since: float) -> float:
    return (time.perf_counter() - since) * 1000.0


def _delay(seconds: float) -> None:
    if seconds > 0:
        time.sleep(seconds)


def sequential_step(
    blocks: Sequence[BlockStage],
    output: OutputStage,
    images: Tensor,
    labels: np.ndarray,
    batch_id: int,
    lr: float,
    delays: Optional[Sequence[float]] = None,
    stats: Optional[Sequence[StageStats]] = None,
    started: Optional[float] = None,
) -> Tuple[List[float], OutputResult]:
    """
    One BWBPF step with every stage run in turn on the calling thread.

    Each block emits its detached activation before its own update, the
    output layer steps last and the tap of the last block is refreshed
    with the resulting snapshot.

    Returns
    -------
    Tuple[List[float], OutputResult]
        Local loss per block and the output-stage result
    """
    delays = delays or [0.0] * (len(blocks) + 1)
    started = time.perf_counter() if started is None else started
    local: List[float] = []
    activation = images
    for stage in blocks:
        t0 = time.perf_counter()
        fwd = stage.forward(batch_id, activation)
        activation = fwd.emitted
        local.append(stage.update(fwd, labels, lr))
        _delay(delays[stage.index])
        if stats is not None:
            stats[stage.index].record_batch(_elapsed_ms(t0), _elapsed_ms(started))
    t0 = time.perf_counter()
    result = output.step(batch_id, activation, labels, lr)
    _delay(delays[-1])
    if stats is not None:
        stats[-1].record_batch(_elapsed_ms(t0), _elapsed_ms(started))
    tap = blocks[-1].tap
    if tap is not None:
        tap.load(result.snapshot.weight, result.snapshot.bias, result.snapshot.batch_id + 1)
    return local, result


def _step_metrics(
    batch_id: int,
    epoch: int,
    lr: float,
    weights: LossWeights,
    local: Sequence[float],
    result: OutputResult,
    wall_ms: float,
) -> StepMetrics:
    return StepMetrics(
        step=batch_id,
        epoch=epoch,
        lr=lr,
        global_loss=result.loss,
        local_losses=tuple(local),
        total_loss=combine_losses(weights, result.loss, local),
        train_error=result.errors / result.count,
        wall_ms=wall_ms,
    )


def _owned_velocities(state: TrainState, names: Sequence[str]) -> Dict[str, Tensor]:
    return {n: state.velocities[n] for n in names if n in state.velocities}


def _build_stages(
    model: DecoupledModel, state: TrainState, weights: LossWeights, ownership: List[List[str]]
) -> Tuple[List[BlockStage], OutputStage, List[Dict[str, Tensor]]]:
    velocity_maps = [_owned_velocities(state, names) for names in ownership]
    blocks = [
        BlockStage(model, i, weights, state.cfg, velocity_maps[i]) for i in range(model.k)
    ]
    output = OutputStage(model, weights, state.cfg, velocity_maps[model.k])
    return blocks, output, velocity_maps


def run_sequential(
    model: DecoupledModel,
    stream: Iterable[Batch],
    state: TrainState,
    weights: LossWeights,
    stage_delay: StageDelay = None,
) -> PipelineResult:
    """
    Train on a batch stream with all stages on the calling thread.

    Batch ids continue from ``state.step``; metrics are appended to
    ``state`` and returned.
    """
    ownership = check_ownership(model)
    delays = resolve_delays(stage_delay, model.k)
    blocks, output, velocity_maps = _build_stages(model, state, weights, ownership)
    stats = [StageStats(name) for name in stage_names(model.k)]
    started = time.perf_counter()
    metrics: List[StepMetrics] = []
    batch_id = state.step
    for batch in stream:
        lr = state.lr_for(batch_id)
        local, result = sequential_step(
            blocks, output, batch.images, batch.labels, batch_id, lr, delays, stats, started
        )
        record = _step_metrics(
            batch_id, state.epoch, lr, weights, local, result,
            (time.perf_counter() - state.started_at) * 1000.0,
        )
        state.record(record)
        metrics.append(record)
        batch_id += 1
    for velocities in velocity_maps:
        state.velocities.update(velocities)
    wall = _elapsed_ms(started)
    for s in stats:
        s.close(wall)
    return PipelineResult(metrics, PipelineTiming("sequential", stats, wall), ownership)


class StageWorker(threading.Thread):
    """
    Thread running one stage over its inbound channel.

    Subclasses implement :meth:`process`. A worker stops on the end-of-stream
    marker (forwarding it downstream) or when the shared abort flag is set;
    any other failure is stored in :attr:`error` and aborts the pipeline.
    """

    def __init__(
        self,
        name: str,
        index: int,
        inbound: BoundedChannel,
        outbound: Optional[BoundedChannel],
        sink: "queue.Queue[StageRecord]",
        abort: threading.Event,
        stats: StageStats,
        state: TrainState,
        delay: float,
        started: float,
    ) -> None:
        """Initialize worker."""
        super().__init__(name=name, daemon=True)
        self.index = index
        self.inbound = inbound
        self.outbound = outbound
        self.sink = sink
        self.abort = abort
        self.stats = stats
        self.state = state
        self.delay = delay
        self.started = started
        self.last_batch = -1
        self.error: Optional[BaseException] = None

    def run(self) -> None:
        try:
            while True:
                msg = self.inbound.get()
                if msg is CLOSED:
                    if self.outbound is not None:
                        self.outbound.close()
                    return
                if msg.batch_id <= self.last_batch:
                    raise PipelineError(
                        f"batch {msg.batch_id} arrived after batch {self.last_batch}",
                        stage=self.name,
                    )
                self.last_batch = msg.batch_id
                t0 = time.perf_counter()
                busy = self.process(msg, self.state.lr_for(msg.batch_id))
                self.inbound.done()
                self.stats.record_batch(busy, _elapsed_ms(self.started))
                logger.debug("%s finished batch %d in %.2f ms", self.name, msg.batch_id, _elapsed_ms(t0))
        except ChannelAborted:
            return
        except BaseException as exc:  # noqa: BLE001
            self.error = exc
            self.abort.set()
            logger.error("stage %s failed: %s", self.name, exc)

    def process(self, msg: StageMessage, lr: float) -> float:
        """Handle one message; return busy milliseconds."""
        raise NotImplementedError


class BlockWorker(StageWorker):
    """
    Worker for a block stage.

    Forward, emit downstream, then update. The last block additionally
    waits for the classifier snapshot of the previous batch before its
    update, so its local loss sees the same output layer as in sequential
    execution.
    """

    def __init__(
        self,
        stage: BlockStage,
        snapshots: Optional[BoundedChannel],
        first_batch: int,
        **kwargs,
    ) -> None:
        """Initialize worker."""
        super().__init__(name=stage.name, index=stage.index, **kwargs)
        self.stage = stage
        self.snapshots = snapshots
        self.first_batch = first_batch

    def process(self, msg: StageMessage, lr: float) -> float:
        t0 = time.perf_counter()
        fwd = self.stage.forward(msg.batch_id, msg.activation)
        busy = _elapsed_ms(t0)
        self.outbound.put(StageMessage(msg.batch_id, fwd.emitted, msg.labels))
        if self.snapshots is not None and msg.batch_id > self.first_batch:
            self._await_snapshot(msg.batch_id - 1)
        t0 = time.perf_counter()
        loss = self.stage.update(fwd, msg.labels, lr)
        _delay(self.delay)
        busy += _elapsed_ms(t0)
        self.sink.put(StageRecord(msg.batch_id, self.index, loss, completed_ms=_elapsed_ms(self.started)))
        return busy

    def _await_snapshot(self, batch_id: int) -> None:
        snapshot = self.snapshots.get()
        if snapshot is CLOSED or snapshot.batch_id != batch_id:
            raise PipelineError(
                f"expected classifier snapshot {batch_id}, got {snapshot!r}", stage=self.name
            )
        self.stage.tap.load(snapshot.weight, snapshot.bias, snapshot.batch_id + 1)
        self.snapshots.done()


class OutputWorker(StageWorker):
    """Worker for the output layer; publishes a snapshot after every step."""

    def __init__(self, stage: OutputStage, snapshots: Optional[BoundedChannel], **kwargs) -> None:
        """Initialize worker."""
        super().__init__(name=stage.name, outbound=None, **kwargs)
        self.stage = stage
        self.snapshots = snapshots
        self.final_snapshot: Optional[ClassifierSnapshot] = None

    def process(self, msg: StageMessage, lr: float) -> float:
        t0 = time.perf_counter()
        result = self.stage.step(msg.batch_id, msg.activation, msg.labels, lr)
        _delay(self.delay)
        busy = _elapsed_ms(t0)
        self.final_snapshot = result.snapshot
        if self.snapshots is not None:
            self.snapshots.put(result.snapshot)
        self.sink.put(
            StageRecord(
                msg.batch_id, self.index, result.loss, result.errors, result.count,
                _elapsed_ms(self.started),
            )
        )
        return busy


def _collect(
    sink: "queue.Queue[StageRecord]", k: int
) -> Dict[int, List[StageRecord]]:
    ordered = SortedList(key=lambda r: (r.batch_id, r.stage))
    while True:
        try:
            ordered.add(sink.get_nowait())
        except queue.Empty:
            break
    per_batch: Dict[int, List[StageRecord]] = {}
    for record in ordered:
        per_batch.setdefault(record.batch_id, []).append(record)
    return {b: recs for b, recs in per_batch.items() if len(recs) == k + 1}


def run_pipeline(
    model: DecoupledModel,
    stream: Iterable[Batch],
    state: TrainState,
    weights: LossWeights,
    queue_capacity: int = 2,
    stage_delay: StageDelay = None,
) -> PipelineResult:
    """
    Train on a batch stream with one worker thread per stage.

    Parameters
    ----------
    model : DecoupledModel
        Model to train in place
    stream : Iterable[Batch]
        Batches in order; ids continue from ``state.step``
    state : TrainState
        Schedule, velocities and metrics log
    weights : LossWeights
        Global and local loss weights
    queue_capacity : int
        Capacity of every activation channel
    stage_delay : StageDelay
        Injected per-stage compute delay in seconds

    Returns
    -------
    PipelineResult
        Metrics in batch order plus stage timing

    Raises
    ------
    PipelineError
        If the stream or any stage fails; the message names the stage.
        Batches fully processed before the failure keep their updates.
    """
    k = model.k
    ownership = check_ownership(model)
    delays = resolve_delays(stage_delay, k)
    blocks, output, velocity_maps = _build_stages(model, state, weights, ownership)
    names = stage_names(k)
    abort = threading.Event()
    channels = [
        BoundedChannel(f"{'input' if i == 0 else names[i - 1]}->{names[i]}", queue_capacity, abort)
        for i in range(k + 1)
    ]
    snapshots = BoundedChannel("classifier->" + names[k - 1], 2, abort)
    sink: "queue.Queue[StageRecord]" = queue.Queue()
    stats = [StageStats(name) for name in names]
    started = time.perf_counter()
    first_batch = state.step

    common = dict(sink=sink, abort=abort, state=state, started=started)
    workers: List[StageWorker] = [
        BlockWorker(
            stage,
            snapshots if stage.is_last else None,
            first_batch,
            inbound=channels[i],
            outbound=channels[i + 1],
            stats=stats[i],
            delay=delays[i],
            **common,
        )
        for i, stage in enumerate(blocks)
    ]
    output_worker = OutputWorker(
        output, snapshots, index=k, inbound=channels[k], stats=stats[k], delay=delays[k], **common
    )
    workers.append(output_worker)
    logger.info("starting pipeline: %d stages, channel capacity %d", k + 1, queue_capacity)
    for worker in workers:
        worker.start()

    feed_error: Optional[BaseException] = None
    fed = 0
    try:
        batch_id = first_batch
        for batch in stream:
            channels[0].put(StageMessage(batch_id, batch.images, batch.labels))
            batch_id += 1
            fed += 1
    except ChannelAborted:
        pass
    except Exception as exc:  # noqa: BLE001
        feed_error = exc
        logger.error("batch stream failed after %d batches: %s", fed, exc)
    try:
        channels[0].close()
    except ChannelAborted:
        pass
    for worker in workers:
        worker.join()

    wall = _elapsed_ms(started)
    for s in stats:
        s.close(wall)
    leftover = snapshots.drain()
    final = output_worker.final_snapshot
    if final is not None and blocks[-1].tap is not None:
        blocks[-1].tap.load(final.weight, final.bias, final.batch_id + 1)
    for velocities in velocity_maps:
        state.velocities.update(velocities)

    per_batch = _collect(sink, k)
    metrics: List[StepMetrics] = []
    for batch_id in sorted(per_batch):
        records = per_batch[batch_id]
        out = records[-1]
        result = OutputResult(batch_id, out.loss, out.errors, out.count, None)
        record = _step_metrics(
            batch_id, state.epoch, state.lr_for(batch_id), weights,
            [r.loss for r in records[:-1]], result,
            (started - state.started_at) * 1000.0 + out.completed_ms,
        )
        state.record(record)
        metrics.append(record)

    failed = [w for w in workers if w.error is not None]
    if failed:
        worker = failed[0]
        raise PipelineError(f"{type(worker.error).__name__}: {worker.error}", stage=worker.name) from worker.error
    if feed_error is not None:
        raise PipelineError(
            f"batch stream failed after {fed} batches: {feed_error}", stage="feeder"
        ) from feed_error
    logger.info(
        "pipeline finished %d batches in %.1f ms (%d snapshots left)", len(metrics), wall, len(leftover)
    )
    return PipelineResult(
        metrics,
        PipelineTiming("pipeline", stats, wall),
        ownership,
        {ch.name: ch.stats.max_occupancy for ch in channels + [snapshots]},
        {name: ch.stats.max_in_flight for name, ch in zip(names, channels)},
    )
