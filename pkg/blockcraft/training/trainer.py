"""
Training steps, evaluation and the epoch loop.

Three execution modes share one model and state layout:

- ``bwbpf-seq``: every block trained by its own local loss, one stage
  after another on the calling thread.
- ``bwbpf-pipeline``: the same stages on concurrent workers.
- ``bp-baseline``: one global loss back-propagated through the whole
  base network.
"""

from __future__ import annotations
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from blockcraft.core.autodiff import Tape, Variable, backward
from blockcraft.data.batching import AugmentPolicy, Batch, augment, batches, num_batches
from blockcraft.data.datasets import Dataset
from blockcraft.errors import EmptyInputError
from blockcraft.models.network import DecoupledModel, LossWeights
from blockcraft.nn.functional import softmax_cross_entropy
from blockcraft.nn.layers import ParameterBinding
from blockcraft.pipeline.executor import StageDelay, run_pipeline, sequential_step
from blockcraft.pipeline.report import PipelineTiming
from blockcraft.random.streams import StreamManager
from blockcraft.statistics.tally import Tally
from blockcraft.training.optimizer import SgdConfig
from blockcraft.training.stages import BlockStage, OutputStage, apply_gradients, build_stages
from blockcraft.training.state import StepMetrics, TrainState, combine_losses
from blockcraft.utils.logging import TrainingLogger

logger = logging.getLogger("blockcraft.trainer")

EVAL_BATCH = 256


class TrainMode(Enum):
    """Execution modes."""

    BWBPF_SEQ = "bwbpf-seq"
    BWBPF_PIPELINE = "bwbpf-pipeline"
    BP_BASELINE = "bp-baseline"

    @property
    def decoupled(self) -> bool:
        """Whether blocks train on local losses."""
        return self is not TrainMode.BP_BASELINE


def _wall_ms(state: TrainState) -> float:
    return (time.perf_counter() - state.started_at) * 1000.0


def bwbpf_step(
    model: DecoupledModel,
    batch: Batch,
    weights: LossWeights,
    state: TrainState,
    stages: Optional[Tuple[Sequence[BlockStage], OutputStage]] = None,
    lr: Optional[float] = None,
) -> StepMetrics:
    """
    One block-wise backprop-free step.

    Blocks run in order; each one's detached output feeds the next, and
    each block with its head is updated by ``lambda2`` times its local
    loss. The output layer sees the detached final activation and is
    updated by ``lambda1`` times the global loss. Block K's local loss
    goes through the output layer's tap, which is refreshed afterwards.

    Parameters
    ----------
    model : DecoupledModel
        Model updated in place
    batch : Batch
        Images and labels
    weights : LossWeights
        Global and local loss weights
    state : TrainState
        Velocities, schedule position and metrics log
    stages : Optional[Tuple[Sequence[BlockStage], OutputStage]]
        Prebuilt stages (built on ``state.velocities`` if omitted)
    lr : Optional[float]
        Learning-rate override (scheduled value if omitted)

    Returns
    -------
    StepMetrics
        Record appended to ``state``
    """
    blocks, output = stages if stages is not None else build_stages(
        model, weights, state.cfg, state.velocities
    )
    batch_id = state.step
    lr = state.lr_for(batch_id) if lr is None else lr
    local, result = sequential_step(blocks, output, batch.images, batch.labels, batch_id, lr)
    metrics = StepMetrics(
        step=batch_id,
        epoch=state.epoch,
        lr=lr,
        global_loss=result.loss,
        local_losses=tuple(local),
        total_loss=combine_losses(weights, result.loss, local),
        train_error=result.errors / result.count,
        wall_ms=_wall_ms(state),
    )
    state.record(metrics)
    return metrics


def bp_step(
    model: DecoupledModel,
    batch: Batch,
    state: TrainState,
    cfg: Optional[SgdConfig] = None,
    lr: Optional[float] = None,
) -> StepMetrics:
    """
    One end-to-end backpropagation step on the base network.

    A single tape records every block and the output layer; auxiliary
    heads are neither used nor updated. Local-loss fields are NaN.

    Parameters
    ----------
    model : DecoupledModel
        Model updated in place
    batch : Batch
        Images and labels
    state : TrainState
        Velocities, schedule position and metrics log
    cfg : Optional[SgdConfig]
        Optimizer settings (``state.cfg`` if omitted)
    lr : Optional[float]
        Learning-rate override (scheduled value if omitted)
    """
    cfg = cfg or state.cfg
    batch_id = state.step
    lr = state.lr_for(batch_id) if lr is None else lr
    tape = Tape("bp")
    bind = ParameterBinding(tape)
    x = Variable.constant(batch.images)
    for block in model.blocks:
        x = block.forward(x, bind, train=True)
    logits = model.classifier.forward(x, bind, train=True)
    loss, probs = softmax_cross_entropy(logits, batch.labels)
    errors = int(np.count_nonzero(np.argmax(probs.data, axis=1) != batch.labels))
    grads = tape.parameter_gradients(backward(tape, loss))
    apply_gradients(model.base_parameters(), grads, state.velocities, cfg, lr)
    value = float(loss.value.item())
    metrics = StepMetrics(
        step=batch_id,
        epoch=state.epoch,
        lr=lr,
        global_loss=value,
        local_losses=(math.nan,) * model.k,
        total_loss=value,
        train_error=errors / len(batch),
        wall_ms=_wall_ms(state),
    )
    state.record(metrics)
    return metrics


def evaluate(model: DecoupledModel, dataset: Dataset, batch_size: int = EVAL_BATCH) -> float:
    """
    Error rate ``1 - accuracy`` of the output layer, in eval mode.

    Raises
    ------
    EmptyInputError
        If the dataset is empty
    """
    if len(dataset) == 0:
        raise EmptyInputError(f"cannot evaluate on empty dataset {dataset.name!r}")
    images = dataset.images.data
    correct = 0
    for start in range(0, len(dataset), batch_size):
        probs = model.predict(images[start : start + batch_size]).data
        labels = dataset.labels[start : start + batch_size]
        correct += int(np.count_nonzero(np.argmax(probs, axis=1) == labels))
    return 1.0 - correct / len(dataset)


@dataclass
class EpochSummary:
    """
    Aggregates of one epoch.

    Attributes
    ----------
    epoch : int
        Epoch index
    steps : List[StepMetrics]
        Step records in order
    test_error : float
        Error on the test split after the epoch
    mean_global_loss : float
        Mean output-layer loss
    mean_train_error : float
        Mean batch error
    """

    epoch: int
    steps: List[StepMetrics]
    test_error: float
    mean_global_loss: float
    mean_train_error: float


@dataclass
class TrainHistory:
    """Result of :meth:`Trainer.fit`."""

    epochs: List[EpochSummary] = field(default_factory=list)
    timing: Optional[PipelineTiming] = None

    @property
    def final_test_error(self) -> float:
        """Test error after the last epoch."""
        return self.epochs[-1].test_error if self.epochs else math.nan

    @property
    def steps(self) -> List[StepMetrics]:
        """Every step record in order."""
        return [m for e in self.epochs for m in e.steps]


class Trainer:
    """
    Epoch loop over a training split.

    Parameters
    ----------
    model : DecoupledModel
        Model trained in place
    train : Dataset
        Training split
    test : Dataset
        Split evaluated after each epoch
    cfg : SgdConfig
        Optimizer, batch size and epoch count
    weights : LossWeights
        Loss weights (ignored by ``bp-baseline``)
    mode : Union[str, TrainMode]
        Execution mode
    seed : int
        Seed for shuffling and augmentation
    augment_policy : Union[str, AugmentPolicy]
        Training-time augmentation
    queue_capacity : int
        Channel capacity in pipeline mode
    stage_delay : StageDelay
        Injected per-stage delay in seconds (pipeline mode)
    log_every : int
        Debug-log every n-th step

    Examples
    --------
    >>> trainer = Trainer(model, train, test, SgdConfig(epochs=2), LossWeights())
    >>> history = trainer.fit()
    >>> history.final_test_error
    0.04
    """

    def __init__(
        self,
        model: DecoupledModel,
        train: Dataset,
        test: Dataset,
        cfg: SgdConfig,
        weights: Optional[LossWeights] = None,
        mode: Union[str, TrainMode] = TrainMode.BWBPF_SEQ,
        seed: int = 0,
        augment_policy: Union[str, AugmentPolicy] = AugmentPolicy.NONE,
        queue_capacity: int = 2,
        stage_delay: StageDelay = None,
        log_every: int = 50,
    ) -> None:
        """Initialize trainer."""
        if len(train) == 0:
            raise EmptyInputError("training split is empty")
        self.model = model
        self.train = train
        self.test = test
        self.cfg = cfg
        self.weights = weights or LossWeights()
        self.mode = TrainMode(mode)
        self.seed = seed
        self.augment_policy = AugmentPolicy(augment_policy)
        self.queue_capacity = queue_capacity
        self.stage_delay = stage_delay
        self.log_every = max(1, log_every)
        self.steps_per_epoch = num_batches(len(train), cfg.batch_size)
        self.state = TrainState(cfg, total_steps=cfg.epochs * self.steps_per_epoch)
        self.streams = StreamManager(seed)
        self.log = TrainingLogger(self.state, "trainer")

    def epoch_batches(self, epoch: int) -> Iterator[Batch]:
        """Shuffled (and possibly augmented) batches of one epoch."""
        rng = self.streams.epoch_stream("augment", epoch)
        for batch in batches(self.train, self.cfg.batch_size, self.seed, epoch):
            yield augment(batch, self.augment_policy, rng)

    def _run_epoch(self, epoch: int) -> Tuple[List[StepMetrics], Optional[PipelineTiming]]:
        stream = self.epoch_batches(epoch)
        if self.mode is TrainMode.BWBPF_PIPELINE:
            result = run_pipeline(
                self.model, stream, self.state, self.weights, self.queue_capacity, self.stage_delay
            )
            return result.metrics, result.timing
        records: List[StepMetrics] = []
        stages = build_stages(self.model, self.weights, self.cfg, self.state.velocities)
        for batch in stream:
            if self.mode is TrainMode.BP_BASELINE:
                record = bp_step(self.model, batch, self.state)
            else:
                record = bwbpf_step(self.model, batch, self.weights, self.state, stages)
            if record.step % self.log_every == 0:
                self.log.debug(
                    "loss=%.5f error=%.4f lr=%.6f", record.total_loss, record.train_error, record.lr
                )
            records.append(record)
        return records, None

    def fit(self, on_epoch: Optional[Callable[[EpochSummary], None]] = None) -> TrainHistory:
        """
        Train for ``cfg.epochs`` epochs.

        Parameters
        ----------
        on_epoch : Optional[Callable[[EpochSummary], None]]
            Called after every epoch (e.g. to append metrics rows)
        """
        history = TrainHistory()
        self.log.event(
            "run_start",
            mode=self.mode.value,
            k=self.model.k,
            steps=self.state.total_steps,
            samples=len(self.train),
        )
        for epoch in range(self.cfg.epochs):
            self.state.epoch = epoch
            records, timing = self._run_epoch(epoch)
            if timing is not None:
                history.timing = timing if history.timing is None else history.timing.merge(timing)
            loss_tally = Tally("global_loss")
            error_tally = Tally("train_error")
            for record in records:
                loss_tally.observe(record.global_loss, record.step)
                error_tally.observe(record.train_error, record.step)
            test_error = evaluate(self.model, self.test) if len(self.test) else math.nan
            summary = EpochSummary(epoch, records, test_error, loss_tally.mean, error_tally.mean)
            history.epochs.append(summary)
            self.log.event(
                "epoch_end",
                loss=loss_tally.mean,
                train_error=error_tally.mean,
                test_error=test_error,
            )
            if on_epoch is not None:
                on_epoch(summary)
        self.log.event("run_end", test_error=history.final_test_error)
        return history

    def __repr__(self) -> str:
        """Return detailed representation."""
        return (
            f"Trainer(mode={self.mode.value!r}, k={self.model.k}, "
            f"epochs={self.cfg.epochs}, steps_per_epoch={self.steps_per_epoch})"
        )
