"""
Tests for the block-wise step, the BP baseline, evaluation and the epoch loop.
"""

import math

import numpy as np
import pytest

from blockcraft.core.autodiff import Tape, Variable, backward
from blockcraft.core.tensor import Tensor
from blockcraft.data.datasets import Dataset
from blockcraft.errors import EmptyInputError
from blockcraft.models.network import LossWeights
from blockcraft.nn.functional import softmax_cross_entropy
from blockcraft.nn.layers import ParameterBinding
from blockcraft.training.optimizer import SgdConfig
from blockcraft.training.stages import apply_gradients, build_stages
from blockcraft.training.state import TrainState
from blockcraft.training.trainer import Trainer, TrainMode, bp_step, bwbpf_step, evaluate


def snapshot(params):
    return {p.name: p.value for p in params}


def assert_bitwise(before, after):
    for name, value in before.items():
        assert after[name].bitwise_equal(value), name


class TestBwbpfStep:
    """Tests for one block-wise step."""

    def test_block_matches_isolated_submodel(self, make_model, batch_list):
        """Test block 1 trains exactly like block 1 plus head 1 alone."""
        batch = batch_list(1)[0]
        cfg = SgdConfig()
        model = make_model(k=4)
        state = TrainState(cfg, total_steps=10)
        bwbpf_step(model, batch, LossWeights(), state)

        twin = make_model(k=4)
        tape = Tape("oracle")
        bind = ParameterBinding(tape)
        out = twin.blocks[0].forward(Variable.constant(batch.images), bind, train=True)
        loss, _ = softmax_cross_entropy(twin.heads[0].forward(out, bind, train=True), batch.labels)
        grads = tape.parameter_gradients(backward(tape, loss))
        apply_gradients(twin.stage_parameters(0), grads, {}, cfg, lr=state.lr_for(0))

        assert_bitwise(snapshot(twin.stage_parameters(0)), snapshot(model.stage_parameters(0)))

    @pytest.mark.parametrize("k", [3, 4])
    def test_gradients_stay_in_their_stage(self, make_model, batch_list, k):
        """Test every local loss reaches only its own block and head."""
        batch = batch_list(1)[0]
        model = make_model(k=k)
        blocks, _ = build_stages(model, LossWeights(), SgdConfig(), {})
        activation = batch.images
        for stage in blocks:
            fwd = stage.forward(0, activation)
            grads = stage.gradients(fwd, stage.local_loss(fwd, batch.labels))
            assert grads
            assert set(grads) <= set(model.stage_parameter_names(stage.index))
            activation = fwd.emitted
        assert not any(name.startswith("classifier") for name in grads)

        tape = Tape("global")
        bind = ParameterBinding(tape)
        logits = model.classifier.forward(Variable.constant(activation), bind, train=True)
        loss, _ = softmax_cross_entropy(logits, batch.labels)
        grads = tape.parameter_gradients(backward(tape, loss))
        assert set(grads) == set(model.stage_parameter_names(model.k))

    def test_local_weight_scales_gradients(self, make_model, batch_list):
        """Test lambda2 = 2 doubles every local gradient."""
        batch = batch_list(1)[0]
        grads = {}
        for lambda2 in (1.0, 2.0):
            model = make_model(k=2)
            blocks, _ = build_stages(model, LossWeights(1.0, lambda2), SgdConfig(), {})
            fwd = blocks[0].forward(0, batch.images)
            grads[lambda2] = blocks[0].gradients(fwd, blocks[0].local_loss(fwd, batch.labels))
        for name, g in grads[1.0].items():
            np.testing.assert_array_equal(grads[2.0][name].data, 2.0 * g.data)

    def test_zero_local_weight_freezes_blocks(self, make_model, batch_list):
        """Test lambda2 = 0 moves only the output layer."""
        model = make_model(k=2)
        frozen = snapshot(model.stage_parameters(0) + model.stage_parameters(1))
        classifier = snapshot(model.stage_parameters(2))
        bwbpf_step(model, batch_list(1)[0], LossWeights(1.0, 0.0), TrainState(SgdConfig(), 10))
        assert_bitwise(frozen, snapshot(model.stage_parameters(0) + model.stage_parameters(1)))
        after = snapshot(model.stage_parameters(2))
        assert not all(after[n].bitwise_equal(v) for n, v in classifier.items())

    def test_zero_global_weight_freezes_classifier(self, make_model, batch_list):
        """Test lambda1 = 0 leaves the output layer alone."""
        model = make_model(k=2)
        classifier = snapshot(model.stage_parameters(2))
        bwbpf_step(model, batch_list(1)[0], LossWeights(0.0, 1.0), TrainState(SgdConfig(), 10))
        assert_bitwise(classifier, snapshot(model.stage_parameters(2)))

    def test_metrics(self, make_model, batch_list):
        """Test one record per step with K local losses."""
        state = TrainState(SgdConfig(), total_steps=10)
        model = make_model(k=4)
        for batch in batch_list(3):
            record = bwbpf_step(model, batch, LossWeights(), state)
        assert state.step == 3
        assert record.step == 2
        assert len(record.local_losses) == 4
        assert record.total_loss == pytest.approx(record.global_loss + sum(record.local_losses))
        assert 0.0 <= record.train_error <= 1.0

    def test_tap_follows_classifier(self, make_model, batch_list):
        """Test the last block sees the output layer of the previous step."""
        model = make_model(k=2)
        state = TrainState(SgdConfig(), total_steps=10)
        bwbpf_step(model, batch_list(1)[0], LossWeights(), state)
        assert model.tap.version == 1
        assert model.tap.weight.bitwise_equal(model.classifier.dense.weight.value)


class TestBpStep:
    """Tests for the end-to-end baseline."""

    def test_single_block_matches_bwbpf(self, make_model, batch_list):
        """Test K = 1 block-wise training equals backpropagation."""
        stream = batch_list(3)
        a, b = make_model(k=1), make_model(k=1)
        sa, sb = TrainState(SgdConfig(), 10), TrainState(SgdConfig(), 10)
        for batch in stream:
            ra = bwbpf_step(a, batch, LossWeights(), sa)
            rb = bp_step(b, batch, sb)
            assert ra.global_loss == pytest.approx(rb.global_loss, rel=1e-10)
        arrays_a, arrays_b = a.state_arrays(), b.state_arrays()
        assert arrays_a.keys() == arrays_b.keys()
        for name in arrays_a:
            np.testing.assert_allclose(arrays_a[name], arrays_b[name], rtol=1e-10, atol=1e-12)

    def test_output_layer_matches_closed_form(self, make_model, batch_list):
        """Test the output-layer update equals W - lr * (p - y)^T x / B."""
        batch = batch_list(1)[0]
        model = make_model(k=2)
        twin = make_model(k=2)
        x = Variable.constant(batch.images)
        for block in twin.blocks:
            x = block.forward(x, ParameterBinding(), train=True)
        pooled = x.data.mean(axis=(2, 3))
        weight = model.classifier.dense.weight.value.data.copy()
        bias = model.classifier.dense.bias.value.data.copy()

        logits = pooled @ weight.T + bias
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = shifted / shifted.sum(axis=1, keepdims=True)
        delta = probs.copy()
        delta[np.arange(len(batch)), batch.labels] -= 1.0
        delta /= len(batch)
        lr = 0.1

        cfg = SgdConfig(weight_decay=0.0)
        bp_step(model, batch, TrainState(cfg, 10), lr=lr)
        np.testing.assert_allclose(
            model.classifier.dense.weight.value.data, weight - lr * delta.T @ pooled, rtol=0, atol=1e-12
        )
        np.testing.assert_allclose(
            model.classifier.dense.bias.value.data, bias - lr * delta.sum(axis=0), rtol=0, atol=1e-12
        )

    def test_zero_lr_changes_nothing(self, make_model, batch_list):
        """Test lr = 0 leaves every parameter bitwise unchanged."""
        model = make_model(k=3)
        before = snapshot(model.parameters())
        bp_step(model, batch_list(1)[0], TrainState(SgdConfig(), 10), lr=0.0)
        assert_bitwise(before, snapshot(model.parameters()))

    def test_heads_untouched(self, make_model, batch_list):
        """Test BP neither uses nor updates auxiliary heads."""
        model = make_model(k=3)
        heads = snapshot(p for h in model.heads for p in h.parameters())
        record = bp_step(model, batch_list(1)[0], TrainState(SgdConfig(), 10))
        assert_bitwise(heads, snapshot(p for h in model.heads for p in h.parameters()))
        assert all(math.isnan(v) for v in record.local_losses)
        assert record.total_loss == record.global_loss


class StubModel:
    """Model whose predictions are fixed probabilities."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict(self, images):
        start = int(np.asarray(images)[0, 0, 0, 0])
        return Tensor(self.probs[start : start + len(images)])


class TestEvaluate:
    """Tests for evaluate."""

    def test_error_rate(self):
        """Test three of four correct gives 0.25."""
        images = Tensor(np.arange(4.0).reshape(4, 1, 1, 1))
        data = Dataset(images, [0, 1, 2, 0], 3, split="test")
        probs = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8], [0.1, 0.8, 0.1]]
        assert evaluate(StubModel(probs), data) == 0.25
        assert evaluate(StubModel(probs), data, batch_size=3) == 0.25

    def test_empty(self, float64):
        """Test an empty split is rejected."""
        data = Dataset(Tensor.zeros((0, 1, 2, 2)), [], 2, split="test")
        with pytest.raises(EmptyInputError):
            evaluate(StubModel([]), data)

    def test_eval_is_repeatable(self, make_model, tiny_data):
        """Test evaluation does not change the model."""
        model = make_model(k=2)
        before = model.state_arrays()
        first = evaluate(model, tiny_data[1])
        assert evaluate(model, tiny_data[1]) == first
        after = model.state_arrays()
        for name, value in before.items():
            np.testing.assert_array_equal(after[name], value)


class TestTrainer:
    """Tests for the epoch loop."""

    def cfg(self, epochs=2):
        return SgdConfig(lr0=0.05, lr_final=1e-3, batch_size=6, epochs=epochs)

    @pytest.mark.parametrize("mode", list(TrainMode))
    def test_fit(self, make_model, tiny_data, mode):
        """Test every mode runs the full schedule."""
        train, test = tiny_data
        trainer = Trainer(make_model(k=2), train, test, self.cfg(), mode=mode, seed=3)
        seen = []
        history = trainer.fit(on_epoch=seen.append)
        assert len(history.epochs) == 2 == len(seen)
        assert [m.step for m in history.steps] == list(range(2 * trainer.steps_per_epoch))
        assert history.final_test_error == evaluate(trainer.model, test)
        assert (history.timing is not None) == (mode is TrainMode.BWBPF_PIPELINE)

    def test_modes_by_name(self, make_model, tiny_data):
        """Test modes are accepted by value."""
        trainer = Trainer(make_model(k=2), *tiny_data, self.cfg(), mode="bp-baseline")
        assert trainer.mode is TrainMode.BP_BASELINE

    def test_steps_per_epoch(self, make_model, tiny_data):
        """Test 24 samples at batch 6 give 4 steps."""
        trainer = Trainer(make_model(k=2), *tiny_data, self.cfg(epochs=3))
        assert trainer.steps_per_epoch == 4
        assert trainer.state.total_steps == 12

    def test_loss_decreases(self, make_model, tiny_data):
        """Test separable blobs are learned."""
        train, test = tiny_data
        trainer = Trainer(make_model(k=2), train, test, self.cfg(epochs=8), seed=1)
        history = trainer.fit()
        assert history.epochs[-1].mean_global_loss < history.epochs[0].mean_global_loss

    def test_empty_training_split(self, make_model, tiny_data, float64):
        """Test training needs samples."""
        empty = Dataset(Tensor.zeros((0, 1, 6, 6)), [], 3)
        with pytest.raises(EmptyInputError):
            Trainer(make_model(k=2), empty, tiny_data[1], self.cfg())

    def test_deterministic(self, make_model, tiny_data):
        """Test two runs with one seed agree bitwise."""
        runs = []
        for _ in range(2):
            trainer = Trainer(make_model(k=2), *tiny_data, self.cfg(), seed=4, augment_policy="pad4-crop-flip")
            runs.append((trainer.fit(), trainer.model.state_arrays()))
        (h1, s1), (h2, s2) = runs
        assert all(a.losses_equal(b) for a, b in zip(h1.steps, h2.steps))
        for name in s1:
            np.testing.assert_array_equal(s1[name], s2[name])
