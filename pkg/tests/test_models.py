"""
Tests for architecture specs, presets, partitioning and decoupled models.
"""

import numpy as np
import pytest

from blockcraft.core.autodiff import Variable
from blockcraft.core.tensor import Tensor
from blockcraft.errors import ArchitectureError, PartitionError
from blockcraft.models.network import AuxiliaryHead, ClassifierTap, build_model
from blockcraft.models.partition import BlockPartition, partition
from blockcraft.models.presets import build_preset, preset_names
from blockcraft.models.spec import ArchitectureSpec, UnitKind, UnitSpec
from blockcraft.nn.layers import ParameterBinding
from blockcraft.random.distributions import RandomGenerator


class TestPartition:
    """Tests for block partitioning."""

    def test_exact_division(self):
        """Test U=16, K=4."""
        assert partition(16, 4).sizes == [4, 4, 4, 4]

    def test_ceil_first(self):
        """Test U=18, K=4 puts the extra units first."""
        assert partition(18, 4).sizes == [5, 5, 4, 4]

    @pytest.mark.parametrize("k", [0, 4])
    def test_invalid_k(self, k):
        """Test K outside [1, U]."""
        with pytest.raises(PartitionError):
            partition(3, k)

    @pytest.mark.parametrize("units,k", [(1, 1), (7, 3), (19, 5), (16, 16)])
    def test_ranges_cover_units(self, units, k):
        """Test contiguity, coverage and balance."""
        p = partition(units, k)
        covered = [u for start, stop in p.ranges for u in range(start, stop)]
        assert covered == list(range(units))
        assert max(p.sizes) - min(p.sizes) <= 1

    def test_rejects_gaps(self):
        """Test hand-built partitions are validated."""
        with pytest.raises(PartitionError):
            BlockPartition(4, ((0, 1), (2, 4)))

    def test_block_of(self):
        """Test unit-to-block lookup."""
        p = partition(10, 3)
        assert [p.block_of(u) for u in (0, 3, 4, 7, 9)] == [0, 0, 1, 2, 2]


class TestPresets:
    """Tests for architecture presets."""

    def test_names(self):
        """Test all four presets exist."""
        assert set(preset_names()) == {"vgg-small", "vgg-19-like", "resnet-small", "resnet-50-like"}

    def test_vgg_small_reduces_to_one_pixel(self):
        """Test the final feature map is C x 1 x 1 on 32x32 inputs."""
        spec = build_preset("vgg-small", num_classes=10, input_size=32)
        assert spec.feature_shape[1:] == (1, 1)

    def test_vgg_small_on_mnist(self):
        """Test 28x28 single-channel inputs."""
        spec = build_preset("vgg-small", num_classes=10, input_size=28, in_channels=1)
        assert spec.num_units == 8
        assert spec.feature_shape == (128, 1, 1)

    def test_resnet_small_shapes(self):
        """Test an even residual unit count with checked shortcuts."""
        spec = build_preset("resnet-small", input_size=32)
        assert spec.num_units % 2 == 0
        assert all(u.residual for u in spec.units)
        assert any(u.projection for u in spec.units)

    def test_large_presets_unit_counts(self):
        """Test the -like presets mirror VGG-19 and ResNet-50 depth."""
        assert build_preset("vgg-19-like").num_units == 16
        assert build_preset("resnet-50-like").num_units == 16

    def test_unknown_preset(self):
        """Test an unknown name is rejected."""
        with pytest.raises(ArchitectureError, match="unknown preset"):
            build_preset("alexnet")

    def test_one_unit_per_block(self):
        """Test K = U gives single-unit blocks."""
        spec = build_preset("vgg-small", input_size=8, in_channels=1, width=2)
        assert partition(spec.num_units, spec.num_units).sizes == [1] * spec.num_units


class TestArchitectureSpec:
    """Tests for spec validation."""

    def test_channel_mismatch(self):
        """Test consecutive units must agree on channels."""
        with pytest.raises(ArchitectureError, match="expects 4 channels"):
            ArchitectureSpec(
                "bad", (1, 8, 8), 3,
                (UnitSpec(UnitKind.VGG, 1, 3), UnitSpec(UnitKind.VGG, 4, 4)),
            )

    def test_spatial_collapse(self):
        """Test pooling past one pixel fails propagation."""
        with pytest.raises(ArchitectureError):
            ArchitectureSpec(
                "bad", (1, 2, 2), 3,
                (UnitSpec(UnitKind.VGG, 1, 2, pool=True), UnitSpec(UnitKind.VGG, 2, 2, pool=True)),
            )

    def test_json_round_trip(self):
        """Test serialized specs rebuild equal."""
        spec = build_preset("resnet-small", input_size=16, width=4)
        assert ArchitectureSpec.from_json(spec.to_json()) == spec


class TestDecoupledModel:
    """Tests for the decoupled model."""

    def test_single_block_has_no_heads(self, make_model):
        """Test K=1 trains block 1 through the classifier tap."""
        model = make_model(k=1)
        assert model.heads == []
        assert isinstance(model.local_head(0), ClassifierTap)

    def test_heads_at_unit_boundaries(self):
        """Test K=4 on 16 units puts heads after units 4, 8 and 12."""
        spec = build_preset("vgg-19-like", input_size=32, width=2)
        model = build_model(spec, 4, seed=0)
        assert model.partition.boundaries == [4, 8, 12]
        assert [h.name for h in model.heads] == ["head1", "head2", "head3"]
        shapes = spec.propagate()
        for head, boundary in zip(model.heads, model.partition.boundaries):
            assert head.dense.in_features == shapes[boundary - 1][0]

    def test_head_output_shape(self, float64):
        """Test a head maps [B, 128, 8, 8] to [B, 10]."""
        head = AuxiliaryHead("h", 128, 10, RandomGenerator(0))
        out = head.forward(Variable.constant(np.zeros((2, 128, 8, 8))), ParameterBinding(), train=True)
        assert out.shape == (2, 10)

    def test_parameter_count(self, make_model):
        """Test total = base + heads."""
        model = make_model(k=4)
        heads = sum(p.size for h in model.heads for p in h.parameters())
        total = sum(p.size for p in model.parameters())
        assert total == sum(p.size for p in model.base_parameters()) + heads

    def test_base_parameters_independent_of_k(self, make_model):
        """Test the base network is identical for every K at one seed."""
        reference = {p.name: p.value for p in make_model(k=1).base_parameters()}
        for k in (2, 4):
            base = {p.name: p.value for p in make_model(k=k).base_parameters()}
            assert base.keys() == reference.keys()
            assert all(base[n].bitwise_equal(reference[n]) for n in base)

    def test_features_ignore_heads(self, make_model, tiny_data):
        """Test the forward pass is the base network's for every K."""
        images = tiny_data[0].images.data[:4]
        a = make_model(k=1).features(images).value
        b = make_model(k=4).features(images).value
        assert a.bitwise_equal(b)

    def test_stage_ownership(self, make_model):
        """Test stages partition the parameter set."""
        model = make_model(k=3)
        owned = [n for s in range(model.k + 1) for n in model.stage_parameter_names(s)]
        assert sorted(owned) == sorted(model.named_parameters())
        assert len(owned) == len(set(owned))
        assert model.stage_parameter_names(model.k) == ["classifier.dense.weight", "classifier.dense.bias"]

    def test_predict_rows_sum_to_one(self, make_model, tiny_data):
        """Test prediction gives probabilities from the output layer."""
        probs = make_model(k=2).predict(tiny_data[1].images).data
        assert probs.shape == (len(tiny_data[1]), 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_tap_is_a_copy(self, make_model):
        """Test the tap does not follow classifier updates until loaded."""
        model = make_model(k=2)
        before = model.tap.weight
        model.classifier.dense.weight.value = Tensor(before.data * 2.0)
        assert model.tap.weight is before
        model.tap.sync(model.classifier)
        assert model.tap.weight is model.classifier.dense.weight.value
        assert model.tap.version == 1
