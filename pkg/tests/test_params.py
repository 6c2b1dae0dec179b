"""
Tests for parameter storage, initialization and checkpoints.
"""
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent))

from sinkhorn_tracker.params.app import (
    DTYPE, LinearLayer, ModelConfig, ParameterStore, expected_shapes, init_params, linear_forward,
)
from sinkhorn_tracker.params.checkpoint import load_params, save_params
from sinkhorn_tracker.utils.error_handler import (
    CheckpointVersionError, DataError, DimensionMismatchError, ShapeMismatchError,
)

SMALL = ModelConfig(d_app=8, d_inter=4, layers=2)


class TestLinearLayer:
    """Affine map with optional relu"""

    def test_identity(self):
        layer = LinearLayer(torch.eye(2), torch.zeros(2), "none")
        assert linear_forward(layer, [1.0, 2.0]).tolist() == [1.0, 2.0]

    def test_relu_clamps(self):
        layer = LinearLayer(torch.eye(2), torch.zeros(2), "relu")
        assert linear_forward(layer, [-1.0, 2.0]).tolist() == [0.0, 2.0]

    def test_affine(self):
        """[[1, 1]] x (0.25, 0.25) + 0.5 = 1.0"""
        layer = LinearLayer(torch.tensor([[1.0, 1.0]]), torch.tensor([0.5]))
        assert linear_forward(layer, [0.25, 0.25]).tolist() == [1.0]

    def test_dimension_mismatch(self):
        layer = LinearLayer(torch.eye(2), torch.zeros(2))
        with pytest.raises(DimensionMismatchError):
            linear_forward(layer, [1.0, 2.0, 3.0])

    def test_inconsistent_bias(self):
        with pytest.raises(DimensionMismatchError):
            LinearLayer(torch.eye(2), torch.zeros(3))


class TestInitParams:
    """Glorot initialization"""

    def test_deterministic(self):
        assert init_params(SMALL, 7).equals(init_params(SMALL, 7))

    def test_different_seeds_differ(self):
        assert not init_params(SMALL, 1).equals(init_params(SMALL, 2))

    def test_biases_zero(self):
        params = init_params(SMALL, 0)
        for name, tensor in params.named_tensors():
            if name.endswith(".bias"):
                assert torch.count_nonzero(tensor) == 0

    def test_glorot_range(self):
        params = init_params(SMALL, 0)
        limit = np.sqrt(6.0 / (SMALL.f_edge_in() + 1))
        assert float(params.f_edge.weight.abs().max()) <= limit

    def test_shapes(self):
        """Layer schedule d_app -> d_inter -> d_inter; phi sees 1 + 2 * d_inter inputs"""
        params = init_params(SMALL, 0)
        shapes = {name: tuple(t.shape) for name, t in params.named_tensors()}
        assert shapes == expected_shapes(SMALL)
        assert shapes["f_edge.weight"] == (1, 2 * 8 + 8)
        assert shapes["gcn.0.weight"] == (8, 4)
        assert shapes["gcn.1.weight"] == (4, 4)
        assert shapes["phi.weight"] == (1, 9)
        assert shapes["f_affinity.weight"] == (1, 2)

    def test_layer_count(self):
        config = ModelConfig(d_app=8, d_inter=4, layers=3)
        assert len(init_params(config, 0).gcn_weights) == 3

    def test_wrong_gcn_count_rejected(self):
        params = init_params(SMALL, 0)
        with pytest.raises(DimensionMismatchError):
            ParameterStore(config=SMALL, f_edge=params.f_edge, gcn_weights=params.gcn_weights[:1],
                           phi=params.phi, f_affinity=params.f_affinity)

    def test_grads_congruent_and_untouched_by_forward(self):
        """Forward passes never write gradient slots"""
        params = init_params(SMALL, 0)
        params.zero_grads()
        params.f_edge.forward(torch.ones(1, SMALL.f_edge_in(), dtype=DTYPE))
        for name, tensor in params.named_tensors():
            assert params.grads[name].shape == tensor.shape
            assert torch.count_nonzero(params.grads[name]) == 0


class TestCheckpoint:
    """Binary checkpoint round trips"""

    def test_round_trip(self, tmp_path):
        params = init_params(SMALL, 3)
        path = save_params(params, tmp_path / "p.bin")
        assert load_params(path, SMALL).equals(params)

    def test_round_trip_after_training_step(self, tmp_path):
        from sinkhorn_tracker.train.app import TrainConfig, optimizer_step

        params = init_params(SMALL, 3)
        grads = {name: torch.full_like(t, 0.5) for name, t in params.named_tensors()}
        optimizer_step(params, grads, TrainConfig())
        loaded = load_params(save_params(params, tmp_path / "p.bin"), SMALL)
        assert loaded.equals(params)
        assert not loaded.equals(init_params(SMALL, 3))

    def test_truncated_file(self, tmp_path):
        path = save_params(init_params(SMALL, 0), tmp_path / "p.bin")
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 5])
        with pytest.raises(ShapeMismatchError):
            load_params(path, SMALL)

    def test_config_mismatch(self, tmp_path):
        path = save_params(init_params(SMALL, 0), tmp_path / "p.bin")
        with pytest.raises(ShapeMismatchError):
            load_params(path, ModelConfig(d_app=16, d_inter=4, layers=2))

    def test_version_mismatch(self, tmp_path):
        path = save_params(init_params(SMALL, 0), tmp_path / "p.bin")
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionError):
            load_params(path, SMALL)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "p.bin"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(DataError):
            load_params(path, SMALL)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="p.bin"):
            load_params(tmp_path / "p.bin", SMALL)
