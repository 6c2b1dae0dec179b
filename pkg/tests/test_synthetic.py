"""
Tests for synthetic scenarios, hand-set parameters and the ablation runner.
"""
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent))

from sinkhorn_tracker.assoc.app import score_graph
from sinkhorn_tracker.graph.app import build_graph
from sinkhorn_tracker.params.app import ModelConfig
from sinkhorn_tracker.synthetic.app import (
    ABLATION_VARIANTS, ablation_params, crossing_scenario, moving_scenario, run_ablation,
    separable_model_config, separable_params, static_scenario,
)
from sinkhorn_tracker.utils.error_handler import ValidationError


class TestScenarios:
    def test_static_layout(self):
        scenario = static_scenario(3, 4)
        assert scenario.identities == [1, 2, 3]
        assert len(scenario.gt_table) == 12
        assert [r.box.cx for r in scenario.ground_truth[1]] == [200.0, 600.0, 1000.0]

    def test_moving_speed(self):
        scenario = moving_scenario(2, 5, speed=7.0)
        first, last = scenario.ground_truth[1][0], scenario.ground_truth[5][0]
        assert last.box.cx - first.box.cx == pytest.approx(28.0)

    def test_detections_mirror_ground_truth(self):
        scenario = moving_scenario(3, 3)
        for frame, rows in scenario.ground_truth.items():
            dets = scenario.detections[frame]
            assert [d.det_index for d in dets] == [r.row_index for r in rows]
            assert all(d.confidence == 1.0 for d in dets)

    def test_crossing_swaps_sides(self):
        scenario = crossing_scenario(num_frames=10, seed=3)
        start = {r.id: r.box.cx for r in scenario.ground_truth[1]}
        end = {r.id: r.box.cx for r in scenario.ground_truth[10]}
        assert start[1] < start[2] and end[1] > end[2]
        assert scenario.name == "synthetic-crossing-3"

    def test_crossing_needs_two_frames(self):
        with pytest.raises(ValidationError):
            crossing_scenario(num_frames=1)

    def test_labeled_sequence(self):
        sequence = static_scenario(2, 3).labeled(8)
        assert len(sequence) == 3
        assert [o.identity for o in sequence.frames[0]] == [1, 2]
        assert sequence.frames[0][0].embedding.dim == 8


class TestSeparableParams:
    """Hand-set parameters that separate identities"""

    def test_shapes_checked(self):
        with pytest.raises(ValidationError):
            separable_params(ModelConfig(d_app=8, d_inter=4))

    def test_own_pair_dominates(self):
        scenario = static_scenario(2, 2, spacing=100)
        sequence = scenario.labeled(8)
        params = separable_params(separable_model_config(8))
        graph = build_graph(sequence.frames[0], sequence.frames[1], gate_px=200)
        with torch.no_grad():
            _, assignment = score_graph(graph, params)
        inner = assignment.inner
        assert float(inner[0, 0]) > 0.9 and float(inner[1, 1]) > 0.9
        assert float(inner[0, 1]) < 0.05 and float(inner[1, 0]) < 0.05


class TestAblation:
    """Identity switches and MOTA per variant on crossing scenarios"""

    def test_reports_all_variants(self):
        results = run_ablation(trials=2, seed=0)
        assert set(results) == set(ABLATION_VARIANTS)
        assert all(r.idsw >= 0 and r.mota <= 1.0 for r in results.values())

    def test_edges_change_gcnn_features(self):
        scenario = crossing_scenario(num_frames=20, seed=0)
        sequence = scenario.labeled(8, noise_scale=0.6)
        middle = len(sequence) // 2
        graph = build_graph(sequence.frames[middle - 1], sequence.frames[middle], gate_px=200)
        with torch.no_grad():
            _, gcnn = score_graph(graph, ablation_params("gcnn", 8))
            _, fcnn = score_graph(graph, ablation_params("fcnn", 8))
        assert not torch.allclose(gcnn.s_star, fcnn.s_star)

    def test_gcnn_no_worse_than_fcnn(self):
        results = run_ablation(trials=20, seed=0)
        assert results["gcnn"].idsw <= results["fcnn"].idsw

    def test_geometry_does_not_hurt(self):
        results = run_ablation(trials=10, seed=0)
        assert results["appearance_geometry"].idsw <= results["appearance_only"].idsw

    def test_noise_free_crossing_has_no_switches(self):
        results = run_ablation(trials=3, seed=1, noise_scale=0.0)
        assert results["appearance_geometry"].idsw == 0
        assert results["fcnn"].idsw == 0

    def test_fine_tuning_runs_every_variant(self):
        results = run_ablation(trials=1, seed=2, num_frames=8, train_epochs=1)
        assert set(results) == set(ABLATION_VARIANTS)

    def test_unknown_variant(self):
        with pytest.raises(ValidationError):
            ablation_params("dense", 8)

    def test_deterministic(self):
        assert run_ablation(trials=2, seed=4) == run_ablation(trials=2, seed=4)
