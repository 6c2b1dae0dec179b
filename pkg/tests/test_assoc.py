"""
Tests for affinity scoring, Sinkhorn normalization and Hungarian binarization.
"""
import functools
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent))

from sinkhorn_tracker.assoc.app import (
    AffinityMatrix, NormalizedAssignment, affinity_scores, binarize_and_assign, cosine_matrix,
    normalize, score_graph, sinkhorn,
)
from sinkhorn_tracker.assoc.sinkhorn import marginal_targets, sinkhorn_normalize
from sinkhorn_tracker.embeddings.app import AppearanceEmbedding
from sinkhorn_tracker.geom.app import BoundingBox, iou
from sinkhorn_tracker.graph.app import build_graph
from sinkhorn_tracker.params.app import DTYPE, ModelConfig, init_params
from sinkhorn_tracker.utils.error_handler import DimensionMismatchError, InvariantViolation, ValidationError


@dataclass
class Node:
    box: BoundingBox
    embedding: AppearanceEmbedding


def sum_params(config):
    params = init_params(config, 0)
    with torch.no_grad():
        params.f_affinity.weight.fill_(1.0)
        params.f_affinity.bias.zero_()
    return params


def ipf_oracle(scores, l, iters, row_targets, col_targets):
    """Iterative proportional fitting written against numpy, one cell at a time."""
    K = np.exp(l * np.asarray(scores, dtype=float))
    rows, cols = K.shape
    for _ in range(iters):
        for i in range(rows):
            total = sum(K[i, j] for j in range(cols))
            for j in range(cols):
                K[i, j] *= row_targets[i] / total
        for j in range(cols):
            total = sum(K[i, j] for i in range(rows))
            for i in range(rows):
                K[i, j] *= col_targets[j] / total
    return K


def augmented(inner, slack=0.2):
    inner = np.asarray(inner, dtype=float)
    m, n = inner.shape
    scores = np.full((m + 1, n + 1), slack)
    scores[:m, :n] = inner
    return torch.tensor(scores, dtype=DTYPE)


class TestMarginals:
    def test_targets(self):
        rows, cols = marginal_targets(2, 3)
        assert rows.tolist() == [1.0, 1.0, 3.0]
        assert cols.tolist() == [1.0, 1.0, 1.0, 2.0]


class TestAffinityScores:
    """f_affinity over (cosine, IoU) with gating and slack"""

    def _graph(self, box_a, box_b, d=3):
        emb = AppearanceEmbedding(np.ones(d))
        return build_graph([Node(box_a, emb)], [Node(box_b, emb)], gate_px=1000)

    def test_identical_vectors_and_boxes(self):
        """cosine 1 + IoU 1 under a sum map"""
        config = ModelConfig(d_app=3, d_inter=2)
        graph = self._graph(BoundingBox(50, 50, 20, 20), BoundingBox(50, 50, 20, 20))
        h = torch.tensor([[1.0, 2.0], [1.0, 2.0]], dtype=DTYPE)
        affinity = affinity_scores(h, graph, sum_params(config))
        assert float(affinity.scores[0, 0]) == pytest.approx(2.0)

    def test_orthogonal_vectors_disjoint_boxes(self):
        config = ModelConfig(d_app=3, d_inter=2)
        graph = self._graph(BoundingBox(50, 50, 20, 20), BoundingBox(300, 50, 20, 20))
        h = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=DTYPE)
        affinity = affinity_scores(h, graph, sum_params(config))
        assert float(affinity.scores[0, 0]) == 0.0

    def test_slack_and_gating(self):
        config = ModelConfig(d_app=3, d_inter=2, s_slack=0.7)
        emb = AppearanceEmbedding(np.ones(3))
        graph = build_graph([Node(BoundingBox(0, 0, 10, 10), emb)],
                            [Node(BoundingBox(0, 0, 10, 10), emb), Node(BoundingBox(900, 0, 10, 10), emb)],
                            gate_px=200)
        h = torch.ones((3, 2), dtype=DTYPE)
        affinity = affinity_scores(h, graph, sum_params(config))
        assert affinity.scores.shape == (2, 3)
        assert affinity.scores[0, 1] == float("-inf")
        assert affinity.gated_mask.tolist() == [[False, True]]
        assert affinity.scores[1].tolist() == [0.7, 0.7, 0.7]
        assert float(affinity.scores[0, 2]) == 0.7

    def test_random_instance_matches_cellwise_oracle(self):
        rng = np.random.default_rng(11)
        config = ModelConfig(d_app=3, d_inter=4)
        params = init_params(config, 3)
        with torch.no_grad():
            params.f_affinity.weight.copy_(torch.tensor([[0.7, -1.3]], dtype=DTYPE))
            params.f_affinity.bias.fill_(0.05)
        tracks = [Node(BoundingBox(*rng.uniform(80, 120, 2), 40, 60), AppearanceEmbedding(np.ones(3)))
                  for _ in range(3)]
        dets = [Node(BoundingBox(*rng.uniform(80, 120, 2), 40, 60), AppearanceEmbedding(np.ones(3)))
                for _ in range(2)]
        graph = build_graph(tracks, dets, gate_px=1000)
        h = torch.tensor(rng.normal(size=(5, 4)), dtype=DTYPE)
        scores = affinity_scores(h, graph, params).scores.detach().numpy()
        hn = h.numpy()
        for t in range(3):
            for d in range(2):
                a, b = hn[t], hn[3 + d]
                cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
                expected = 0.7 * cos - 1.3 * iou(tracks[t].box, dets[d].box) + 0.05
                assert scores[t, d] == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_appearance_only_drops_iou(self):
        config = ModelConfig(d_app=3, d_inter=2, affinity_inputs="appearance_only")
        graph = self._graph(BoundingBox(50, 50, 20, 20), BoundingBox(50, 50, 20, 20))
        h = torch.tensor([[1.0, 2.0], [1.0, 2.0]], dtype=DTYPE)
        affinity = affinity_scores(h, graph, sum_params(config))
        assert float(affinity.scores[0, 0]) == pytest.approx(1.0)

    def test_zero_vector_cosine(self):
        cos = cosine_matrix(torch.zeros((1, 3), dtype=DTYPE), torch.ones((2, 3), dtype=DTYPE))
        assert cos.tolist() == [[0.0, 0.0]]

    def test_zero_vector_gradient_finite(self):
        a = torch.zeros((1, 3), dtype=DTYPE, requires_grad=True)
        cosine_matrix(a, torch.ones((1, 3), dtype=DTYPE)).sum().backward()
        assert torch.isfinite(a.grad).all()

    def test_shape_checked(self):
        with pytest.raises(DimensionMismatchError):
            AffinityMatrix(m=1, n=1, scores=torch.zeros((3, 3), dtype=DTYPE),
                           gated_mask=np.zeros((1, 1), dtype=bool))


class TestSinkhorn:
    """Slack-augmented Sinkhorn scaling"""

    def test_symmetric_two_by_two(self):
        out = sinkhorn_normalize(torch.zeros((2, 2), dtype=DTYPE), 5.0, 8)
        assert out.tolist() == [[0.5, 0.5], [0.5, 0.5]]

    def test_column_sums_exact(self):
        rng = np.random.default_rng(0)
        scores = augmented(rng.uniform(0, 0.2, (3, 4)))
        out = sinkhorn_normalize(scores, 5.0, 1)
        _, cols = marginal_targets(3, 4)
        np.testing.assert_allclose(out.sum(dim=0).numpy(), cols.numpy(), rtol=1e-14)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_ipf_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m, n = (int(k) for k in rng.integers(1, 6, size=2))
        scores = augmented(rng.normal(scale=0.5, size=(m, n)))
        rows, cols = marginal_targets(m, n)
        expected = ipf_oracle(scores.numpy(), 5.0, 8, rows.tolist(), cols.tolist())
        np.testing.assert_allclose(sinkhorn_normalize(scores, 5.0, 8).numpy(), expected, rtol=1e-10)

    def test_default_iterations_near_marginals(self):
        """Inner scores in [0, 0.2] around a 0.2 slack, up to 5x5 inner: rows within 1e-3 after 8 passes"""
        rng = np.random.default_rng(5)
        for _ in range(100):
            m, n = (int(k) for k in rng.integers(1, 6, size=2))
            scores = augmented(rng.uniform(0, 0.2, (m, n)))
            row_error, col_error = NormalizedAssignment(sinkhorn_normalize(scores, 5.0, 8)).marginal_errors()
            assert row_error < 1e-3
            assert col_error < 1e-12

    def test_many_iterations_converge(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            m, n = (int(k) for k in rng.integers(1, 6, size=2))
            scores = augmented(rng.uniform(0, 0.2, (m, n)))
            row_error, col_error = NormalizedAssignment(sinkhorn_normalize(scores, 5.0, 200)).marginal_errors()
            assert row_error < 1e-8 and col_error < 1e-8

    @pytest.mark.parametrize("seed", range(20))
    def test_larger_l_separates_tracklet_rows(self, seed):
        """Unambiguous instances: each tracklet's best detection is its own and scores above the slack"""
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, 6))
        n = int(rng.integers(m, 6))
        inner = rng.uniform(-1.0, 0.1, (m, n))
        best = rng.permutation(n)[:m]
        inner[np.arange(m), best] = rng.uniform(0.6, 1.0, m)
        scores = augmented(inner)

        def separation(l):
            rows = np.sort(sinkhorn_normalize(scores, l, 8).numpy()[:m], axis=1)
            return rows[:, -1] / rows[:, -2]

        low, mid, high = separation(1.0), separation(5.0), separation(20.0)
        assert (mid > low).all()
        assert (high > mid).all()

    def test_forbidden_cells_stay_zero(self):
        scores = augmented([[1.0, float("-inf")], [0.5, 1.0]])
        out = sinkhorn_normalize(scores, 5.0, 8)
        assert float(out[0, 1]) == 0.0
        assert (out >= 0).all()

    def test_diagonal_dominant_inner_rows(self):
        """Each inner row keeps its largest mass on the diagonal"""
        scores = augmented([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], slack=0.0)
        out = sinkhorn_normalize(scores, 5.0, 200)
        inner = out[:3, :3].numpy()
        for i in range(3):
            assert inner[i].argmax() == i
            assert inner[i, i] > 0.5

    def test_row_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        inner = rng.uniform(-1, 1, (3, 3))
        perm = [2, 0, 1]
        out = sinkhorn_normalize(augmented(inner), 5.0, 8).numpy()
        permuted = sinkhorn_normalize(augmented(inner[perm]), 5.0, 8).numpy()
        np.testing.assert_allclose(permuted[:3], out[perm], rtol=1e-12)
        np.testing.assert_allclose(permuted[3], out[3], rtol=1e-12)

    def test_deterministic(self):
        scores = augmented(np.random.default_rng(1).normal(size=(3, 2)))
        assert torch.equal(sinkhorn_normalize(scores, 5.0, 8), sinkhorn_normalize(scores, 5.0, 8))

    def test_rejects_bad_arguments(self):
        scores = augmented([[0.0]])
        with pytest.raises(ValidationError):
            sinkhorn_normalize(scores, 5.0, 0)
        with pytest.raises(ValidationError):
            sinkhorn_normalize(scores, 0.0, 8)
        with pytest.raises(ValidationError):
            sinkhorn_normalize(torch.zeros((1, 3), dtype=DTYPE), 5.0, 8)

    def test_all_zero_row_is_invariant_violation(self):
        scores = torch.tensor([[float("-inf"), float("-inf")], [0.0, 0.0]], dtype=DTYPE)
        with pytest.raises(InvariantViolation):
            sinkhorn_normalize(scores, 5.0, 8)

    def test_overflow_is_invariant_violation(self):
        with pytest.raises(InvariantViolation):
            sinkhorn_normalize(augmented([[1e6]]), 5.0, 8)

    def test_gradient_flows(self):
        scores = augmented([[0.3, 0.1], [0.0, 0.4]]).requires_grad_(True)
        sinkhorn_normalize(scores, 5.0, 8)[0, 0].backward()
        assert torch.isfinite(scores.grad).all()
        assert float(scores.grad.abs().sum()) > 0


class TestNormalizationVariants:
    def _affinity(self):
        scores = augmented([[1.0, float("-inf")], [0.2, 0.9]])
        return AffinityMatrix(m=2, n=2, scores=scores, gated_mask=np.array([[False, True], [False, False]]))

    def test_softmax_rows_sum_to_one(self):
        params = init_params(ModelConfig(d_app=2, d_inter=2, normalization="softmax"), 0)
        out = normalize(self._affinity(), params).s_star
        np.testing.assert_allclose(out.sum(dim=1).numpy(), np.ones(3), rtol=1e-14)
        assert float(out[0, 1]) == 0.0

    def test_sigmoid_variant(self):
        params = init_params(ModelConfig(d_app=2, d_inter=2, normalization="none"), 0)
        out = normalize(self._affinity(), params).s_star
        assert float(out[0, 1]) == 0.0
        assert float(out[0, 0]) == pytest.approx(1 / (1 + np.exp(-1.0)))

    def test_sinkhorn_variant_uses_config(self):
        params = init_params(ModelConfig(d_app=2, d_inter=2, l=3.0, iters=4), 0)
        affinity = self._affinity()
        expected = sinkhorn(affinity, 3.0, 4).s_star
        assert torch.equal(normalize(affinity, params).s_star, expected)


class TestScoreGraph:
    def test_end_to_end_marginals(self):
        rng = np.random.default_rng(2)
        config = ModelConfig(d_app=4, d_inter=3, iters=200)
        nodes = lambda k: [Node(BoundingBox(*rng.uniform(100, 160, 2), 40, 80),
                                AppearanceEmbedding(rng.normal(size=4))) for _ in range(k)]
        params = init_params(config, 2)
        with torch.no_grad():
            params.f_affinity.weight.fill_(0.1)
        affinity, assignment = score_graph(build_graph(nodes(3), nodes(2)), params)
        assert affinity.scores.shape == (4, 3)
        row_error, col_error = assignment.marginal_errors()
        assert row_error < 1e-8 and col_error < 1e-8

    def test_detection_permutation_permutes_columns(self):
        rng = np.random.default_rng(4)
        config = ModelConfig(d_app=4, d_inter=3)
        params = init_params(config, 5)
        with torch.no_grad():
            params.f_edge.bias.fill_(0.5)
            params.f_affinity.weight.fill_(0.4)
        nodes = lambda k: [Node(BoundingBox(*rng.uniform(100, 160, 2), 40, 80),
                                AppearanceEmbedding(rng.normal(size=4))) for _ in range(k)]
        tracks, dets = nodes(3), nodes(4)
        perm = [2, 0, 3, 1]
        affinity, assignment = score_graph(build_graph(tracks, dets, gate_px=1000), params)
        moved, moved_assignment = score_graph(build_graph(tracks, [dets[j] for j in perm], gate_px=1000), params)
        columns = perm + [4]
        np.testing.assert_allclose(moved.scores.detach().numpy(), affinity.scores.detach().numpy()[:, columns],
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(moved_assignment.s_star.detach().numpy(),
                                   assignment.s_star.detach().numpy()[:, columns], rtol=1e-10)


def brute_force_best(inner, s_thres):
    """Best total over every partial one-to-one assignment, by exhaustive search over used-column sets."""
    m, n = inner.shape

    @functools.lru_cache(maxsize=None)
    def best_from(row, used):
        if row == m:
            return 0.0
        best = best_from(row + 1, used)
        for c in range(n):
            if not used & (1 << c) and inner[row, c] >= s_thres:
                best = max(best, inner[row, c] + best_from(row + 1, used | (1 << c)))
        return best

    return best_from(0, 0)


class TestBinarizeAndAssign:
    """Threshold then Hungarian"""

    def test_diagonal_example(self):
        s_star = np.zeros((3, 3))
        s_star[:2, :2] = [[0.9, 0.05], [0.1, 0.8]]
        result = binarize_and_assign(s_star, 0.2)
        assert result.matches == [(0, 0), (1, 1)]
        assert result.births == [] and result.deaths == []

    def test_all_below_threshold(self):
        s_star = np.full((3, 4), 0.1)
        result = binarize_and_assign(s_star, 0.2)
        assert result.matches == []
        assert result.deaths == [0, 1]
        assert result.births == [0, 1, 2]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            m, n = (int(k) for k in rng.integers(1, 7, size=2))
            s_star = rng.uniform(0, 1, (m + 1, n + 1))
            result = binarize_and_assign(s_star, 0.2)
            inner = s_star[:m, :n]
            total = sum(inner[r, c] for r, c in result.matches)
            assert total == pytest.approx(brute_force_best(inner, 0.2), abs=1e-12)
            assert all(inner[r, c] >= 0.2 for r, c in result.matches)
            assert len({r for r, _ in result.matches}) == len(result.matches)
            assert len({c for _, c in result.matches}) == len(result.matches)

    def test_accepts_tensor_and_assignment(self):
        scores = torch.zeros((3, 3), dtype=DTYPE)
        scores[0, 1] = scores[1, 0] = 0.9
        assert binarize_and_assign(scores).matches == [(0, 1), (1, 0)]
        assert binarize_and_assign(NormalizedAssignment(scores)).matches == [(0, 1), (1, 0)]

    def test_empty_sides(self):
        result = binarize_and_assign(np.zeros((1, 3)))
        assert result.matches == [] and result.births == [0, 1] and result.deaths == []

    def test_rejects_non_positive_threshold(self):
        with pytest.raises(ValidationError):
            binarize_and_assign(np.zeros((2, 2)), 0.0)
