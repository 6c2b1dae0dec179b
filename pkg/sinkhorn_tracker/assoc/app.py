"""
Association step - affinity scoring, normalization and Hungarian binarization.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from sinkhorn_tracker.assoc.sinkhorn import (
    marginal_targets, sigmoid_normalize, sinkhorn_normalize, softmax_normalize,
)
from sinkhorn_tracker.constants import DEFAULT_S_THRES
from sinkhorn_tracker.gcnn.app import gcn_forward
from sinkhorn_tracker.geom.app import iou_matrix
from sinkhorn_tracker.graph.app import CandidateGraph, compute_edge_weights
from sinkhorn_tracker.params.app import DTYPE, ParameterStore
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import DimensionMismatchError, InputValidator

FORBIDDEN = float("-inf")


@dataclass
class AffinityMatrix:
    m: int
    n: int
    scores: torch.Tensor       # (m+1) x (n+1), slack row/column last
    gated_mask: np.ndarray     # m x n, True where the pair has no graph edge

    def __post_init__(self):
        if tuple(self.scores.shape) != (self.m + 1, self.n + 1):
            raise DimensionMismatchError(
                f"affinity matrix must be {(self.m + 1, self.n + 1)}, got {tuple(self.scores.shape)}",
                expected=(self.m + 1, self.n + 1), actual=tuple(self.scores.shape))

    @property
    def inner(self) -> torch.Tensor:
        return self.scores[:self.m, :self.n]


@dataclass
class NormalizedAssignment:
    s_star: torch.Tensor                 # (m+1) x (n+1)
    row_marginals: np.ndarray = field(init=False)
    col_marginals: np.ndarray = field(init=False)

    def __post_init__(self):
        values = self.s_star.detach().cpu().numpy()
        self.row_marginals = values.sum(axis=1)
        self.col_marginals = values.sum(axis=0)

    @property
    def m(self) -> int:
        return self.s_star.shape[0] - 1

    @property
    def n(self) -> int:
        return self.s_star.shape[1] - 1

    @property
    def inner(self) -> torch.Tensor:
        """Slack row and column dropped."""
        return self.s_star[:-1, :-1]

    def marginal_errors(self) -> Tuple[float, float]:
        rows, cols = marginal_targets(self.m, self.n)
        return (float(np.abs(self.row_marginals - rows.numpy()).max()),
                float(np.abs(self.col_marginals - cols.numpy()).max()))


@dataclass
class MatchResult:
    matches: List[Tuple[int, int]]
    births: List[int]
    deaths: List[int]


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarity; a zero vector has cosine 0 with everything."""
    sq_a = (a * a).sum(dim=1)
    sq_b = (b * b).sum(dim=1)
    nonzero_a, nonzero_b = sq_a > 0, sq_b > 0
    # sqrt of a placeholder 1 keeps the gradient finite at zero vectors
    norm_a = torch.sqrt(torch.where(nonzero_a, sq_a, torch.ones_like(sq_a)))
    norm_b = torch.sqrt(torch.where(nonzero_b, sq_b, torch.ones_like(sq_b)))
    cosine = (a @ b.T) / (norm_a[:, None] * norm_b[None, :])
    valid = nonzero_a[:, None] & nonzero_b[None, :]
    return torch.where(valid, cosine, torch.zeros_like(cosine))


def affinity_scores(h_inter: torch.Tensor, graph: CandidateGraph, params: ParameterStore) -> AffinityMatrix:
    """
    s(m, n) = f_affinity([cosine(h_m, h_n), iou(box_m, box_n)]) on edges,
    -inf on gated cells, s_slack on the slack row, column and corner.
    IoU is a constant with respect to every parameter.
    """
    m, n = graph.m, graph.n
    config = params.config
    cosine = cosine_matrix(h_inter[:m], h_inter[m:m + n])
    if config.affinity_inputs == "appearance_only":
        overlap = torch.zeros((m, n), dtype=DTYPE)
    else:
        overlap = torch.from_numpy(iou_matrix(graph.tracklet_boxes, graph.detection_boxes)).to(DTYPE)
    pair_inputs = torch.stack([cosine, overlap], dim=-1)
    learned = params.f_affinity.forward(pair_inputs.reshape(m * n, 2)).reshape(m, n)

    gated = graph.gated_mask()
    inner = torch.where(torch.from_numpy(gated), torch.full_like(learned, FORBIDDEN), learned)
    slack_col = torch.full((m, 1), config.s_slack, dtype=DTYPE)
    slack_row = torch.full((1, n + 1), config.s_slack, dtype=DTYPE)
    scores = torch.cat([torch.cat([inner, slack_col], dim=1), slack_row], dim=0)
    return AffinityMatrix(m=m, n=n, scores=scores, gated_mask=gated)


def sinkhorn(affinity: AffinityMatrix, l: float, iters: int) -> NormalizedAssignment:
    return NormalizedAssignment(sinkhorn_normalize(affinity.scores, l, iters))


def normalize(affinity: AffinityMatrix, params: ParameterStore) -> NormalizedAssignment:
    """Dispatch on the configured normalization variant."""
    config = params.config
    if config.normalization == "softmax":
        return NormalizedAssignment(softmax_normalize(affinity.scores, config.l))
    if config.normalization == "none":
        return NormalizedAssignment(sigmoid_normalize(affinity.scores))
    return sinkhorn(affinity, config.l, config.iters)


def score_graph(graph: CandidateGraph, params: ParameterStore) -> Tuple[AffinityMatrix, NormalizedAssignment]:
    """Full differentiable chain: f_edge, GCN, affinity, normalization."""
    weighted = compute_edge_weights(graph, params)
    h_inter = gcn_forward(weighted, params)
    affinity = affinity_scores(h_inter, weighted, params)
    return affinity, normalize(affinity, params)


def binarize_and_assign(s_star, s_thres: float = DEFAULT_S_THRES) -> MatchResult:
    """
    Drop the slack row/column, forbid cells below s_thres, then maximize the
    total kept mass with the Hungarian method.
    """
    s_thres = InputValidator.validate_positive(s_thres, "s_thres")
    if isinstance(s_star, NormalizedAssignment):
        s_star = s_star.s_star
    if isinstance(s_star, torch.Tensor):
        s_star = s_star.detach().cpu().numpy()
    s_star = np.asarray(s_star, dtype=np.float64)
    m, n = s_star.shape[0] - 1, s_star.shape[1] - 1
    inner = s_star[:m, :n]
    allowed = inner >= s_thres

    matches: List[Tuple[int, int]] = []
    if m and n and allowed.any():
        rows, cols = linear_sum_assignment(-np.where(allowed, inner, 0.0))
        matches = sorted((int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c])
    matched_rows = {r for r, _ in matches}
    matched_cols = {c for _, c in matches}
    result = MatchResult(matches=matches,
                         births=[j for j in range(n) if j not in matched_cols],
                         deaths=[i for i in range(m) if i not in matched_rows])
    helper.log_json("DEBUG", "ASSIGNMENT_DONE", matches=len(result.matches),
                    births=len(result.births), deaths=len(result.deaths))
    return result
