"""
Slack-augmented Sinkhorn normalization and the two ablation normalizers.

The kernel exp(l * S) is formed once; each iteration is a row pass followed by
a column pass of plain proportional scaling. Row targets are (1, ..., 1, n),
column targets (1, ..., 1, m). Forbidden cells (score -inf) have kernel 0 and
stay 0.
"""
from typing import Tuple

import torch

from sinkhorn_tracker.params.app import DTYPE
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import InvariantViolation, ValidationError


def marginal_targets(m: int, n: int) -> Tuple[torch.Tensor, torch.Tensor]:
    rows = torch.ones(m + 1, dtype=DTYPE)
    rows[m] = float(n)
    cols = torch.ones(n + 1, dtype=DTYPE)
    cols[n] = float(m)
    # both sides must move the same total mass m + n
    if float(rows.sum()) != float(cols.sum()):
        raise InvariantViolation(f"inconsistent marginal totals {float(rows.sum())} vs {float(cols.sum())}")
    return rows, cols


def sinkhorn_kernel(scores: torch.Tensor, l: float) -> torch.Tensor:
    kernel = torch.exp(l * scores)
    if not torch.isfinite(kernel).all():
        raise InvariantViolation(f"exp(l * S) overflowed (l={l}, max score {float(scores.max())})")
    return kernel


def sinkhorn_normalize(scores: torch.Tensor, l: float, iters: int) -> torch.Tensor:
    """Scaled (m+1) x (n+1) matrix after `iters` row+column passes."""
    if iters < 1:
        raise ValidationError(f"iters must be >= 1, got {iters}", field="iters")
    if not l > 0:
        raise ValidationError(f"l must be positive, got {l}", field="l")
    rows_plus, cols_plus = scores.shape
    m, n = rows_plus - 1, cols_plus - 1
    if m < 1 or n < 1:
        raise ValidationError(f"Sinkhorn needs at least one tracklet and one detection, got m={m}, n={n}",
                              field="scores")
    row_targets, col_targets = marginal_targets(m, n)

    plan = sinkhorn_kernel(scores, l)
    detached = plan.detach()
    if (detached.sum(dim=1) <= 0).any() or (detached.sum(dim=0) <= 0).any():
        raise InvariantViolation("Sinkhorn kernel has an all-zero row or column")

    for _ in range(iters):
        plan = plan * (row_targets / plan.sum(dim=1))[:, None]
        plan = plan * (col_targets / plan.sum(dim=0))[None, :]

    if helper.debug_enabled():
        final = plan.detach()
        helper.log_json("DEBUG", "SINKHORN_DONE", rows=m + 1, cols=n + 1, iters=iters, l=l,
                        max_row_error=float((final.sum(dim=1) - row_targets).abs().max()),
                        max_col_error=float((final.sum(dim=0) - col_targets).abs().max()))
    return plan


def softmax_normalize(scores: torch.Tensor, l: float) -> torch.Tensor:
    """Single row-wise softmax of l * S over the augmented matrix."""
    return torch.softmax(l * scores, dim=1)


def sigmoid_normalize(scores: torch.Tensor) -> torch.Tensor:
    """Element-wise sigmoid, no marginal constraints; forbidden cells map to 0."""
    return torch.sigmoid(scores)
