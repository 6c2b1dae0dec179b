"""
Training data: identity-labeled frames and the (previous frame, current frame)
samples drawn from them.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from sinkhorn_tracker.embeddings.app import AppearanceEmbedding, EmbeddingProvider, get_embedding
from sinkhorn_tracker.geom.app import BoundingBox
from sinkhorn_tracker.graph.app import CandidateGraph, build_graph
from sinkhorn_tracker.io.app import GroundTruthRecord
from sinkhorn_tracker.params.app import DTYPE
from sinkhorn_tracker.utils.error_handler import ValidationError


@dataclass(frozen=True)
class LabeledObject:
    identity: int
    box: BoundingBox
    embedding: AppearanceEmbedding


@dataclass
class LabeledSequence:
    name: str
    frames: List[List[LabeledObject]]
    frame_size: Tuple[float, float]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class GroundTruth:
    """(m+1) x (n+1) binary labels; slack column marks deaths, slack row marks births, corner 0."""
    o: torch.Tensor

    def __post_init__(self):
        o = self.o
        inner = o[:-1, :-1]
        if ((o != 0) & (o != 1)).any():
            raise ValidationError("ground-truth labels must be 0 or 1", field="o")
        if (inner.sum(dim=1) > 1).any() or (inner.sum(dim=0) > 1).any():
            raise ValidationError("a tracklet or detection is matched more than once", field="o")
        if float(o[-1, -1]) != 0.0:
            raise ValidationError("corner label must be 0", field="o")

    @property
    def m(self) -> int:
        return self.o.shape[0] - 1

    @property
    def n(self) -> int:
        return self.o.shape[1] - 1


def derive_gt_matrix(prev_ids: Sequence[int], curr_ids: Sequence[int]) -> GroundTruth:
    """o = 1 where a tracklet and a detection share an identity; unmatched rows/columns go to slack."""
    m, n = len(prev_ids), len(curr_ids)
    o = torch.zeros((m + 1, n + 1), dtype=DTYPE)
    position = {ident: j for j, ident in enumerate(curr_ids)}
    for i, ident in enumerate(prev_ids):
        j = position.get(ident)
        if j is None:
            o[i, n] = 1.0
        else:
            o[i, j] = 1.0
    matched_cols = o[:m, :n].sum(dim=0)
    for j in range(n):
        if matched_cols[j] == 0:
            o[m, j] = 1.0
    return GroundTruth(o)


@dataclass(frozen=True)
class TrainingSample:
    sequence: str
    prev_position: int
    curr_position: int
    graph: CandidateGraph
    truth: GroundTruth

    @property
    def delta(self) -> int:
        return self.curr_position - self.prev_position


def make_sample(sequence: LabeledSequence, curr_position: int, delta: int,
                gate_px: float) -> Optional[TrainingSample]:
    """None when either frame has no objects."""
    prev_position = curr_position - delta
    if prev_position < 0 or delta < 1:
        raise ValidationError(f"invalid frame pair ({prev_position}, {curr_position})", field="delta")
    previous, current = sequence.frames[prev_position], sequence.frames[curr_position]
    if not previous or not current:
        return None
    graph = build_graph(previous, current, gate_px, sequence.frame_size)
    truth = derive_gt_matrix([o.identity for o in previous], [o.identity for o in current])
    return TrainingSample(sequence=sequence.name, prev_position=prev_position,
                          curr_position=curr_position, graph=graph, truth=truth)


def sequence_from_ground_truth(name: str, frames: Mapping[int, List[GroundTruthRecord]],
                               provider: EmbeddingProvider, frame_size: Tuple[float, float],
                               num_frames: Optional[int] = None) -> LabeledSequence:
    """Frames 1..num_frames (default: last annotated frame); embeddings keyed by row index in the frame."""
    last = num_frames if num_frames is not None else max(frames, default=0)
    labeled: List[List[LabeledObject]] = []
    for frame in range(1, last + 1):
        labeled.append([
            LabeledObject(identity=r.id, box=r.box,
                          embedding=get_embedding(provider, name, frame, r.row_index))
            for r in frames.get(frame, [])
        ])
    return LabeledSequence(name=name, frames=labeled, frame_size=frame_size)


def identity_map(name: str, frames: Mapping[int, List[GroundTruthRecord]]) -> Dict[Tuple[str, int, int], int]:
    """Embedding key -> identity, for synthetic providers built over a ground-truth file."""
    return {(name, r.frame, r.row_index): r.id for rows in frames.values() for r in rows}


def split_train_val(sequence: LabeledSequence, holdout_frames: int) -> Tuple[LabeledSequence, LabeledSequence]:
    """Last `holdout_frames` frames become validation; at least one frame stays in training."""
    if holdout_frames < 0:
        raise ValidationError(f"holdout_frames must be >= 0, got {holdout_frames}", field="holdout_frames")
    cut = max(1, len(sequence) - holdout_frames)
    return (LabeledSequence(sequence.name, sequence.frames[:cut], sequence.frame_size),
            LabeledSequence(sequence.name, sequence.frames[cut:], sequence.frame_size))


def draw_delta(rng: np.random.Generator, curr_position: int, lookback: int) -> int:
    """Uniform in [1, min(lookback, curr_position)]."""
    return int(rng.integers(1, min(lookback, curr_position) + 1))
