"""
Tracker step - the online loop. Each frame: confidence filter, candidate graph
over active + lost tracklets, association, then the tracklet state machine:

    matched             -> active, age_lost = 0
    unmatched active    -> lost, age_lost = 1
    unmatched lost      -> age_lost + 1, dead once age_lost > max_lost_age
    unmatched detection -> new tracklet with a fresh id
"""
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import torch
from pydantic import BaseModel, ConfigDict, Field

from sinkhorn_tracker.assoc.app import MatchResult, binarize_and_assign, score_graph
from sinkhorn_tracker.constants import (
    DEFAULT_FRAME_HEIGHT, DEFAULT_FRAME_WIDTH, DEFAULT_GATE_PX, DEFAULT_MAX_LOST_AGE,
    DEFAULT_MIN_CONFIDENCE, DEFAULT_S_THRES,
)
from sinkhorn_tracker.embeddings.app import AppearanceEmbedding, EmbeddingProvider, get_embedding
from sinkhorn_tracker.geom.app import BoundingBox
from sinkhorn_tracker.graph.app import build_graph
from sinkhorn_tracker.io.app import DetectionRecord, TrackRecord
from sinkhorn_tracker.params.app import ParameterStore
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import InvariantViolation


class TrackerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    gate_px: float = Field(DEFAULT_GATE_PX, gt=0)
    s_thres: float = Field(DEFAULT_S_THRES, gt=0)
    max_lost_age: int = Field(DEFAULT_MAX_LOST_AGE, gt=0)
    min_confidence: float = Field(DEFAULT_MIN_CONFIDENCE, gt=0)
    frame_width: float = Field(DEFAULT_FRAME_WIDTH, gt=0)
    frame_height: float = Field(DEFAULT_FRAME_HEIGHT, gt=0)


class TrackState(Enum):
    ACTIVE = "active"
    LOST = "lost"
    DEAD = "dead"


@dataclass
class Tracklet:
    id: int
    last_box: BoundingBox
    last_embedding: AppearanceEmbedding
    last_seen: int
    state: TrackState = TrackState.ACTIVE
    age_lost: int = 0

    # graph nodes read `box` / `embedding`
    @property
    def box(self) -> BoundingBox:
        return self.last_box

    @property
    def embedding(self) -> AppearanceEmbedding:
        return self.last_embedding


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    embedding: AppearanceEmbedding
    det_index: int = 0


@dataclass
class Tracker:
    params: ParameterStore
    config: TrackerConfig = field(default_factory=TrackerConfig)
    tracklets: List[Tracklet] = field(default_factory=list)
    _ids: Iterable[int] = field(default_factory=lambda: itertools.count(1), repr=False)

    def candidates(self) -> List[Tracklet]:
        return [t for t in self.tracklets if t.state in (TrackState.ACTIVE, TrackState.LOST)]

    def associate(self, candidates: Sequence[Tracklet], detections: Sequence[Detection]) -> MatchResult:
        if not candidates or not detections:
            return MatchResult(matches=[], births=list(range(len(detections))),
                               deaths=list(range(len(candidates))))
        graph = build_graph(candidates, detections, self.config.gate_px,
                            (self.config.frame_width, self.config.frame_height), self.params.config.d_app)
        with torch.no_grad():
            _, assignment = score_graph(graph, self.params)
        return binarize_and_assign(assignment, self.config.s_thres)

    def step(self, frame_index: int, detections: Sequence[Detection]) -> List[TrackRecord]:
        """Records (frame, id, box) for every tracklet matched or born this frame, sorted by id."""
        kept = [d for d in detections if d.confidence >= self.config.min_confidence]
        candidates = self.candidates()
        result = self.associate(candidates, kept)

        output: List[TrackRecord] = []
        matched = set()
        for t_idx, d_idx in result.matches:
            tracklet, detection = candidates[t_idx], kept[d_idx]
            tracklet.last_box = detection.box
            tracklet.last_embedding = detection.embedding
            tracklet.last_seen = frame_index
            tracklet.state = TrackState.ACTIVE
            tracklet.age_lost = 0
            matched.add(tracklet.id)
            output.append(TrackRecord(frame=frame_index, id=tracklet.id, box=detection.box))

        for t_idx in result.deaths:
            tracklet = candidates[t_idx]
            tracklet.age_lost += 1
            if tracklet.age_lost > self.config.max_lost_age:
                tracklet.state = TrackState.DEAD
                helper.log_json("DEBUG", "TRACKLET_DIED", id=tracklet.id, frame=frame_index,
                                last_seen=tracklet.last_seen)
            else:
                tracklet.state = TrackState.LOST

        for d_idx in result.births:
            detection = kept[d_idx]
            tracklet = Tracklet(id=next(self._ids), last_box=detection.box,
                                last_embedding=detection.embedding, last_seen=frame_index)
            self.tracklets.append(tracklet)
            output.append(TrackRecord(frame=frame_index, id=tracklet.id, box=detection.box))
            helper.log_json("DEBUG", "TRACKLET_BORN", id=tracklet.id, frame=frame_index)

        # dead tracklets are never matched again
        self.tracklets = [t for t in self.tracklets if t.state is not TrackState.DEAD]
        output.sort(key=lambda r: r.id)
        if len({r.id for r in output}) != len(output):
            raise InvariantViolation(f"duplicate track id in frame {frame_index}")
        helper.log_json("DEBUG", "FRAME_TRACKED", frame=frame_index, detections=len(detections),
                        kept=len(kept), matches=len(result.matches), births=len(result.births),
                        tracklets=len(self.tracklets))
        return output


def resolve_detections(sequence: str, frames: Mapping[int, List[DetectionRecord]],
                       provider: EmbeddingProvider) -> Dict[int, List[Detection]]:
    """
    Attach an embedding to every detection up front, so a missing embedding
    aborts before any tracker state exists.
    """
    return {
        frame: [Detection(box=r.box, confidence=r.confidence,
                          embedding=get_embedding(provider, sequence, frame, r.det_index),
                          det_index=r.det_index)
                for r in records]
        for frame, records in frames.items()
    }


def run_sequence(frames: Mapping[int, Sequence[Detection]], config: TrackerConfig,
                 params: ParameterStore, num_frames: Optional[int] = None) -> List[TrackRecord]:
    """Track frames 1..num_frames (default: last frame with detections); frames without detections still age tracklets."""
    last = num_frames if num_frames is not None else max(frames, default=0)
    tracker = Tracker(params=params, config=config)
    table: List[TrackRecord] = []
    for frame in range(1, last + 1):
        table.extend(tracker.step(frame, frames.get(frame, [])))
    helper.log_json("INFO", "SEQUENCE_TRACKED", frames=last, records=len(table),
                    identities=len({r.id for r in table}))
    return table
