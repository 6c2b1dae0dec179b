"""
Tests for the online tracker loop and tracklet lifecycle.
"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from sinkhorn_tracker.embeddings.app import (
    FileEmbeddingProvider, SyntheticEmbeddingProvider, synthetic_identity_embedding,
)
from sinkhorn_tracker.geom.app import BoundingBox
from sinkhorn_tracker.io.app import DetectionRecord
from sinkhorn_tracker.metrics.app import evaluate
from sinkhorn_tracker.synthetic.app import moving_scenario, separable_model_config, separable_params
from sinkhorn_tracker.tracker.app import (
    Detection, Tracker, TrackerConfig, TrackState, resolve_detections, run_sequence,
)
from sinkhorn_tracker.utils.error_handler import MissingEmbeddingError

D = 8
PARAMS = separable_params(separable_model_config(D))


def detection(cx, cy, identity, confidence=1.0):
    return Detection(box=BoundingBox(cx, cy, 60, 150), confidence=confidence,
                     embedding=synthetic_identity_embedding(identity, 0.0, 0, D))


def three_people(dx=0.0):
    return [detection(200 + dx, 300, 1), detection(600 + dx, 400, 2), detection(1000 + dx, 500, 3)]


class TestTrackerStep:
    """Single-frame behavior"""

    def test_cold_start(self):
        tracker = Tracker(PARAMS)
        records = tracker.step(1, three_people())
        assert [r.id for r in records] == [1, 2, 3]
        assert all(r.frame == 1 for r in records)

    def test_empty_frame(self):
        tracker = Tracker(PARAMS)
        tracker.step(1, three_people())
        assert tracker.step(2, []) == []
        assert {t.state for t in tracker.tracklets} == {TrackState.LOST}
        assert {t.age_lost for t in tracker.tracklets} == {1}

    def test_identities_kept_over_small_move(self):
        """Each own pair dominates slack after a 5 px move"""
        tracker = Tracker(PARAMS)
        first = tracker.step(1, three_people())
        second = tracker.step(2, list(reversed(three_people(dx=5.0))))
        assert [r.id for r in second] == [1, 2, 3]
        for before, after in zip(first, second):
            assert after.box.cx == pytest.approx(before.box.cx + 5.0)

    def test_low_confidence_filtered(self):
        tracker = Tracker(PARAMS, TrackerConfig(min_confidence=0.5))
        records = tracker.step(1, [detection(200, 300, 1, 0.4), detection(600, 300, 2, 0.9)])
        assert len(records) == 1
        assert records[0].box.cx == 600

    def test_lost_tracklet_recovered(self):
        tracker = Tracker(PARAMS)
        tracker.step(1, three_people())
        tracker.step(2, three_people()[:2])
        records = tracker.step(3, three_people())
        assert [r.id for r in records] == [1, 2, 3]
        assert all(t.state is TrackState.ACTIVE and t.age_lost == 0 for t in tracker.tracklets)

    def test_dead_tracklet_removed_and_id_not_reused(self):
        tracker = Tracker(PARAMS, TrackerConfig(max_lost_age=2))
        tracker.step(1, [detection(200, 300, 1)])
        for frame in (2, 3, 4):
            tracker.step(frame, [])
        assert tracker.tracklets == []
        records = tracker.step(5, [detection(200, 300, 1)])
        assert [r.id for r in records] == [2]

    def test_new_identity_is_born(self):
        tracker = Tracker(PARAMS)
        tracker.step(1, [detection(200, 300, 1)])
        records = tracker.step(2, [detection(200, 300, 1), detection(210, 300, 7)])
        assert [r.id for r in records] == [1, 2]


class TestRunSequence:
    """Whole-sequence runs"""

    def test_empty_sequence(self):
        assert run_sequence({}, TrackerConfig(), PARAMS) == []

    def test_single_frame(self):
        table = run_sequence({1: three_people()}, TrackerConfig(), PARAMS)
        assert [(r.frame, r.id) for r in table] == [(1, 1), (1, 2), (1, 3)]

    def test_moving_scenario_keeps_identities(self):
        scenario = moving_scenario(3, 10)
        frames = resolve_detections(scenario.name, scenario.detections, scenario.provider(D))
        table = run_sequence(frames, TrackerConfig(), PARAMS, scenario.num_frames)
        assert {r.id for r in table} == {1, 2, 3}
        report = evaluate(scenario.gt_table, table, num_frames=scenario.num_frames)
        assert report.idsw == 0
        assert report.mota == 1.0

    def test_deterministic(self):
        scenario = moving_scenario(3, 6)
        frames = resolve_detections(scenario.name, scenario.detections, scenario.provider(D, 0.2, 1))
        first = run_sequence(frames, TrackerConfig(), PARAMS, scenario.num_frames)
        second = run_sequence(frames, TrackerConfig(), PARAMS, scenario.num_frames)
        assert first == second

    def test_ids_unique_per_frame(self):
        scenario = moving_scenario(3, 6)
        frames = resolve_detections(scenario.name, scenario.detections, scenario.provider(D, 0.3, 2))
        table = run_sequence(frames, TrackerConfig(), PARAMS, scenario.num_frames)
        seen = {}
        for record in table:
            seen.setdefault(record.frame, []).append(record.id)
        assert all(len(ids) == len(set(ids)) for ids in seen.values())

    def test_resolve_attaches_embeddings(self):
        provider = SyntheticEmbeddingProvider(D, identities={("seq", 1, 0): 1}, noise_scale=0.0)
        frames = {1: [DetectionRecord(frame=1, det_index=0, box=BoundingBox(10, 10, 5, 5), confidence=1.0)]}
        resolved = resolve_detections("seq", frames, provider)[1]
        expected = synthetic_identity_embedding(1, 0.0, 0, D)
        assert resolved[0].embedding.values.tolist() == expected.values.tolist()

    def test_missing_file_embedding(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("2,1\nseq,1,0,1,2\n")
        frames = {2: [DetectionRecord(frame=2, det_index=0, box=BoundingBox(10, 10, 5, 5), confidence=1.0)]}
        with pytest.raises(MissingEmbeddingError):
            resolve_detections("seq", frames, FileEmbeddingProvider(path))
