"""
Metrics step - CLEAR-MOT evaluation (MOTA, FP, FN, IDSW, MT/ML) on top of a
motmetrics accumulator.

Per frame, correspondences from earlier frames are kept while their IoU stays
at or above the threshold; the remaining boxes are matched by the Hungarian
method. A ground-truth object whose matched hypothesis id differs from its
last matched id counts one identity switch.
"""
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import motmetrics as mm
import numpy as np
import pandas as pd
from pydantic import BaseModel

from sinkhorn_tracker.constants import DEFAULT_EVAL_IOU, MOSTLY_LOST_RATIO, MOSTLY_TRACKED_RATIO
from sinkhorn_tracker.geom.app import iou_matrix
from sinkhorn_tracker.io.app import TrackRecord, group_by_frame
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import DataError, InputValidator, ValidationError

CSV_COLUMNS = ["mota", "fp", "fn", "idsw", "mt", "ml", "mt_ml_ratio", "gt_total", "precision", "recall", "idf1"]
SUMMARY_METRICS = ["num_objects", "num_false_positives", "num_misses", "num_switches", "num_detections",
                   "num_unique_objects", "mota"]


class EvalReport(BaseModel):
    mota: float
    fp: int
    fn: int
    idsw: int
    mt: int
    ml: int
    mt_ml_ratio: float
    gt_total: int
    num_matches: int = 0
    num_trajectories: int = 0
    precision: float = 0.0
    recall: float = 0.0

    @property
    def is_perfect(self) -> bool:
        return self.fp == 0 and self.fn == 0 and self.idsw == 0

    def to_frame(self) -> pd.DataFrame:
        row = self.model_dump(include=set(CSV_COLUMNS))
        row["idf1"] = "n/a"
        return pd.DataFrame([row], columns=CSV_COLUMNS)


def frame_distances(gt: Sequence[TrackRecord], hyp: Sequence[TrackRecord], threshold: float) -> np.ndarray:
    """1 - IoU per (gt, hyp) pair; NaN marks pairs below the IoU threshold."""
    overlap = iou_matrix([r.box for r in gt], [r.box for r in hyp])
    return np.where(overlap >= threshold, 1.0 - overlap, np.nan)


def accumulate(gt_frames: Dict[int, List[TrackRecord]], hyp_frames: Dict[int, List[TrackRecord]],
               num_frames: int, threshold: float) -> mm.MOTAccumulator:
    acc = mm.MOTAccumulator(auto_id=False)
    for frame in range(1, num_frames + 1):
        gt, hyp = gt_frames.get(frame, []), hyp_frames.get(frame, [])
        acc.update([r.id for r in gt], [r.id for r in hyp], frame_distances(gt, hyp, threshold), frameid=frame)
    return acc


def track_coverage(acc: mm.MOTAccumulator) -> pd.Series:
    """Matched fraction of the frames each ground-truth id is present in."""
    events = acc.mot_events
    present = events[events["Type"].isin(["MATCH", "SWITCH", "MISS"])]
    return present["Type"].ne("MISS").groupby(present["OId"]).mean()


def evaluate(gt_table: Sequence[TrackRecord], hyp_table: Sequence[TrackRecord],
             iou_threshold: float = DEFAULT_EVAL_IOU, num_frames: Optional[int] = None) -> EvalReport:
    iou_threshold = InputValidator.validate_positive(iou_threshold, "iou_threshold")
    gt_frames, hyp_frames = group_by_frame(gt_table), group_by_frame(hyp_table)
    for name, frames in (("ground truth", gt_frames), ("hypothesis", hyp_frames)):
        for frame, rows in frames.items():
            if len({r.id for r in rows}) != len(rows):
                raise DataError(f"{name} has a repeated id in frame {frame}")
    if num_frames is None:
        num_frames = max(list(gt_frames) + list(hyp_frames), default=0)
    elif hyp_frames and max(hyp_frames) > num_frames:
        raise ValidationError(f"hypothesis covers frame {max(hyp_frames)} but the sequence has {num_frames} frames",
                              field="num_frames")

    if not gt_frames:
        fp = sum(len(rows) for rows in hyp_frames.values())
        report = EvalReport(mota=1.0 if fp == 0 else -math.inf, fp=fp, fn=0, idsw=0, mt=0, ml=0,
                            mt_ml_ratio=math.inf, gt_total=0)
        helper.log_json("INFO", "EVALUATION_DONE", **report.model_dump())
        return report

    acc = accumulate(gt_frames, hyp_frames, num_frames, iou_threshold)
    summary = mm.metrics.create().compute(acc, metrics=SUMMARY_METRICS, name="sequence").iloc[0]
    coverage = track_coverage(acc)
    mt = int((coverage >= MOSTLY_TRACKED_RATIO).sum())
    ml = int((coverage <= MOSTLY_LOST_RATIO).sum())
    fp, fn = int(summary["num_false_positives"]), int(summary["num_misses"])
    matches = int(summary["num_detections"])
    report = EvalReport(
        mota=float(summary["mota"]), fp=fp, fn=fn, idsw=int(summary["num_switches"]), mt=mt, ml=ml,
        mt_ml_ratio=(mt / ml) if ml else math.inf,
        gt_total=int(summary["num_objects"]), num_matches=matches,
        num_trajectories=int(summary["num_unique_objects"]),
        precision=matches / (matches + fp) if matches + fp else 0.0,
        recall=matches / (matches + fn) if matches + fn else 0.0,
    )
    helper.log_json("INFO", "EVALUATION_DONE", **report.model_dump())
    return report


def format_report(report: EvalReport) -> str:
    """Aligned two-row text table."""
    return report.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}")


def write_report_csv(report: EvalReport, path) -> Path:
    path = Path(path)
    report.to_frame().to_csv(path, index=False, float_format="%.6f")
    return path
