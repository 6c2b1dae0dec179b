"""
Geometry step - bounding boxes, IoU, center-distance gating and the
frame-normalized 4-vector fed to the metric learners.

Internal boxes are center + size. MOTChallenge left-top + size is converted
only at the file boundary (see io).
"""
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sinkhorn_tracker.utils.error_handler import InputValidator, ValidationError


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"box {name} must be finite, got {value}", field=name)
            object.__setattr__(self, name, value)
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"box extents must be positive, got w={self.w}, h={self.h}",
                                  field="w" if self.w <= 0 else "h")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    @classmethod
    def from_tlwh(cls, left: float, top: float, width: float, height: float) -> "BoundingBox":
        return cls(left + width / 2.0, top + height / 2.0, width, height)

    def to_corners(self) -> tuple[float, float, float, float]:
        half_w, half_h = self.w / 2.0, self.h / 2.0
        return self.cx - half_w, self.cy - half_h, self.cx + half_w, self.cy + half_h

    def to_tlwh(self) -> tuple[float, float, float, float]:
        return self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h

    def scaled(self, factor: float) -> "BoundingBox":
        return BoundingBox(self.cx * factor, self.cy * factor, self.w * factor, self.h * factor)

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.cx + dx, self.cy + dy, self.w, self.h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union in [0, 1]; exactly 1.0 for identical boxes."""
    ax1, ay1, ax2, ay2 = a.to_corners()
    bx1, by1, bx2, by2 = b.to_corners()
    inter_w = min(ax2, bx2) - max(ax1, bx1)
    inter_h = min(ay2, by2) - max(ay1, by1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    # areas from corners so that iou(a, a) reduces to inter / inter
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    return min(1.0, max(0.0, inter / union))


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def geom_features(b: BoundingBox, frame_w: float, frame_h: float) -> np.ndarray:
    """(cx/W, cy/H, w/W, h/H) - scale-free geometry for the metric learners."""
    frame_w = InputValidator.validate_positive(frame_w, "frame_w")
    frame_h = InputValidator.validate_positive(frame_h, "frame_h")
    return np.array([b.cx / frame_w, b.cy / frame_h, b.w / frame_w, b.h / frame_h],
                    dtype=np.float64)


def geom_feature_matrix(boxes: Sequence[BoundingBox], frame_w: float, frame_h: float) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.stack([geom_features(b, frame_w, frame_h) for b in boxes])


def iou_matrix(boxes_a: Sequence[BoundingBox], boxes_b: Sequence[BoundingBox]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou(a, b)
    return out
