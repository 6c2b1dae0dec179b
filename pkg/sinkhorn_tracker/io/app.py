"""
MOTChallenge file formats: detections, ground truth, tracker results, and the
two-line frame-size sidecar.

Files store left-top + size; everything returned here is converted to
center + size boxes. World coordinates are ignored on read and written as -1.
"""
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

from sinkhorn_tracker.geom.app import BoundingBox
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import DataError, InputValidator, ValidationError

DETECTION_FIELDS = 10
GT_FIELD_COUNTS = (9, 10)


@dataclass(frozen=True)
class DetectionRecord:
    frame: int
    det_index: int          # position within its frame in the file, keys the embedding
    box: BoundingBox
    confidence: float
    id: int = -1


@dataclass(frozen=True)
class GroundTruthRecord:
    frame: int
    id: int
    box: BoundingBox
    row_index: int          # position within its frame after filtering


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    id: int
    box: BoundingBox

    def to_line(self) -> str:
        left, top, width, height = self.box.to_tlwh()
        coords = ",".join(helper.format_number(v) for v in (left, top, width, height))
        return f"{self.frame},{self.id},{coords},-1,-1,-1,-1"


def sequence_name(path) -> str:
    """MOT layout `<SEQ>/det/det.txt` -> `<SEQ>`; any other path -> file stem."""
    path = Path(path)
    if path.parent.name in ("det", "gt") and path.parent.parent.name:
        return path.parent.parent.name
    return path.stem


def _lines(path: Path) -> Iterator[Tuple[int, List[str]]]:
    InputValidator.validate_existing_file(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            yield line_no, [field.strip() for field in raw.strip().split(",")]


def _parse_row(fields: List[str], path: Path, line_no: int) -> Tuple[int, int, BoundingBox, float]:
    try:
        frame = int(float(fields[0]))
        ident = int(float(fields[1]))
        left, top, width, height, conf = (float(v) for v in fields[2:7])
    except ValueError as e:
        raise DataError(f"unparseable field: {e}", path=path, line=line_no)
    if frame < 1:
        raise DataError(f"frame must be >= 1, got {frame}", path=path, line=line_no)
    if not width > 0 or not height > 0:
        raise DataError(f"box width and height must be positive, got {width}x{height}", path=path, line=line_no)
    try:
        box = BoundingBox.from_tlwh(left, top, width, height)
    except ValidationError as e:
        raise DataError(e.message, path=path, line=line_no)
    return frame, ident, box, conf


def parse_detections(path) -> Dict[int, List[DetectionRecord]]:
    """Frame -> detections in file order; frames ascending. An empty file is valid."""
    path = Path(path)
    frames: Dict[int, List[DetectionRecord]] = defaultdict(list)
    for line_no, fields in _lines(path):
        if len(fields) != DETECTION_FIELDS:
            raise DataError(f"expected {DETECTION_FIELDS} fields, got {len(fields)}", path=path, line=line_no)
        frame, ident, box, conf = _parse_row(fields, path, line_no)
        frames[frame].append(DetectionRecord(frame=frame, det_index=len(frames[frame]), box=box,
                                             confidence=conf, id=ident))
    helper.log_json("INFO", "DETECTIONS_PARSED", path=str(path), frames=len(frames),
                    detections=sum(len(v) for v in frames.values()))
    return dict(sorted(frames.items()))


def parse_ground_truth(path) -> Dict[int, List[GroundTruthRecord]]:
    """
    Frame -> identity-labeled boxes. Accepts 9 (MOT17) or 10 field rows; rows
    whose consider flag (column 7) is 0 are dropped.
    """
    path = Path(path)
    frames: Dict[int, List[GroundTruthRecord]] = defaultdict(list)
    dropped = 0
    for line_no, fields in _lines(path):
        if len(fields) not in GT_FIELD_COUNTS:
            raise DataError(f"expected 9 or 10 fields, got {len(fields)}", path=path, line=line_no)
        frame, ident, box, flag = _parse_row(fields, path, line_no)
        if ident < 1:
            raise DataError(f"ground-truth id must be >= 1, got {ident}", path=path, line=line_no)
        if flag == 0:
            dropped += 1
            continue
        if any(r.id == ident for r in frames[frame]):
            raise DataError(f"id {ident} appears twice in frame {frame}", path=path, line=line_no)
        frames[frame].append(GroundTruthRecord(frame=frame, id=ident, box=box, row_index=len(frames[frame])))
    helper.log_json("INFO", "GROUND_TRUTH_PARSED", path=str(path), frames=len(frames),
                    boxes=sum(len(v) for v in frames.values()), dropped=dropped)
    return dict(sorted(frames.items()))


def parse_results(path) -> List[TrackRecord]:
    """Read a result file back into a (frame, id)-sorted track table."""
    path = Path(path)
    table = []
    for line_no, fields in _lines(path):
        if len(fields) != DETECTION_FIELDS:
            raise DataError(f"expected {DETECTION_FIELDS} fields, got {len(fields)}", path=path, line=line_no)
        frame, ident, box, _ = _parse_row(fields, path, line_no)
        table.append(TrackRecord(frame=frame, id=ident, box=box))
    return sorted(table, key=lambda r: (r.frame, r.id))


def flatten_ground_truth(frames: Dict[int, List[GroundTruthRecord]]) -> List[TrackRecord]:
    return sorted((TrackRecord(frame=r.frame, id=r.id, box=r.box) for rows in frames.values() for r in rows),
                  key=lambda r: (r.frame, r.id))


def write_results(table: Iterable[TrackRecord], path) -> Path:
    path = Path(path)
    rows = sorted(table, key=lambda r: (r.frame, r.id))
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for record in rows:
                fh.write(record.to_line() + "\n")
    except OSError as e:
        raise DataError(f"cannot write results: {e}", path=path)
    helper.log_json("INFO", "RESULTS_WRITTEN", path=str(path), records=len(rows))
    return path


def read_frame_size(path) -> Tuple[float, float]:
    """Two-line sidecar: width on the first line, height on the second."""
    path = Path(path)
    values = [fields for _, fields in _lines(path)]
    if len(values) != 2 or any(len(v) != 1 for v in values):
        raise DataError("frame-size sidecar must hold exactly two lines: width, height", path=path)
    try:
        width = InputValidator.validate_positive(values[0][0], "frame width")
        height = InputValidator.validate_positive(values[1][0], "frame height")
    except ValidationError as e:
        raise DataError(e.message, path=path)
    return width, height


def group_by_frame(table: Sequence[TrackRecord]) -> Dict[int, List[TrackRecord]]:
    frames: Dict[int, List[TrackRecord]] = defaultdict(list)
    for record in table:
        frames[record.frame].append(record)
    return dict(sorted(frames.items()))
