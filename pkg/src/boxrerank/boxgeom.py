"""Bounding-box value types and geometric operations: IoU, NMS, box matching.

Boxes are axis-aligned, corner form (x1, y1, x2, y2) with strictly positive
width and height.  All types are plain values; operations are pure functions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np


class Label(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORED = "ignored"
    UNLABELED = "unlabeled"


class Role(enum.Enum):
    TRAIN = "train"
    VALIDATION = "val"


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BBox":
        return cls(x, y, x + w, y + h)

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(eq=False)
class DetBox:
    """One detected box: geometry, confidence, feature vector, label state."""

    box_id: int
    image_id: str
    bbox: BBox
    confidence: float
    feature: np.ndarray
    cluster_id: Optional[int] = None
    label: Label = Label.UNLABELED

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        self.feature = np.asarray(self.feature, dtype=np.float64)

    def with_confidence(self, c: float) -> "DetBox":
        return replace(self, confidence=float(c))


class ScoredBox(NamedTuple):
    """A re-predicted box: geometry + confidence only, no identity."""

    image_id: str
    bbox: BBox
    confidence: float


@dataclass
class DetectionSet:
    """An ordered collection of DetBox sharing one feature dimension."""

    boxes: List[DetBox]
    feature_dim: int
    role: Role

    _by_id: Dict[int, DetBox] = field(init=False, repr=False)

    def __post_init__(self):
        seen = set()
        for b in self.boxes:
            if b.box_id in seen:
                raise ValueError(f"duplicate box_id {b.box_id}")
            seen.add(b.box_id)
            if b.feature.shape != (self.feature_dim,):
                raise ValueError(
                    f"box {b.box_id}: feature dim {b.feature.shape} != ({self.feature_dim},)"
                )
        self._by_id = {b.box_id: b for b in self.boxes}

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def get(self, box_id: int) -> DetBox:
        return self._by_id[box_id]

    @property
    def box_ids(self) -> List[int]:
        return [b.box_id for b in self.boxes]

    def features(self) -> np.ndarray:
        if not self.boxes:
            return np.zeros((0, self.feature_dim))
        return np.stack([b.feature for b in self.boxes])

    def confidences(self) -> np.ndarray:
        return np.array([b.confidence for b in self.boxes], dtype=np.float64)

    def by_image(self) -> Dict[str, List[DetBox]]:
        groups: Dict[str, List[DetBox]] = {}
        for b in self.boxes:
            groups.setdefault(b.image_id, []).append(b)
        return groups


def nms(boxes: Sequence[DetBox], iou_threshold: float) -> List[DetBox]:
    """Greedy per-image NMS, confidence descending (ties by box_id ascending).

    Kept boxes are the input objects themselves, in order of selection.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside (0, 1]")
    order = sorted(boxes, key=lambda b: (-b.confidence, b.box_id))
    kept: List[DetBox] = []
    kept_by_image: Dict[str, List[DetBox]] = {}
    for b in order:
        same = kept_by_image.setdefault(b.image_id, [])
        if all(iou(b.bbox, k.bbox) < iou_threshold for k in same):
            kept.append(b)
            same.append(b)
    return kept


def match_boxes(
    initial: DetectionSet,
    repredicted: Sequence[ScoredBox],
    iou_min: float = 0.3,
) -> Dict[int, float]:
    """Match each initial box to its max-IoU re-predicted box on the same image.

    Returns box_id -> updated confidence: the matched candidate's confidence
    when the best IoU is >= iou_min, else 0.0.  Matching is many-to-one and
    never touches geometry.  Ties on IoU go to the lowest candidate index.
    """
    if not 0.0 < iou_min < 1.0:
        raise ValueError(f"iou_min {iou_min} outside (0, 1)")
    cand_by_image: Dict[str, List[Tuple[int, ScoredBox]]] = {}
    for idx, sb in enumerate(repredicted):
        if not 0.0 <= sb.confidence <= 1.0:
            raise ValueError(f"repredicted confidence {sb.confidence} outside [0, 1]")
        cand_by_image.setdefault(sb.image_id, []).append((idx, sb))

    updated: Dict[int, float] = {}
    for box in initial:
        cands = cand_by_image.get(box.image_id, [])
        best_iou, best_conf = 0.0, 0.0
        for _, sb in cands:  # list order == original index order, so first win = lowest index
            v = iou(box.bbox, sb.bbox)
            if v > best_iou:
                best_iou, best_conf = v, sb.confidence
        updated[box.box_id] = float(best_conf) if best_iou >= iou_min else 0.0
    return updated


def apply_confidences(det_set: DetectionSet, conf_map: Dict[int, float]) -> List[DetBox]:
    """Copies of the set's boxes carrying updated confidences (geometry intact)."""
    return [b.with_confidence(conf_map[b.box_id]) for b in det_set]
