"""Detection evaluation: FPPI / miss-rate curve, log-average MR, and AP.

Evaluation is strictly offline - the suppression pipeline never sees ground
truth.  Matching is the standard greedy protocol: detections in descending
confidence claim at most one ground-truth box each at IoU >= the evaluation
threshold; detections that only overlap ignored ground truth are neither
true nor false positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .boxgeom import BBox, DetectionSet, iou
from .errors import EmptyGroundTruth

MISS_RATE_FLOOR = 1e-6
FPPI_SAMPLE_COUNT = 9  # log-spaced over [1e-2, 1e0]


@dataclass
class GTBox:
    bbox: BBox
    ignore: bool = False
    attrs: Dict[str, float] = field(default_factory=dict)


@dataclass
class GroundTruthSet:
    by_image: Dict[str, List[GTBox]]

    def n_images(self) -> int:
        return len(self.by_image)

    def n_active(self) -> int:
        return sum(1 for boxes in self.by_image.values() for g in boxes if not g.ignore)

    def filtered(self, predicate: Callable[[GTBox], bool]) -> "GroundTruthSet":
        """Copy with GT boxes failing the predicate marked ignored."""
        out: Dict[str, List[GTBox]] = {}
        for img, boxes in self.by_image.items():
            out[img] = [
                GTBox(g.bbox, ignore=g.ignore or not predicate(g), attrs=dict(g.attrs))
                for g in boxes
            ]
        return GroundTruthSet(out)


@dataclass
class EvalReport:
    log_avg_mr: float
    ap: float
    curve: List[Tuple[float, float]]   # (fppi, miss_rate), confidence descending
    n_gt: int
    n_matched: int
    n_unmatched: int

    def as_dict(self) -> dict:
        return {
            "log_avg_mr": self.log_avg_mr,
            "ap": self.ap,
            "n_gt": self.n_gt,
            "n_matched": self.n_matched,
            "n_unmatched": self.n_unmatched,
            "curve": [[f, m] for f, m in self.curve],
        }


def _match_detections(dets: DetectionSet, gt: GroundTruthSet, iou_eval: float):
    """Per-detection outcomes in confidence-descending order.

    Returns (confidences, is_tp, is_fp) arrays; detections matched to ignored
    ground truth contribute to neither.
    """
    order = sorted(dets, key=lambda b: (-b.confidence, b.box_id))
    taken: Dict[str, List[bool]] = {
        img: [False] * len(boxes) for img, boxes in gt.by_image.items()
    }
    confs, is_tp, is_fp = [], [], []
    for det in order:
        gt_boxes = gt.by_image.get(det.image_id, [])
        best_j, best_iou = -1, 0.0
        best_ign_iou = 0.0
        for j, g in enumerate(gt_boxes):
            v = iou(det.bbox, g.bbox)
            if v < iou_eval:
                continue
            if g.ignore:
                best_ign_iou = max(best_ign_iou, v)
            elif not taken[det.image_id][j] and v > best_iou:
                best_j, best_iou = j, v
        confs.append(det.confidence)
        if best_j >= 0:
            taken[det.image_id][best_j] = True
            is_tp.append(True)
            is_fp.append(False)
        elif best_ign_iou >= iou_eval:
            is_tp.append(False)
            is_fp.append(False)
        else:
            is_tp.append(False)
            is_fp.append(True)
    return np.array(confs), np.array(is_tp, bool), np.array(is_fp, bool)


def log_average_miss_rate(curve: List[Tuple[float, float]]) -> float:
    """Geometric mean of miss rates at 9 log-spaced FPPI points in [1e-2, 1].

    At each sample point the lowest miss rate achieved at FPPI <= the point is
    used; miss rates are floored at 1e-6 before taking logs.  The implicit
    operating point "predict nothing" (FPPI 0, miss rate 1) always exists.
    """
    refs = np.logspace(-2.0, 0.0, FPPI_SAMPLE_COUNT)
    samples = []
    for ref in refs:
        best = 1.0
        for fppi, mr in curve:
            if fppi <= ref and mr < best:
                best = mr
        samples.append(max(best, MISS_RATE_FLOOR))
    return float(np.exp(np.mean(np.log(samples))))


def average_precision(tp_cum: np.ndarray, fp_cum: np.ndarray, n_gt: int) -> float:
    """Area under the precision-recall curve with the precision envelope."""
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    # envelope: precision at recall r is the max precision at any recall >= r
    prec_env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, prec_env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def evaluate(
    dets: DetectionSet,
    gt: GroundTruthSet,
    iou_eval: float = 0.5,
    gt_filter: Optional[Callable[[GTBox], bool]] = None,
) -> EvalReport:
    """Full evaluation of a scored detection set against ground truth."""
    if not 0.0 < iou_eval < 1.0:
        raise ValueError(f"iou_eval {iou_eval} outside (0, 1)")
    if gt_filter is not None:
        gt = gt.filtered(gt_filter)
    n_gt = gt.n_active()
    if n_gt == 0:
        raise EmptyGroundTruth("ground truth has no non-ignored boxes")
    n_images = max(gt.n_images(), 1)

    confs, is_tp, is_fp = _match_detections(dets, gt, iou_eval)
    tp_cum = np.cumsum(is_tp)
    fp_cum = np.cumsum(is_fp)

    # one curve point per distinct confidence (threshold = that confidence,
    # detections with conf >= threshold included)
    curve: List[Tuple[float, float]] = []
    for i in range(len(confs)):
        if i + 1 < len(confs) and confs[i + 1] == confs[i]:
            continue
        fppi = fp_cum[i] / n_images
        miss = 1.0 - tp_cum[i] / n_gt
        curve.append((float(fppi), float(miss)))

    counted = is_tp | is_fp
    ap = (
        average_precision(tp_cum[counted], fp_cum[counted], n_gt)
        if counted.any()
        else 0.0
    )
    return EvalReport(
        log_avg_mr=log_average_miss_rate(curve),
        ap=ap,
        curve=curve,
        n_gt=n_gt,
        n_matched=int(tp_cum[-1]) if len(confs) else 0,
        n_unmatched=n_gt - (int(tp_cum[-1]) if len(confs) else 0),
    )
