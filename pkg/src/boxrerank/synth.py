"""Synthetic cross-domain detection scenarios with known TP/FP ground truth.

Each scenario draws per-class box features from Gaussians and confidences
from scaled Beta distributions.  A fraction of the true-positive boxes (the
"hard" ones, selected along a fixed feature direction) start with confidence
below the output threshold, while false positives start mid-range - the
inverted ordering the suppression pipeline is supposed to fix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .boxgeom import BBox, DetBox, DetectionSet, Role
from .errors import InfeasiblePlacement
from .metrics import GroundTruthSet, GTBox

TP = "TP"
FP = "FP"

PLACEMENT_RETRIES = 200


@dataclass
class ClassSpec:
    name: str
    count: int
    center: np.ndarray         # (d,) feature-cluster center
    stddev: float
    conf_lo: float             # confidence = lo + (hi - lo) * Beta(a, b)
    conf_hi: float
    conf_a: float
    conf_b: float
    size_mean: float = 40.0
    size_jitter: float = 0.25  # lognormal sigma on width/height

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.count < 0 or self.stddev <= 0:
            raise ValueError("count must be >= 0 and stddev > 0")


@dataclass
class ScenarioSpec:
    n_images: int
    tp: ClassSpec
    fps: List[ClassSpec]
    fn_fraction: float = 0.25
    # confidence range for the hard (seed false-negative) tail of TP boxes
    fn_conf: Tuple[float, float, float, float] = (0.105, 0.395, 2.0, 2.0)
    seed_noise_fraction: float = 0.0  # fraction of FP boxes given TP-like confidence
    rng_seed: int = 0
    image_size: float = 1000.0
    train_fraction: float = 0.8
    max_overlap_iou: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.fn_fraction <= 1.0:
            raise ValueError("fn_fraction must be in [0, 1]")
        if self.n_images < 2:
            raise ValueError("need at least 2 images for a train/val split")

    @property
    def feature_dim(self) -> int:
        return len(self.tp.center)


def default_scenario(
    rng_seed: int = 42,
    n_tp: int = 1000,
    n_fp: int = 500,
    separation: float = 6.0,
    fn_fraction: float = 0.25,
    seed_noise_fraction: float = 0.0,
    feature_dim: int = 16,
    n_images: int = 200,
) -> ScenarioSpec:
    """The stock two-class scenario used by the end-to-end tests and the CLI."""
    tp_center = np.zeros(feature_dim)
    fp_center = np.zeros(feature_dim)
    fp_center[0] = separation
    return ScenarioSpec(
        n_images=n_images,
        tp=ClassSpec("pedestrian", n_tp, tp_center, 1.0, 0.9, 1.0, 8.0, 2.0),
        fps=[ClassSpec("distractor", n_fp, fp_center, 1.0, 0.1, 0.65, 2.0, 2.0)],
        fn_fraction=fn_fraction,
        seed_noise_fraction=seed_noise_fraction,
        rng_seed=rng_seed,
    )


def _sample_conf(rng, n, lo, hi, a, b):
    return lo + (hi - lo) * rng.beta(a, b, size=n)


def _place_box(rng, spec: ScenarioSpec, cls: ClassSpec, existing: List[BBox]) -> BBox:
    from .boxgeom import iou

    for _ in range(PLACEMENT_RETRIES):
        w = cls.size_mean * np.exp(cls.size_jitter * rng.standard_normal())
        h = cls.size_mean * np.exp(cls.size_jitter * rng.standard_normal())
        w = min(w, spec.image_size * 0.5)
        h = min(h, spec.image_size * 0.5)
        x = rng.uniform(0.0, spec.image_size - w)
        y = rng.uniform(0.0, spec.image_size - h)
        box = BBox(x, y, x + w, y + h)
        if all(iou(box, other) < spec.max_overlap_iou for other in existing):
            return box
    raise InfeasiblePlacement(
        f"could not place a box after {PLACEMENT_RETRIES} attempts"
    )


def generate(spec: ScenarioSpec):
    """Build (train, val, truth, truth_labels) deterministically from the spec.

    truth is a GroundTruthSet over all images (one GT box per TP detection);
    truth_labels maps every box_id to "TP" or "FP".
    """
    if not spec.fps and spec.tp.count == 0:
        raise ValueError("scenario has no boxes")
    rng = np.random.default_rng(spec.rng_seed)
    d = spec.feature_dim

    # the "hardness" direction selects which TP boxes look unusual; keep it
    # orthogonal to the TP->FP axis so FN boxes do not drift toward FP space
    hard = rng.standard_normal(d)
    if spec.fps:
        axis = spec.fps[0].center - spec.tp.center
        norm = np.linalg.norm(axis)
        if norm > 0:
            hard -= (hard @ axis / norm**2) * axis
    hard /= np.linalg.norm(hard)

    image_ids = [f"img_{i:04d}" for i in range(spec.n_images)]
    placed: Dict[str, List[BBox]] = {img: [] for img in image_ids}

    records = []  # (image_id, bbox, feature, confidence, truth)

    # true positives
    feats = spec.tp.center + spec.tp.stddev * rng.standard_normal((spec.tp.count, d))
    proj = (feats - spec.tp.center) @ hard
    n_fn = int(round(spec.fn_fraction * spec.tp.count))
    hard_idx = set(np.argsort(-proj)[:n_fn].tolist())
    easy_conf = _sample_conf(
        rng, spec.tp.count, spec.tp.conf_lo, spec.tp.conf_hi, spec.tp.conf_a, spec.tp.conf_b
    )
    fn_conf = _sample_conf(rng, spec.tp.count, *spec.fn_conf)
    for i in range(spec.tp.count):
        img = image_ids[rng.integers(spec.n_images)]
        box = _place_box(rng, spec, spec.tp, placed[img])
        placed[img].append(box)
        conf = fn_conf[i] if i in hard_idx else easy_conf[i]
        records.append((img, box, feats[i], float(conf), TP))

    # false positives
    for cls in spec.fps:
        f = cls.center + cls.stddev * rng.standard_normal((cls.count, d))
        conf = _sample_conf(rng, cls.count, cls.conf_lo, cls.conf_hi, cls.conf_a, cls.conf_b)
        n_noisy = int(round(spec.seed_noise_fraction * cls.count))
        noisy_idx = set(rng.choice(cls.count, size=n_noisy, replace=False).tolist()) if n_noisy else set()
        noisy_conf = _sample_conf(
            rng, cls.count, spec.tp.conf_lo, spec.tp.conf_hi, spec.tp.conf_a, spec.tp.conf_b
        )
        for i in range(cls.count):
            img = image_ids[rng.integers(spec.n_images)]
            box = _place_box(rng, spec, cls, placed[img])
            placed[img].append(box)
            c = noisy_conf[i] if i in noisy_idx else conf[i]
            records.append((img, box, f[i], float(np.clip(c, 0.0, 1.0)), FP))

    n_train_images = int(round(spec.train_fraction * spec.n_images))
    train_images = set(image_ids[:n_train_images])

    train_boxes, val_boxes = [], []
    truth_labels: Dict[int, str] = {}
    gt_by_image: Dict[str, List[GTBox]] = {img: [] for img in image_ids}
    for box_id, (img, box, feat, conf, truth) in enumerate(records):
        det = DetBox(box_id, img, box, conf, feat)
        truth_labels[box_id] = truth
        if truth == TP:
            gt_by_image[img].append(GTBox(box, attrs={"height": box.y2 - box.y1}))
        (train_boxes if img in train_images else val_boxes).append(det)

    train = DetectionSet(train_boxes, d, Role.TRAIN)
    val = DetectionSet(val_boxes, d, Role.VALIDATION)
    truth = GroundTruthSet(gt_by_image)

    if spec.fn_fraction > 0 and spec.fps and spec.tp.count > 0:
        assert count_fp_fn_inversions(
            {b.box_id: b.confidence for b in records_boxes(train, val)},
            truth_labels,
            o=0.4,
        ) > 0, "scenario generated no FP-above-FN inversion"
    return train, val, truth, truth_labels


def records_boxes(*sets: DetectionSet):
    for s in sets:
        yield from s


def subset_ground_truth(truth: GroundTruthSet, det_set: DetectionSet) -> GroundTruthSet:
    """Restrict ground truth to the images a detection split was drawn from."""
    images = {b.image_id for b in det_set}
    return GroundTruthSet({img: truth.by_image.get(img, []) for img in images})


def count_fp_fn_inversions(
    confidences: Dict[int, float], truth_labels: Dict[int, str], o: float
) -> int:
    """Number of (FP, TP) pairs where the TP sits below o and the FP above it."""
    fp_confs = np.sort([c for i, c in confidences.items() if truth_labels[i] == FP])
    tp_below = np.sort(
        [c for i, c in confidences.items() if truth_labels[i] == TP and c < o]
    )
    if len(fp_confs) == 0 or len(tp_below) == 0:
        return 0
    # for each FP, count TPs strictly below it
    return int(np.sum(np.searchsorted(tp_below, fp_confs, side="left")))
