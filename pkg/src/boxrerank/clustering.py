"""Feature clustering of detected boxes and per-cluster statistics.

Boxes above a confidence floor are packed into k clusters by Lloyd's k-means
with k-means++ seeding.  Clustering runs once per pipeline; assignments are
frozen afterwards.  Per-cluster outliers (far from the centroid) are flagged
so they can be ignored during scorer training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

import numpy as np

from .boxgeom import DetectionSet
from .errors import FewerBoxesThanClusters

MAX_LLOYD_ITERS = 300

# Outliers are only meaningful with a few members to estimate spread from.
MIN_CLUSTER_SIZE_FOR_OUTLIERS = 4
OUTLIER_STDDEV_FACTOR = 2.0


@dataclass
class Clustering:
    centroids: np.ndarray            # (k, d)
    assignments: Dict[int, int]      # box_id -> cluster index
    k: int
    inertia: float

    def members(self) -> Dict[int, List[int]]:
        """cluster index -> member box_ids, preserving assignment insertion order."""
        out: Dict[int, List[int]] = {i: [] for i in range(self.k)}
        for box_id, ci in self.assignments.items():
            out[ci].append(box_id)
        return out


@dataclass
class ClusterStats:
    index: int
    member_count: int
    mean_confidence: float
    member_box_ids: List[int]
    outlier_box_ids: List[int] = field(default_factory=list)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    centroids[0] = X[rng.integers(n)]
    closest = np.sum((X - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[i:] = X[rng.integers(n, size=k - i)]
            break
        probs = closest / total
        centroids[i] = X[rng.choice(n, p=probs)]
        closest = np.minimum(closest, np.sum((X - centroids[i]) ** 2, axis=1))
    return centroids


def _sq_dists(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared euclidean distances
    return (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )


def cluster_boxes(
    boxes: DetectionSet,
    k: int,
    conf_floor: float,
    rng_seed: int,
    normalize: bool = False,
) -> Clustering:
    """Cluster the features of boxes with confidence > conf_floor into k groups.

    Lloyd iterations run to an assignment fixpoint (max 300); empty clusters
    are re-seeded with the point farthest from its current centroid.
    Deterministic given rng_seed.
    """
    eligible = [b for b in boxes if b.confidence > conf_floor]
    if len(eligible) < k:
        raise FewerBoxesThanClusters(
            f"{len(eligible)} boxes above floor {conf_floor}, need at least {k}"
        )
    X = np.stack([b.feature for b in eligible])
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.where(norms > 0, norms, 1.0)

    rng = np.random.default_rng(rng_seed)
    centroids = _kmeans_pp_init(X, k, rng)

    labels = np.argmin(_sq_dists(X, centroids), axis=1)
    prev_inertia = np.inf
    for _ in range(MAX_LLOYD_ITERS):
        # update step
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = X[mask].mean(axis=0)
        # re-seed empty clusters with the globally worst-fit point
        d2 = _sq_dists(X, centroids)
        assigned_d2 = d2[np.arange(len(X)), labels]
        for j in range(k):
            if not (labels == j).any():
                far = int(np.argmax(assigned_d2))
                centroids[j] = X[far]
                d2 = _sq_dists(X, centroids)
                labels_tmp = labels.copy()
                labels_tmp[far] = j
                assigned_d2 = d2[np.arange(len(X)), labels_tmp]

        new_labels = np.argmin(_sq_dists(X, centroids), axis=1)
        inertia = float(
            np.sum(np.sum((X - centroids[new_labels]) ** 2, axis=1))
        )
        assert inertia <= prev_inertia * (1 + 1e-9) + 1e-12, "k-means inertia increased"
        prev_inertia = inertia
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels

    inertia = float(np.sum(np.sum((X - centroids[labels]) ** 2, axis=1)))
    assignments = {b.box_id: int(c) for b, c in zip(eligible, labels)}
    return Clustering(centroids=centroids, assignments=assignments, k=k, inertia=inertia)


def flag_outliers(clustering: Clustering, boxes: DetectionSet) -> Set[int]:
    """Box ids whose feature distance to their centroid exceeds mean + 2*stddev.

    Only clusters of size >= 4 produce outliers; the threshold is strict, so
    zero-variance clusters never flag anything.
    """
    flagged: Set[int] = set()
    for ci, member_ids in clustering.members().items():
        if len(member_ids) < MIN_CLUSTER_SIZE_FOR_OUTLIERS:
            continue
        feats = np.stack([boxes.get(i).feature for i in member_ids])
        dists = np.linalg.norm(feats - clustering.centroids[ci], axis=1)
        threshold = dists.mean() + OUTLIER_STDDEV_FACTOR * dists.std()
        for box_id, d in zip(member_ids, dists):
            if d > threshold:
                flagged.add(box_id)
    return flagged


def cluster_stats(
    clustering: Clustering,
    boxes: DetectionSet,
    conf_override: Optional[Dict[int, float]] = None,
) -> List[ClusterStats]:
    """Per-cluster member lists, mean confidence, and outliers.

    conf_override substitutes updated confidences (e.g. after re-prediction)
    for the mean; outlier flags always come from feature geometry alone.
    The mean includes outlier members.  Empty clusters get member_count 0.
    """
    outliers = flag_outliers(clustering, boxes)
    stats = []
    for ci, member_ids in clustering.members().items():
        if member_ids:
            confs = [
                conf_override[i] if conf_override is not None else boxes.get(i).confidence
                for i in member_ids
            ]
            mean_conf = float(np.mean(confs))
        else:
            mean_conf = 0.0
        stats.append(
            ClusterStats(
                index=ci,
                member_count=len(member_ids),
                mean_confidence=mean_conf,
                member_box_ids=list(member_ids),
                outlier_box_ids=[i for i in member_ids if i in outliers],
            )
        )
    return stats
