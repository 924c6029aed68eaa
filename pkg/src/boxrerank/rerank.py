"""The re-ranking engine: seed selection, promotion, stopping, and the driver.

The driver clusters the training boxes once, selects seed-positive clusters,
then alternates scorer training with promotion of the highest-scoring
negative clusters back into the positive set.  It stops when the number of
validation boxes above the output threshold (after NMS) reaches the count the
source confidences produced - the box-number-alignment rule - or when
negatives run out or the round budget is spent.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

from .boxgeom import DetectionSet, apply_confidences, match_boxes, nms
from .clustering import Clustering, ClusterStats, cluster_boxes, cluster_stats
from .errors import DegenerateBatch, NegativesExhausted, NoSeedClusters
from .oracle import OracleConfig, ScorerOracle, TrainingBatch

TERMINATED_BNA = "BNA"
TERMINATED_MAX_ROUNDS = "MaxRounds"
TERMINATED_NEGATIVES_EXHAUSTED = "NegativesExhausted"


@dataclass(frozen=True)
class LabelSet:
    """The disjoint partition of training box ids: positive / negative / ignored."""

    positives: FrozenSet[int]
    negatives: FrozenSet[int]
    ignored: FrozenSet[int]

    def __post_init__(self):
        if (
            self.positives & self.negatives
            or self.positives & self.ignored
            or self.negatives & self.ignored
        ):
            raise ValueError("label partitions overlap")

    @property
    def all_ids(self) -> FrozenSet[int]:
        return self.positives | self.negatives | self.ignored


@dataclass
class PipelineConfig:
    h: float = 0.95                # seed threshold
    o: float = 0.4                 # output / counting threshold
    iou_min: float = 0.3           # re-prediction match threshold
    k: int = 100                   # cluster count
    conf_floor: float = 0.1        # clustering eligibility floor
    top_k_clusters: int = 3        # promotions per round
    max_rounds: int = 30
    nms_iou: float = 0.5
    rng_seed: int = 0
    normalize_features: bool = False
    bna_enabled: bool = True       # disable only for diagnostics/ablations
    granularity: str = "cluster"   # "cluster" | "instance" (ablation mode)
    final_round_policy: str = "closest"  # "closest" | "last" on non-BNA stop

    def __post_init__(self):
        if not 0.0 < self.o < self.h < 1.0:
            raise ValueError(f"need 0 < o ({self.o}) < h ({self.h}) < 1")
        if self.top_k_clusters < 1 or self.max_rounds < 1 or self.k < 1:
            raise ValueError("top_k_clusters, max_rounds and k must be >= 1")
        if self.granularity not in ("cluster", "instance"):
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.final_round_policy not in ("closest", "last"):
            raise ValueError(f"unknown final_round_policy {self.final_round_policy!r}")


@dataclass
class RoundRecord:
    round_index: int
    promoted: List[int]            # cluster indices (or box ids in instance mode)
    model_version: int
    labels: LabelSet
    train_confidences: Dict[int, float]
    val_confidences: Dict[int, float]
    val_count: int


@dataclass
class PipelineState:
    config: PipelineConfig
    clustering: Optional[Clustering]
    baseline_count: int            # source-model box count on validation
    initial_train_confidences: Dict[int, float]
    initial_val_confidences: Dict[int, float]
    rounds: List[RoundRecord] = field(default_factory=list)
    terminated_reason: Optional[str] = None
    final_round: Optional[int] = None

    @property
    def final(self) -> RoundRecord:
        return self.rounds[self.final_round]

    @property
    def promotion_log(self) -> List[List[int]]:
        return [r.promoted for r in self.rounds if r.promoted]


def select_seeds(
    stats: List[ClusterStats], boxes: DetectionSet, h: float
) -> LabelSet:
    """Initial labels: members of clusters with mean confidence > h are
    positive, every other box negative, cluster outliers ignored."""
    if not stats or not 0.0 < h < 1.0:
        raise ValueError("need non-empty stats and h in (0, 1)")
    positives, ignored = set(), set()
    seeded = False
    for s in stats:
        ignored.update(s.outlier_box_ids)
        if s.member_count > 0 and s.mean_confidence > h:
            seeded = True
            positives.update(set(s.member_box_ids) - set(s.outlier_box_ids))
    if not seeded:
        raise NoSeedClusters(f"no cluster mean exceeds h={h}")
    negatives = {b.box_id for b in boxes} - positives - ignored
    return LabelSet(frozenset(positives), frozenset(negatives), frozenset(ignored))


def select_seeds_instance(boxes: DetectionSet, h: float) -> LabelSet:
    """Ablation mode: individual boxes with confidence > h become seeds."""
    positives = frozenset(b.box_id for b in boxes if b.confidence > h)
    if not positives:
        raise NoSeedClusters(f"no box confidence exceeds h={h}")
    negatives = frozenset(b.box_id for b in boxes) - positives
    return LabelSet(positives, negatives, frozenset())


def count_from_confidences(
    det_set: DetectionSet, conf_map: Dict[int, float], o: float, nms_iou: float
) -> int:
    """Box count above threshold o after per-image NMS on updated confidences."""
    kept = nms(apply_confidences(det_set, conf_map), nms_iou)
    return sum(1 for b in kept if b.confidence > o)


def count_boxes(
    oracle: ScorerOracle,
    val: DetectionSet,
    o: float,
    nms_iou: float,
    iou_min: float = 0.3,
) -> int:
    """Rescore the validation set, match back to its initial boxes, NMS, count > o."""
    if not 0.0 < o < 1.0:
        raise ValueError(f"o {o} outside (0, 1)")
    conf_map = match_boxes(val, oracle.rescore(val), iou_min)
    return count_from_confidences(val, conf_map, o, nms_iou)


def promote_clusters(
    labels: LabelSet, stats: List[ClusterStats], top_k: int
) -> Tuple[LabelSet, List[int]]:
    """Move the top_k negative clusters (by updated mean confidence) into P.

    A cluster is promotable when it is non-empty and all its non-ignored
    members are currently negative.  Ties rank by lower cluster index.
    """
    candidates = []
    for s in stats:
        active = set(s.member_box_ids) - set(s.outlier_box_ids)
        if active and active <= labels.negatives:
            candidates.append(s)
    if not candidates:
        raise NegativesExhausted("no fully-negative cluster remains")
    candidates.sort(key=lambda s: (-s.mean_confidence, s.index))
    chosen = candidates[: min(top_k, len(candidates))]
    moved = set()
    for s in chosen:
        moved.update(set(s.member_box_ids) - set(s.outlier_box_ids))
    return (
        LabelSet(labels.positives | moved, labels.negatives - moved, labels.ignored),
        [s.index for s in chosen],
    )


def promote_instances(
    labels: LabelSet, conf_map: Dict[int, float], top_k: int
) -> Tuple[LabelSet, List[int]]:
    """Ablation mode: move the top_k highest-scoring negative boxes into P."""
    if not labels.negatives:
        raise NegativesExhausted("no negative box remains")
    ranked = sorted(labels.negatives, key=lambda i: (-conf_map[i], i))
    moved = set(ranked[: min(top_k, len(ranked))])
    return (
        LabelSet(labels.positives | moved, labels.negatives - moved, labels.ignored),
        sorted(moved),
    )


def _log(msg: str):
    print(msg, file=sys.stderr)


def run_pipeline(
    train: DetectionSet,
    val: DetectionSet,
    oracle: ScorerOracle,
    cfg: PipelineConfig,
    oracle_cfg: Optional[OracleConfig] = None,
    run_dir=None,
    resume: bool = False,
) -> PipelineState:
    """Run the full suppression loop and return the final state.

    With run_dir set, state is persisted after every round; resume=True picks
    an interrupted run back up from the last complete round (the oracle must
    support restore, e.g. ReplayScorer / a replay bridge).
    """
    from . import dataio  # local import: dataio serializes these types

    oracle_cfg = oracle_cfg or OracleConfig(rng_seed=cfg.rng_seed)

    if resume:
        if run_dir is None:
            raise ValueError("resume requires run_dir")
        state = dataio.load_run_state(run_dir, cfg)
        if state.terminated_reason is not None:
            return state
        labels = state.rounds[-1].labels
        conf_train = state.rounds[-1].train_confidences
        oracle.restore(state.rounds[-1].model_version)
        start_round = state.rounds[-1].round_index + 1
        clustering = state.clustering
    else:
        if cfg.granularity == "cluster":
            clustering = cluster_boxes(
                train, cfg.k, cfg.conf_floor, cfg.rng_seed, cfg.normalize_features
            )
            labels = select_seeds(cluster_stats(clustering, train), train, cfg.h)
        else:
            clustering = None
            labels = select_seeds_instance(train, cfg.h)

        init_train = {b.box_id: b.confidence for b in train}
        init_val = {b.box_id: b.confidence for b in val}
        baseline = count_from_confidences(val, init_val, cfg.o, cfg.nms_iou)
        state = PipelineState(
            config=cfg,
            clustering=clustering,
            baseline_count=baseline,
            initial_train_confidences=init_train,
            initial_val_confidences=init_val,
        )
        conf_train = init_train
        start_round = 0
        if run_dir is not None:
            dataio.save_run_state(state, run_dir)

    for i in range(start_round, cfg.max_rounds + 1):
        if i == 0:
            promoted: List[int] = []
        else:
            try:
                if cfg.granularity == "cluster":
                    stats_i = cluster_stats(clustering, train, conf_override=conf_train)
                    labels, promoted = promote_clusters(labels, stats_i, cfg.top_k_clusters)
                else:
                    labels, promoted = promote_instances(labels, conf_train, cfg.top_k_clusters)
            except NegativesExhausted:
                _finalize(state, TERMINATED_NEGATIVES_EXHAUSTED, cfg)
                break

        batch = TrainingBatch.from_labelset(train, labels.positives, labels.negatives)
        try:
            version = oracle.train(batch, oracle_cfg)
        except DegenerateBatch:
            # promotion consumed the last usable negatives; keep the last round
            _finalize(state, TERMINATED_NEGATIVES_EXHAUSTED, cfg)
            break
        conf_train = match_boxes(train, oracle.rescore(train), cfg.iou_min)
        conf_val = match_boxes(val, oracle.rescore(val), cfg.iou_min)
        val_count = count_from_confidences(val, conf_val, cfg.o, cfg.nms_iou)

        state.rounds.append(
            RoundRecord(
                round_index=i,
                promoted=promoted,
                model_version=version,
                labels=labels,
                train_confidences=conf_train,
                val_confidences=conf_val,
                val_count=val_count,
            )
        )
        _log(
            f"round {i}: promoted={promoted} val_count={val_count} "
            f"baseline={state.baseline_count}"
        )
        if run_dir is not None:
            dataio.save_run_state(state, run_dir)

        if cfg.bna_enabled and val_count >= state.baseline_count:
            state.terminated_reason = TERMINATED_BNA
            state.final_round = len(state.rounds) - 1
            break
    else:
        _finalize(state, TERMINATED_MAX_ROUNDS, cfg)

    if run_dir is not None:
        dataio.save_run_state(state, run_dir)
    return state


def _finalize(state: PipelineState, reason: str, cfg: PipelineConfig):
    if not state.rounds:
        raise NegativesExhausted("no round completed before negatives ran out")
    state.terminated_reason = reason
    if cfg.final_round_policy == "closest":
        best = max(range(len(state.rounds )), key=lambda r: (state.rounds[r].val_count, -r))
        state.final_round = best
    else:
        state.final_round = len(state.rounds) - 1
