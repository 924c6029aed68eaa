"""Detector-agnostic unsupervised false-positive suppression toolkit."""

from .boxgeom import (
    BBox,
    DetBox,
    DetectionSet,
    Label,
    Role,
    ScoredBox,
    iou,
    match_boxes,
    nms,
)
from .clustering import Clustering, ClusterStats, cluster_boxes, cluster_stats, flag_outliers
from .metrics import EvalReport, GroundTruthSet, GTBox, evaluate
from .oracle import (
    BridgeScorer,
    LinearScorer,
    OracleConfig,
    ReplayScorer,
    ScorerOracle,
    TrainingBatch,
)
from .rerank import (
    LabelSet,
    PipelineConfig,
    PipelineState,
    count_boxes,
    promote_clusters,
    run_pipeline,
    select_seeds,
)
from .synth import ScenarioSpec, ClassSpec, default_scenario, generate

__version__ = "0.1.0"
