"""File formats and run-state persistence.

Detection dumps and ground-truth files are line-delimited JSON: one header
object, then one object per record.  Run state lives in a directory with a
base file, one file per completed round, and a manifest naming the latest
complete round; every file is written atomically (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .boxgeom import BBox, DetBox, DetectionSet, Role
from .clustering import Clustering
from .errors import CorruptState, ParseError, SchemaError
from .metrics import GroundTruthSet, GTBox
from .rerank import LabelSet, PipelineConfig, PipelineState, RoundRecord

FORMAT_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# detection dumps

def save_detections(det_set: DetectionSet, path, model_tag: str = "unknown"):
    lines = [
        _dumps(
            {
                "kind": "detections",
                "format_version": FORMAT_VERSION,
                "feature_dim": det_set.feature_dim,
                "model": model_tag,
                "role": det_set.role.value,
            }
        )
    ]
    for b in det_set:
        lines.append(
            _dumps(
                {
                    "box_id": b.box_id,
                    "image_id": b.image_id,
                    "bbox": b.bbox.as_list(),
                    "confidence": b.confidence,
                    "feature": list(b.feature),
                }
            )
        )
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def _parse_header(path, expected_kind: str) -> dict:
    with open(path) as f:
        first = f.readline()
    if not first.strip():
        raise SchemaError(f"{path}: empty file")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("kind") != expected_kind:
        raise SchemaError(f"{path}: expected a {expected_kind!r} header")
    return header


def load_detections(path) -> DetectionSet:
    header = _parse_header(path, "detections")
    try:
        dim = int(header["feature_dim"])
        role = Role(header["role"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: bad header field: {exc}") from exc

    boxes: List[DetBox] = []
    seen = set()
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if lineno == 1 or not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"unparseable JSON: {exc}") from exc
            try:
                box_id = int(rec["box_id"])
                image_id = str(rec["image_id"])
                bbox = BBox(*[float(v) for v in rec["bbox"]])
                conf = float(rec["confidence"])
                feature = np.asarray(rec["feature"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(lineno, str(exc)) from exc
            if not 0.0 <= conf <= 1.0:
                raise ParseError(lineno, f"confidence {conf} outside [0, 1]")
            if feature.shape != (dim,):
                raise ParseError(lineno, f"feature dim {feature.shape} != ({dim},)")
            if box_id in seen:
                raise ParseError(lineno, f"duplicate box_id {box_id}")
            seen.add(box_id)
            boxes.append(DetBox(box_id, image_id, bbox, conf, feature))
    return DetectionSet(boxes, dim, role)


# --------------------------------------------------------------------------
# ground truth

def save_ground_truth(truth: GroundTruthSet, path):
    lines = [
        _dumps(
            {
                "kind": "ground_truth",
                "format_version": FORMAT_VERSION,
                "images": sorted(truth.by_image),
            }
        )
    ]
    for img in sorted(truth.by_image):
        for g in truth.by_image[img]:
            lines.append(
                _dumps(
                    {
                        "image_id": img,
                        "bbox": g.bbox.as_list(),
                        "ignore": g.ignore,
                        "attrs": g.attrs,
                    }
                )
            )
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def load_ground_truth(path) -> GroundTruthSet:
    header = _parse_header(path, "ground_truth")
    by_image: Dict[str, List[GTBox]] = {str(i): [] for i in header.get("images", [])}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if lineno == 1 or not line.strip():
                continue
            try:
                rec = json.loads(line)
                img = str(rec["image_id"])
                bbox = BBox(*[float(v) for v in rec["bbox"]])
                ignore = bool(rec.get("ignore", False))
                attrs = dict(rec.get("attrs", {}))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(lineno, str(exc)) from exc
            by_image.setdefault(img, []).append(GTBox(bbox, ignore=ignore, attrs=attrs))
    return GroundTruthSet(by_image)


# --------------------------------------------------------------------------
# truth-label sidecar and replay scripts

def save_truth_labels(labels: Dict[int, str], path):
    lines = [_dumps({"kind": "truth_labels", "format_version": FORMAT_VERSION})]
    for box_id in sorted(labels):
        lines.append(_dumps({"box_id": box_id, "truth": labels[box_id]}))
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def load_truth_labels(path) -> Dict[int, str]:
    _parse_header(path, "truth_labels")
    out: Dict[int, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if lineno == 1 or not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[int(rec["box_id"])] = str(rec["truth"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(lineno, str(exc)) from exc
    return out


def load_replay_script(path) -> List[Dict[str, Dict[int, float]]]:
    """A replay script is one JSON document: {"rounds": [{"train": {id: c}, "val": {id: c}}]}."""
    with open(path) as f:
        doc = json.load(f)
    rounds = doc.get("rounds")
    if not isinstance(rounds, list):
        raise SchemaError(f"{path}: replay script needs a 'rounds' list")
    out = []
    for r in rounds:
        out.append(
            {
                split: {int(k): float(v) for k, v in table.items()}
                for split, table in r.items()
            }
        )
    return out


# --------------------------------------------------------------------------
# run state

def _labelset_to_json(ls: LabelSet) -> dict:
    return {
        "positives": sorted(ls.positives),
        "negatives": sorted(ls.negatives),
        "ignored": sorted(ls.ignored),
    }


def _labelset_from_json(obj) -> LabelSet:
    return LabelSet(
        frozenset(obj["positives"]),
        frozenset(obj["negatives"]),
        frozenset(obj["ignored"]),
    )


def _conf_to_json(conf: Dict[int, float]) -> dict:
    return {str(k): conf[k] for k in sorted(conf)}


def _conf_from_json(obj) -> Dict[int, float]:
    return {int(k): float(v) for k, v in obj.items()}


def _clustering_to_json(c: Optional[Clustering]):
    if c is None:
        return None
    return {
        "centroids": [[float(v) for v in row] for row in c.centroids],
        "assignments": {str(k): c.assignments[k] for k in sorted(c.assignments)},
        "k": c.k,
        "inertia": c.inertia,
    }


def _clustering_from_json(obj) -> Optional[Clustering]:
    if obj is None:
        return None
    clustering = Clustering(
        centroids=np.asarray(obj["centroids"], dtype=np.float64),
        assignments={int(k): int(v) for k, v in obj["assignments"].items()},
        k=int(obj["k"]),
        inertia=float(obj["inertia"]),
    )
    if any(not 0 <= ci < clustering.k for ci in clustering.assignments.values()):
        raise CorruptState("cluster assignment outside [0, k)")
    if clustering.inertia < 0:
        raise CorruptState("negative inertia")
    return clustering


def _round_to_json(r: RoundRecord) -> dict:
    return {
        "round_index": r.round_index,
        "promoted": list(r.promoted),
        "model_version": r.model_version,
        "labels": _labelset_to_json(r.labels),
        "train_confidences": _conf_to_json(r.train_confidences),
        "val_confidences": _conf_to_json(r.val_confidences),
        "val_count": r.val_count,
    }


def _round_from_json(obj) -> RoundRecord:
    return RoundRecord(
        round_index=int(obj["round_index"]),
        promoted=list(obj["promoted"]),
        model_version=int(obj["model_version"]),
        labels=_labelset_from_json(obj["labels"]),
        train_confidences=_conf_from_json(obj["train_confidences"]),
        val_confidences=_conf_from_json(obj["val_confidences"]),
        val_count=int(obj["val_count"]),
    )


def state_to_json(state: PipelineState) -> dict:
    return {
        "config": dataclasses.asdict(state.config),
        "clustering": _clustering_to_json(state.clustering),
        "baseline_count": state.baseline_count,
        "initial_train_confidences": _conf_to_json(state.initial_train_confidences),
        "initial_val_confidences": _conf_to_json(state.initial_val_confidences),
        "rounds": [_round_to_json(r) for r in state.rounds],
        "terminated_reason": state.terminated_reason,
        "final_round": state.final_round,
    }


def state_to_bytes(state: PipelineState) -> bytes:
    """Canonical byte serialization, for determinism / conformance checks."""
    return _dumps(state_to_json(state)).encode()


def save_run_state(state: PipelineState, run_dir):
    run_dir = Path(run_dir)
    base_path = run_dir / "base.json"
    if not base_path.exists():
        base = {
            "config": dataclasses.asdict(state.config),
            "clustering": _clustering_to_json(state.clustering),
            "baseline_count": state.baseline_count,
            "initial_train_confidences": _conf_to_json(state.initial_train_confidences),
            "initial_val_confidences": _conf_to_json(state.initial_val_confidences),
        }
        _atomic_write(base_path, _dumps(base))
    for r in state.rounds:
        round_path = run_dir / "rounds" / f"round_{r.round_index:04d}.json"
        if not round_path.exists():
            _atomic_write(round_path, _dumps(_round_to_json(r)))
    manifest = {
        "latest_complete_round": state.rounds[-1].round_index if state.rounds else -1,
        "terminated_reason": state.terminated_reason,
        "final_round": state.final_round,
    }
    _atomic_write(run_dir / "manifest.json", _dumps(manifest))


def _load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise CorruptState(f"missing state file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptState(f"unparseable state file {path}: {exc}") from exc


def load_run_state(run_dir, expected_cfg: Optional[PipelineConfig] = None) -> PipelineState:
    run_dir = Path(run_dir)
    manifest = _load_json(run_dir / "manifest.json")
    base = _load_json(run_dir / "base.json")
    try:
        cfg = PipelineConfig(**base["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptState(f"bad persisted config: {exc}") from exc
    if expected_cfg is not None and dataclasses.asdict(expected_cfg) != dataclasses.asdict(cfg):
        raise CorruptState("persisted config differs from the requested one")

    state = PipelineState(
        config=cfg,
        clustering=_clustering_from_json(base.get("clustering")),
        baseline_count=int(base["baseline_count"]),
        initial_train_confidences=_conf_from_json(base["initial_train_confidences"]),
        initial_val_confidences=_conf_from_json(base["initial_val_confidences"]),
        terminated_reason=manifest.get("terminated_reason"),
        final_round=manifest.get("final_round"),
    )
    latest = int(manifest.get("latest_complete_round", -1))
    for i in range(latest + 1):
        obj = _load_json(run_dir / "rounds" / f"round_{i:04d}.json")
        r = _round_from_json(obj)
        if r.round_index != i:
            raise CorruptState(f"round file {i} carries index {r.round_index}")
        state.rounds.append(r)

    _validate_state(state)
    return state


def _validate_state(state: PipelineState):
    if state.baseline_count < 0:
        raise CorruptState("negative baseline count")
    prev_pos: Optional[frozenset] = None
    promoted_seen = set()
    for r in state.rounds:
        if r.val_count < 0:
            raise CorruptState(f"round {r.round_index}: negative val count")
        if prev_pos is not None and not prev_pos <= r.labels.positives:
            raise CorruptState(f"round {r.round_index}: positive set shrank")
        prev_pos = r.labels.positives
        for p in r.promoted:
            if p in promoted_seen:
                raise CorruptState(f"round {r.round_index}: {p} promoted twice")
            promoted_seen.add(p)
    if state.final_round is not None and not (
        state.rounds and 0 <= state.final_round < len(state.rounds)
    ):
        raise CorruptState("final_round outside recorded rounds")
