"""Scorer oracles: the train/rescore contract plus built-in implementations.

An oracle abstracts the fine-tune / re-predict cycle of the upstream
detector.  Version 0 (untrained) is always the identity rescore: boxes
come back with their source confidences.  Each train call produces a new
monotonically increasing version token.

Built-ins:
  LinearScorer  - logistic model over box features, trained from scratch
                  each round by full-batch gradient descent.
  ReplayScorer  - returns pre-recorded score tables, for deterministic tests.
  BridgeScorer  - drives an external process over a line-delimited JSON
                  protocol (see the detector-bridge package).
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .boxgeom import BBox, DetectionSet, ScoredBox
from .errors import BridgeProtocolError, DegenerateBatch

Reprediction = List[ScoredBox]

GD_CHUNK = 256  # step budget scales as epochs * ceil(N / GD_CHUNK)
MAX_LR_REDUCTIONS = 10


@dataclass
class OracleConfig:
    loss_weight: float = 1.0       # localization-term weight, bridge pass-through only
    epochs_per_round: int = 5
    learning_rate: float = 2.0
    l2_reg: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs_per_round < 1:
            raise ValueError("epochs_per_round must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_reg < 0 or self.loss_weight < 0:
            raise ValueError("l2_reg and loss_weight must be >= 0")

    def as_dict(self) -> dict:
        return {
            "loss_weight": self.loss_weight,
            "epochs_per_round": self.epochs_per_round,
            "learning_rate": self.learning_rate,
            "l2_reg": self.l2_reg,
            "rng_seed": self.rng_seed,
        }


@dataclass
class TrainingBatch:
    """Binary-labeled feature rows; ignored boxes must already be excluded."""

    box_ids: List[int]
    features: np.ndarray   # (n, d)
    labels: np.ndarray     # (n,) in {0, 1}

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if not np.all(np.isin(self.labels, (0.0, 1.0))):
            raise ValueError("labels must be binary")

    @classmethod
    def from_labelset(cls, det_set: DetectionSet, positives, negatives) -> "TrainingBatch":
        ids, feats, labels = [], [], []
        for b in det_set:
            if b.box_id in positives:
                y = 1.0
            elif b.box_id in negatives:
                y = 0.0
            else:
                continue
            ids.append(b.box_id)
            feats.append(b.feature)
            labels.append(y)
        return cls(ids, np.stack(feats) if feats else np.zeros((0, det_set.feature_dim)), labels)


class ScorerOracle:
    """Contract: train(batch, config) -> version token; rescore(set) -> boxes."""

    def __init__(self):
        self._version = 0

    @property
    def version(self) -> int:
        return self._version

    def train(self, batch: TrainingBatch, config: OracleConfig) -> int:
        raise NotImplementedError

    def rescore(self, det_set: DetectionSet) -> Reprediction:
        raise NotImplementedError

    def restore(self, version: int) -> None:
        """Fast-forward to a persisted version (resume support)."""
        raise NotImplementedError(f"{type(self).__name__} cannot restore a version")

    @staticmethod
    def _identity(det_set: DetectionSet) -> Reprediction:
        return [ScoredBox(b.image_id, b.bbox, b.confidence) for b in det_set]


def logistic_loss_grad(w, b, X, y, sample_weights, l2_reg):
    """Weighted logistic loss with L2 penalty on w, and its gradients."""
    z = X @ w + b
    # stable log(1 + exp(-|z|)) formulation
    log1pexp = np.logaddexp(0.0, -np.abs(z))
    nll = np.where(y == 1.0, np.where(z >= 0, log1pexp, -z + log1pexp),
                   np.where(z >= 0, z + log1pexp, log1pexp))
    total_w = sample_weights.sum()
    loss = float(np.sum(sample_weights * nll) / total_w + 0.5 * l2_reg * np.dot(w, w))
    p = 1.0 / (1.0 + np.exp(-z))
    resid = sample_weights * (p - y) / total_w
    grad_w = X.T @ resid + l2_reg * w
    grad_b = float(np.sum(resid))
    return loss, grad_w, grad_b


class LinearScorer(ScorerOracle):
    """Logistic model sigma(w.f + b), re-fit from zero weights every round."""

    def __init__(self, rng_seed: int = 0):
        super().__init__()
        self.rng_seed = rng_seed
        self._w: Optional[np.ndarray] = None
        self._b = 0.0

    def train(self, batch: TrainingBatch, config: OracleConfig) -> int:
        n_pos = int(np.sum(batch.labels == 1.0))
        n_neg = int(np.sum(batch.labels == 0.0))
        if n_pos == 0 or n_neg == 0:
            raise DegenerateBatch(f"batch has {n_pos} positives, {n_neg} negatives")
        X, y = batch.features, batch.labels
        n = len(y)
        # inverse-frequency class weights
        sw = np.where(y == 1.0, n / (2.0 * n_pos), n / (2.0 * n_neg))

        w = np.zeros(X.shape[1])
        b = 0.0
        lr = config.learning_rate
        steps = config.epochs_per_round * math.ceil(n / GD_CHUNK)
        loss, gw, gb = logistic_loss_grad(w, b, X, y, sw, config.l2_reg)
        reductions = 0
        for _ in range(steps):
            w_new = w - lr * gw
            b_new = b - lr * gb
            new_loss, gw_new, gb_new = logistic_loss_grad(w_new, b_new, X, y, sw, config.l2_reg)
            while new_loss > loss and reductions < MAX_LR_REDUCTIONS:
                lr *= 0.5
                reductions += 1
                w_new = w - lr * gw
                b_new = b - lr * gb
                new_loss, gw_new, gb_new = logistic_loss_grad(w_new, b_new, X, y, sw, config.l2_reg)
            if new_loss > loss:
                break  # step size exhausted; keep the best point reached
            w, b, loss, gw, gb = w_new, b_new, new_loss, gw_new, gb_new
        self._w, self._b = w, b
        self._version += 1
        return self._version

    def scores(self, features: np.ndarray) -> np.ndarray:
        z = features @ self._w + self._b
        return 1.0 / (1.0 + np.exp(-z))

    def rescore(self, det_set: DetectionSet) -> Reprediction:
        if self._version == 0:
            return self._identity(det_set)
        s = self.scores(det_set.features())
        return [ScoredBox(b.image_id, b.bbox, float(c)) for b, c in zip(det_set, s)]


class ReplayScorer(ScorerOracle):
    """Replays recorded per-round score tables; train is a round-advance no-op.

    tables[r-1] backs version r and maps role value ("train" / "val") to
    {box_id: confidence}.  Version 0 is the identity rescore.
    """

    def __init__(self, tables: Sequence[Dict[str, Dict[int, float]]]):
        super().__init__()
        self.tables = [
            {split: {int(k): float(v) for k, v in tab.items()} for split, tab in round_tab.items()}
            for round_tab in tables
        ]

    def train(self, batch: TrainingBatch, config: OracleConfig) -> int:
        if self._version >= len(self.tables):
            raise IndexError(f"replay script exhausted after {len(self.tables)} rounds")
        self._version += 1
        return self._version

    def restore(self, version: int) -> None:
        if not 0 <= version <= len(self.tables):
            raise ValueError(f"version {version} outside replay script")
        self._version = version

    def rescore(self, det_set: DetectionSet) -> Reprediction:
        if self._version == 0:
            return self._identity(det_set)
        table = self.tables[self._version - 1][det_set.role.value]
        return [ScoredBox(b.image_id, b.bbox, table[b.box_id]) for b in det_set]


class BridgeScorer(ScorerOracle):
    """Drives an external scorer process over line-delimited JSON on stdio."""

    def __init__(self, command: Sequence[str]):
        super().__init__()
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def _call(self, message: dict) -> dict:
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, ValueError) as exc:
            raise BridgeProtocolError(f"bridge process I/O failed: {exc}") from exc
        if not line:
            raise BridgeProtocolError("bridge process closed its output stream")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"unparseable bridge reply: {line!r}") from exc
        if not isinstance(reply, dict) or "ok" not in reply:
            raise BridgeProtocolError(f"malformed bridge reply: {reply!r}")
        if not reply["ok"]:
            raise BridgeProtocolError(f"bridge error: {reply.get('error', 'unknown')}")
        return reply

    def train(self, batch: TrainingBatch, config: OracleConfig) -> int:
        labels = [
            {"box_id": int(i), "label": int(y)}
            for i, y in zip(batch.box_ids, batch.labels)
        ]
        reply = self._call(
            {
                "cmd": "train",
                "round": self._version + 1,
                "labels": labels,
                "config": config.as_dict(),
            }
        )
        version = reply.get("version")
        if version != self._version + 1:
            raise BridgeProtocolError(
                f"bridge version {version!r}, expected {self._version + 1}"
            )
        self._version = version
        return self._version

    def restore(self, version: int) -> None:
        # replay-mode bridges accept repeated train commands as fast-forward
        while self._version < version:
            self._call({"cmd": "train", "round": self._version + 1, "labels": [], "config": {}})
            self._version += 1

    def rescore(self, det_set: DetectionSet) -> Reprediction:
        reply = self._call({"cmd": "rescore", "split": det_set.role.value})
        boxes = reply.get("boxes")
        if not isinstance(boxes, list):
            raise BridgeProtocolError("rescore reply missing 'boxes' list")
        out: Reprediction = []
        for rec in boxes:
            try:
                bbox = BBox(*[float(v) for v in rec["bbox"]])
                out.append(ScoredBox(str(rec["image_id"]), bbox, float(rec["confidence"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise BridgeProtocolError(f"malformed box record {rec!r}") from exc
        return out

    def close(self):
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
