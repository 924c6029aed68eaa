"""Bridge session state machine: one serial request/response loop per process.

Wire protocol (one JSON object per line, both directions):

    -> {"cmd": "train", "round": r, "labels": [{"box_id": i, "label": 0|1}...],
        "config": {...}}
    <- {"ok": true, "version": v}
    -> {"cmd": "rescore", "split": "train"|"val"}
    <- {"ok": true, "boxes": [{"image_id": s, "bbox": [x1,y1,x2,y2],
        "confidence": c}, ...]}
    <- {"ok": false, "error": "..."} on any recoverable failure.

Before the first successful train (version 0) a rescore returns the source
confidences verbatim. Version increments by exactly one per train command.
"""

import json


class ProtocolViolation(Exception):
    """A request the session cannot honor; reported as an ok=false reply."""


def load_dump(path):
    """Detection dump (JSON lines with a header record) -> list of box dicts.

    Only the fields the bridge echoes back are kept; features stay with the
    caller.
    """
    boxes = []
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("kind") != "detections":
            raise ValueError(f"{path}: not a detection dump")
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            boxes.append(
                {
                    "box_id": int(rec["box_id"]),
                    "image_id": str(rec["image_id"]),
                    "bbox": [float(v) for v in rec["bbox"]],
                    "confidence": float(rec["confidence"]),
                }
            )
    return boxes


def load_script(path):
    """Replay script {"rounds": [{"train": {id: conf}, "val": {id: conf}}]}."""
    with open(path) as f:
        doc = json.load(f)
    rounds = []
    for rec in doc["rounds"]:
        rounds.append(
            {
                split: {int(k): float(v) for k, v in rec.get(split, {}).items()}
                for split in ("train", "val")
            }
        )
    return rounds


class BridgeSession:
    """Serves train/rescore requests against loaded detection dumps.

    mode "replay" answers from a recorded per-round score table; mode
    "adapter" delegates to an object with fine_tune(labels, config) and
    predict(split, boxes, version) -> confidence list.
    """

    def __init__(self, train_dump, val_dump, mode="replay", script=None, adapter=None):
        self.splits = {"train": load_dump(train_dump), "val": load_dump(val_dump)}
        self.version = 0
        self.mode = mode
        if mode == "replay":
            if script is None:
                raise ValueError("replay mode needs a script")
            self.script = script
        elif mode == "adapter":
            if adapter is None:
                raise ValueError("adapter mode needs an adapter object")
            self.adapter = adapter
        else:
            raise ValueError(f"unknown mode {mode!r}")

    # -- message handlers ---------------------------------------------------

    def handle(self, message):
        """One request dict -> one reply dict; never raises for bad input."""
        try:
            if not isinstance(message, dict):
                raise ProtocolViolation("message must be a JSON object")
            cmd = message.get("cmd")
            if cmd == "train":
                return self._train(message)
            if cmd == "rescore":
                return self._rescore(message)
            raise ProtocolViolation(f"unknown command {cmd!r}")
        except ProtocolViolation as exc:
            return {"ok": False, "error": str(exc)}
        except Exception as exc:  # a broken adapter must not kill the session
            return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}

    def _train(self, message):
        labels = message.get("labels", [])
        if not isinstance(labels, list):
            raise ProtocolViolation("labels must be a list")
        if self.mode == "replay":
            if self.version >= len(self.script):
                raise ProtocolViolation(
                    f"replay script exhausted after {len(self.script)} rounds"
                )
        else:
            table = {}
            for rec in labels:
                try:
                    table[int(rec["box_id"])] = int(rec["label"])
                except (KeyError, TypeError, ValueError):
                    raise ProtocolViolation(f"bad label record {rec!r}")
            self.adapter.fine_tune(table, dict(message.get("config", {})))
        self.version += 1
        return {"ok": True, "version": self.version}

    def _rescore(self, message):
        split = message.get("split")
        if split not in self.splits:
            raise ProtocolViolation(f"unknown split {split!r}")
        boxes = self.splits[split]
        if self.version == 0:
            confs = [b["confidence"] for b in boxes]
        elif self.mode == "replay":
            table = self.script[self.version - 1][split]
            missing = [b["box_id"] for b in boxes if b["box_id"] not in table]
            if missing:
                raise ProtocolViolation(
                    f"script round {self.version} lacks {split} box {missing[0]}"
                )
            confs = [table[b["box_id"]] for b in boxes]
        else:
            confs = [float(c) for c in self.adapter.predict(split, boxes, self.version)]
            if len(confs) != len(boxes):
                raise ProtocolViolation("adapter returned wrong number of confidences")
        return {
            "ok": True,
            "boxes": [
                {"image_id": b["image_id"], "bbox": b["bbox"], "confidence": c}
                for b, c in zip(boxes, confs)
            ],
        }

    # -- stdio loop ---------------------------------------------------------

    def serve(self, instream, outstream):
        """Answer one reply per input line until EOF."""
        for line in instream:
            if not line.strip():
                continue
            try:
                message = json.loads(line)
            except json.JSONDecodeError as exc:
                reply = {"ok": False, "error": f"unparseable request: {exc}"}
            else:
                reply = self.handle(message)
            outstream.write(json.dumps(reply) + "\n")
            outstream.flush()
