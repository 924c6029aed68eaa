import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


def write_dump(path, boxes, role):
    """Minimal detection dump: header line plus one record per box."""
    lines = [
        json.dumps(
            {"kind": "detections", "format_version": 1, "feature_dim": 2,
             "model": "test", "role": role}
        )
    ]
    for box_id, image_id, bbox, conf, feat in boxes:
        lines.append(
            json.dumps(
                {"box_id": box_id, "image_id": image_id, "bbox": bbox,
                 "confidence": conf, "feature": feat}
            )
        )
    path.write_text("\n".join(lines) + "\n")


def grid_boxes(ids, confs, feats=None, image_prefix="img"):
    return [
        (
            i,
            f"{image_prefix}{n}",
            [0.0, 0.0, 10.0, 10.0],
            confs[n],
            (feats[n] if feats else [0.0, 0.0]),
        )
        for n, i in enumerate(ids)
    ]


@pytest.fixture
def dumps(tmp_path):
    train = tmp_path / "train.jsonl"
    val = tmp_path / "val.jsonl"
    write_dump(train, grid_boxes([0, 1, 2], [0.9, 0.5, 0.3], image_prefix="t"), "train")
    write_dump(val, grid_boxes([10, 11], [0.8, 0.2], image_prefix="v"), "val")
    return train, val


@pytest.fixture
def script_path(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(
        json.dumps(
            {
                "rounds": [
                    {"train": {"0": 0.95, "1": 0.4, "2": 0.1},
                     "val": {"10": 0.7, "11": 0.1}},
                    {"train": {"0": 0.9, "1": 0.8, "2": 0.2},
                     "val": {"10": 0.7, "11": 0.6}},
                ]
            }
        )
    )
    return path
