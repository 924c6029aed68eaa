import io
import json

import pytest

from detector_bridge.session import BridgeSession, load_dump, load_script


def make_session(dumps, script_path):
    train, val = dumps
    return BridgeSession(train, val, mode="replay", script=load_script(script_path))


class TestLoaders:
    def test_load_dump(self, dumps):
        train, _ = dumps
        boxes = load_dump(train)
        assert [b["box_id"] for b in boxes] == [0, 1, 2]
        assert boxes[0]["bbox"] == [0.0, 0.0, 10.0, 10.0]

    def test_load_dump_rejects_wrong_kind(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"kind": "ground_truth"}\n')
        with pytest.raises(ValueError):
            load_dump(bad)

    def test_load_script_coerces_keys(self, script_path):
        rounds = load_script(script_path)
        assert rounds[0]["train"][0] == 0.95
        assert rounds[1]["val"][11] == 0.6


class TestSession:
    def test_rescore_before_train_is_identity(self, dumps, script_path):
        session = make_session(dumps, script_path)
        reply = session.handle({"cmd": "rescore", "split": "train"})
        assert reply["ok"] is True
        assert [b["confidence"] for b in reply["boxes"]] == [0.9, 0.5, 0.3]

    def test_version_increments_per_train(self, dumps, script_path):
        session = make_session(dumps, script_path)
        assert session.handle({"cmd": "train", "labels": []})["version"] == 1
        assert session.handle({"cmd": "train", "labels": []})["version"] == 2

    def test_rescore_uses_current_round_table(self, dumps, script_path):
        session = make_session(dumps, script_path)
        session.handle({"cmd": "train", "labels": []})
        reply = session.handle({"cmd": "rescore", "split": "val"})
        assert [b["confidence"] for b in reply["boxes"]] == [0.7, 0.1]
        session.handle({"cmd": "train", "labels": []})
        reply = session.handle({"cmd": "rescore", "split": "val"})
        assert [b["confidence"] for b in reply["boxes"]] == [0.7, 0.6]

    def test_exhausted_script_is_recoverable(self, dumps, script_path):
        session = make_session(dumps, script_path)
        session.handle({"cmd": "train", "labels": []})
        session.handle({"cmd": "train", "labels": []})
        reply = session.handle({"cmd": "train", "labels": []})
        assert reply["ok"] is False and "exhausted" in reply["error"]
        # session still answers
        assert session.handle({"cmd": "rescore", "split": "train"})["ok"] is True

    def test_unknown_command(self, dumps, script_path):
        session = make_session(dumps, script_path)
        reply = session.handle({"cmd": "explode"})
        assert reply["ok"] is False

    def test_unknown_split(self, dumps, script_path):
        session = make_session(dumps, script_path)
        assert session.handle({"cmd": "rescore", "split": "test"})["ok"] is False


class RecordingAdapter:
    def __init__(self):
        self.calls = []

    def fine_tune(self, labels, config):
        self.calls.append((labels, config))

    def predict(self, split, boxes, version):
        return [0.5 + 0.01 * version] * len(boxes)


class TestAdapterMode:
    def test_config_pass_through(self, dumps):
        train, val = dumps
        adapter = RecordingAdapter()
        session = BridgeSession(train, val, mode="adapter", adapter=adapter)
        config = {"loss_weight": 1.0, "epochs_per_round": 5}
        session.handle(
            {"cmd": "train", "labels": [{"box_id": 0, "label": 1}], "config": config}
        )
        assert adapter.calls == [({0: 1}, config)]
        reply = session.handle({"cmd": "rescore", "split": "val"})
        assert [b["confidence"] for b in reply["boxes"]] == [0.51, 0.51]

    def test_broken_adapter_keeps_session_alive(self, dumps):
        train, val = dumps

        class Broken:
            def fine_tune(self, labels, config):
                raise RuntimeError("detector fell over")

        session = BridgeSession(train, val, mode="adapter", adapter=Broken())
        reply = session.handle({"cmd": "train", "labels": []})
        assert reply["ok"] is False and "detector fell over" in reply["error"]
        assert session.version == 0


class TestServeLoop:
    def run_lines(self, dumps, script_path, lines):
        session = make_session(dumps, script_path)
        out = io.StringIO()
        session.serve(io.StringIO("\n".join(lines) + "\n"), out)
        return [json.loads(l) for l in out.getvalue().splitlines()]

    def test_one_reply_per_line(self, dumps, script_path):
        replies = self.run_lines(
            dumps,
            script_path,
            ['{"cmd": "train", "labels": []}', '{"cmd": "rescore", "split": "val"}'],
        )
        assert [r["ok"] for r in replies] == [True, True]

    def test_malformed_line_then_recovery(self, dumps, script_path):
        replies = self.run_lines(
            dumps,
            script_path,
            ["this is not json", '{"cmd": "rescore", "split": "train"}'],
        )
        assert replies[0]["ok"] is False
        assert replies[1]["ok"] is True
