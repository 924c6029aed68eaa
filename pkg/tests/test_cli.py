import json

import pytest

from boxrerank.cli import main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(
        [
            "synth", "--out-dir", str(out),
            "--n-tp", "300", "--n-fp", "150", "--n-images", "60",
            "--feature-dim", "8", "--seed", "42",
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(synth_dir, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    code = main(
        [
            "rerank", str(synth_dir / "train.jsonl"), str(synth_dir / "val.jsonl"),
            "--run-dir", str(run), "--k", "30", "--seed", "42",
        ]
    )
    assert code == 0
    return run


class TestSynthCommand:
    def test_writes_all_dumps(self, synth_dir):
        for name in ("train.jsonl", "val.jsonl", "ground_truth.jsonl", "truth_labels.jsonl"):
            assert (synth_dir / name).exists()


class TestRerankCommand:
    def test_run_artifacts(self, run_dir):
        assert (run_dir / "base.json").exists()
        assert (run_dir / "manifest.json").exists()
        assert (run_dir / "final_detections.jsonl").exists()
        assert any((run_dir / "rounds").iterdir())

    def test_missing_dump_exit_2(self, tmp_path):
        code = main(
            ["rerank", str(tmp_path / "nope.jsonl"), str(tmp_path / "nope2.jsonl"),
             "--run-dir", str(tmp_path / "run")]
        )
        assert code == 2

    def test_bad_thresholds_exit_2(self, synth_dir, tmp_path):
        code = main(
            ["rerank", str(synth_dir / "train.jsonl"), str(synth_dir / "val.jsonl"),
             "--run-dir", str(tmp_path / "run"), "--h", "0.3", "--o", "0.4"]
        )
        assert code == 2


class TestEvalCommand:
    def eval_to(self, dets, synth_dir, out):
        code = main(
            ["eval", str(dets), str(synth_dir / "ground_truth.jsonl"),
             "--out-dir", str(out)]
        )
        assert code == 0
        return json.loads((out / "report.json").read_text())

    def test_rerank_improves_miss_rate(self, synth_dir, run_dir, tmp_path):
        before = self.eval_to(synth_dir / "train.jsonl", synth_dir, tmp_path / "before")
        after = self.eval_to(run_dir / "final_detections.jsonl", synth_dir, tmp_path / "after")
        assert after["log_avg_mr"] < before["log_avg_mr"]
        assert (tmp_path / "after" / "curve.csv").read_text().startswith("fppi,miss_rate")

    def test_gt_filter_flag(self, synth_dir, tmp_path):
        code = main(
            ["eval", str(synth_dir / "train.jsonl"), str(synth_dir / "ground_truth.jsonl"),
             "--out-dir", str(tmp_path / "f"), "--gt-filter", "height>=10"]
        )
        assert code == 0

    def test_bad_filter_exit_2(self, synth_dir, tmp_path):
        code = main(
            ["eval", str(synth_dir / "train.jsonl"), str(synth_dir / "ground_truth.jsonl"),
             "--out-dir", str(tmp_path / "f"), "--gt-filter", "height !! 10"]
        )
        assert code == 2


class TestClustersCommand:
    def test_prints_table(self, run_dir, capsys):
        assert main(["clusters", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "cluster" in out and "mean_conf" in out
        # one line per cluster plus the header
        assert len(out.strip().splitlines()) == 31

    def test_missing_run_dir_exit_2(self, tmp_path):
        assert main(["clusters", str(tmp_path / "missing")]) == 2


class TestUsage:
    def test_no_command_exit_2(self):
        assert main([]) == 2

    def test_unknown_flag_exit_2(self):
        assert main(["synth", "--bogus"]) == 2
