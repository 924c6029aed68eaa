"""Command-line entry point: rerank, eval, synth, and clusters subcommands."""

from __future__ import annotations

import argparse
import csv
import json
import re
import shlex
import sys
from pathlib import Path

import numpy as np

from . import dataio, synth
from .errors import BoxRerankError
from .metrics import evaluate
from .oracle import BridgeScorer, LinearScorer, OracleConfig, ReplayScorer
from .rerank import PipelineConfig, run_pipeline

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _add_pipeline_flags(p: argparse.ArgumentParser):
    p.add_argument("--h", type=float, default=0.95, help="seed-cluster confidence threshold")
    p.add_argument("--o", type=float, default=0.4, help="output / counting threshold")
    p.add_argument("--iou-min", type=float, default=0.3, help="re-prediction match IoU")
    p.add_argument("--k", type=int, default=100, help="cluster count")
    p.add_argument("--conf-floor", type=float, default=0.1, help="clustering confidence floor")
    p.add_argument("--top-k", type=int, default=3, help="clusters promoted per round")
    p.add_argument("--max-rounds", type=int, default=30)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5, help="scorer epochs per round")
    p.add_argument("--lr", type=float, default=2.0, help="scorer learning rate")
    p.add_argument("--l2", type=float, default=1e-3, help="scorer L2 regularization")
    p.add_argument("--no-bna", action="store_true", help="disable the stopping rule (diagnostics)")
    p.add_argument(
        "--granularity", choices=["cluster", "instance"], default="cluster",
        help="instance mode is an ablation/testing variant",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxrerank",
        description="Unsupervised false-positive suppression for detection dumps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rerank", help="run the suppression pipeline on a detection dump")
    p.add_argument("train_dump")
    p.add_argument("val_dump")
    p.add_argument("--run-dir", required=True)
    p.add_argument(
        "--oracle", default="linear",
        help="linear | replay:<script.json> | bridge:<command line>",
    )
    p.add_argument("--resume", action="store_true")
    _add_pipeline_flags(p)

    p = sub.add_parser("eval", help="evaluate a scored dump against ground truth")
    p.add_argument("detections")
    p.add_argument("ground_truth")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.add_argument(
        "--gt-filter", action="append", default=[],
        metavar="EXPR", help="attribute predicate, e.g. 'height>=50' (repeatable)",
    )

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-tp", type=int, default=1000)
    p.add_argument("--n-fp", type=int, default=500)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--fn-fraction", type=float, default=0.25)
    p.add_argument("--seed-noise", type=float, default=0.0)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--n-images", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("clusters", help="print the cluster table of a finished run")
    p.add_argument("run_dir")

    return parser


_FILTER_RE = re.compile(r"^\s*(\w+)\s*(>=|<=|==|>|<)\s*(-?\d+(?:\.\d+)?)\s*$")
_FILTER_OPS = {
    ">=": lambda a, b: a >= b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    ">": lambda a, b: a > b,
    "<": lambda a, b: a < b,
}


def _parse_gt_filter(exprs):
    clauses = []
    for expr in exprs:
        m = _FILTER_RE.match(expr)
        if not m:
            raise ValueError(f"bad filter expression {expr!r}")
        key, op, value = m.group(1), m.group(2), float(m.group(3))
        clauses.append((key, _FILTER_OPS[op], value))
    if not clauses:
        return None

    def predicate(g):
        return all(key in g.attrs and op(g.attrs[key], v) for key, op, v in clauses)

    return predicate


def _make_oracle(selector: str, seed: int):
    if selector == "linear":
        return LinearScorer(rng_seed=seed)
    if selector.startswith("replay:"):
        return ReplayScorer(dataio.load_replay_script(selector[len("replay:"):]))
    if selector.startswith("bridge:"):
        return BridgeScorer(shlex.split(selector[len("bridge:"):]))
    raise ValueError(f"unknown oracle {selector!r}")


def cmd_rerank(args) -> int:
    cfg = PipelineConfig(
        h=args.h, o=args.o, iou_min=args.iou_min, k=args.k,
        conf_floor=args.conf_floor, top_k_clusters=args.top_k,
        max_rounds=args.max_rounds, nms_iou=args.nms_iou, rng_seed=args.seed,
        bna_enabled=not args.no_bna, granularity=args.granularity,
    )
    oracle_cfg = OracleConfig(
        epochs_per_round=args.epochs, learning_rate=args.lr,
        l2_reg=args.l2, rng_seed=args.seed,
    )
    train = dataio.load_detections(args.train_dump)
    val = dataio.load_detections(args.val_dump)
    oracle = _make_oracle(args.oracle, args.seed)

    state = run_pipeline(
        train, val, oracle, cfg, oracle_cfg,
        run_dir=args.run_dir, resume=args.resume,
    )
    final = state.final
    rescored = [b.with_confidence(final.train_confidences[b.box_id]) for b in train]
    from .boxgeom import DetectionSet
    out_set = DetectionSet(rescored, train.feature_dim, train.role)
    dataio.save_detections(out_set, Path(args.run_dir) / "final_detections.jsonl", "reranked")
    print(
        f"terminated: {state.terminated_reason} at round {final.round_index} "
        f"(val_count={final.val_count}, baseline={state.baseline_count})"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    dets = dataio.load_detections(args.detections)
    truth = dataio.load_ground_truth(args.ground_truth)
    predicate = _parse_gt_filter(args.gt_filter)
    report = evaluate(dets, truth, iou_eval=args.iou, gt_filter=predicate)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
    with open(out_dir / "curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fppi", "miss_rate"])
        writer.writerows(report.curve)
    print(f"log_avg_mr={report.log_avg_mr:.6f} ap={report.ap:.6f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = synth.default_scenario(
        rng_seed=args.seed, n_tp=args.n_tp, n_fp=args.n_fp,
        separation=args.separation, fn_fraction=args.fn_fraction,
        seed_noise_fraction=args.seed_noise, feature_dim=args.feature_dim,
        n_images=args.n_images,
    )
    train, val, truth, labels = synth.generate(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataio.save_detections(train, out_dir / "train.jsonl", "synthetic")
    dataio.save_detections(val, out_dir / "val.jsonl", "synthetic")
    dataio.save_ground_truth(truth, out_dir / "ground_truth.jsonl")
    dataio.save_truth_labels(labels, out_dir / "truth_labels.jsonl")
    print(f"wrote {len(train)} train / {len(val)} val boxes to {out_dir}")
    return EXIT_OK


def cmd_clusters(args) -> int:
    if not Path(args.run_dir).is_dir():
        raise FileNotFoundError(f"no such run directory: {args.run_dir}")
    state = dataio.load_run_state(args.run_dir)
    if state.clustering is None:
        print("run used instance granularity; no clusters to show")
        return EXIT_OK
    members = state.clustering.members()
    confs = state.initial_train_confidences
    final_labels = state.rounds[-1].labels if state.rounds else None

    print(f"{'cluster':>8} {'size':>6} {'mean_conf':>10} {'label':>9} {'outliers':>9}")
    for ci in range(state.clustering.k):
        ids = members[ci]
        mean_conf = float(np.mean([confs[i] for i in ids])) if ids else 0.0
        if final_labels is None or not ids:
            label = "-"
        elif set(ids) & final_labels.positives:
            label = "positive"
        elif set(ids) - final_labels.ignored <= final_labels.negatives:
            label = "negative"
        else:
            label = "mixed"
        n_outliers = sum(1 for i in ids if final_labels and i in final_labels.ignored)
        print(f"{ci:>8} {len(ids):>6} {mean_conf:>10.4f} {label:>9} {n_outliers:>9}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE

    handlers = {
        "rerank": cmd_rerank,
        "eval": cmd_eval,
        "synth": cmd_synth,
        "clusters": cmd_clusters,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BoxRerankError as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
