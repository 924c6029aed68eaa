"""Command-line entry point: `detector-bridge [--mode ...] train.jsonl val.jsonl`."""

import argparse
import importlib
import sys

from .session import BridgeSession, load_script


def _load_adapter(spec):
    """'package.module:attr' -> the adapter object (instantiated if a class)."""
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError("adapter must be given as module:attribute")
    obj = getattr(importlib.import_module(module_name), attr)
    return obj() if isinstance(obj, type) else obj


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="detector-bridge",
        description="Serve the scorer wire protocol over stdin/stdout.",
    )
    parser.add_argument("train_dump")
    parser.add_argument("val_dump")
    parser.add_argument("--mode", choices=["replay", "adapter"], default="replay")
    parser.add_argument("--script", help="replay score-table JSON (replay mode)")
    parser.add_argument("--adapter", help="module:attr of the detector adapter")
    args = parser.parse_args(argv)

    try:
        if args.mode == "replay":
            if not args.script:
                parser.error("--script is required in replay mode")
            session = BridgeSession(
                args.train_dump, args.val_dump, mode="replay",
                script=load_script(args.script),
            )
        else:
            if not args.adapter:
                parser.error("--adapter is required in adapter mode")
            session = BridgeSession(
                args.train_dump, args.val_dump, mode="adapter",
                adapter=_load_adapter(args.adapter),
            )
    except Exception as exc:
        print(f"detector-bridge: {exc}", file=sys.stderr)
        return 1

    try:
        session.serve(sys.stdin, sys.stdout)
    except (BrokenPipeError, OSError) as exc:
        print(f"detector-bridge: I/O failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
