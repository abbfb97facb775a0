"""Command-line interface.

Verbs map to pipeline stages (``filter`` also runs the dedup step that
consumes its output); ``run`` executes everything, optionally restricted
with ``--stage``; ``replay`` answers provider calls from a recorded trace.

Exit codes: 0 success, 1 configuration error, 2 stage failure, 3 trace miss.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .config import load_config
from .errors import ConfigInvalid, DocbenchError, TraceMiss
from .stages import STAGE_ORDER, PipelineRun

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2
EXIT_TRACE_MISS = 3

_VERB_STAGES = {
    "ingest": ("ingest",),
    "chunk": ("chunk",),
    "summarize": ("summarize",),
    "generate": ("generate",),
    "filter": ("filter", "dedup"),
    "evaluate": ("evaluate",),
    "analyze": ("analyze",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> "argparse.NoReturn":  # type: ignore[name-defined]
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _build_parser() -> _Parser:
    parser = _Parser(prog="docbench", description="Document corpus to model benchmark, end to end.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="run configuration file (YAML or JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output", default=None, help="override the config output directory")
        p.add_argument("--offline", action="store_true", help="force mock providers")

    for verb in _VERB_STAGES:
        p = sub.add_parser(verb, help=f"run the {verb} stage")
        add_common(p)

    run = sub.add_parser("run", help="run all stages")
    add_common(run)
    run.add_argument("--stage", choices=STAGE_ORDER, default=None, help="run a single stage")

    replay = sub.add_parser("replay", help="rerun all stages answering provider calls from a trace")
    add_common(replay)
    replay.add_argument("--trace", required=True, help="recorded trace file")
    replay.add_argument("--stage", choices=STAGE_ORDER, default=None, help="run a single stage")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)

    try:
        config = load_config(args.config, overrides={"seed": args.seed})
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.verb == "replay":
        stages = (args.stage,) if args.stage else None
        pipeline = PipelineRun(
            config,
            output_dir=args.output,
            offline=args.offline,
            replay_trace=args.trace,
        )
    else:
        if args.verb == "run":
            stages = (args.stage,) if args.stage else None
        else:
            stages = _VERB_STAGES[args.verb]
        pipeline = PipelineRun(config, output_dir=args.output, offline=args.offline)

    try:
        manifest = pipeline.run(stages)
    except TraceMiss as exc:
        stage = f" during stage {exc.stage!r}" if exc.stage else ""
        print(f"trace miss{stage}: {exc}", file=sys.stderr)
        return EXIT_TRACE_MISS
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DocbenchError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE

    print(f"run {manifest.run_id} complete; counts: {manifest.counts}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
