"""Command-line interface.

Exit codes: 0 success (including skip-because-done), 1 usage or config
errors, 2 a training stage ran but missed its required criterion.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import CheckpointError
from .config import ConfigError, config_digest, load_config


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this project reserves 2 for
    failed stage criteria, so remap usage errors to exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_COMMANDS = [
    ("gen-world", "generate the synthetic fact world and query splits"),
    ("train-predictor", "pretrain the frozen masked-language-model predictor"),
    ("pretrain-rewriter", "pretrain the rewriter to reproduce input embeddings"),
    ("train-bertese", "train the rewriter against the frozen predictor"),
    ("train-ft-baseline", "fine-tune a predictor copy on the perturbed queries"),
    ("evaluate", "score one system on the held-out perturbed queries"),
    ("ablate", "retrain the rewriter under each auxiliary-loss variant"),
    ("analyze", "summarize what the trained rewriter changes in queries"),
    ("run-all", "run every stage in order, reusing finished artifacts"),
]


def build_parser() -> _Parser:
    parser = _Parser(
        prog="bertese",
        description="query rewriting in embedding space on a synthetic fact world",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in _COMMANDS:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, metavar="FILE",
                       help="INI config file (defaults apply when omitted)")
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config value")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (shorthand for --set run.out_dir=DIR)")
        p.add_argument("--force", action="store_true",
                       help="recompute the artifact even if it already exists")
        if name == "evaluate":
            p.add_argument("--system", required=True,
                           choices=["zero-shot", "ft", "bertese"],
                           help="which answer path to score")
    return parser


def _dispatch(cfg, args) -> list[str]:
    command = args.command
    if command == "gen-world":
        return [pipeline.cmd_gen_world(cfg, args.force)]
    if command == "train-predictor":
        return [pipeline.cmd_train_predictor(cfg, args.force)]
    if command == "pretrain-rewriter":
        return [pipeline.cmd_pretrain_rewriter(cfg, args.force)]
    if command == "train-bertese":
        return [pipeline.cmd_train_bertese(cfg, args.force)]
    if command == "train-ft-baseline":
        return [pipeline.cmd_train_ft_baseline(cfg, args.force)]
    if command == "evaluate":
        return [pipeline.cmd_evaluate(cfg, args.system, args.force)]
    if command == "ablate":
        return [pipeline.cmd_ablate(cfg, args.force)]
    if command == "analyze":
        return [pipeline.cmd_analyze(cfg, args.force)]
    if command == "run-all":
        return pipeline.cmd_run_all(cfg, args.force)
    raise AssertionError(f"unhandled command {command!r}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        overrides = list(args.set)
        if args.out is not None:
            overrides.append(f"run.out_dir={args.out}")
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        print(f"bertese: error: {e}", file=sys.stderr)
        return 1

    out_dir = Path(cfg.run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        print(
            f"bertese: error: lock file {lock} exists; another run may be "
            "active in this output directory (delete the file if it is stale)",
            file=sys.stderr,
        )
        return 1
    with os.fdopen(fd, "w") as fh:
        fh.write(f"pid {os.getpid()}\n")

    try:
        print(f"[bertese] config {config_digest(cfg)} -> {out_dir}")
        for message in _dispatch(cfg, args):
            print(message)
        return 0
    except pipeline.StageError as e:
        print(f"bertese: stage failed: {e}", file=sys.stderr)
        return 2
    except (pipeline.MissingArtifactError, CheckpointError, ConfigError) as e:
        print(f"bertese: error: {e}", file=sys.stderr)
        return 1
    finally:
        lock.unlink(missing_ok=True)


if __name__ == "__main__":
    sys.exit(main())
