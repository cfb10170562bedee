"""Command line entry point.

Usage: ``hiro --config CONFIG [--seed N] [--set key=value ...] STAGE`` where
STAGE is one of ingest, mine-pairs, train, index, retrieve, summarize,
evaluate, report. Relative paths in the config resolve against the config
file's directory.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PipelineConfig, apply_overrides, load_config
from .errors import HiroError
from .pipeline import STAGES


def _resolve_paths(cfg: PipelineConfig, base: Path) -> None:
    for name in ("reviews", "output_dir", "embeddings_manifest", "references", "oracle_clusters"):
        value = getattr(cfg.paths, name)
        if value is not None and not Path(value).is_absolute():
            setattr(cfg.paths, name, str(base / value))
    fixture = cfg.generation.replay_fixture
    if fixture is not None and not Path(fixture).is_absolute():
        cfg.generation.replay_fixture = str(base / fixture)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiro",
        description="Hierarchical opinion indexing, retrieval and summarization pipeline.",
    )
    parser.add_argument("--config", required=True, help="path to the pipeline JSON config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value, e.g. --set retrieval.top_k=4 (repeatable)",
    )
    sub = parser.add_subparsers(dest="stage", required=True, metavar="STAGE")
    for name, fn in STAGES.items():
        sub.add_parser(name, help=fn.__doc__)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        _resolve_paths(cfg, Path(args.config).resolve().parent)
        apply_overrides(cfg, args.overrides)
        if args.seed is not None:
            cfg.seed = args.seed
        out = STAGES[args.stage](cfg)
    except HiroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.stage}: wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
