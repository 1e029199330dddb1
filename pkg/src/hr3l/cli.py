"""Command line entry: ``python -m hr3l {run,preset,summarize}``.

Output goes under ``--out`` or, failing that, ``$HR3L_OUT`` (default ``runs``).
Failures exit nonzero and print the error class name.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .channel import ChannelError
from .config import ConfigError, parse_config
from .experiments import PRESETS, MissingAnchor, default_out_root, run_config, run_preset, summarize

EXIT_CODES = {ConfigError: 2, MissingAnchor: 3, ChannelError: 4, FileNotFoundError: 5}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hr3l", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run every seed of a configuration file")
    r.add_argument("config", type=Path)
    r.add_argument("--out", type=Path, default=None)
    r.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("preset", help="run a named experiment grid and summarize it")
    s.add_argument("name", choices=PRESETS)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--out", type=Path, default=None)
    s.add_argument("--config", type=Path, default=None, help="base configuration overriding the defaults")
    s.add_argument("--workers", type=int, default=None)

    m = sub.add_parser("summarize", help="print the drop table for a directory of runs")
    m.add_argument("dir", type=Path)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "run":
            cfg = parse_config(args.config.read_text())
            out = (args.out or default_out_root()) / args.config.stem
            for path in run_config(cfg, out, args.workers):
                print(path)
        elif args.verb == "preset":
            base = parse_config(args.config.read_text()) if args.config else None
            out = args.out or default_out_root() / args.name
            summary = run_preset(args.name, args.seeds, out, base, args.workers)
            print(summary.format())
        else:
            summary = summarize(args.dir)
            (args.dir / "summary.csv").write_text(summary.to_csv())
            print(summary.format())
    except tuple(EXIT_CODES) as e:
        code = next(c for cls, c in EXIT_CODES.items() if isinstance(e, cls))
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return code
    return 0
