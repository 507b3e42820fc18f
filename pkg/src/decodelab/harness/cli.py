"""Command-line entry point: ``decodelab {run,prr,diff,validate}``.

Exit codes: 0 success, 1 validation failure, 2 quarantine threshold exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..errors import ConfigError, DecodeLabError
from ..eval import prr_diff
from .config import load_config, load_resources, validate
from .data import ingest
from .sweep import report_from_journal, run_sweep

EXIT_OK, EXIT_INVALID, EXIT_QUARANTINE = 0, 1, 2


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    res = load_resources(cfg)
    result = run_sweep(cfg, res, out=args.out)
    print(f"{result.n_units} units ({result.n_decoded} decoded, {result.n_quarantined} quarantined)")
    for name, path in sorted(result.paths.items()):
        print(f"wrote {path}")
    return EXIT_QUARANTINE if result.threshold_exceeded else EXIT_OK


def _cmd_prr(args) -> int:
    report = report_from_journal(args.journal, n_boot=args.n_boot, seed=args.seed)
    if args.out:
        for path in report.write(args.out).values():
            print(f"wrote {path}")
    else:
        json.dump(report.rows, sys.stdout, sort_keys=True, indent=1)
        sys.stdout.write("\n")
    return EXIT_OK


def _load_report(path: str):
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return json.loads(p.read_text(encoding="utf-8"))


def _cmd_diff(args) -> int:
    diff = prr_diff(_load_report(args.run_a), _load_report(args.run_b))
    text = diff.to_csv() if args.csv else json.dumps(diff.to_dict(), sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    problems = validate(cfg, connect=not args.offline)
    for d in cfg.datasets:
        path = cfg.resolve(d.path)
        if not path.exists():
            continue
        try:
            res = ingest(path, d.task, cfg.max_malformed_frac)
        except DecodeLabError as exc:
            problems.append(f"{d.path}: {exc}")
            continue
        for lineno, reason in res.malformed:
            print(f"{d.path}:{lineno}: {reason}")
    for p in problems:
        print(f"error: {p}")
    if problems:
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="decodelab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a decoding/uncertainty sweep")
    p.add_argument("config")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("prr", help="recompute PRR tables from a journal")
    p.add_argument("journal")
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_prr)

    p = sub.add_parser("diff", help="per-key PRR deltas between two reports (slopegraph data)")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_diff)

    p = sub.add_parser("validate", help="lint a config and its datasets")
    p.add_argument("config")
    p.add_argument("--offline", action="store_true", help="skip contacting remote endpoints")
    p.set_defaults(fn=_cmd_validate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, DecodeLabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
