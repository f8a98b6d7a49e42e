"""Command-line front end.

Subcommands: simulate (full block run), valuate (contribution estimates),
shrink (pool-shrink experiment), verify (chain audit), reemit (regenerate
CSVs and figures from a saved report.json).

Exit codes are frozen for scripting: 0 success, 2 invalid configuration
or unreadable input (bad estimator names included), 3 no pool formed,
4 chain verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ESTIMATOR_ALIASES, Estimator, load_config
from .engine import run_block
from .errors import ConfigInvalid, NoPoolFormed, PoflscError
from .ledger import restore_chain, verify_chain
from .reporting import (
    block_report,
    emit_outputs,
    write_chain,
    write_report_json,
    write_trace,
)

_ORDER_COLUMNS = {
    "asc": ("ascending",),
    "desc": ("descending",),
    "both": ("descending", "ascending"),
}


def _parse_estimators(raw: str | None) -> list[Estimator]:
    if not raw:
        return []
    out = []
    for token in raw.split(","):
        token = token.strip().lower()
        if token not in ESTIMATOR_ALIASES:
            raise KeyError(token)
        out.append(ESTIMATOR_ALIASES[token])
    return out


def _load(args) -> "ScenarioConfig":
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
        cfg.validate()
    return cfg


def _run_and_emit(args, *, include_shrink: bool, with_chain: bool,
                  orders=("descending", "ascending")) -> int:
    try:
        cfg = _load(args)
    except ConfigInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        estimators = _parse_estimators(getattr(args, "estimator", None))
    except KeyError as exc:
        print(f"error: unknown estimator {exc.args[0]!r} "
              f"(choose from {', '.join(sorted(ESTIMATOR_ALIASES))})",
              file=sys.stderr)
        return 2
    if Estimator.EXACT in estimators and cfg.pool_size_cap > 10:
        print("error: exact enumeration only supports pools of up to 10 "
              f"members, pool_size_cap is {cfg.pool_size_cap}",
              file=sys.stderr)
        return 2
    try:
        result = run_block(cfg, estimators=estimators,
                           include_shrink=include_shrink)
    except NoPoolFormed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = block_report(result)
    write_report_json(report, out / "report.json")
    if with_chain:
        write_chain(result.winner_chain(), out / "chain.bin")
        write_trace(result.events, out / "trace.jsonl")
    emit_outputs(report, out, figures=not args.no_figures, orders=orders)
    print(f"wrote {out / 'report.json'}")
    return 0


def cmd_simulate(args) -> int:
    return _run_and_emit(args, include_shrink=False, with_chain=True)


def cmd_valuate(args) -> int:
    return _run_and_emit(args, include_shrink=False, with_chain=False)


def cmd_shrink(args) -> int:
    return _run_and_emit(args, include_shrink=True, with_chain=False,
                         orders=_ORDER_COLUMNS[args.order])


def cmd_verify(args) -> int:
    path = Path(args.chain)
    try:
        data = path.read_bytes()
        chain = restore_chain(data)
    except (OSError, PoflscError) as exc:
        print(f"error: cannot read chain: {exc}", file=sys.stderr)
        return 2
    result = verify_chain(chain)
    if result.ok:
        print(f"OK: {len(chain)} sub-blocks verified")
        return 0
    print(f"FAIL: sub-block {result.index}: {result.reason}", file=sys.stderr)
    return 4


def cmd_reemit(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path(args.report).parent
    emit_outputs(report, out, figures=not args.no_figures,
                 orders=_ORDER_COLUMNS[args.order])
    print(f"re-emitted outputs under {out}")
    return 0


def _add_common(p: argparse.ArgumentParser, *, estimator: bool) -> None:
    p.add_argument("--config", required=True, help="scenario file (TOML or JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override master_seed from the config")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering, write data files only")
    if estimator:
        p.add_argument("--estimator", default=None,
                       help="comma-separated: loo, tmc, gshapley, exact")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poflsc",
        description="Deterministic federated-learning subchain simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one full block task")
    _add_common(p, estimator=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("valuate", help="estimate member contributions")
    _add_common(p, estimator=True)
    p.set_defaults(func=cmd_valuate)

    p = sub.add_parser("shrink", help="pool-shrink experiment")
    _add_common(p, estimator=True)
    p.add_argument("--order", choices=sorted(_ORDER_COLUMNS), default="both",
                   help="which reservation orders to emit")
    p.set_defaults(func=cmd_shrink)

    p = sub.add_parser("verify", help="audit a chain file")
    p.add_argument("chain", help="path to a chain.bin")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reemit", help="regenerate CSVs/figures from report.json")
    p.add_argument("report", help="path to a report.json")
    p.add_argument("--out", default=None, help="output directory (default: alongside)")
    p.add_argument("--order", choices=sorted(_ORDER_COLUMNS), default="both")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_reemit)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
