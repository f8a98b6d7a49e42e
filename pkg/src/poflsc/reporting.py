"""Report assembly and file emission: JSON, CSV, trace, chain bytes.

The JSON report is the single source: every CSV (and every figure) can be
regenerated offline from report.json alone.  All emitters write with
stable ordering and LF endings so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import config_to_dict
from .engine import BlockResult, EventRecord
from .ledger import dump_chain

HIST_BINS = 20


def block_report(result: BlockResult) -> dict:
    """Flatten a block result into the JSON-ready scenario report."""
    report = {
        "config": config_to_dict(result.config),
        "demonstration_subchain": result.demonstration_id,
        "winner": result.winner_id,
        "sub_blocks": result.sub_blocks,
        "ledger_digest": result.ledger_digest,
        "value_evaluations": result.value_evals,
        "initial_pools": {str(sid): sorted(members)
                          for sid, members in result.initial_pools.items()},
        "pools": {
            str(s.id): {
                "members": sorted(s.members),
                "host": s.host,
                "phase": s.phase.value,
                "chain_length": len(s.chain),
                "tx_count": s.tx_count,
            }
            for s in result.subchains
        },
        "round_accuracy": {str(sid): accs
                           for sid, accs in result.round_accuracy.items()},
        "challenge_accuracy": {
            str(sid): list(vs.challenge_accuracies)
            for sid, vs in result.vstates.items()
        },
        "audits": {
            str(sid): {"passed": vs.audits_passed, "failed": vs.audits_failed}
            for sid, vs in result.vstates.items()
        },
        "reliability": {str(m): p.reliability
                        for m, p in result.profiles.items()},
        "shapley": {
            name: {
                "estimator": rep.estimator,
                "iterations": rep.iterations,
                "values": {str(m): rep.values[m] for m in rep.members()},
                "stds": {str(m): rep.stds[m] for m in rep.members()},
            }
            for name, rep in result.shapley.items()
        },
        "shrink": dict(result.shrink),
    }
    return report


def write_report_json(report: dict, path: Path | str) -> None:
    text = json.dumps(report, sort_keys=True, indent=2)
    Path(path).write_bytes((text + "\n").encode("utf-8"))


def write_trace(events: Sequence[EventRecord], path: Path | str) -> None:
    lines = []
    for ev in events:
        payload = {k: v for k, v in ev.payload.items() if k != "event"}
        row = {"at": ev.at, "actor": ev.actor, "kind": ev.kind.name, **payload}
        lines.append(json.dumps(row, sort_keys=True))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8")
                           if lines else b"")


def write_chain(chain, path: Path | str) -> None:
    Path(path).write_bytes(dump_chain(chain))


def _open_csv(path: Path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_values_csv(entry: dict, path: Path | str) -> None:
    """(miner, mean, std) rows for one estimator's report section."""
    fh, writer = _open_csv(Path(path))
    with fh:
        writer.writerow(["miner", "mean", "std"])
        for m in sorted(entry["values"], key=int):
            writer.writerow([m, repr(float(entry["values"][m])),
                             repr(float(entry["stds"][m]))])


def write_hist_csv(entry: dict, path: Path | str) -> None:
    """Fixed 20-bin histogram over the observed range of means."""
    values = [float(v) for _, v in sorted(entry["values"].items(),
                                          key=lambda kv: int(kv[0]))]
    counts, edges = np.histogram(values, bins=HIST_BINS)
    fh, writer = _open_csv(Path(path))
    with fh:
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(counts):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                             int(c)])


def write_shrink_csv(entry: dict, path: Path | str,
                     orders: Iterable[str] = ("descending", "ascending")
                     ) -> None:
    """(size, accuracy_descending, accuracy_ascending); unrequested
    columns stay blank."""
    wanted = set(orders)
    fh, writer = _open_csv(Path(path))
    with fh:
        writer.writerow(["size", "accuracy_descending", "accuracy_ascending"])
        for i, size in enumerate(entry["sizes"]):
            desc = (repr(float(entry["descending"][i]))
                    if "descending" in wanted else "")
            asc = (repr(float(entry["ascending"][i]))
                   if "ascending" in wanted else "")
            writer.writerow([int(size), desc, asc])


def emit_outputs(report: dict, out_dir: Path | str, figures: bool = True,
                 orders: Iterable[str] = ("descending", "ascending")
                 ) -> list[Path]:
    """Write every CSV (and figure) derivable from a scenario report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for name, entry in sorted(report.get("shapley", {}).items()):
        p = out / f"values_{name.lower()}.csv"
        write_values_csv(entry, p)
        written.append(p)
        p = out / f"hist_{name.lower()}.csv"
        write_hist_csv(entry, p)
        written.append(p)
    for name, entry in sorted(report.get("shrink", {}).items()):
        p = out / f"shrink_{name.lower()}.csv"
        write_shrink_csv(entry, p, orders=orders)
        written.append(p)
    if figures:
        from .figures import render_figures

        written.extend(render_figures(report, out))
    return written
