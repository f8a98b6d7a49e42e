"""Figure rendering for the report path.

Everything draws from the JSON report dict, never from live state, so a
saved report can be re-rendered offline.  The Agg backend keeps rendering
headless and output bytes stable.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 120, "bbox_inches": "tight",
            "metadata": {"Software": "poflsc"}}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def fig_accuracy(round_accuracy: dict, path: Path | str) -> Path:
    """Per-subchain held-out accuracy over global rounds."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for sid in sorted(round_accuracy, key=int):
        accs = round_accuracy[sid]
        ax.plot(range(1, len(accs) + 1), accs, marker="o", markersize=3,
                label=f"subchain {sid}")
    ax.set_xlabel("global round")
    ax.set_ylabel("held-out accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def fig_value_hist(entry: dict, name: str, path: Path | str) -> Path:
    """Histogram of per-miner contribution estimates."""
    values = [float(v) for v in entry["values"].values()]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(values, bins=20, edgecolor="black", linewidth=0.5)
    ax.set_xlabel(f"{name} value")
    ax.set_ylabel("miners")
    ax.grid(True, alpha=0.3, axis="y")
    return _save(fig, Path(path))


def fig_value_scatter(entry: dict, name: str, path: Path | str) -> Path:
    """Mean vs std of each miner's estimate, annotated by miner id."""
    miners = sorted(entry["values"], key=int)
    means = [float(entry["values"][m]) for m in miners]
    stds = [float(entry["stds"][m]) for m in miners]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.scatter(means, stds, s=18)
    for m, x, y in zip(miners, means, stds):
        ax.annotate(m, (x, y), fontsize=6,
                    textcoords="offset points", xytext=(3, 2))
    ax.set_xlabel(f"{name} mean")
    ax.set_ylabel(f"{name} std")
    ax.grid(True, alpha=0.3)
    return _save(fig, Path(path))


def fig_shrink(entry: dict, name: str, path: Path | str) -> Path:
    """Shrink curves: solid keeps the top-valued members, dotted the
    lowest-valued."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    sizes = entry["sizes"]
    ax.plot(sizes, entry["descending"], "-", marker="o", markersize=3,
            label="descending reservation")
    ax.plot(sizes, entry["ascending"], ":", marker="s", markersize=3,
            label="ascending reservation")
    ax.set_xlabel("pool size")
    ax.set_ylabel("held-out accuracy")
    ax.set_title(f"pool shrink ({name})")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def render_figures(report: dict, out_dir: Path | str) -> list[Path]:
    """Render every figure the report carries data for."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if report.get("round_accuracy"):
        written.append(fig_accuracy(report["round_accuracy"],
                                    out / "accuracy.png"))
    for name, entry in sorted(report.get("shapley", {}).items()):
        low = name.lower()
        written.append(fig_value_hist(entry, low, out / f"hist_{low}.png"))
        written.append(fig_value_scatter(entry, low,
                                         out / f"scatter_{low}.png"))
    for name, entry in sorted(report.get("shrink", {}).items()):
        low = name.lower()
        written.append(fig_shrink(entry, low, out / f"shrink_{low}.png"))
    return written
