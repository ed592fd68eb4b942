"""Figure rendering for sweep results and trace reports.

Every function takes already-computed data and writes one PNG; nothing here
re-runs a simulation, so the CSV stays the authoritative output and the
figures are a pure view of it.
"""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _row_label(row: dict, keys) -> str:
    return "/".join(str(row[k]) for k in keys) or "run"


def _varying(rows: list[dict]) -> list[str]:
    keys = []
    for k in ("benchmark", "mode", "clusters", "seed"):
        if len({str(r.get(k)) for r in rows}) > 1:
            keys.append(k)
    return keys


def speedup_bars(rows: list[dict], path: str) -> str:
    """Bar chart of the speedup column, one bar per result row."""
    keys = _varying(rows) or ["clusters"]
    labels = [_row_label(r, keys) for r in rows]
    values = [float(r["speedup_vs_baseline"]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(rows) + 1.5), 3.2))
    ax.bar(range(len(rows)), values, color="#4878b0")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("speedup vs baseline")
    ax.set_xlabel(" / ".join(keys))
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def reduction_bars(rows: list[dict], path: str) -> str | None:
    """Copy-vs-svm total-time reduction per group; None if rows lack a
    copy/svm pairing."""
    groups: dict[tuple, dict[str, int]] = {}
    keys = [k for k in _varying(rows) if k != "mode"]
    for r in rows:
        g = groups.setdefault(tuple(str(r.get(k)) for k in keys), {})
        g[r["mode"]] = int(r["total_cycles"])
    pairs = [(g, v) for g, v in groups.items() if "copy" in v and "svm" in v]
    if not pairs:
        return None
    labels = ["/".join(g) or "run" for g, _ in pairs]
    values = [100.0 * (v["copy"] - v["svm"]) / v["copy"] for _, v in pairs]
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(pairs) + 1.5), 3.2))
    ax.bar(range(len(pairs)), values, color="#b04848")
    ax.set_xticks(range(len(pairs)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("total-time reduction, copy → svm (%)")
    ax.set_ylim(0, 100)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def latency_histogram(report, path: str) -> str:
    """Aggregate DRAM access latency histogram across all cores."""
    hist: dict[int, int] = {}
    for stats in report.per_core.values():
        for latency, count in stats["histogram"].items():
            hist[latency] = hist.get(latency, 0) + count
    xs = sorted(hist) or [0]
    ys = [hist.get(x, 0) for x in xs]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(xs, ys, width=0.9, color="#488060")
    ax.set_xlabel("access latency (cycles)")
    ax.set_ylabel("accesses")
    positive = [y for y in ys if y > 0]
    if positive and max(positive) > 50 * min(positive):
        ax.set_yscale("log")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def occupancy_plot(report, path: str, bucket: int) -> str:
    """Interconnect bytes moved per time bucket."""
    xs = [t for t, _ in report.occupancy]
    ys = [v / bucket for _, v in report.occupancy]
    fig, ax = plt.subplots(figsize=(5.5, 3.0))
    if xs:
        ax.step(xs, ys, where="post", color="#6048b0")
        ax.fill_between(xs, ys, step="post", alpha=0.25, color="#6048b0")
    ax.set_xlabel("PMCA cycle")
    ax.set_ylabel("bytes/cycle (bucket mean)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
