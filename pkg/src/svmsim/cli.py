"""Command-line frontend.

Subcommands:
  run              one benchmark execution -> results.csv (+ optional trace)
  sweep            Cartesian axis sweep -> results.csv with speedup column
  analyze          trace -> typed-event CSV, text report, assertion verdicts
  expand-matrix    flatten a graph-notation test matrix
  validate-config  parse a config document and report diagnostics

Exit codes: 0 success, 2 configuration/input error, 3 simulation fault,
4 assertion failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
from dataclasses import fields, replace

from . import analysis, plots
from .benchmarks import GENERATORS, SPECS, generate
from .config import (CalibrationConfig, ConfigError, ParsedConfig,
                     PlatformConfig, config_hash, parse_config, validate)
from .faults import SimulationFault
from .machine import Machine
from .offload import run_offload
from .testmatrix import MatrixError, expand_matrix

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3
EXIT_ASSERTION = 4

RESULT_COLUMNS = ["config_hash", "benchmark", "mode", "clusters",
                  "offload_cycles", "kernel_cycles", "total_cycles",
                  "l1_hits", "l2_hits", "misses", "speedup_vs_baseline"]

ASSERTION_FLAGS = {
    "hit-under-miss": analysis.hit_under_miss,
    "positive-latency": analysis.positive_latency,
    "miss-retry-hits": analysis.miss_retry_hits,
    "ordered-accesses": analysis.ordered_accesses,
}


class CliError(Exception):
    """Bad invocation or input document; maps to exit code 2."""


def _load_config(path: str | None) -> ParsedConfig:
    if path is None:
        return ParsedConfig(PlatformConfig(), CalibrationConfig())
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e}")
    return parse_config(text)


def _parse_params(items) -> dict:
    """--param key=value pairs; values become int when they look like one.

    A key must be a parameter of at least one benchmark; each benchmark
    then picks up only the keys it knows, so a mixed-benchmark sweep can
    carry e.g. a matmul-only size."""
    known = {f.name for spec in SPECS.values() for f in fields(spec)}
    params = {}
    for item in items or []:
        key, eq, value = item.partition("=")
        if not eq or not key:
            raise CliError(f"--param expects key=value, got {item!r}")
        if key not in known:
            raise CliError(f"unknown benchmark parameter {key!r} "
                           f"(have: {', '.join(sorted(known))})")
        try:
            params[key] = int(value)
        except ValueError:
            params[key] = value
    return params


def _execute_point(parsed: ParsedConfig, benchmark: str, mode: str,
                   clusters: int | None, seed: int, params: dict,
                   trace_path: str | None = None) -> dict:
    """Run one simulation and return a ResultRow dict (no speedup yet)."""
    platform = parsed.platform
    if clusters is not None:
        platform = replace(platform, n_clusters=clusters)
    problems = [d for d in validate(platform, parsed.calibration)
                if d.severity == "error"]
    if problems:
        raise CliError("; ".join(str(d) for d in problems))
    if benchmark not in GENERATORS:
        raise CliError(f"unknown benchmark {benchmark!r} "
                       f"(have: {', '.join(sorted(GENERATORS))})")
    if mode not in ("copy", "svm"):
        raise CliError(f"mode must be copy or svm, got {mode!r}")
    machine = Machine(platform, parsed.calibration, seed=seed)
    mine = {f.name for f in fields(SPECS[benchmark])}
    bench = generate(machine, benchmark, mode,
                     **{k: v for k, v in params.items() if k in mine})
    report = run_offload(machine, bench.descriptor, bench.programs)
    bench.verify(report)
    if trace_path:
        parent = os.path.dirname(trace_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        machine.store.dump(trace_path)
    return {
        "config_hash": config_hash(platform, parsed.calibration),
        "benchmark": benchmark,
        "mode": mode,
        "clusters": platform.n_clusters,
        "offload_cycles": report.offload_cycles,
        "kernel_cycles": report.kernel_cycles,
        "total_cycles": report.total_cycles,
        "l1_hits": report.l1_hits,
        "l2_hits": report.l2_hits,
        "misses": report.misses,
    }


def _write_results(rows: list[dict], out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


# -- run -----------------------------------------------------------------


def cmd_run(args) -> int:
    parsed = _load_config(args.config)
    row = _execute_point(parsed, args.benchmark, args.mode, args.clusters,
                         args.seed, _parse_params(args.param), args.trace)
    row["speedup_vs_baseline"] = "1.0000"
    path = _write_results([row], args.out)
    print(f"wrote {path}" + (f" and {args.trace}" if args.trace else ""))
    return EXIT_OK


# -- sweep ---------------------------------------------------------------

_AXIS_BASE = {"clusters", "mode", "benchmark", "seed"}


def _parse_axes(specs) -> list[tuple[str, list]]:
    axes = []
    for spec in specs:
        key, eq, values = spec.partition("=")
        if not eq or not key or not values:
            raise CliError(f"--axis expects key=v1,v2,..., got {spec!r}")
        vals: list = values.split(",")
        if key in ("clusters", "seed"):
            try:
                vals = [int(v) for v in vals]
            except ValueError:
                raise CliError(f"axis {key} takes integers, got {values!r}")
        elif key not in _AXIS_BASE:
            known = {f.name for spec in SPECS.values() for f in fields(spec)}
            if key not in known:
                raise CliError(f"unknown axis {key!r} (have: "
                               f"{', '.join(sorted(_AXIS_BASE | known))})")
            vals = [int(v) if v.lstrip("-").isdigit() else v for v in vals]
        axes.append((key, vals))
    if not axes:
        raise CliError("sweep needs at least one --axis")
    seen = [k for k, _ in axes]
    if len(set(seen)) != len(seen):
        raise CliError(f"duplicate axis in {seen}")
    return axes


def cmd_sweep(args) -> int:
    parsed = _load_config(args.config)
    axes = _parse_axes(args.axis)
    base_params = _parse_params(args.param)
    rows = []
    for combo in itertools.product(*[vals for _, vals in axes]):
        point = dict(zip([k for k, _ in axes], combo))
        params = dict(base_params)
        for key, value in point.items():
            if key not in _AXIS_BASE:
                params[key] = value
        rows.append(_execute_point(
            parsed,
            point.get("benchmark", args.benchmark),
            point.get("mode", args.mode),
            point.get("clusters", args.clusters),
            point.get("seed", args.seed),
            params))
    # Baseline per group: the first value of the first axis, grouped by the
    # remaining axes' values.
    first_key = axes[0][0]
    group_keys = [k for k, _ in axes[1:]]
    baseline_kernel: dict[tuple, int] = {}
    for row, combo in zip(rows, itertools.product(*[v for _, v in axes])):
        point = dict(zip([k for k, _ in axes], combo))
        group = tuple(point[k] for k in group_keys)
        if point[first_key] == axes[0][1][0]:
            baseline_kernel[group] = row["kernel_cycles"]
    for row, combo in zip(rows, itertools.product(*[v for _, v in axes])):
        point = dict(zip([k for k, _ in axes], combo))
        base = baseline_kernel.get(tuple(point[k] for k in group_keys))
        if base is None:
            raise CliError(f"group {point} has no baseline "
                           f"({first_key}={axes[0][1][0]}) row")
        row["speedup_vs_baseline"] = f"{base / row['kernel_cycles']:.4f}"
    path = _write_results(rows, args.out)
    written = [path]
    if not args.no_figures:
        written.append(plots.speedup_bars(
            rows, os.path.join(args.out, "speedup.png")))
        red = plots.reduction_bars(
            rows, os.path.join(args.out, "reduction.png"))
        if red:
            written.append(red)
    print("wrote " + ", ".join(written))
    return EXIT_OK


# -- analyze ---------------------------------------------------------------


def _event_rows(decoded) -> list[dict]:
    rows = []
    for acc in decoded.accesses:
        kind = "ptw_read" if acc.ptw else (
            ("dma_write" if acc.is_write else "dma_read") if acc.dma
            else ("store" if acc.is_write else "load"))
        rows.append(dict(event=kind, core=f"0x{acc.core:05x}",
                         request_ts=acc.request_ts, response_ts=acc.response_ts,
                         latency=f"{acc.latency:g}",
                         address=f"0x{acc.address:08x}", nbytes=acc.nbytes,
                         detail=""))
    for ep in decoded.episodes:
        detail = ";".join(f"{k}={v:g}" for k, v in sorted(ep.phases.items()))
        rows.append(dict(event=f"tlb_{ep.outcome}", core=f"0x{ep.core:05x}",
                         request_ts=ep.request_ts, response_ts=ep.complete_ts,
                         latency=f"{ep.span:g}", address=f"0x{ep.va:08x}",
                         nbytes=0, detail=detail))
    for sync in decoded.syncs:
        rows.append(dict(event="barrier", core=f"0x{sync.cores[0]:05x}",
                         request_ts=sync.ts, response_ts=sync.ts, latency="0",
                         address="0x00000000", nbytes=0,
                         detail="cores=" + "+".join(f"0x{c:05x}"
                                                    for c in sync.cores)))
    rows.sort(key=lambda r: (r["request_ts"], r["event"], r["core"]))
    return rows


def cmd_analyze(args) -> int:
    if args.ratio <= 0:
        raise CliError(f"--ratio must be positive, got {args.ratio}")
    try:
        _, events = analysis.parse(args.trace)
    except OSError as e:
        raise CliError(f"cannot read trace {args.trace}: {e}")
    except analysis.TraceFormatError as e:
        raise CliError(f"corrupt trace {args.trace}: {e}")
    decoded = analysis.decode(events)
    # Assertions check cycle-domain invariants (e.g. single-cycle L1 hits),
    # so they run on the raw decode; --ratio only rescales the reported
    # latencies.
    selected = [ASSERTION_FLAGS[name] for name in
                (getattr(args, "assert") or sorted(ASSERTION_FLAGS))]
    verdicts = [check(decoded) for check in selected]
    if args.ratio != 1.0:
        decoded = analysis.rescale(decoded, args.ratio)
    report = analysis.analyze(decoded, assertions=[], bucket=args.bucket)
    report.verdicts.extend(verdicts)
    os.makedirs(args.out, exist_ok=True)
    events_path = os.path.join(args.out, "events.csv")
    columns = ["event", "core", "request_ts", "response_ts", "latency",
               "address", "nbytes", "detail"]
    with open(events_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(_event_rows(decoded))
    report_path = os.path.join(args.out, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_text() + "\n")
    written = [events_path, report_path]
    if not args.no_figures:
        written.append(plots.latency_histogram(
            report, os.path.join(args.out, "latency_hist.png")))
        written.append(plots.occupancy_plot(
            report, os.path.join(args.out, "bus_occupancy.png"),
            args.bucket))
    print("wrote " + ", ".join(written))
    for verdict in report.verdicts:
        print(verdict)
    if any(not v.passed for v in report.verdicts):
        return EXIT_ASSERTION
    return EXIT_OK


# -- expand-matrix / validate-config ----------------------------------------


def cmd_expand_matrix(args) -> int:
    try:
        with open(args.graph, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise CliError(f"cannot read graph {args.graph}: {e}")
    for combo in expand_matrix(text):
        print(" ".join(combo))
    return EXIT_OK


def cmd_validate_config(args) -> int:
    parsed = _load_config(args.config)
    diagnostics = list(parsed.warnings)
    seen = {str(d) for d in diagnostics}
    diagnostics += [d for d in validate(parsed.platform, parsed.calibration)
                    if str(d) not in seen]
    for diag in diagnostics:
        print(diag, file=sys.stderr)
    if any(d.severity == "error" for d in diagnostics):
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


# -- argument wiring ---------------------------------------------------------


def _add_point_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="configuration document path")
    p.add_argument("--benchmark", default="matmul",
                   help="benchmark name (default matmul)")
    p.add_argument("--mode", default="svm", help="copy or svm (default svm)")
    p.add_argument("--clusters", type=int, default=None,
                   help="override cluster count")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="benchmark parameter override, repeatable")
    p.add_argument("--out", default=".", help="output directory (default .)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="svmsim",
        description="Deterministic SoC simulator for shared-virtual-memory "
                    "offload studies.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one benchmark")
    _add_point_flags(p)
    p.add_argument("--trace", help="write a binary trace to this path")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="Cartesian sweep over axes")
    _add_point_flags(p)
    p.add_argument("--axis", action="append", default=[],
                   metavar="KEY=V1,V2,...",
                   help="sweep axis; the first one is the speedup axis")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("analyze", help="decode and analyze a trace")
    p.add_argument("--trace", required=True, help="trace file path")
    p.add_argument("--assert", action="append",
                   choices=sorted(ASSERTION_FLAGS),
                   help="assertion to check (repeatable; default all)")
    p.add_argument("--ratio", type=float, default=1.0,
                   help="clock ratio applied to latencies (default 1.0)")
    p.add_argument("--bucket", type=int, default=1024,
                   help="occupancy bucket size in cycles (default 1024)")
    p.add_argument("--out", default=".", help="output directory (default .)")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("expand-matrix", help="flatten a test-matrix graph")
    p.add_argument("--graph", required=True, help="graph document path")
    p.set_defaults(fn=cmd_expand_matrix)

    p = sub.add_parser("validate-config", help="check a config document")
    p.add_argument("--config", required=True, help="configuration document")
    p.set_defaults(fn=cmd_validate_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, MatrixError, ValueError) as e:
        msg = str(e)
        print(msg if msg.startswith("error") else f"error: {msg}",
              file=sys.stderr)
        return EXIT_CONFIG
    except SimulationFault as e:
        print(f"simulation fault: {e}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
