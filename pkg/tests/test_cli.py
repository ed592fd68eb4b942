"""Command-line frontend: subcommand wiring, CSV/figure outputs, exit
codes, and byte-level determinism of the run/sweep/analyze paths."""

import csv

import pytest

from svmsim import analysis
from svmsim.cli import RESULT_COLUMNS, main
from svmsim.faults import SimulationFault
from svmsim.tracing import (KIND_READ_REQ, KIND_READ_RESP, OUTCOME_L1,
                            OUTCOME_L2, OUTCOME_SHIFT)
from tests.conftest import write_trace

L1 = OUTCOME_L1 << OUTCOME_SHIFT
L2 = OUTCOME_L2 << OUTCOME_SHIFT

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

CONFIG_DOC = """\
# fast-to-simulate design point
[platform]
n_clusters = 2
pes_per_cluster = 4
l1_spm_kib = 64

[calibration]
dram_base_latency = 8
"""

RUN_ARGS = ["--benchmark", "matmul", "--mode", "svm", "--param", "n=16"]

# A translation episode trace where an L1 hit inside an L2 search window
# takes two cycles: the hit-under-miss assertion must reject it.
FORGED = [
    (10, 0, KIND_READ_REQ, 0, 0x10, 0x5000),
    (11, 0, KIND_READ_REQ, 0, 0x11, 0x6000),
    (13, 1, KIND_READ_RESP, L1, 0x11, 0x6000),
    (14, 1, KIND_READ_RESP, L2, 0x10, 0x5000),
]

PLAIN_GRAPH = """\
[axis platform]
zc706
juno

[axis app]
matmul
pagerank
memcopy
"""

RESTRICTED_GRAPH = PLAIN_GRAPH + """
compat: zc706 matmul
compat: zc706 pagerank
compat: juno matmul
compat: juno memcopy
compat: zc706 memcopy
"""


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text(CONFIG_DOC)
    return str(path)


@pytest.fixture(scope="module")
def run_outputs(tmp_path_factory, config_file):
    """One `svmsim run` with a trace, shared by the read-only tests."""
    out = tmp_path_factory.mktemp("run")
    trace = str(out / "run.trace")
    code = main(["run", "--config", config_file, *RUN_ARGS,
                 "--out", str(out), "--trace", trace])
    assert code == 0
    return {"dir": out, "csv": str(out / "results.csv"), "trace": trace}


@pytest.fixture(scope="module")
def sweep_outputs(tmp_path_factory, config_file):
    """A 2x2 sweep (clusters x mode) with figures enabled."""
    out = tmp_path_factory.mktemp("sweep")
    code = main(["sweep", "--config", config_file,
                 "--benchmark", "matmul", "--param", "n=16",
                 "--axis", "clusters=1,2", "--axis", "mode=copy,svm",
                 "--out", str(out)])
    assert code == 0
    return {"dir": out, "rows": read_rows(out / "results.csv")}


@pytest.fixture(scope="module")
def analyze_outputs(tmp_path_factory, run_outputs):
    out = tmp_path_factory.mktemp("analyze")
    code = main(["analyze", "--trace", run_outputs["trace"],
                 "--out", str(out)])
    assert code == 0
    return {"dir": out, "rows": read_rows(out / "events.csv")}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def verdict_lines(captured: str) -> list[str]:
    return [ln for ln in captured.splitlines()
            if ln.startswith(("pass:", "FAIL:"))]


class TestRun:
    def test_results_csv_has_the_declared_columns(self, run_outputs):
        with open(run_outputs["csv"], newline="") as fh:
            header = fh.readline().strip().split(",")
        assert header == RESULT_COLUMNS

    def test_single_run_row_contents(self, run_outputs):
        rows = read_rows(run_outputs["csv"])
        assert len(rows) == 1
        row = rows[0]
        assert row["benchmark"] == "matmul"
        assert row["mode"] == "svm"
        assert row["clusters"] == "2"
        assert row["speedup_vs_baseline"] == "1.0000"
        assert len(row["config_hash"]) == 12
        int(row["config_hash"], 16)
        assert int(row["total_cycles"]) \
            == int(row["offload_cycles"]) + int(row["kernel_cycles"])
        assert int(row["kernel_cycles"]) > 0
        assert int(row["misses"]) > 0   # svm mode faults its pages in

    def test_trace_file_parses_and_matches_header_count(self, run_outputs):
        header, events = analysis.parse(run_outputs["trace"])
        assert header["record_count"] == len(events) > 0

    def test_run_prints_what_it_wrote(self, tmp_path, config_file, capsys):
        code = main(["run", "--config", config_file, *RUN_ARGS,
                     "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "wrote" in out and "results.csv" in out

    def test_three_runs_are_byte_identical(self, tmp_path, config_file):
        blobs = []
        for i in range(3):
            out = tmp_path / f"r{i}"
            trace = out / "run.trace"
            code = main(["run", "--config", config_file, *RUN_ARGS,
                         "--out", str(out), "--trace", str(trace)])
            assert code == 0
            blobs.append(((out / "results.csv").read_bytes(),
                          trace.read_bytes()))
        assert blobs[0] == blobs[1] == blobs[2]

    def test_clusters_flag_overrides_default_config(self, tmp_path):
        code = main(["run", "--clusters", "1", "--param", "n=8",
                     "--out", str(tmp_path)])
        assert code == 0
        row = read_rows(tmp_path / "results.csv")[0]
        assert row["clusters"] == "1"

    def test_unknown_benchmark_is_a_config_error(self, tmp_path, capsys):
        code = main(["run", "--benchmark", "bogus", "--out", str(tmp_path)])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "unknown benchmark" in err

    def test_bad_mode_is_a_config_error(self, tmp_path, capsys):
        code = main(["run", "--mode", "teleport", "--out", str(tmp_path)])
        assert code == 2
        assert "mode must be copy or svm" in capsys.readouterr().err

    def test_unknown_param_key_is_rejected(self, tmp_path, capsys):
        code = main(["run", "--param", "warp=9", "--out", str(tmp_path)])
        assert code == 2
        assert "unknown benchmark parameter" in capsys.readouterr().err

    def test_param_without_equals_is_rejected(self, tmp_path, capsys):
        code = main(["run", "--param", "n16", "--out", str(tmp_path)])
        assert code == 2
        assert "--param expects key=value" in capsys.readouterr().err

    def test_invalid_benchmark_size_is_a_config_error(self, tmp_path,
                                                      config_file, capsys):
        # 12 is a multiple of the 4-PE tile but not of the 8-column panel.
        code = main(["run", "--config", config_file, "--param", "n=12",
                     "--out", str(tmp_path)])
        assert code == 2
        assert "multiple" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path)])
        assert code == 2
        assert "cannot read config" in capsys.readouterr().err

    def test_config_error_keeps_its_own_prefix(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[platform]\npes_per_cluster = 1\n")
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path)])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error: pes_per_cluster")
        assert "error: error" not in err

    def test_simulation_fault_maps_to_exit_3(self, tmp_path, config_file,
                                             monkeypatch, capsys):
        def boom(machine, name, mode, **params):
            raise SimulationFault("injected fault")

        monkeypatch.setattr("svmsim.cli.generate", boom)
        code = main(["run", "--config", config_file, *RUN_ARGS,
                     "--out", str(tmp_path)])
        assert code == 3
        err = capsys.readouterr().err
        assert err.startswith("simulation fault: injected fault")


class TestSweep:
    def test_rows_come_out_in_product_order(self, sweep_outputs):
        points = [(r["clusters"], r["mode"]) for r in sweep_outputs["rows"]]
        assert points == [("1", "copy"), ("1", "svm"),
                          ("2", "copy"), ("2", "svm")]

    def test_speedup_is_kernel_based_per_mode_group(self, sweep_outputs):
        rows = sweep_outputs["rows"]
        base = {r["mode"]: int(r["kernel_cycles"])
                for r in rows if r["clusters"] == "1"}
        for row in rows:
            expect = base[row["mode"]] / int(row["kernel_cycles"])
            assert row["speedup_vs_baseline"] == f"{expect:.4f}"
        assert rows[0]["speedup_vs_baseline"] == "1.0000"
        assert rows[1]["speedup_vs_baseline"] == "1.0000"

    def test_figures_are_rendered(self, sweep_outputs):
        for name in ("speedup.png", "reduction.png"):
            blob = (sweep_outputs["dir"] / name).read_bytes()
            assert blob.startswith(PNG_MAGIC)

    def test_no_figures_flag_skips_rendering(self, tmp_path, config_file):
        code = main(["sweep", "--config", config_file,
                     "--benchmark", "matmul", "--param", "n=16",
                     "--axis", "mode=copy,svm", "--no-figures",
                     "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "results.csv").exists()
        assert list(tmp_path.glob("*.png")) == []

    def test_benchmark_parameter_axis(self, tmp_path, config_file):
        code = main(["sweep", "--config", config_file,
                     "--benchmark", "matmul", "--axis", "n=8,16",
                     "--no-figures", "--out", str(tmp_path)])
        assert code == 0
        rows = read_rows(tmp_path / "results.csv")
        assert len(rows) == 2
        assert rows[0]["speedup_vs_baseline"] == "1.0000"
        expect = int(rows[0]["kernel_cycles"]) / int(rows[1]["kernel_cycles"])
        assert rows[1]["speedup_vs_baseline"] == f"{expect:.4f}"
        assert int(rows[1]["kernel_cycles"]) > int(rows[0]["kernel_cycles"])

    def test_sweep_requires_an_axis(self, tmp_path, capsys):
        code = main(["sweep", "--out", str(tmp_path)])
        assert code == 2
        assert "at least one --axis" in capsys.readouterr().err

    def test_duplicate_axis_is_rejected(self, tmp_path, capsys):
        code = main(["sweep", "--axis", "mode=svm", "--axis", "mode=copy",
                     "--out", str(tmp_path)])
        assert code == 2
        assert "duplicate axis" in capsys.readouterr().err

    def test_non_integer_clusters_axis_is_rejected(self, tmp_path, capsys):
        code = main(["sweep", "--axis", "clusters=one,two",
                     "--out", str(tmp_path)])
        assert code == 2
        assert "takes integers" in capsys.readouterr().err

    def test_unknown_axis_is_rejected(self, tmp_path, capsys):
        code = main(["sweep", "--axis", "voltage=1,2",
                     "--out", str(tmp_path)])
        assert code == 2
        assert "unknown axis" in capsys.readouterr().err


class TestAnalyze:
    EVENT_KINDS = {"load", "store", "dma_read", "dma_write", "ptw_read",
                   "tlb_l1_hit", "tlb_l2_hit", "tlb_miss", "tlb_dropped",
                   "barrier"}

    def test_events_csv_columns_and_kinds(self, analyze_outputs):
        rows = analyze_outputs["rows"]
        assert rows, "events.csv should not be empty"
        assert set(rows[0]) == {"event", "core", "request_ts", "response_ts",
                                "latency", "address", "nbytes", "detail"}
        kinds = {r["event"] for r in rows}
        assert kinds <= self.EVENT_KINDS
        assert any(k.startswith("tlb_") for k in kinds)
        assert any(k.startswith("dma_") for k in kinds)

    def test_events_are_time_ordered(self, analyze_outputs):
        stamps = [int(r["request_ts"]) for r in analyze_outputs["rows"]]
        assert stamps == sorted(stamps)

    def test_report_text_sections(self, analyze_outputs):
        text = (analyze_outputs["dir"] / "report.txt").read_text()
        assert "per-core DRAM latency:" in text
        assert "TLB:" in text
        assert "pass:" in text and "FAIL" not in text

    def test_figures_are_rendered(self, analyze_outputs):
        for name in ("latency_hist.png", "bus_occupancy.png"):
            blob = (analyze_outputs["dir"] / name).read_bytes()
            assert blob.startswith(PNG_MAGIC)

    def test_verdicts_all_pass_on_a_real_trace(self, run_outputs, tmp_path,
                                               capsys):
        code = main(["analyze", "--trace", run_outputs["trace"],
                     "--out", str(tmp_path), "--no-figures"])
        assert code == 0
        lines = verdict_lines(capsys.readouterr().out)
        assert len(lines) == 4
        assert all(ln.startswith("pass:") for ln in lines)

    def test_no_figures_flag_skips_rendering(self, run_outputs, tmp_path):
        code = main(["analyze", "--trace", run_outputs["trace"],
                     "--out", str(tmp_path), "--no-figures"])
        assert code == 0
        assert list(tmp_path.glob("*.png")) == []

    def test_ratio_rescales_latencies_but_not_timestamps(self, run_outputs,
                                                         tmp_path,
                                                         analyze_outputs):
        code = main(["analyze", "--trace", run_outputs["trace"],
                     "--ratio", "2.0", "--out", str(tmp_path),
                     "--no-figures"])
        assert code == 0
        scaled = read_rows(tmp_path / "events.csv")
        plain = analyze_outputs["rows"]
        assert len(scaled) == len(plain)
        for a, b in zip(plain, scaled):
            assert (a["event"], a["core"], a["address"]) \
                == (b["event"], b["core"], b["address"])
            assert a["request_ts"] == b["request_ts"]
            assert float(b["latency"]) == 2.0 * float(a["latency"])

    def test_nonpositive_ratio_is_rejected(self, run_outputs, tmp_path,
                                           capsys):
        code = main(["analyze", "--trace", run_outputs["trace"],
                     "--ratio", "0", "--out", str(tmp_path)])
        assert code == 2
        assert "must be positive" in capsys.readouterr().err

    def test_corrupt_trace_is_a_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.trace"
        bad.write_bytes(b"these are not the records you are looking for")
        code = main(["analyze", "--trace", str(bad), "--out", str(tmp_path)])
        assert code == 2
        assert "corrupt trace" in capsys.readouterr().err

    def test_missing_trace_file(self, tmp_path, capsys):
        code = main(["analyze", "--trace", str(tmp_path / "no.trace"),
                     "--out", str(tmp_path)])
        assert code == 2
        assert "cannot read trace" in capsys.readouterr().err

    def test_assertion_failure_maps_to_exit_4(self, tmp_path, capsys):
        trace = write_trace(tmp_path / "forged.trace", FORGED)
        code = main(["analyze", "--trace", trace, "--out", str(tmp_path),
                     "--no-figures"])
        assert code == 4
        out = capsys.readouterr().out
        fails = [ln for ln in verdict_lines(out) if ln.startswith("FAIL:")]
        assert len(fails) == 1
        assert "took 2.0 cycles" in fails[0]

    def test_assert_flag_narrows_the_checked_set(self, tmp_path, capsys):
        trace = write_trace(tmp_path / "forged.trace", FORGED)
        code = main(["analyze", "--trace", trace, "--out", str(tmp_path),
                     "--assert", "positive-latency", "--no-figures"])
        assert code == 0
        lines = verdict_lines(capsys.readouterr().out)
        assert len(lines) == 1 and lines[0].startswith("pass:")


class TestExpandMatrix:
    def write(self, tmp_path, text):
        path = tmp_path / "matrix.graph"
        path.write_text(text)
        return str(path)

    def test_plain_graph_prints_the_product(self, tmp_path, capsys):
        code = main(["expand-matrix",
                     "--graph", self.write(tmp_path, PLAIN_GRAPH)])
        assert code == 0
        assert capsys.readouterr().out.splitlines() == [
            "zc706 matmul", "zc706 pagerank", "zc706 memcopy",
            "juno matmul", "juno pagerank", "juno memcopy"]

    def test_compat_lines_prune_the_product(self, tmp_path, capsys):
        code = main(["expand-matrix",
                     "--graph", self.write(tmp_path, RESTRICTED_GRAPH)])
        assert code == 0
        rows = capsys.readouterr().out.splitlines()
        assert len(rows) == 5 and "juno pagerank" not in rows

    def test_malformed_graph_is_a_config_error(self, tmp_path, capsys):
        code = main(["expand-matrix",
                     "--graph", self.write(tmp_path,
                                           "[axis a]\nx\ncompat: x\n")])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "exactly two" in err

    def test_dead_end_axis_is_a_config_error(self, tmp_path, capsys):
        doc = "[axis a]\nx\ny\n\n[axis b]\np\n\ncompat: x p\n"
        code = main(["expand-matrix", "--graph", self.write(tmp_path, doc)])
        assert code == 2
        assert "zero compatible choices" in capsys.readouterr().err

    def test_missing_graph_file(self, tmp_path, capsys):
        code = main(["expand-matrix", "--graph", str(tmp_path / "no.graph")])
        assert code == 2
        assert "cannot read graph" in capsys.readouterr().err


class TestValidateConfig:
    def test_clean_config_says_ok(self, config_file, capsys):
        code = main(["validate-config", "--config", config_file])
        assert code == 0
        captured = capsys.readouterr()
        assert captured.out.strip() == "ok"
        assert captured.err == ""

    def test_off_menu_value_warns_but_passes(self, tmp_path, capsys):
        cfg = tmp_path / "odd.cfg"
        cfg.write_text("[platform]\nn_clusters = 3\n")
        code = main(["validate-config", "--config", str(cfg)])
        assert code == 0
        captured = capsys.readouterr()
        assert captured.out.strip() == "ok"
        assert "warning" in captured.err and "n_clusters" in captured.err

    def test_error_config_maps_to_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[platform]\nrab_l2_entries = 100\n")
        code = main(["validate-config", "--config", str(cfg)])
        assert code == 2
        assert "rab_l2_entries" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["validate-config",
                     "--config", str(tmp_path / "no.cfg")])
        assert code == 2
        assert "cannot read config" in capsys.readouterr().err
