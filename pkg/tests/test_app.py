import json

import pytest

import app
from fieldio import read_csv, read_json
from workers import LabPhase, MasterWorker
from workers.verification import (SUITE_FUNCTIONS, check_frobenius, check_ibp, check_membership,
                                  check_projection, check_trace, check_uy)


@pytest.fixture(scope="module")
def blowup_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("split")
    assert app.main(["flow", "--preset", "split_1_-1", "--out", str(out)]) == 0
    return out


def test_flow_writes_the_run_directory(blowup_run):
    verdict = read_json(blowup_run / "verdict.json")
    assert verdict["verdict"] == "BlowUp"
    assert verdict["sup_h"] > 1e6
    assert len(verdict["scenario_hash"]) == 64
    assert (blowup_run / "a.tfld").exists()
    assert (blowup_run / "diagnostics.csv").exists()
    assert read_json(blowup_run / "trajectory.json")["snapshots"]


def test_timeout_exits_nonzero(tmp_path):
    scenario = {
        "geometry": {"n": 1, "grid": 16},
        "bundle": {"block_ranks": [1, 1], "degrees": [1, -1]},
        "flow": {"dt0": 0.01, "t_max": 0.1, "stride": 5},
    }
    path = tmp_path / "short.json"
    path.write_text(json.dumps(scenario), encoding="utf-8")
    assert app.main(["flow", "--scenario", str(path), "--out", str(tmp_path / "run")]) == 1
    assert read_json(tmp_path / "run" / "verdict.json")["verdict"] == "Timeout"


def test_destab_writes_evidence_and_certificate(blowup_run):
    assert app.main(["destab", "--run", str(blowup_run)]) == 0
    report = read_json(blowup_run / "destab.json")
    assert report["k"] == 1
    assert report["destabilizing"]
    assert report["slope_subsheaf"] == pytest.approx(1.0, abs=1e-3)
    assert report["membership_sample"]["agree"]
    assert read_csv(blowup_run / "rank_histogram.csv")[0]["eigencount"] == "1"
    assert (blowup_run / "certificate.pdf").read_bytes().startswith(b"%PDF")


def test_destab_of_a_converged_run_fails(tmp_path):
    out = tmp_path / "flat"
    assert app.main(["flow", "--preset", "flat_surface", "--out", str(out)]) == 0
    assert app.main(["destab", "--run", str(out)]) == 1


def test_frobenius_problem_file(tmp_path):
    problem = tmp_path / "problem.json"
    problem.write_text(json.dumps({"family": "gauged_rank2", "degree": 5}), encoding="utf-8")
    assert app.main(["frobenius", "--problem", str(problem), "--float", "--out", str(tmp_path)]) == 0
    solution = read_json(tmp_path / "frobenius_solution.json")
    assert solution["mode"] == "float"
    assert max(solution["residuals"]) < 1e-12


def test_frobenius_needs_a_problem():
    assert app.main(["frobenius"]) == 1


def test_check_prints_a_table(capsys):
    assert app.main(["check", "frobenius"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split() == ["suite", "case", "value", "threshold", "result"]
    assert "FAIL" not in out
    assert out.count("PASS") == 6


def test_unknown_suite_fails():
    assert app.main(["check", "nope"]) == 1


def test_presets_are_listed(capsys):
    assert app.main(["presets"]) == 0
    assert "split_2_0" in capsys.readouterr().out.split()


def test_scenario_and_preset_are_exclusive(tmp_path):
    assert app.main(["flow", "--preset", "split_1_-1", "--scenario", str(tmp_path / "x.json")]) == 1


def test_master_records_its_phases(tmp_path):
    master = MasterWorker.from_args(preset="flat_surface", out_dir=str(tmp_path))
    master.flow()
    assert master.history == [LabPhase.CONFIGURED, LabPhase.FLOWING, LabPhase.DONE]


def test_format_table_aligns_columns():
    rows = [{"suite": "uy", "case": "a", "value": 0.5, "threshold": 1.0, "passed": True},
            {"suite": "uy", "case": "longer case", "value": 2.0, "threshold": 1.0, "passed": False}]
    lines = app.format_table(rows).splitlines()
    assert len(lines) == 4
    assert set(lines[1]) <= {"-", " "}
    assert lines[3].rstrip().endswith("FAIL")


# ============================================================================
# SUITES
# ============================================================================

@pytest.mark.parametrize("suite", [
    lambda: check_uy(count=2),
    check_ibp,
    check_frobenius,
    lambda: check_projection(presets=("split_1_-1", "split_2_0")),
    lambda: check_membership(count=4, presets=("split_1_-1",)),
    lambda: check_trace(presets=("split_1_-1", "line_degree0", "flat_surface")),
])
def test_suites_pass(suite):
    rows = suite()
    assert rows
    assert all(r["passed"] for r in rows), [r for r in rows if not r["passed"]]


def test_trace_suite_reads_every_accepted_step():
    rows = check_trace(presets=("split_1_-1",))
    assert [r["case"] for r in rows] == ["split_1_-1 trace", "split_1_-1 det"]
    assert rows[0]["note"].endswith("BlowUp")
    assert int(rows[0]["note"].split()[0]) > 1
    assert all(r["passed"] for r in rows)


def test_suite_defaults_cover_the_full_sizes():
    import inspect

    assert inspect.signature(check_uy).parameters["count"].default == 1000
    assert inspect.signature(check_membership).parameters["count"].default == 20
    assert inspect.signature(check_trace).parameters["presets"].default is None
    assert set(SUITE_FUNCTIONS) == {"ibp", "uy", "harnack", "trace", "projection", "membership", "frobenius"}
