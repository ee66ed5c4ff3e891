import json
import math
import os
import pathlib

import numpy as np
import pytest

from hvt.cli import ScenarioError, load_scenario, main, parse_scenario
from hvt.qcore import as_matrix
from hvt.scenarios import dumps_json

EXAMPLE = pathlib.Path(__file__).resolve().parents[1] / "scenarios" / "driven_qubit.json"

S = 1 / math.sqrt(2)
SPIN_DOC = {
    "name": "spin",
    "h0": [[0, 0], [0, 0]],
    "initial": {"ket": [[S, 0], [S, 0]]},
    "propositions": {
        "X": {"operator": [[0.5, 0.5], [0.5, 0.5]]},
        "Y": {"operator": [[0.5, [0, -0.5]], [[0, 0.5], 0.5]]},
    },
}


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc), encoding="utf-8")
    return str(p)


def test_minimal_document_parses():
    doc = parse_scenario('{"h0": [[1, 0], [0, -1]], "initial": {"ket": [1, 0]}}')
    sc = load_scenario(doc)
    assert sc.model.dim == 2 and sc.strict


def test_missing_h0_names_path():
    with pytest.raises(ScenarioError, match="^/h0: required") as info:
        parse_scenario('{"initial": {"ket": [1]}}')
    assert info.value.path == "/h0"


def test_schema_violation_names_nested_path():
    bad = {"h0": [[1]], "initial": {"ket": [1]}, "partitions": [{"time": "x", "cells": [[0]]}]}
    with pytest.raises(ScenarioError, match="^/partitions/0/time"):
        parse_scenario(json.dumps(bad))


def test_syntax_error_reports_position():
    with pytest.raises(ScenarioError, match=r"line 1 column 9 \(char 8\)"):
        parse_scenario('{"h0": [}')


def test_unknown_key_rejected():
    with pytest.raises(ScenarioError, match="Additional properties"):
        parse_scenario('{"h0": [[1]], "initial": {"ket": [1]}, "extra": 1}')


def test_complex_entries_round_trip_bit_exactly(rng):
    m = rng.normal(size=(3, 3)) * 10.0 ** rng.integers(-20, 20, size=(3, 3)) \
        + 1j * rng.normal(size=(3, 3)) / 3
    m = m + m.conj().T
    doc = {"h0": [[[z.real, z.imag] for z in row] for row in m], "initial": {"density": np.eye(3) / 3}}
    back = parse_scenario(dumps_json(doc))
    assert np.array_equal(as_matrix(back["h0"]), m)


def test_load_rejects_index_out_of_range():
    doc = {"h0": [[1, 0], [0, 2]], "initial": {"ket": [1, 0]}, "propositions": {"A": {"indices": [2]}}}
    with pytest.raises(ScenarioError, match="^/propositions/A/indices: index 2 out of range"):
        load_scenario(doc)


def test_check_compat_json(tmp_path, capsys):
    assert main(["check-compat", write(tmp_path, SPIN_DOC), "--props", "X,Y", "--time", "0.0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"] == "incompatible"
    assert out["worst_residual"] == pytest.approx(0.25, abs=1e-12)
    assert list(out)[:6] == ["order", "subset", "worst_residual", "verdict", "classification", "sampled"]


def test_prob_strict_refusal_exit_1(tmp_path, capsys):
    assert main(["prob", write(tmp_path, SPIN_DOC), "--expr", "X@0 AND Y@0"]) == 1
    assert "refused" in capsys.readouterr().err


def test_prob_permissive(tmp_path, capsys):
    assert main(["prob", write(tmp_path, SPIN_DOC), "--expr", "X@0 AND Y@0", "--permissive"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["probability"] == pytest.approx(0.375, abs=1e-12)
    assert out["mode"] == "permissive"


def test_prob_expression_and_table(capsys):
    assert main(["prob", str(EXAMPLE), "--expr", "NOT U1@1.3 OR U1@1.3 AND L1@1.3"]) == 0
    p_or = json.loads(capsys.readouterr().out)["probability"]
    assert main(["prob", str(EXAMPLE), "--props", "L1"]) == 0
    p_l = json.loads(capsys.readouterr().out)["probability"]
    assert p_or == pytest.approx(p_l, abs=1e-12)
    assert main(["prob", str(EXAMPLE), "--props", "L1,U2", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.split("\n")
    assert lines[0] == "outcome_a,outcome_b,joint,marginal_a,marginal_b,conditional_a_given_b"
    assert len(lines) == 6


def test_prob_expression_errors_exit_2(capsys):
    assert main(["prob", str(EXAMPLE), "--expr", "Q@0"]) == 2
    assert "unknown label" in capsys.readouterr().err
    assert main(["prob", str(EXAMPLE)]) == 2


def test_sample_rerun_and_threads_identical(tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv("HVT_THREADS", "1")
    assert main(["sample", str(EXAMPLE), "--trials", "3000", "--seed", "42", "--out", str(a)]) == 0
    monkeypatch.setenv("HVT_THREADS", "4")
    assert main(["sample", str(EXAMPLE), "--trials", "3000", "--seed", "42", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert sorted(os.listdir(tmp_path)) == ["a.csv", "b.csv"]


def test_sample_json_stats(capsys):
    assert main(["sample", str(EXAMPLE), "--trials", "5000", "--seed", "1", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_trials"] == 5000
    assert sum(h["count"] for h in out["histories"]) == 5000
    assert sum(h["probability"] for h in out["histories"]) == pytest.approx(1.0, abs=1e-12)
    assert out["p_value"] > 0.001


def test_sample_needs_partitions(tmp_path, capsys):
    assert main(["sample", write(tmp_path, SPIN_DOC), "--trials", "10", "--seed", "1"]) == 2
    assert "/partitions" in capsys.readouterr().err


def test_scenario_run_singlet(tmp_path):
    out = tmp_path / "report.json"
    assert main(["scenario", "run", "singlet_chsh", "--out", str(out)]) == 0
    rep = json.loads(out.read_text(encoding="utf-8"))
    chk = [c for c in rep["checks"] if c["description"].startswith("CHSH combination")][0]
    assert chk["expected"] == 2 * math.sqrt(2)
    assert abs(chk["actual"] - 2 * math.sqrt(2)) < 1e-12 and chk["pass"]


def test_scenario_csv_directory(tmp_path):
    assert main(["scenario", "run", "gleason_demo", "--format", "csv", "--out", str(tmp_path / "csv")]) == 0
    assert os.listdir(tmp_path / "csv") == ["gleason_demo_overlaps.csv"]


def test_scenario_list_and_unknown(capsys):
    assert main(["scenario", "list"]) == 0
    assert "singlet_chsh" in capsys.readouterr().out.split()
    assert main(["scenario", "run", "nope"]) == 2


def test_report_with_factor(tmp_path, capsys):
    doc = dict(SPIN_DOC, initial={"ket": [1, 0]})
    doc["grids"] = {
        "Sx": {"anchors": [-0.5, 0, 0.5], "operator": [[0, 0.5], [0.5, 0]]},
        "Sy": {"uniform": {"delta": 0.5, "i_min": -1, "i_max": 1},
               "operator": [[0, [0, -0.5]], [[0, 0.5], 0]]},
    }
    path = write(tmp_path, doc)
    assert main(["report", path]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pairs"][0]["robertson_bound"] == pytest.approx(0.25, abs=1e-12)
    assert out["pairs"][0]["classical_ok"] is False
    assert main(["report", path, "--factor", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["pairs"][0]["classical_ok"] is True


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["report", str(EXAMPLE), "--factor", "-1"])
    assert info.value.code == 2


def test_missing_file_exit_2(capsys):
    assert main(["report", "/nonexistent/x.json"]) == 2
    assert "cannot read" in capsys.readouterr().err
