#!/usr/bin/env python3
"""
Tests for the command line: config documents, CSV layout, tables, figure data and exit codes
"""

import csv
import json
import math
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from main_certifier import burnin_table, figure_data, main, reference_bounds
from mcmc.planner import plan_contracting_normals
from models.errors import ParseError, SchemaError
from models.schemas import (ContractingNormalsDocument, EstimateReport, InitialSpec, IntegrandSpec, KernelConfig,
                            RunConfig, StochasticMatrix, ToyDocument, ToySpec, Verdict)
from utils.config_parser import parse_config, parse_config_text, serialize_config
from utils.csv_writer import format_cell
from utils.matrix_io import read_matrix, write_matrix
from utils.report_generator import generate_certification_report, generate_plan_report

SAMPLE_CONFIGS = Path(__file__).parent / "data" / "configs"
BIRTH_DEATH = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])


def write_json(path, payload) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_parse_toy_document():
    document = parse_config_text('{"version": 1, "kind": "toy", "family": "circle", "T": 999}')
    assert isinstance(document, ToyDocument)
    assert document.to_spec() == ToySpec(family="circle", T=999)


def test_sample_configs_parse():
    paths = sorted(SAMPLE_CONFIGS.glob("*.json"))
    assert paths
    for path in paths:
        document = parse_config(str(path))
        assert document.version == 1, path.name


def test_schema_errors_name_the_key():
    with pytest.raises(SchemaError) as info:
        parse_config_text('{"kind": "toy", "family": "circle", "T": 999}')
    assert info.value.key == "version"
    with pytest.raises(SchemaError) as info:
        parse_config_text('{"version": 2, "kind": "toy", "family": "circle", "T": 9}')
    assert info.value.key == "version"
    with pytest.raises(SchemaError) as info:
        parse_config_text('{"version": 1, "kind": "toy", "family": "circle", "T": 9, "colour": "red"}')
    assert info.value.key == "colour"
    with pytest.raises(SchemaError) as info:
        parse_config_text('{"version": 1, "kind": "movie"}')
    assert info.value.key == "kind"
    with pytest.raises(SchemaError):
        parse_config_text("[1, 2]")


def test_parse_error_has_position():
    with pytest.raises(ParseError) as info:
        parse_config_text('{\n  "version": 1,\n  "kind": }')
    assert info.value.line == 3 and info.value.column == 11


def test_contracting_normals_document_round_trip(tmp_path):
    document = ContractingNormalsDocument(version=1, kind="contracting_normals", theta=0.91, x0=0.0,
                                          delta_init=0.1, p=2.1, eps=0.01)
    text = serialize_config(document)
    path = tmp_path / "normals.json"
    path.write_text(text)
    parsed = parse_config(str(path))
    assert parsed == document
    assert serialize_config(parsed) == text


def test_csv_cells_round_trip():
    assert format_cell(0.1) == "0.10000000000000001"
    assert float(format_cell(1.0 / 3.0)) == 1.0 / 3.0
    assert format_cell(math.inf) == "inf"
    assert format_cell(True) == "true" and format_cell(None) == "" and format_cell(7) == "7"


def test_matrix_files(tmp_path):
    path = tmp_path / "chain.csv"
    write_matrix(StochasticMatrix(entries=BIRTH_DEATH), str(path))
    np.testing.assert_array_equal(read_matrix(str(path)).dense(), BIRTH_DEATH)

    bad_header = tmp_path / "bad_header.csv"
    bad_header.write_text("0.5,0.5\n0.5,0.5\n")
    with pytest.raises(SchemaError):
        read_matrix(str(bad_header))
    wrong_size = tmp_path / "wrong_size.csv"
    wrong_size.write_text("# stochastic-matrix v1, size=3\n0.5,0.5\n0.5,0.5\n")
    with pytest.raises(SchemaError) as info:
        read_matrix(str(wrong_size))
    assert info.value.key == "size"
    garbage = tmp_path / "garbage.csv"
    garbage.write_text("# stochastic-matrix v1, size=2\n0.5,abc\n0.5,0.5\n")
    with pytest.raises(ParseError):
        read_matrix(str(garbage))


def test_burnin_table_rows():
    rows = {(row["N"], row["beta"]): row for row in burnin_table([100000, 1000000], [0.9, 0.99, 0.999], 1e30, 2.1)}
    assert len(rows) == 6
    first = rows[(100000, 0.9)]
    assert abs(first["n_opt"] - 656) <= 1 and first["suggested_n0"] == 656
    assert abs(first["n_opt_p"] - 6655) <= 1 and first["suggested_n0_p"] == 6885
    last = rows[(1000000, 0.999)]
    assert abs(last["n_opt"] - 69041) <= 1 and last["suggested_n0"] == 69044
    assert abs(last["suggested_n0"] - 69043) <= 1
    assert not rows[(100000, 0.999)]["feasible_p"]


def test_hypercube_figure_uses_caption_burnin():
    header, rows = figure_data("fig3_hypercube")
    assert header == ["N", "n0", "exact_error", "lower_bound", "upper_bound"]
    assert rows and all(row["n0"] == 1716 for row in rows)
    for row in rows:
        assert row["lower_bound"] <= row["exact_error"] * (1 + 1e-12)
        assert row["exact_error"] <= row["upper_bound"] * (1 + 1e-12)


def test_circle_figure_lower_bound_turns_positive():
    _, rows = figure_data("fig2_circle", [1000, 3014000, 3014600, 3014620, 3100000])
    # grid points at or below the burn-in are skipped
    assert [row["N"] for row in rows] == [3014000, 3014600, 3014620, 3100000]
    assert rows[0]["lower_bound"] == 0.0 and rows[1]["lower_bound"] == 0.0
    assert rows[2]["lower_bound"] > 0.0 and rows[3]["lower_bound"] > 0.0


def test_example2_figure_is_sandwiched():
    _, rows = figure_data("fig5_example2")
    assert all(row["n0"] == 13 for row in rows)
    assert all(row["lower_bound"] <= row["exact_error"] <= row["upper_bound"] for row in rows)


def test_estimate_curves_figure():
    header, rows = figure_data("fig_est_curves", [20000, 50000])
    assert header[-1] == "stationary_worst_error"
    assert all(row["est_half"] > row["stationary_worst_error"] for row in rows)
    with pytest.raises(SchemaError):
        figure_data("fig9")


def test_reference_bounds():
    toy = RunConfig(kernel=KernelConfig(kind="toy_chain", toy=ToySpec(family="hypercube", d=5)),
                    initial=InitialSpec(kind="point", state=0), f=IntegrandSpec(name="u1"), n=20)
    lower, upper = reference_bounds(toy)
    assert 0.0 <= lower < upper < math.inf
    normal = RunConfig(kernel=KernelConfig(kind="contracting_normal", theta=0.5),
                       f=IntegrandSpec(name="identity"), n=20)
    assert reference_bounds(normal) == (0.0, math.inf)


def test_finite_example_command(tmp_path):
    config = write_json(tmp_path / "circle.json", {"version": 1, "kind": "toy", "family": "circle", "T": 999})
    out = tmp_path / "out.csv"
    assert main(["finite-example", "--config", config, "--out", str(out)]) == 0
    schema, rows = read_csv(out)
    assert schema == "# schema=finite_example v1"
    assert rows[0]["suggested_n0"] == "1396700"
    assert abs(int(rows[0]["suggested_n0"]) - 1396699) <= 1


def test_finite_commands_on_matrix_file(tmp_path):
    matrix_path = tmp_path / "chain.csv"
    write_matrix(StochasticMatrix(entries=BIRTH_DEATH), str(matrix_path))
    config = write_json(tmp_path / "matrix.json", {"version": 1, "kind": "matrix", "path": str(matrix_path)})
    out = tmp_path / "spectrum.csv"
    assert main(["finite-spectrum", "--config", config, "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert [float(row["eigenvalue"]) for row in rows] == pytest.approx([1.0, 0.5, 0.0], abs=1e-12)

    out = tmp_path / "error.csv"
    assert main(["finite-error", "--config", config, "--n", "1,10,100", "--n0", "3", "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert [row["n"] for row in rows] == ["1", "10", "100"]
    for row in rows:
        assert float(row["lower_bound"]) <= float(row["exact_error"]) * (1 + 1e-9)
        assert float(row["exact_error"]) <= float(row["upper_bound"]) * (1 + 1e-9)
        assert float(row["upper_bound"]) <= float(row["upper_bound_beta"])
        assert row["analytic_error"] == ""


def test_plan_and_normals_commands(tmp_path):
    config = write_json(tmp_path / "plan.json", {"version": 1, "kind": "logconcave", "d": 1, "r": 1.0, "L": 0.0})
    out = tmp_path / "plan.csv"
    report = tmp_path / "plan.md"
    assert main(["plan", "--config", config, "--out", str(out), "--report", str(report)]) == 0
    schema, rows = read_csv(out)
    assert schema == "# schema=plan v1"
    assert rows[0]["n0"] == "98508800"
    assert "98508800" in report.read_text()

    out = tmp_path / "normals.csv"
    assert main(["normals-table", "--theta", "0.91", "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert list(rows[0]) == ["theta", "c", "beta_hat", "n0", "n", "N"]
    assert float(rows[0]["N"]) == pytest.approx(5.97437e7, rel=5e-3)


def test_estimate_command(tmp_path, capsys):
    run = {"version": 1, "kind": "run",
           "kernel": {"kind": "toy_chain", "toy": {"family": "hypercube", "d": 5}},
           "initial": {"kind": "point", "state": 0}, "f": {"name": "u1"}, "n": 20}
    config = write_json(tmp_path / "run.json", run)
    out = tmp_path / "estimate.csv"
    assert main(["estimate", "--config", config, "--seed", "5", "--replications", "2000", "--out", str(out)]) == 0
    schema, rows = read_csv(out)
    assert schema == "# schema=certification v1"
    assert rows[0]["verdict"] == "pass" and rows[0]["seed"] == "5"

    assert main(["estimate", "--config", config, "--replications", "10", "--out", str(out)]) == 0
    assert "seed=" in capsys.readouterr().err


def test_exit_codes(tmp_path):
    missing_version = write_json(tmp_path / "bad.json", {"kind": "toy", "family": "circle", "T": 9})
    assert main(["finite-example", "--config", missing_version]) == 3
    broken = tmp_path / "broken.json"
    broken.write_text("{ not json")
    assert main(["finite-example", "--config", str(broken)]) == 3
    assert main(["finite-example"]) == 3
    out = str(tmp_path / "bound.csv")
    assert main(["bound-eval", "--kind", "est_upper", "--param", "n=10", "--param", "beta=1",
                 "--param", "C=1", "--out", out]) == 4
    assert main(["bound-eval", "--kind", "est_upper", "--param", "n=10", "--out", out]) == 3
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_bound_eval_companion_recipes(tmp_path):
    out = tmp_path / "bound.csv"
    assert main(["bound-eval", "--kind", "sample_size_markov", "--param", "beta=0.9", "--param", "eps=0.1",
                 "--param", "alpha=0.05", "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert float(rows[0]["value"]) == 80000.0
    assert main(["bound-eval", "--kind", "doeblin", "--param", "M=3", "--param", "gamma=0.5",
                 "--param", "n=100", "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert float(rows[0]["value"]) == pytest.approx(0.32)


def test_reports_render():
    report = EstimateReport(mean_estimate=0.01, empirical_mse=0.04, mse_std_error=0.002, replications=100,
                            n=10, n0=2, seed=9, config_hash="cafe", true_value=0.0)
    verdict = Verdict(passed=True, root_mse=0.2, root_std_error=0.005, lower=0.0, upper=0.3, sigma=3.0,
                      report=report)
    text = generate_certification_report(verdict, report_date=date(2026, 1, 1))
    assert "Verdict: PASS" in text and "cafe" in text and "2026-01-01" in text
    plan_text = generate_plan_report(plan_contracting_normals(0.91))
    assert "Contracting Normals" in plan_text and "beta_hat = 0.99966" in plan_text


if __name__ == "__main__":
    import tempfile

    plain = [
        test_parse_toy_document,
        test_sample_configs_parse,
        test_schema_errors_name_the_key,
        test_parse_error_has_position,
        test_csv_cells_round_trip,
        test_burnin_table_rows,
        test_hypercube_figure_uses_caption_burnin,
        test_circle_figure_lower_bound_turns_positive,
        test_example2_figure_is_sandwiched,
        test_estimate_curves_figure,
        test_reference_bounds,
        test_reports_render,
    ]
    with_files = [
        test_contracting_normals_document_round_trip,
        test_matrix_files,
        test_finite_example_command,
        test_finite_commands_on_matrix_file,
        test_plan_and_normals_commands,
        test_bound_eval_companion_recipes,
        test_exit_codes,
    ]
    for test in plain:
        print(f"🧪 {test.__name__}")
        test()
        print(f"✅ {test.__name__} passed")
    for test in with_files:
        print(f"🧪 {test.__name__}")
        with tempfile.TemporaryDirectory() as tmp:
            test(Path(tmp))
        print(f"✅ {test.__name__} passed")
    print("\n🎉 All CLI tests passed! (run under pytest for the estimate command test)")
