import csv
import json

import pytest

from metexit.cli import EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_OK, build_parser, main, sweep_values
from metexit.gexit import read_chart_csv


def test_validate_table1(capsys):
    assert main(["validate", "--ensemble", "table1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "nominal rate: 0.02" in out
    assert out.count("balanced") == 3 and "IMBALANCED" not in out


def test_validate_table4_report(tmp_path, capsys):
    p = tmp_path / "v.json"
    assert main(["validate", "--ensemble", "table4", "--out", str(p)]) == EXIT_OK
    rep = json.loads(p.read_text())
    assert rep["rate"] == 0.5 and rep["n_edge_types"] == 4
    assert rep["punctured_fraction"] == pytest.approx(0.2)
    assert rep["balanced"] is True
    assert "punctured fraction: 0.2" in capsys.readouterr().out


def test_validate_imbalanced_file(tmp_path):
    doc = {
        "n_edge_types": 1,
        "n_channels": 1,
        "variable_nodes": [{"coeff": 1.0, "b": [0, 1], "d": [3]}],
        "check_nodes": [{"coeff": 0.4, "d": [6]}],
    }
    p = tmp_path / "imb.json"
    p.write_text(json.dumps(doc))
    assert main(["validate", "--ensemble", str(p)]) != EXIT_OK


def test_validate_corrupted_and_missing(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"n_edge_types": 1, "variable')
    assert main(["validate", "--ensemble", str(p)]) == EXIT_CONFIG
    assert main(["validate", "--ensemble", str(tmp_path / "none.json")]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_usage_errors():
    assert main([]) == EXIT_CONFIG
    assert main(["gexit", "--ensemble", "regular36", "--sigma", "0.8", "--ebn0-db", "1"]) == EXIT_CONFIG
    assert main(["--help"]) == EXIT_OK


def test_sweep_parsing():
    assert sweep_values("-1:1:0.5") == [-1.0, -0.5, 0.0, 0.5, 1.0]
    with pytest.raises(Exception):
        sweep_values("1:0:1")


def _rows(text):
    return list(csv.DictReader(text.splitlines()))


def test_rates_single_level(capsys):
    assert main(["rates", "--levels", "1", "--sweep", "0:2:1"]) == EXIT_OK
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 3 and {r["level"] for r in rows} == {"0"}
    for r in rows:
        assert float(r["I_i"]) == pytest.approx(float(r["sum_I"]))
        assert float(r["I_i"]) < float(r["analytic_mi"])


def test_rates_default_sweep(tmp_path):
    p = tmp_path / "rates.csv"
    assert main(["rates", "--levels", "4", "--delta", "0.32", "--out", str(p)]) == EXIT_OK
    rows = _rows(p.read_text())
    assert len(rows) == 41 * 4
    assert list(rows[0]) == ["snr_db", "level", "I_i", "Rs_i", "Rch_i", "sum_I", "analytic_mi"]
    for r in rows:
        assert float(r["sum_I"]) <= float(r["analytic_mi"]) + 1e-12
    for lev in "0123":
        vals = [float(r["I_i"]) for r in rows if r["level"] == lev]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("delta", ["0", "-0.1"])
def test_rates_bad_delta(delta):
    assert main(["rates", "--delta", delta]) == EXIT_CONFIG


def test_threshold_bad_bracket(capsys):
    assert main(["threshold", "--ensemble", "regular36", "--bracket", "0.5:0.6"]) == EXIT_NONCONVERGENCE
    assert "both ends converge" in capsys.readouterr().err


def test_threshold_regular(tmp_path):
    p = tmp_path / "t.json"
    rc = main(["threshold", "--ensemble", "regular36", "--bracket", "0.85:0.92", "--tol", "2e-3", "--out", str(p)])
    assert rc == EXIT_OK
    rep = json.loads(p.read_text())
    assert rep["sigma"] == pytest.approx(0.8809, abs=3e-3)
    assert rep["rate"] == 0.5
    # rate 0.5 against a capacity of about 0.571 at the threshold
    assert 0.86 < rep["efficiency"] < 0.89
    assert rep["sigma_bracket"][0] < rep["sigma_bracket"][1]


def test_gexit_writes_files(tmp_path):
    out = tmp_path / "gx"
    assert main(["gexit", "--ensemble", "regular36", "--sigma", "0.85", "--per-edge", "--out", str(out)]) == EXIT_OK
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["files"] == ["combined.csv", "edge1.csv"]
    assert meta["converged"] is True and meta["crossing"] is False
    c, d = read_chart_csv(out / "combined.csv")
    assert len(c) == meta["iterations"]
    assert (out / "edge1.csv").read_text().startswith("h,g,label\n")


def test_gexit_above_threshold_reports_crossing(tmp_path):
    out = tmp_path / "gx"
    rc = main(["gexit", "--ensemble", "regular36", "--sigma", "0.95", "--max-iter", "200", "--out", str(out)])
    assert rc == EXIT_OK
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["crossing"] is True and meta["converged"] is False


def test_trace_large_k_gives_initial_snapshot(tmp_path):
    out = tmp_path / "tr"
    assert main(["trace", "--ensemble", "regular36", "--sigma", "0.85", "--snapshot-every", "1000", "--out", str(out)]) == EXIT_OK
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["snapshots"] == [0]
    assert sorted(p.name for p in out.iterdir()) == ["cn_00000.csv", "metadata.json", "pe.csv", "vn_00000.csv"]
    pe = _rows((out / "pe.csv").read_text())
    assert len(pe) == meta["iterations"]


def test_trace_non_converging(tmp_path):
    out = tmp_path / "tr"
    args = ["trace", "--ensemble", "regular36", "--sigma", "0.95", "--max-iter", "60", "--snapshot-every", "20", "--out", str(out)]
    assert main(args) == EXIT_OK
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["converged"] is False
    assert meta["snapshots"] == [0, 20, 40]


def test_trace_bad_k(tmp_path):
    assert main(["trace", "--ensemble", "regular36", "--sigma", "0.85", "--snapshot-every", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_parser_lists_all_commands():
    text = build_parser().format_help()
    for cmd in ("validate", "threshold", "gexit", "rates", "trace"):
        assert cmd in text
