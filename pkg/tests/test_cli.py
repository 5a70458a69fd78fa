import csv
import json

import numpy as np
import pytest

from subwave import cli


def run(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    return code, capsys.readouterr()


def report(path):
    return json.loads((path / "report.json").read_text())


def test_flow_smoke(tmp_path, capsys):
    code, _ = run(capsys, "flow", "--model", "heisenberg", "--x", "0,0,0", "--xi", "1,0,0.3",
                  "--t", "1", "--output", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "flow.csv")))
    assert len(rows) >= 64
    rep = report(tmp_path)
    assert rep["command"] == "flow" and "wall_clock_s" in rep


def test_experiment_report_has_slope(tmp_path, capsys):
    code, _ = run(capsys, "experiment", "mh", "--model", "euclidean1", "--p", "1",
                  "--lambdas", "16..1024", "--output", tmp_path, "--plot")
    assert code == 0
    rep = report(tmp_path)
    assert 0.4 <= rep["results"]["slope"] <= 0.6
    assert (tmp_path / "experiment_mh.svg").exists()
    assert len(list(csv.DictReader(open(tmp_path / "table.csv")))) == 7


def test_invalid_p(tmp_path, capsys):
    code, out = run(capsys, "experiment", "mh", "--model", "euclidean1", "--p", "3",
                    "--output", tmp_path)
    assert code == 2
    err = json.loads(out.err.strip().splitlines()[-1])
    assert err["error"]["message"] == "p must be 1 or 2"


@pytest.mark.parametrize("argv", [
    ["flow", "--model", "nope"],
    ["flow", "--config", "does-not-exist.toml"],
    ["flow", "--tol", "-1"],
    ["experiment", "mh", "--lambdas", "64..16"],
    ["multiplier", "--chi", "triangle:1,2"],
    ["flow", "--x", "0,zero,0"],
])
def test_configuration_errors_exit_2(tmp_path, capsys, argv):
    code, out = run(capsys, *argv, "--output", tmp_path)
    assert code == 2
    assert "error" in json.loads(out.err.strip().splitlines()[-1])


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('model = "grushin"\n[flow]\nx = "1,0"\nxi = "0,1"\nt = 0.5\n')
    code, _ = run(capsys, "flow", "--config", cfg, "--t", "0.25", "--output", tmp_path / "o")
    assert code == 0
    rep = report(tmp_path / "o")
    assert rep["config"]["model"] == "grushin"
    assert rep["config"]["t"] == 0.25
    last = list(csv.DictReader(open(tmp_path / "o" / "flow.csv")))[-1]
    assert float(last["x1"]) == pytest.approx(np.cos(0.5), abs=1e-8)


def test_parse_lambdas():
    assert cli.parse_lambdas("16..128") == [16.0, 32.0, 64.0, 128.0]
    assert cli.parse_lambdas("8..32/2") == pytest.approx([8, 8 * 2 ** 0.5, 16, 16 * 2 ** 0.5, 32])
    assert cli.parse_lambdas("3,5,9") == [3.0, 5.0, 9.0]
    with pytest.raises(cli.ConfigError):
        cli.parse_lambdas("5,3")


def test_plot_errors_and_determinism(tmp_path):
    with pytest.raises(cli.PlotError):
        cli.emit_plot([], tmp_path / "a.svg")
    series = [{"x": [1, 2, 4], "y": [1.0, 3.0, 2.0], "label": "s", "marks": [2.5]}]
    cli.emit_plot(series, tmp_path / "a.svg", log=True)
    cli.emit_plot(series, tmp_path / "b.svg", log=True)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


@pytest.mark.parametrize("argv", [
    ["exp"],
    ["conjugate", "--s-max", "7", "--samples", "120", "--plot"],
    ["rank"],
    ["eikonal", "--samples", "5"],
    ["phase", "--t-range=-0.5,0.5,3", "--angles", "4"],
    ["statphase", "--problem", "gaussian1d", "--lambdas", "32..512", "--plot"],
    ["multiplier", "--plot"],
    ["multiplier", "--family", "wave", "--chi", "window:1,0.2"],
    ["experiment", "mp", "--model", "euclidean(2)", "--p", "2", "--lambdas", "16..256"],
])
def test_subcommands_run(tmp_path, capsys, argv):
    code, out = run(capsys, *argv, "--output", tmp_path)
    assert code == 0, out.err
    assert report(tmp_path)["command"] == argv[0]


def test_conjugate_finds_root(tmp_path, capsys):
    run(capsys, "conjugate", "--output", tmp_path)
    roots = report(tmp_path)["results"]["roots"]
    assert roots[0] == pytest.approx(2 * np.pi, abs=1e-4)
