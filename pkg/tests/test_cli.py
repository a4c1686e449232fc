import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from freespec import __version__
from freespec.cli import fmt_complex, fmt_real, main, parse_complex
from freespec.linearize import SaltDesign


@pytest.fixture
def runner():
    return CliRunner()


def run(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def data_lines(text):
    return [line for line in text.splitlines() if line and not line.startswith("#")]


def test_formatting():
    assert fmt_real(1 / 3) == "0.333333333333"
    assert fmt_complex(1 - 2j) == "1-2i"
    assert parse_complex("1+1i") == 1 + 1j
    assert parse_complex("2i") == 2j
    with pytest.raises(ValueError):
        parse_complex("one")


def test_norm(runner):
    res = run(runner, "norm", "--poly", "x1")
    assert res.exit_code == 0
    lines = res.output.splitlines()
    assert lines[0] == f"# freespec {__version__}"
    assert lines[1] == "# command: norm"
    assert lines[3].startswith("# config: {")
    assert abs(float(data_lines(res.output)[1]) - 2) <= 5e-3


def test_density_pushforward(runner):
    res = run(runner, "density", "--poly", "x1^2", "--xmin", -1, "--xmax", 5, "--points", 600, "--epsilon", 1e-3)
    assert res.exit_code == 0
    rows = data_lines(res.output)
    assert rows[0] == "x,density"
    table = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    assert len(table) == 600
    k = np.argmin(np.abs(table[:, 0] - 2))
    x = table[k, 0]
    assert abs(table[k, 1] - math.sqrt(4 - x) / (2 * math.pi * math.sqrt(x))) <= 2e-3
    assert abs(table[k, 1] - 0.159) <= 3e-3


def test_identities_exit_code(runner):
    res = run(runner, "identities", "--n", 8, "--seed", 1)
    assert res.exit_code == 0
    rows = data_lines(res.output)[1:]
    assert rows and all(r.endswith(",ok") for r in rows)


def test_identities_reject_small_n(runner):
    res = runner.invoke(main, ["identities", "--n", "3"])
    assert res.exit_code == 2 and "config.n" in res.output


def test_linearize_round_trip(runner, tmp_path):
    out = tmp_path / "design.json"
    res = run(runner, "linearize", "--poly", "x1*x2 + x2*x1", "--verify", "-o", out)
    assert res.exit_code == 0
    payload = json.loads(out.read_text())
    assert payload["meta"]["verification"]["ok"] is True
    assert payload["meta"]["config"]["poly"] == "x1*x2 + x2*x1"
    design = SaltDesign.from_json(out.read_text())
    assert design.s == payload["s"] == 5


def test_linearize_rejects_non_self_adjoint(runner):
    res = runner.invoke(main, ["linearize", "--poly", "x1*x2"])
    assert res.exit_code == 2 and "self-adjoint" in res.output


def test_support_json(runner):
    res = run(runner, "support", "--poly", "x1 + x2")
    payload = json.loads(res.output)
    (lo, hi), = payload["intervals"]
    assert abs(lo + 2 * math.sqrt(2)) <= 5e-3 and abs(hi - 2 * math.sqrt(2)) <= 5e-3
    assert payload["meta"]["version"] == __version__


def test_config_file_merge(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"poly": "x1", "points": 5, "xmin": -1, "xmax": 1, "epsilon": 0.01}))
    res = run(runner, "density", "--config", cfg)
    assert len(data_lines(res.output)) == 6
    res = run(runner, "density", "--config", cfg, "--points", 3)
    assert len(data_lines(res.output)) == 4
    assert '"points": 3' in res.output


def test_config_errors_name_the_field(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"poly": "x1", "pionts": 5}))
    res = runner.invoke(main, ["density", "--config", str(cfg)])
    assert res.exit_code == 2 and "config.pionts" in res.output
    res = runner.invoke(main, ["density", "--poly", "x1", "--points", "1"])
    assert res.exit_code == 2 and "config.points" in res.output
    res = runner.invoke(main, ["density", "--poly", "x1", "--damping", "2"])
    assert "config.damping" in res.output
    res = runner.invoke(main, ["density", "--poly", "x1 +", "--points", "3"])
    assert res.exit_code == 2 and "config.poly" in res.output and "position 4" in res.output
    cfg.write_text(json.dumps({"poly": "x1", "points": "many"}))
    res = runner.invoke(main, ["density", "--config", str(cfg)])
    assert res.exit_code == 2 and "config.points" in res.output


def test_poly_from_file(runner, tmp_path):
    src = tmp_path / "f.txt"
    src.write_text('{"n": 2, "entries": [["x1", "0"], ["0", "x1"]]}')
    res = run(runner, "norm", "--poly", f"@{src}")
    assert abs(float(data_lines(res.output)[1]) - 2) <= 5e-3


def test_simulate(runner):
    res = run(runner, "simulate", "--poly", "x1", "--sizes", "20,40", "--samples", 2, "--seed", 3)
    assert res.exit_code == 0
    assert "# norm: " in res.output and "# summary: " in res.output
    rows = data_lines(res.output)
    assert rows[0] == "N,sample,lambda_max,lambda_min,outliers_eps,edge_gap"
    assert len(rows) == 5


def test_bias_check(runner):
    res = run(runner, "bias-check", "--poly", "x1", "--sizes", "10,20", "--samples", 20, "--seed", 1)
    assert res.exit_code == 0
    assert "# corrected_slope: " in res.output
    rows = data_lines(res.output)
    assert rows[0].split(",")[:3] == ["N", "avg_re", "avg_im"]
    assert len(rows) == 3


def test_bias_check_rejects_small_im_z(runner):
    res = runner.invoke(main, ["bias-check", "--poly", "x1", "--z", "0.5i", "--samples", "2"])
    assert res.exit_code == 2 and "config.z" in res.output


def test_byte_identical_reports(runner, tmp_path):
    # the echoed config holds the output paths, so both runs write to the same files
    out, fig = tmp_path / "sim.csv", tmp_path / "sim.png"
    outputs = []
    for _ in range(2):
        run(runner, "simulate", "--poly", "x1^2", "--sizes", "30", "--samples", 2, "--seed", 5, "-o", out, "--figure", fig)
        outputs.append((out.read_bytes(), fig.read_bytes()))
    assert outputs[0] == outputs[1]
    assert outputs[0][1][:8] == b"\x89PNG\r\n\x1a\n"


def test_figures_for_every_command(runner, tmp_path):
    cases = [
        ["density", "--poly", "x1", "--points", "20"],
        ["support", "--poly", "x1"],
        ["bias-check", "--poly", "x1", "--sizes", "10,20", "--samples", "10"],
        ["identities", "--n", "6"],
    ]
    for k, args in enumerate(cases):
        fig = tmp_path / f"f{k}.png"
        res = runner.invoke(main, args + ["--figure", str(fig), "-o", str(tmp_path / f"o{k}")])
        assert res.exit_code == 0, res.output
        assert fig.stat().st_size > 1000
