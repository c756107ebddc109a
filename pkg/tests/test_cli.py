import csv
import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from nholo import cli
from nholo.errors import ConfigError

SCHW = """\
command = "verify-solution"

[[case]]
name = "s"
check = "ricci"
tol = 1e-8
metric = {{ preset = "schwarzschild", alpha = 1.0 }}
grid = {{ bounds = [[3.0, 10.0], [0.3, 2.8], [0.0, 0.0], [0.0, 0.0]], shape = [{nr}, 4, 1, 1] }}
"""


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def test_pass_run_writes_outputs(tmp_path):
    cfg = write(tmp_path, SCHW.format(nr=5))
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["pass"] and rep["command"] == "verify-solution" and rep["checks"][0]["value"] < 1e-12
    assert "PASS" in (tmp_path / "o" / "summary.txt").read_text()


def test_failing_check_exits_one(tmp_path):
    cfg = write(tmp_path, SCHW.format(nr=5))
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--tol-scale", "1e-300"]) == 1
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["failing"] == ["s.ricci.levi_civita"] and rep["tol_scale"] == 1e-300


def test_tol_scale_must_be_positive(tmp_path):
    with pytest.raises(ConfigError):
        cli.run(write(tmp_path, SCHW.format(nr=5)), tmp_path / "o", tol_scale=0.0)


def test_expression_error_reports_position(tmp_path, capsys):
    cfg = write(tmp_path, """\
        command = "verify-solution"
        [[case]]
        name = "bad"
        check = "ricci"
        metric = { g_diag = ["1", "1 + qq*x1"], h_diag = ["1", "1"] }
        grid = { bounds = [[0, 1], [0, 1], [0, 1], [0, 1]], shape = [2, 2, 2, 2] }
        """)
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "configuration error" in err and "line 5" in err and "column 32" in err


def test_toml_syntax_error(tmp_path):
    cfg = write(tmp_path, 'command = "verify-solution"\n[[case]\n')
    with pytest.raises(ConfigError) as ei:
        cli.run(cfg, tmp_path / "o")
    assert ei.value.line == 2


@pytest.mark.parametrize("text", ['command = "no-such"\n', "seed = 1\n"])
def test_bad_command(tmp_path, text):
    with pytest.raises(ConfigError):
        cli.run(write(tmp_path, text), tmp_path / "o")


def test_missing_file_exit_code(tmp_path):
    assert cli.main(["--config", str(tmp_path / "nope.toml")]) == 2


def test_singular_metric_is_numerical_failure(tmp_path):
    cfg = write(tmp_path, """\
        command = "verify-solution"
        [[case]]
        name = "sing"
        check = "ricci"
        metric = { g_diag = ["1", "0"], h_diag = ["1", "1"] }
        grid = { bounds = [[0, 1], [0, 1], [0, 1], [0, 1]], shape = [2, 2, 2, 2] }
        """)
    res = cli.run(cfg, tmp_path / "o")
    assert res.status == 1 and "Singular" in res.report["error"]


def test_report_is_deterministic_and_timing_free(tmp_path):
    cfg = write(tmp_path, SCHW.format(nr=6))
    a = cli.run(cfg, tmp_path / "a").out / "report.json"
    b = cli.run(cfg, tmp_path / "b", threads=1).out / "report.json"
    assert a.read_bytes() == b.read_bytes()
    assert "time" not in a.read_text()


def test_lagrange_trace(tmp_path):
    cfg = write(tmp_path, """\
        command = "lagrange-model"
        [[lagrangian]]
        name = "q"
        L = "exp(x1)*y2^2 + 0.3*y2^4"
        chart = { dim_h = 1, dim_v = 1 }
        x0 = [0.2]
        y0 = [0.7]
        tau_end = 0.2
        step = 1e-2
        refinement_steps = [0.1, 0.05, 0.025]
        trace_every = 5
        """)
    res = cli.run(cfg, tmp_path / "o")
    assert res.status == 0, res.report["failing"]
    rows = list(csv.DictReader(open(tmp_path / "o" / "trace.csv")))
    assert rows and np.isfinite(float(rows[-1]["tau"]))


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, SCHW.format(nr=5))
    p = subprocess.run([sys.executable, "-m", "nholo.cli", "verify-solution", "--config", str(cfg),
                        "--out", str(tmp_path / "o"), "--seed", "3"], capture_output=True, text=True)
    assert p.returncode == 0 and "PASS" in p.stdout
    assert json.loads((tmp_path / "o" / "report.json").read_text())["seed"] == 3
