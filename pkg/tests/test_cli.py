import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from trajfisher import cli, errors

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SIM = """[run]
channel = flip
parameter = omega
rho_uu = 0.3
omega = 1
gamma = 1
T = 2, 0.5
seed = 42
[simulate]
n_samples = 20000
"""


def _run(tmp_path, command, text, *extra):
    cfg = tmp_path / f"{command}.ini"
    cfg.write_text(text)
    out = tmp_path / f"{command}-{len(list(tmp_path.iterdir()))}.out"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def _csv_rows(text):
    body = [l for l in text.splitlines() if not l.startswith("#")]
    return body[0].split(","), np.array([[float(x) for x in l.split(",")] for l in body[1:]])


def test_analytic_dephasing_example(tmp_path):
    code, out = _run(tmp_path, "analytic", (CONFIGS / "analytic_dephasing.ini").read_text())
    assert code == 0
    cols, rows = _csv_rows(out.read_text())
    assert np.array_equal(rows[:, cols.index("total")], [1.0, 4.0, 9.0])
    assert "valid" in cols


def test_rates_relaxation_gamma(tmp_path):
    text = (CONFIGS / "rates_relaxation.ini").read_text().replace("0.1, 0.3, 1, 3, 10", "10, 0.1, 2")
    code, out = _run(tmp_path, "rates", text)
    assert code == 0
    cols, rows = _csv_rows(out.read_text())
    assert list(rows[:, 0]) == [0.1, 2.0, 10.0]
    assert np.all(rows[:, cols.index("mqt_rate")] == 1.0)
    T = rows[:, cols.index("T")]
    assert np.allclose(rows[:, cols.index("conventional_rate")], T / np.expm1(T), rtol=1e-14)


def test_simulate_is_deterministic_across_workers(tmp_path):
    _, a = _run(tmp_path, "simulate", SIM)
    _, b = _run(tmp_path, "simulate", SIM)
    _, c = _run(tmp_path, "simulate", SIM, "--workers", "3")
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_output_reruns_from_its_own_metadata(tmp_path):
    for fmt in ("csv", "json"):
        _, first = _run(tmp_path, "simulate", SIM, "--format", fmt)
        recovered = cli.config_from_output(first.read_text())
        _, second = _run(tmp_path, "simulate", recovered)
        assert first.read_bytes() == second.read_bytes()


def test_csv_numbers_round_trip(tmp_path):
    _, out = _run(tmp_path, "analytic", SIM.replace("n_samples = 20000", "").replace("[simulate]", ""))
    text = out.read_text()
    cols, rows = _csv_rows(text)
    table = cli.run(cli.validate_config(SIM.replace("[simulate]\nn_samples = 20000\n", ""), "analytic"))
    assert np.array_equal(rows, np.array(table.rows), equal_nan=True)


def test_json_output(tmp_path):
    _, out = _run(tmp_path, "analytic", (CONFIGS / "analytic_dephasing.ini").read_text(), "--format", "json")
    doc = json.loads(out.read_text())
    assert set(doc) == {"metadata", "columns", "rows"}
    assert doc["metadata"]["seed"] == 0
    assert "seed = 0" in doc["metadata"]["config"]
    assert all(len(r) == len(doc["columns"]) for r in doc["rows"])


def test_missing_seed_defaults_to_zero(monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    assert cli.validate_config(SIM.replace("seed = 42\n", ""), "simulate").seed == 0
    monkeypatch.setenv(cli.SEED_ENV, "17")
    assert cli.validate_config(SIM.replace("seed = 42\n", ""), "simulate").seed == 17
    assert cli.validate_config(SIM, "simulate").seed == 42
    assert cli.validate_config(SIM, "simulate", seed=5).seed == 5


def test_validation_reports_every_problem_with_lines():
    bad = "[run]\nchannel = flip\nrho_uu = 0.5\nrho_ud_abs = 0.7\ngamma = -1\nbogus = 3\nT = 1\n"
    with pytest.raises(errors.ConfigInvalid) as info:
        cli.validate_config(bad, "analytic")
    text = "\n".join(info.value.problems)
    assert "line 4" in text and "positive" in text
    assert "line 5" in text and "gamma" in text
    assert "line 6" in text and "unknown key" in text


@pytest.mark.parametrize(
    "patch,needle",
    [
        (("T = 2, 0.5", "T = -1"), "T"),
        (("n_samples = 20000", "n_samples = 0"), "n_samples"),
        (("channel = flip", "channel = amplitude"), "channel"),
        (("rho_uu = 0.3", "rho_uu = 1.4"), "rho_uu"),
    ],
)
def test_field_level_rejections(patch, needle):
    with pytest.raises(errors.ConfigInvalid) as info:
        cli.validate_config(SIM.replace(*patch), "simulate")
    assert any(needle in p for p in info.value.problems)


def test_qec_requires_integer_segments():
    text = (CONFIGS / "qec_flip.ini").read_text().replace("0.01, 0.02, 0.04", "0.05")
    with pytest.raises(errors.ConfigInvalid):
        cli.validate_config(text, "qec")


def test_qec_command(tmp_path):
    code, out = _run(tmp_path, "qec", (CONFIGS / "qec_flip.ini").read_text())
    assert code == 0
    cols, rows = _csv_rows(out.read_text())
    enum = rows[:, cols.index("qfi_omega_enumerated")]
    closed = rows[:, cols.index("qfi_omega")]
    valid = rows[:, cols.index("qfi_omega_valid")] == 1
    assert valid.any()
    assert np.all(np.abs(closed[valid] / enum[valid] - 1) < 1e-2)


def test_estimate_command_small(tmp_path):
    text = (CONFIGS / "estimate_flip_gamma.ini").read_text().replace("nu = 10000", "nu = 500").replace(
        "replicates = 200", "replicates = 4")
    code, out = _run(tmp_path, "estimate", text)
    assert code == 0
    cols, rows = _csv_rows(out.read_text())
    assert rows.shape == (1, len(cols)) and rows[0, cols.index("fisher_info")] == pytest.approx(1.0)


def test_exit_codes(tmp_path, capsys):
    code, out = _run(tmp_path, "analytic", "[run]\ngamma = -1\nT = 1\n")
    assert code == 2 and not out.exists()
    assert "line 2" in capsys.readouterr().err
    # valid config, but a probe with no coherence carries no omega information
    text = "[run]\nchannel = dephasing\nparameter = omega\nrho_uu = 1\ngamma = 1\nT = 1\n[estimate]\nnu = 10\n"
    code, out = _run(tmp_path, "estimate", text)
    assert code == 1 and not out.exists()
    assert "UnsupportedCombination" in capsys.readouterr().err


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "out.csv"
    target.write_text("old")
    monkeypatch.setattr(os, "replace", lambda *a: (_ for _ in ()).throw(OSError("boom")))
    with pytest.raises(OSError):
        cli.write_atomic(str(target), "new")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


def test_console_script_runs(tmp_path):
    cfg = tmp_path / "a.ini"
    cfg.write_text((CONFIGS / "analytic_dephasing.ini").read_text())
    res = subprocess.run([sys.executable, "-m", "trajfisher.cli", "analytic", "--config", str(cfg)],
                         capture_output=True, text=True, check=True)
    assert res.stdout.startswith("# trajfisher")
