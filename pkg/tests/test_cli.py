import subprocess
import sys

import pytest

from oldroyd_fsi.cli import SWEEP_COLUMNS, TIMESERIES_COLUMNS, main
from oldroyd_fsi.records import read_csv

BASE = "N = 8\neps = 0.5\ndt = 0.05\nt_max = 0.2\nic = random-seeded\namplitude = 0.03\n"


def config(tmp_path, text=BASE, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_self_check_passes(capsys):
    code, out, _ = run(capsys, "self-check")
    assert code == 0
    lines = out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_simulate_is_deterministic(tmp_path, capsys):
    cfg = config(tmp_path)
    for d in ("a", "b"):
        assert run(capsys, "simulate", "--config", cfg, "--output", str(tmp_path / d))[0] == 0
    a = (tmp_path / "a" / "timeseries.csv").read_bytes()
    assert a == (tmp_path / "b" / "timeseries.csv").read_bytes()
    echo, cols, rows = read_csv(tmp_path / "a" / "timeseries.csv")
    assert cols == TIMESERIES_COLUMNS
    assert "eps = 0.5" in echo and "lambda = 1.0" in echo
    assert len(rows) == 5 and rows[-1][0] == pytest.approx(0.2)


def test_single_eps_sweep_has_no_slope(tmp_path, capsys):
    cfg = config(tmp_path)
    code, out, _ = run(capsys, "sweep-eps", "--config", cfg, "--eps-list", "0.2",
                       "--output", str(tmp_path))
    assert code == 0
    assert "slope unavailable" in out
    _, cols, rows = read_csv(tmp_path / "sweep.csv")
    assert cols == SWEEP_COLUMNS
    assert len(rows) == 1 and rows[0][0] == 0.2
    assert rows[0][-2:] == [None, None]


def test_decay_writes_table_and_verdict(tmp_path, capsys):
    cfg = config(tmp_path, BASE.replace("random-seeded", "stress-bump"))
    code, out, _ = run(capsys, "decay", "--config", cfg, "--output", str(tmp_path))
    assert code == 0
    assert "stress envelope: PASS" in out
    _, cols, rows = read_csv(tmp_path / "decay.csv")
    assert cols[-3:] == ["pass_T", "pass_etadot", "pass_u"]
    assert all(r[cols.index("pass_T")] == 1 for r in rows)
    assert (tmp_path / "verdict.txt").read_text().startswith("stress envelope: PASS")


def test_closure_check_writes_table(tmp_path, capsys):
    cfg = config(tmp_path, "lambda = 1\nNq = 16\nkinetic_dt = 0.004\nt_max = 0.1\nenvelope_tol = 0.5\n")
    code, out, _ = run(capsys, "closure-check", "--config", cfg, "--output", str(tmp_path))
    assert code == 0
    _, cols, rows = read_csv(tmp_path / "closure.csv")
    assert cols[:2] == ["t", "res_frob_rel"] and rows[0][1] == 0.0


@pytest.mark.parametrize("text,code,kind", [
    ("N = 8\n", 2, "config"),
    (BASE + "Lx = 1\n", 2, "config"),
    (BASE.replace("0.03", "0.5").replace("random-seeded", "shell-mode"), 3, "degeneracy"),
    ("lambda = 1\nNq = 16\nspin = 100\nkinetic_dt = 0.5\nt_max = 1\n", 4, "solver"),
    ("lambda = 1\nNq = 16\nkinetic_dt = 0.004\nt_max = 0.1\nenvelope_tol = 1e-9\n", 5, "check"),
])
def test_failures_map_to_exit_codes(tmp_path, capsys, text, code, kind):
    sub = "closure-check" if "Nq" in text else "simulate"
    got, _, err = run(capsys, sub, "--config", config(tmp_path, text), "--output", str(tmp_path))
    assert got == code
    (line,) = err.strip().splitlines()
    assert line.startswith(f"error: kind={kind} code={code} message=")


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--config", str(tmp_path / "nope.cfg"))
    assert code == 2 and "kind=config" in err


def test_bad_eps_list(tmp_path, capsys):
    code, _, err = run(capsys, "sweep-eps", "--config", config(tmp_path), "--eps-list", "a,b")
    assert code == 2 and "eps-list" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "oldroyd_fsi", "self-check"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
