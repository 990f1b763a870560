import json

import pytest

from lifespan_lab import cli
from lifespan_lab.oracle import STATUS_STEP_COLLAPSE, BlowupReport

SMALL = "1e-3:1e-2:4"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_theory_prints_audit(capsys):
    code, out, _ = run(capsys, "theory", "--b", "2", "--m2", "0.75", "--eps", "1e-3")
    assert code == 0
    audit = json.loads(out)
    assert audit["case"] == "damped_klein_gordon" and audit["epsilon"] == 1e-3
    assert audit["deadline"] > 0


@pytest.mark.parametrize("argv", [
    ["theory", "--b", "-1"],
    ["theory", "--b", "1", "--m2", "1"],
    ["sweep", "--grid", "1e-3:1e-2:3"],
    ["sweep", "--grid", "nonsense"],
    ["sweep", "--engine", "ode", "--data", "perturbed"],
    ["theory", "--constants", "1,2,3"],
    ["theory", "--constants", "-1,0,0,1"],
    ["sweep", "--grid", SMALL, "--format", "pdf"],
    ["verify", "--suite", "bogus"],
    ["emit-plots"],
    ["frobnicate"],
    ["theory", "--p", "abc"],
])
def test_invalid_config_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_ode_writes_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, "ode", "--eps", "1e-2", "--out", str(tmp_path))
    assert code == 0
    rep = json.loads(out)
    assert rep["status"] == "blew_up" and rep["T_est"] == pytest.approx(34.2826, rel=1e-5)
    assert (tmp_path / "trajectory.csv").exists() and (tmp_path / "report.json").exists()


def test_pde_short_run(capsys, tmp_path):
    code, out, _ = run(capsys, "pde", "--eps", "1e-1", "--dim", "1", "--modes", "8", "--out", str(tmp_path))
    assert code == 0
    assert json.loads(out)["engine"] == "pde"
    header = (tmp_path / "history.csv").read_text().splitlines()[0]
    assert header.startswith("t,")


def test_nonconvergence_exit_3(capsys, monkeypatch):
    class FakeTraj:
        def to_csv(self, path):
            pass

    def fake(*a, **k):
        return FakeTraj(), BlowupReport(False, STATUS_STEP_COLLAPSE, 1.0, 1.0, 1e8)

    monkeypatch.setattr(cli, "integrate_blowup", fake)
    assert run(capsys, "ode")[0] == 3


def test_sweep_and_emit_plots(capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", "--grid", SMALL, "--out", str(tmp_path), "--format", "csv,json,svg")
    assert code == 0 and "verdict:" in out
    svg = (tmp_path / "sweep.svg").read_text()
    (tmp_path / "sweep.svg").unlink()
    assert run(capsys, "emit-plots", "--out", str(tmp_path))[0] == 0
    assert (tmp_path / "sweep.svg").read_text() == svg


def test_strict_verdict_failure_exit_4(capsys):
    # trivial-u massless data blow up faster than the band allows
    argv = ["sweep", "--m2", "0", "--constants", "0,0,1,0", "--grid", "1e-5:1e-2:5"]
    assert run(capsys, *argv)[0] == 0
    assert run(capsys, *argv, "--strict")[0] == 4


def test_toml_config_and_override(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('b = 3.0\nm2 = 2.0\neps = 0.01\nconstants = [0, 0, 0, 1]\n')
    code, out, _ = run(capsys, "theory", "--config", str(cfg))
    assert code == 0 and json.loads(out)["roots"]["k2"] == pytest.approx(1.0)
    code, out, _ = run(capsys, "theory", "--config", str(cfg), "--m2", "0.75")
    assert code == 0 and json.loads(out)["roots"]["k2"] == pytest.approx((3 - 6**0.5) / 2)


@pytest.mark.parametrize("text", ['bogus = 1\n', '[table]\nb = 2\n', 'b = \n'])
def test_bad_toml_exit_2(capsys, tmp_path, text):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(text)
    assert run(capsys, "theory", "--config", str(cfg))[0] == 2


def test_verify_linear_suite(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "linear", "--strict")
    assert code == 0
    assert out.count("[PASS]") == 3
