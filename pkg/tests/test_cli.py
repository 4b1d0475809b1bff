from __future__ import annotations

import math

import pytest

from gtlab import cli
from gtlab.designs import read_instance
from gtlab.numerics import ConvergenceError
from gtlab.thresholds import c_alg, c_inf, c_ld


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def data_lines(text):
    return [l for l in text.splitlines() if l and not l.startswith("#")]


def meta(text):
    return dict(l[2:].split("=", 1) for l in text.splitlines() if l.startswith("# ") and "=" in l and " " not in
                l[2:].split("=", 1)[0])


def test_thresholds_curves(capsys):
    code, out, _ = run(capsys, "thresholds", "--design", "cc", "--theta-grid", "0.01:0.99:0.01")
    assert code == 0
    lines = data_lines(out)
    assert lines[0] == "theta,c_inf,c_alg,c_ld"
    assert len(lines) == 100
    for line in lines[1:]:
        th, ci, ca, cl = (float(v) for v in line.split(","))
        assert ci == pytest.approx(c_inf(), rel=1e-11)
        assert ca == pytest.approx(c_alg(), rel=1e-11)
        assert cl == pytest.approx(c_ld(th, "cc"), rel=1e-11, abs=1e-12)
    assert meta(out)["command"] == "thresholds"
    assert "gtlab_version" in meta(out)


def test_phase_diagram(capsys):
    code, out, _ = run(capsys, "phase-diagram", "--design", "bern", "--theta-grid", "0.1,0.5", "--c-grid", "0.5:1.5:0.5")
    assert code == 0
    lines = data_lines(out)
    assert len(lines) == 1 + 2 * 3
    assert lines[0].split(",")[-2:] == ["region", "on_boundary"]


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ndesign = cc\ntheta = 0.3\nc = 3.0\nn = 1e4\ntrials = 3\nseed = 5\n")
    code, out, _ = run(capsys, "recover", "--config", str(cfg), "--trials", "2")
    assert code == 0
    m = meta(out)
    assert m["trials"] == "2" and m["seed"] == "5" and m["n"] == "10000" and m["c"] == "3.0"
    assert len(data_lines(out)) == 3


def test_metadata_reruns(tmp_path, capsys):
    out1 = tmp_path / "a.csv"
    assert cli.main(["recover", "--c", "2.5", "--n", "2e4", "--trials", "2", "--output", str(out1)]) == 0
    cfg = tmp_path / "echo.cfg"
    cfg.write_text("\n".join(l[2:] for l in out1.read_text().splitlines()
                             if l.startswith("# ") and not l.startswith("# gtlab_version")))
    out2 = tmp_path / "b.csv"
    assert cli.main(["recover", "--config", str(cfg), "--output", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


@pytest.mark.parametrize("argv", [
    ["nosuch"],
    ["recover"],
    ["recover", "--c", "abc"],
    ["recover", "--c", "2", "--trials", "0"],
    ["recover", "--c", "2", "--output", "/nonexistent/dir/x.csv"],
    ["recover", "--c", "2", "--config", "/nonexistent.cfg"],
    ["thresholds", "--theta-grid", "0.5:0.1:0.1"],
    ["chi2", "--c", "0.5"],
    ["detect", "--c", "2", "--statistic", "bogus"],
])
def test_config_errors(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == 2


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("c=2\nfrobnicate=1\n")
    assert run(capsys, "recover", "--config", str(cfg))[0] == 2


def test_numeric_failure_exit(monkeypatch, capsys):
    def boom(cfg, workers):
        raise ConvergenceError("no convergence")
    monkeypatch.setitem(cli.HANDLERS, "thresholds", boom)
    code, _, err = run(capsys, "thresholds")
    assert code == 3 and "no convergence" in err


def test_scientific_notation():
    cfg = cli.resolve_config("chi2", {}, {"c": "1.5e0", "n": "1e4", "epsilon": "5e-1", "seed": "1E1"})
    assert cfg["n"] == 10000 and cfg["epsilon"] == 0.5 and cfg["seed"] == 10
    assert cli.parse_int_grid("1e3,1e4") == [1000, 10000]
    with pytest.raises(ValueError):
        cli.parse_int("1.5")
    assert cli.parse_grid("0.1:0.3:0.1") == [0.1, 0.2, 0.3]
    assert cli.parse_t("inf") == math.inf and cli.parse_t("auto") is None


def test_workers_env(monkeypatch):
    from gtlab.parallel import default_workers
    monkeypatch.setenv("GT_LAB_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.delenv("GT_LAB_WORKERS")
    assert default_workers() == 1
    monkeypatch.setenv("GT_LAB_WORKERS", "x")
    with pytest.raises(ValueError):
        default_workers()


def test_gen_recover_roundtrip(tmp_path, capsys):
    inst = tmp_path / "inst.txt"
    assert cli.main(["gen", "--c", "3", "--n", "5e3", "--seed", "2", "--output", str(inst)]) == 0
    parsed = read_instance(inst.read_text())
    assert parsed.outcomes is not None and len(parsed.infected) > 0
    code, out, _ = run(capsys, "recover", "--c", "3", "--input", str(inst))
    assert code == 0
    row = data_lines(out)[1].split(",")
    assert int(row[4]) == 0  # COMP never misses an infected individual
    red = tmp_path / "red.txt"
    assert cli.main(["gen", "--c", "3", "--n", "5e3", "--reduce", "1", "--output", str(red)]) == 0
    assert run(capsys, "recover", "--c", "3", "--input", str(red))[0] == 2


def test_moments_and_chi2(capsys):
    code, out, _ = run(capsys, "moments", "--c-grid", "0.6,1.0", "--alpha-step", "0.1")
    assert code == 0
    assert data_lines(out)[0] == "c,alpha,x0,x1,F,bound,margin"
    assert "q_hat_ratio" in out
    code, out, _ = run(capsys, "chi2", "--c", "0.5", "--n-grid", "1e3,1e4")
    assert code == 0
    assert data_lines(out)[0] == "n,ell,log_term"
    assert out.count("log_T_low=") == 2


def test_detect_plumbing(capsys):
    code, out, _ = run(capsys, "detect", "--design", "cc", "--theta", "0.2", "--c", "2", "--n", "1e4", "--trials", "8")
    assert code == 0
    m = meta(out)
    assert 0 <= float(m["accuracy"]) <= 1
    assert len(data_lines(out)) == 1 + 16


@pytest.mark.xfail(strict=True, reason="held-out accuracy is about 0.91 at n=1e5; see notes")
def test_detect_bernoulli_example(capsys):
    code, out, _ = run(capsys, "detect", "--design", "bernoulli", "--theta", "0.3", "--c", "1.5", "--n", "1e5",
                       "--trials", "400")
    assert code == 0
    assert float(meta(out)["accuracy"]) >= 0.95


@pytest.mark.parametrize("argv", [
    ["recover", "--c", "2.5", "--n", "2e4", "--trials", "6", "--seed", "4"],
    ["aon", "--c-grid", "1,2", "--n", "300", "--theta", "0.25", "--trials", "3"],
    ["detect", "--c", "2", "--theta", "0.2", "--n", "1e4", "--trials", "8"],
])
def test_same_seed_same_bytes(capsys, argv):
    a = run(capsys, *argv, "--workers", "1")[1]
    b = run(capsys, *argv, "--workers", "1")[1]
    c = run(capsys, *argv, "--workers", "8")[1]
    assert a == b == c
