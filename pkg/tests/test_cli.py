import math
import subprocess
import sys

import pytest

from gksl_scattering import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def values(out):
    d = {}
    for line in out.splitlines():
        if " = " in line and not line.startswith("#"):
            k, v = line.split(" = ", 1)
            d[k] = v
    return d


def test_decay_below_threshold(capsys):
    code, out, _ = run(capsys, "decay", "--lambda", "1", "--ms", "1", "--me", "0.6")
    assert code == 0
    v = values(out)
    assert float(v["closed"]) == 0.0
    assert float(v["numeric"].split()[0]) == 0.0


def test_decay_above_threshold(capsys):
    code, out, _ = run(capsys, "decay", "--lambda", "1", "--ms", "1", "--me", "0.1")
    assert code == 0
    v = values(out)
    assert float(v["ratio numeric/closed"]) == pytest.approx(0.5, rel=1e-12)
    assert "# lam = 1.0" in out


def test_decay_missing_mass(capsys):
    code, _, err = run(capsys, "decay", "--lambda", "1")
    assert code == 1
    assert "--ms" in err


def test_bad_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["loop-a", "--s", "0", "--t", "0", "--u", "0", "--bogus"])
    assert e.value.code == 1


def test_loop_a_low_energy(capsys):
    code, out, _ = run(capsys, "loop-a", "--s", "0", "--t", "0", "--u", "0", "--ms", "0", "--me", "1")
    assert code == 0
    v = values(out)
    assert float(v["im"]) == pytest.approx(3 / (4 * math.pi) ** 2, rel=1e-6)
    assert abs(float(v["re"])) <= 1e-8


def test_loop_a_t_u_swap_identical(capsys):
    _, a, _ = run(capsys, "loop-a", "--s", "-1", "--t", "0.3", "--u", "0.6", "--ms", "0.2")
    _, b, _ = run(capsys, "loop-a", "--s", "-1", "--t", "0.6", "--u", "0.3", "--ms", "0.2")
    assert values(a)["im"] == values(b)["im"]
    assert values(a)["re"] == values(b)["re"]


def test_loop_a_nonconvergence_exit(capsys, monkeypatch):
    from gksl_scattering import coefficients as co
    from gksl_scattering.quadrature import LoopValue

    monkeypatch.setattr(co, "loop_a", lambda m, p: LoopValue(0.01j, 1.0, False, {"euclidean": False}))
    code, out, _ = run(capsys, "loop-a", "--s", "-1", "--t", "0.3", "--u", "0.6")
    assert code == 2
    assert "converged = False" in out


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# model\nlambda = 2.0\nms = 4.0\nseed = 7\n")
    code, out, _ = run(capsys, "decay", "--config", str(cfg), "--ms", "3")
    assert code == 0
    assert "# lam = 2.0" in out and "# m_s = 3.0" in out and "# seed = 7" in out
    v = values(out)
    assert float(v["closed"]) == pytest.approx(4.0 * math.sqrt(5) / 3, rel=1e-12)


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lambda = 1\nnot a pair\n")
    code, _, err = run(capsys, "decay", "--config", str(cfg), "--ms", "3")
    assert code == 1 and ":2:" in err
    cfg.write_text("colour = red\n")
    assert run(capsys, "decay", "--config", str(cfg), "--ms", "3")[0] == 1


@pytest.mark.parametrize(
    "text,value",
    [("0", 0.0), ("pi", math.pi), ("pi/2", math.pi / 2), ("3pi/4", 0.75 * math.pi), ("-0.5*pi", -0.5 * math.pi), ("1.25", 1.25)],
)
def test_parse_angle(text, value):
    assert cli.parse_angle(text) == pytest.approx(value)


def test_parse_angle_rejects_garbage():
    with pytest.raises(cli.UsageError):
        cli.parse_angle("half")


def scan(tmp_path, capsys, name, *extra):
    path = tmp_path / name
    code, out, _ = run(capsys, "sigma-scan", "--steps", "8", "--mc-samples", "4000", "--out", str(path), *extra)
    assert code == 0
    return path.read_bytes(), out


def test_sigma_scan_csv_format(tmp_path, capsys):
    data, out = scan(tmp_path, capsys, "a.csv")
    text = data.decode()
    lines = text.split("\n")
    assert lines[0] == "x,delta_rad,sigma_closed,sigma_numeric,numeric_error"
    assert text.endswith("\n") and "\r" not in text
    rows = [l.split(",") for l in lines[1:-1]]
    assert len(rows) == 24
    for r in rows:
        for f in r:
            mant = f.lstrip("-").split("e")[0]
            assert len(mant.replace(".", "")) == 12
    assert all(float(r[2]) == 0 and float(r[3]) == 0 for r in rows if float(r[0]) < 1)
    assert "discrepancy" in out


def test_sigma_scan_deterministic(tmp_path, capsys, monkeypatch):
    a, _ = scan(tmp_path, capsys, "a.csv")
    b, _ = scan(tmp_path, capsys, "b.csv")
    monkeypatch.setenv("GKSL_THREADS", "3")
    c, _ = scan(tmp_path, capsys, "c.csv")
    assert a == b == c


def test_sigma_scan_seed_changes_numeric_column(tmp_path, capsys):
    a, _ = scan(tmp_path, capsys, "a.csv")
    b, _ = scan(tmp_path, capsys, "b.csv", "--seed", "99")
    assert a != b


def test_sigma_scan_unwritable(tmp_path, capsys):
    code, _, err = run(capsys, "sigma-scan", "--steps", "3", "--mc-samples", "100", "--out", str(tmp_path / "no" / "x.csv"))
    assert code == 1
    assert "cannot write" in err


def test_evolve_vacuum_constant(tmp_path, capsys):
    st = tmp_path / "vac.txt"
    st.write_text("# vacuum\n0 1.0 0.0\n")
    code, out, _ = run(capsys, "evolve", "--state", str(st), "--steps", "3", "--dt", "0.01", "--ms", "3", "--lambda", "1")
    assert code == 0
    rows = [l.split(",") for l in out.strip().split("\n")[1:]]
    assert len(rows) == 4
    assert all(float(r[2]) == 1.0 and float(r[5]) == pytest.approx(1.0) for r in rows)


def test_evolve_one_particle_decay(tmp_path, capsys):
    st = tmp_path / "one.txt"
    st.write_text("1 0 0 0 1.0 0.0\n")
    code, out, _ = run(
        capsys, "evolve", "--state", str(st), "--steps", "4", "--dt", "0.02",
        "--ms", "3", "--lambda", "1", "--t-eff", "20", "--out", str(tmp_path / "t.csv"),
    )
    assert code == 0
    rows = [l.split(",") for l in (tmp_path / "t.csv").read_text().strip().split("\n")[1:]]
    rate = math.sqrt(5) / 3 * 20 / (2 * math.pi * 3)
    for r in rows:
        k = int(r[0])
        assert float(r[1]) == pytest.approx(1.0, abs=1e-9)
        assert float(r[3]) == pytest.approx((1 - rate * 0.02) ** k, rel=1e-10)


def test_evolve_malformed_state_names_line(tmp_path, capsys):
    st = tmp_path / "bad.txt"
    st.write_text("0 1 0\n1 0 0 x 1 0\n")
    code, _, err = run(capsys, "evolve", "--state", str(st), "--ms", "3")
    assert code == 1
    assert "bad.txt:2" in err
    st.write_text("1 5 0 0 1 0\n")
    code, _, err = run(capsys, "evolve", "--state", str(st), "--ms", "3")
    assert code == 1 and "not on the grid" in err


def test_check_sumrule(capsys):
    code, out, _ = run(capsys, "check", "--suite", "sumrule")
    assert code == 0
    assert "CHECK name=sumrule status=PASS" in out
    assert out.strip().splitlines()[-1].startswith("SUMMARY status=PASS")


def test_check_sumrule_below_threshold(capsys):
    code, out, _ = run(capsys, "check", "--suite", "sumrule", "--ms", "1")
    assert code == 0
    assert "deviation=0.000e+00" in out


def test_check_unknown_suite():
    with pytest.raises(SystemExit) as e:
        cli.main(["check", "--suite", "nope"])
    assert e.value.code == 1


def test_check_failure_exit_code(capsys, monkeypatch):
    def failing(params):
        from gksl_scattering.symmetry import SymmetryReport

        r = SymmetryReport()
        r.add("sumrule", 1.0, 0.02)
        return r

    monkeypatch.setattr(cli, "sumrule_suite", failing)
    code, out, _ = run(capsys, "check", "--suite", "sumrule")
    assert code == 3
    assert "status=FAIL" in out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gksl_scattering", "decay", "--ms", "3"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "closed = 7.453559924999e-01" in r.stdout
