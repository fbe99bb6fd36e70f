import json

import pytest

from kirchhoff.cli import dumps, parse_a, run


@pytest.fixture()
def env(tmp_path, monkeypatch):
    monkeypatch.setenv("KIRCHHOFF_CONSTANTS", str(tmp_path / "constants.json"))
    monkeypatch.chdir(tmp_path)
    return tmp_path


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def test_dumps_format():
    text = dumps({"b": 0.1, "a": [1, float("nan")], "c": None})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text and "null" in text


def test_parse_a():
    c = {"a_star": 2.0}
    assert parse_a("astar", c) == 2.0
    assert parse_a("2astar", c) == 4.0
    assert parse_a("1.5*astar", c) == 3.0
    assert parse_a("7", c) == 7.0


def test_oracle(env, capsys, astar):
    assert run(["oracle", "--a", "2astar", "--b", "0.01"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["e_bar"] == pytest.approx(-25.0, rel=1e-12)
    assert out["epsilon"] == pytest.approx(0.1, rel=1e-12)
    assert out["regime"] == "supercritical"
    assert out["a_star"] == pytest.approx(astar, rel=1e-12)


def test_q_solve_then_wells(env, capsys):
    assert run(["q", "solve", "--out", "q.csv"]) == 0
    consts = json.loads((env / "constants.json").read_text())
    assert set(consts) == {"a_star", "second_moment", "quartic", "decay_rate", "q0_star"}
    assert consts["q0_star"] == pytest.approx(2.2062, abs=1e-4)
    assert (env / "q.csv").read_text().splitlines()[0] == "r,q,dq"
    pot = write_json(env / "single_well.json", {"composition": "single", "wells": [{"x": [0, 0], "p": 2}]})
    assert run(["wells", "--potential", str(pot), "--out", "wells.json"]) == 0
    wells = json.loads((env / "wells.json").read_text())
    assert wells["lambda0"] > 0 and wells["z0"] == [0]


def test_fit_two_rows(env, capsys):
    (env / "s.csv").write_text(
        "b,energy,theta,l4,v_integral,mu,z_x,z_y,eps_meas,eps_theory,l2_dist,h1_dist,iters,converged,resolution_ok\n"
        "0.1,1,1,1,0,0,0,0,1,1,0,0,1,1,1\n0.05,1,1,1,0,0,0,0,1,1,0,0,1,1,1\n")
    assert run(["fit", "--in", "s.csv", "--mode", "critical_energy"]) == 1
    assert "at least 3" in capsys.readouterr().err


def test_usage_errors(env, capsys):
    assert run(["oracle", "--a", "2astar", "--b", "0.01", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["frobnicate"]) == 1
    assert run(["report", "--in", "missing.csv", "--a", "astar"]) == 1
    assert run(["oracle", "--a", "many", "--b", "0.1"]) == 1


def test_version(env, capsys):
    (env / "constants.json").write_text("{}")
    with pytest.raises(SystemExit) as exc:
        from kirchhoff.cli import build_parser

        build_parser().parse_args(["--version"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "sha256 44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a" in out


def test_minimize_outputs(env, capsys):
    cfg = write_json(env / "cfg.json", {"a": 0, "b": 0, "grid": {"L": 6, "n": 64},
                                        "potential": {"composition": "single", "wells": [{"x": [0, 0], "p": 2}]}})
    argv = ["minimize", "--config", str(cfg), "--out", "r.json", "--field", "u.csv", "--log", "log.csv"]
    assert run(argv) == 0
    first = (env / "r.json").read_bytes()
    res = json.loads(first)
    assert res["status"] == "CONVERGED"
    assert res["energy"] == pytest.approx(1.0, rel=5e-3)
    assert (env / "u.csv.json").exists()
    assert (env / "log.csv").read_text().splitlines()[0] == "iter,energy,residual,dt,theta"
    assert run(argv) == 0
    assert (env / "r.json").read_bytes() == first


def test_minimize_blowup_exit_code(env, capsys):
    cfg = write_json(env / "cfg.json", {"a": "astar", "b": 0, "grid": {"L": 4, "n": 64},
                                        "potential": {"composition": "single", "wells": [{"x": [0, 0], "p": 2}]}})
    assert run(["minimize", "--config", str(cfg), "--out", "r.json"]) == 2
    assert "BLOWUP_DETECTED" in capsys.readouterr().err


def test_minimize_bad_config(env, capsys):
    cfg = write_json(env / "cfg.json", {"a": 0, "grid": {"L": 4, "n": 64}})
    assert run(["minimize", "--config", str(cfg)]) == 1
    cfg.write_text("{not json")
    assert run(["minimize", "--config", str(cfg)]) == 1
    assert run(["minimize", "--config", "nowhere.json"]) == 1


def test_sweep_fit_report(env, capsys):
    assert run(["sweep", "--a", "2astar", "--b", "0.2,0.1,0.05", "--n", "96", "--out", "s.csv"]) == 0
    assert run(["fit", "--in", "s.csv", "--mode", "supercritical_energy", "--a", "2astar", "--out", "f.json"]) == 0
    fit = json.loads((env / "f.json").read_text())
    assert fit["slope"] == pytest.approx(-1, abs=0.02)
    assert fit["prefactor"] == pytest.approx(0.25, rel=0.02)
    assert run(["report", "--in", "s.csv", "--a", "2astar", "--out", "rep.json"]) == 0
    rep = {c["name"]: c["verdict"] for c in json.loads((env / "rep.json").read_text())["checks"]}
    assert rep["supercritical_levels"] == "PASS"
    assert rep["multiplier_scaling"] == "PASS"
    first = (env / "s.csv").read_bytes()
    assert run(["sweep", "--a", "2astar", "--b", "0.2,0.1,0.05", "--n", "96", "--out", "s.csv"]) == 0
    assert (env / "s.csv").read_bytes() == first
    assert run(["sweep", "--a", "2astar", "--b", "0.1,0.2", "--out", "bad.csv"]) == 1
