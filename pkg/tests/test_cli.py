import json

import numpy as np
import pytest

from asyncsa import cli
from asyncsa.exceptions import ModelError

BASE = """\
seeds: [1, 2]
horizon: 20000
x0: [0, 0, 0, 0]
drift: {kind: affine, a: -1.0, b: [1.0, -2.0, 0.5, 3.0]}
noise:
  martingale: {kind: gaussian, params: {sigma: 0.1}}
check: {horizon: 10000}
diagnostics:
  checkpoints: [100, 1000, -1]
  n0: [100, 10000]
  dwell: {delta: 0.1, checkpoints: [1000, 10000, 19000], x_star: [1.0, -2.0, 0.5, 3.0]}
"""

MDP = """\
# two states, stay or switch
states 2
actions 2
transitions
1 0
0 1
0 1
1 0
rewards
1 0
2 0
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(BASE)
    return p


def write(tmp_path, text, name="exp.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def summary(out):
    return json.loads((out / "summary.json").read_text())


@pytest.mark.parametrize("text,msg", [
    ("horizon: -5\ndrift: {b: [1.0]}\n", "horizon"),
    ("drift: {b: [1.0]}\nbogus: 3\n", "unknown key 'bogus' (line 2)"),
    ("drift: {b: [1.0], colour: red}\n", "unknown key 'drift.colour'"),
    ("horizon: lots\ndrift: {b: [1.0]}\n", "'horizon' must be a int"),
    ("drift: {kind: rvi_mdp}\n", "drift.mdp"),
    ("drift: {kind: rvi_mdp, mdp: missing.txt}\n", "MDP file not found"),
    ("drift: {b: [1.0, 2.0]}\nx0: [0.0]\n", "'x0' has 1 entries"),
    ("seeds: [1, 1]\ndrift: {b: [1.0]}\n", "distinct"),
    ("drift: {b: [1.0]\n", "invalid YAML"),
])
def test_parse_errors(tmp_path, text, msg):
    with pytest.raises(cli.ConfigError, match=msg.replace("(", r"\(").replace(")", r"\)").replace("[", r"\[")):
        cli.parse_config(write(tmp_path, text))


def test_missing_config_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert "not found" in capsys.readouterr().err


def test_defaults_filled(cfg_path):
    cfg = cli.parse_config(cfg_path)
    assert cfg.seeds == [1, 2]
    assert cfg["stepsize"]["kind"] == "harmonic"
    assert cfg["diagnostics"]["T"] == 0.5


def test_run_bundle(cfg_path, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [1, 2] and man["config"] == BASE
    assert set(man["outputs"]) == {"history_seed1.csv", "history_seed2.csv", "runs.csv"}
    lines = (out / "history_seed1.csv").read_text().splitlines()
    assert lines[0] == "n,mask,x0,x1,x2,x3,alpha_tilde"
    assert len(lines) == 20002
    # uniform_single: exactly one bit set per step
    assert all(bin(int(l.split(",")[1])).count("1") == 1 for l in lines[2:50])


def test_run_is_byte_reproducible(cfg_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["run", "--config", str(cfg_path), "--out", str(a), "--seed", "7", "--quiet"])
    cli.main(["run", "--config", str(cfg_path), "--out", str(b), "--seed", "7", "--quiet"])
    assert (a / "history_seed7.csv").read_bytes() == (b / "history_seed7.csv").read_bytes()
    ma, mb = (json.loads((p / "manifest.json").read_text()) for p in (a, b))
    assert ma["outputs"] == mb["outputs"]


def test_seed_flags_exclusive(cfg_path, tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["run", "--config", str(cfg_path), "--seed", "1", "--seeds", "1,2"])


def test_check_subcommand(cfg_path, tmp_path):
    out = tmp_path / "check"
    assert cli.main(["check", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    names = [c["name"] for c in summary(out)["checks"]]
    assert "sum_diverges" in names and "partial_sum_ratio" in names


def test_check_fails_for_constant_step(tmp_path):
    p = write(tmp_path, BASE + "stepsize: {kind: constant, params: {value: 0.1}}\n")
    assert cli.main(["check", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 1


def test_lambda_subcommand(cfg_path, tmp_path):
    out = tmp_path / "lam"
    assert cli.main(["lambda", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    rows = (out / "lambda.csv").read_text().splitlines()
    assert len(rows) == 4


def test_ode_subcommand(tmp_path):
    p = write(tmp_path, "drift: {b: [0.0]}\node: {a: -1.0, dim: 2}\n")
    out = tmp_path / "ode"
    assert cli.main(["ode", "--config", str(p), "--out", str(out), "--quiet"]) == 0
    T = float((out / "horizon.csv").read_text().splitlines()[1].split(",")[4])
    assert abs(T - np.log(8)) < 0.01
    p = write(tmp_path, "drift: {b: [0.0]}\node: {a: 1.0, dim: 2, t_max: 3.0}\n", "bad.yaml")
    assert cli.main(["ode", "--config", str(p), "--out", str(tmp_path / "bad"), "--quiet"]) == 1


def test_diagnose_subcommand(cfg_path, tmp_path):
    out = tmp_path / "diag"
    code = cli.main(["diagnose", "--config", str(cfg_path), "--out", str(out), "--quiet", "--horizon", "100000"])
    checks = {c["name"]: c for c in summary(out)["checks"]}
    assert checks["stability monitor"]["value"] == "bounded"
    assert checks["martingale tail decays"]["passed"]
    assert checks["dwell times nondecreasing"]["passed"]
    assert code == (0 if all(c["passed"] for c in checks.values()) else 1)


def test_qlearn_subcommand(tmp_path):
    write(tmp_path, MDP, "two.mdp")
    p = write(tmp_path, "seeds: [0, 1, 2]\nhorizon: 100000\ndrift: {kind: rvi_mdp, mdp: two.mdp}\n")
    out = tmp_path / "q"
    assert cli.main(["qlearn", "--config", str(p), "--out", str(out), "--quiet"]) == 0
    rows = (out / "qlearn.csv").read_text().splitlines()
    assert len(rows) == 4 and all(r.endswith(",1") for r in rows[1:])


def test_qlearn_smdp_needs_holding(tmp_path):
    write(tmp_path, MDP, "two.mdp")
    p = write(tmp_path, "horizon: 1000\ndrift: {kind: rvi_smdp, mdp: two.mdp}\n")
    assert cli.main(["qlearn", "--config", str(p), "--out", str(tmp_path / "q"), "--quiet"]) == 2


def test_load_mdp_with_holding(tmp_path):
    m = cli.load_mdp(write(tmp_path, MDP + "holding\n1 2\n1.5 0.5\n", "s.mdp"))
    assert m.tau.tolist() == [[1.0, 2.0], [1.5, 0.5]]
    with pytest.raises(ModelError):
        cli.load_mdp(write(tmp_path, "states 2\nactions 2\nrewards\n1 0\n", "broken.mdp"))


def test_report(cfg_path, tmp_path):
    root = tmp_path / "all"
    cli.main(["run", "--config", str(cfg_path), "--out", str(root / "run"), "--quiet"])
    p = write(tmp_path, BASE + "stepsize: {kind: constant, params: {value: 0.1}}\n", "const.yaml")
    cli.main(["check", "--config", str(p), "--out", str(root / "check"), "--quiet"])
    assert cli.main(["report", "--out", str(root), "--quiet"]) == 1
    text = (root / "report.csv").read_text()
    assert "run,seed 1: no divergence,1" in text
    # rerunning the report ignores its own summary
    assert cli.main(["report", "--out", str(root), "--quiet"]) == 1


def test_report_empty_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 2
    assert "no summaries" in capsys.readouterr().err


def test_subcommand_without_config(tmp_path):
    assert cli.main(["run", "--out", str(tmp_path)]) == 2
