"""Acceptance criteria, one test per criterion.

Run with pytest for pass/fail lines in the terminal summary, or directly
(``python tests/test_acceptance.py``) to print one line per criterion.
"""
import dataclasses
import functools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from asyncsa import cli, diagnostics, drift, engine, noise, ode, qlearning, schedule, trajectory
from asyncsa.schedule import UpdateSetProcess, check_stepsize_assumptions

sys.path.insert(0, str(Path(__file__).parent))
from conftest import B4, criterion1_config, record_acceptance  # noqa: E402


@functools.lru_cache(maxsize=None)
def crit1_run():
    return engine.run(criterion1_config(seed=0, recording="full"))


@functools.lru_cache(maxsize=None)
def crit1_traj():
    return trajectory.build_trajectory(crit1_run(), "random")


def report(k, passed, detail):
    record_acceptance(f"CRITERION {k}: {'PASS' if passed else 'FAIL'} {detail}")
    return passed


def criterion_1():
    start = time.perf_counter()
    errs = [float(np.abs(engine.run(criterion1_config(seed=s, recording="stats")).x_final - B4).max())
            for s in range(20)]
    elapsed = time.perf_counter() - start
    good = sum(e <= 0.05 for e in errs)
    return report(1, good >= 19 and elapsed <= 120,
                  f"{good}/20 runs with sup error <= 0.05 (max {max(errs):.3g}), {elapsed:.1f}s")


def criterion_2():
    det = trajectory.build_trajectory(crit1_run(), "deterministic")
    pos = diagnostics.stability_monitor(diagnostics.scaling_schedule(det, 0.5))
    cfg = engine.RunConfig(drift.linear_field(1.0, 4), schedule.harmonic(), UpdateSetProcess("full_sync", 4),
                           np.ones(4), 10**5, recording="full")
    h = engine.run(cfg)
    neg_sched = diagnostics.scaling_schedule(trajectory.build_trajectory(h, "deterministic"), 0.5)
    neg = diagnostics.stability_monitor(neg_sched, diverged=h.diverged)
    ok = pos.verdict == "bounded" and neg.verdict == "diverging" and neg.detected_at is not None \
        and neg.detected_at <= 200
    return report(2, ok, f"control {pos.verdict} ({pos.n_segments} segments); "
                         f"+x {neg.verdict} at segment {neg.detected_at}")


def criterion_3():
    lam = trajectory.build_lambda(crit1_run(), "random")
    cps = trajectory.checkpoint_times(lam, [100, 1000, -1], 10.0)
    rep = trajectory.lambda_limit_diagnostic(lam, cps, 10.0)
    nd = rep.normalized_deviation
    return report(3, bool(nd[-1] <= 0.05 and nd[-1] < nd[0]),
                  f"normalized deviation by checkpoint {np.round(nd, 5).tolist()}")


def criterion_4():
    def run(kind, **params):
        cfg = engine.RunConfig(drift.affine_field(-np.eye(3), np.ones(3)), schedule.harmonic(),
                               UpdateSetProcess(kind, 3, **params), np.zeros(3), 10**5, recording="full")
        return engine.run(cfg)

    reps = trajectory.check_tilde_ratio_all(run("round_robin"), 1.0, 0.05)
    frozen = trajectory.check_tilde_ratio(run("frozen", component=0, after=100, base="round_robin"), 1.0, (0, 1))
    ok = all(r.passed and abs(r.terminal_mean - 1) <= 0.05 for r in reps) and not frozen.passed
    means = [round(r.terminal_mean, 4) for r in reps]
    return report(4, ok, f"round_robin pair means {means}; frozen control mean {frozen.terminal_mean:.3g} "
                         f"{'flagged' if not frozen.passed else 'not flagged'}")


def criterion_5():
    traj = crit1_traj()
    field = drift.affine_field(-np.eye(4), B4)
    cps = [traj.times[100], traj.times[1000], traj.t_end - 5.0]
    fwd = diagnostics.tracking_error_windows(traj, 5.0, field, "forward", cps)
    bwd = diagnostics.tracking_error_windows(traj, 5.0, field, "backward", cps)
    ok = all(r.errors.size == 3 and r.errors[-1] <= 0.1 and r.errors[-1] <= r.errors[0] for r in (fwd, bwd))
    return report(5, ok, f"forward {np.round(fwd.errors, 5).tolist()}, backward {np.round(bwd.errors, 5).tolist()}")


def criterion_6():
    start = time.perf_counter()
    res = ode.scaling_identity_selftest(d=4, cap=10.0)
    elapsed = time.perf_counter() - start
    return report(6, res.passed and elapsed < 1.0, f"max error {res.max_error:.3g} in {elapsed:.2f}s")


def criterion_7():
    r1 = ode.stability_horizon(drift.linear_field(-1.0, 2))
    r2 = ode.stability_horizon(drift.linear_field(-2.0, 2))
    r3 = ode.stability_horizon(drift.linear_field(1.0, 2))
    ln8 = math.log(8)
    ok = r1.found and abs(r1.T - ln8) <= 0.05 and r2.found and abs(r2.T - ln8 / 2) <= 0.05 and not r3.found
    return report(7, ok, f"-x T={r1.T:.4f}, -2x T={r2.T:.4f}, +x found={r3.found}")


def criterion_8():
    grid = np.arange(1, 10) / 10
    h = check_stepsize_assumptions(schedule.harmonic(), 10**6, grid)
    c = check_stepsize_assumptions(schedule.constant(0.5), 10**6, grid)
    q = check_stepsize_assumptions(schedule.power(2.0), 10**6, grid)
    ok = (h.condition_i and h.condition_ii and h.condition_iii
          and not c["sum_squares_converges"].passed and not c.condition_i
          and not q["sum_diverges"].passed and not q.condition_i)
    return report(8, ok, f"harmonic passed={h.passed}; constant 0.5 sum of squares "
                         f"{'fails' if not c['sum_squares_converges'].passed else 'passes'}; "
                         f"(n+1)^-2 sum {'fails' if not q['sum_diverges'].passed else 'passes'}")


def criterion_9():
    conv = diagnostics.martingale_partial_sums(crit1_run(), (10**3, 10**5))
    ctrl_cfg = dataclasses.replace(criterion1_config(seed=0, recording="full"), schedule=schedule.constant(0.01))
    ctrl = diagnostics.martingale_partial_sums(engine.run(ctrl_cfg), (10**3, 10**5))
    nondecreasing = bool(ctrl.tails[-1] >= ctrl.tails[0])
    ok = conv.tails[-1] < conv.tails[0] and nondecreasing and ctrl.flagged
    return report(9, ok, f"harmonic tails {np.round(conv.tails, 5).tolist()}; constant-step tails "
                         f"{np.round(ctrl.tails, 5).tolist()} non-decreasing={nondecreasing} flagged={ctrl.flagged}")


def q_successes(model, tol, audit=False):
    oracle = qlearning.oracle_solve(model)
    good, worst, bias_max = 0, 0.0, None
    for seed in range(10):
        rec = "full" if audit and seed == 0 else "stats"
        h = qlearning.async_q_run(model, horizon=2 * 10**6, seed=seed, recording=rec)
        res = qlearning.bellman_residual(model, h.x_final)
        worst = max(worst, res)
        good += res <= tol and np.array_equal(qlearning.greedy_policy(model, h.x_final), oracle.policy)
        if rec == "full":
            bias_max = noise.audit_noise(h).bias_ratio_max
            del h
    return good, worst, bias_max


def criterion_10():
    start = time.perf_counter()
    good, worst, _ = q_successes(qlearning.two_state_mdp(), 0.05)
    elapsed = time.perf_counter() - start
    return report(10, good >= 9 and elapsed <= 120,
                  f"{good}/10 runs within residual 0.05 and oracle policy (worst {worst:.3g}), {elapsed:.1f}s")


def criterion_11():
    good, worst, bias_max = q_successes(qlearning.two_state_smdp(), 0.08, audit=True)
    return report(11, good >= 8 and bias_max <= 1.0,
                  f"{good}/10 runs within residual 0.08 (worst {worst:.3g}); bias ratio max {bias_max:.3g}")


def criterion_12():
    recs = diagnostics.dwell_time(crit1_traj(), [10**4, 10**5, 9 * 10**5], 0.1, B4)
    ok, why = diagnostics.dwell_trend_ok(recs, 10.0)
    taus = [(round(r.tau, 3), "censored" if r.censored else "exit") for r in recs]
    return report(12, ok and len(recs) == 3, f"tau {taus}: {why}")


def criterion_13():
    errs = [abs(ode.integrate_autonomous(lambda x: -x, np.array([1.0]), (0.0, 1.0), dt).final[0] - math.exp(-1))
            for dt in (2e-3, 1e-3)]
    ratio = errs[0] / errs[1]
    return report(13, ratio >= 8, f"errors {errs[0]:.3g} -> {errs[1]:.3g}, ratio {ratio:.2f}")


CRIT1_YAML = """\
seeds: [0, 1]
horizon: 1000000
x0: [0, 0, 0, 0]
drift: {kind: affine, a: -1.0, b: [1.0, -2.0, 0.5, 3.0]}
updates: {kind: uniform_single}
stepsize: {kind: harmonic}
noise:
  martingale: {kind: gaussian, params: {sigma: 0.1}}
diagnostics: {checkpoints: [100, 1000, -1], window: 10.0}
"""


def criterion_14():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "crit1.yaml"
        cfg.write_text(CRIT1_YAML)
        same = True
        for sub in ("run", "lambda"):
            outs = [tmp / f"{sub}{k}" for k in range(2)]
            for out in outs:
                cli.main([sub, "--config", str(cfg), "--out", str(out), "--quiet"])
            files = sorted(p.name for p in outs[0].glob("*.csv"))
            same &= bool(files) and files == sorted(p.name for p in outs[1].glob("*.csv"))
            same &= all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
    return report(14, same, "run and lambda bundles byte-identical across reruns" if same
                  else "columnar outputs differ across reruns")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10, criterion_11, criterion_12, criterion_13, criterion_14]


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{k}" for k in range(1, 15)])
def test_criterion(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
