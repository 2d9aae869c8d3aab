"""Command-line harness: ``asyncsa <subcommand> --config FILE [--seeds ...] --out DIR``.

Every subcommand writes ``manifest.json`` (config text, its sha256, seeds,
library versions), one or more CSV files and ``summary.json`` with a
pass/fail entry per check. The exit status is 0 iff no check failed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, diagnostics, engine, noise, ode, qlearning, schedule, trajectory
from .drift import affine_equilibrium, linear_field, make_drift
from .exceptions import CapExceeded, IntegrationError, ModelError, ScheduleError, UsageError

SUBCOMMANDS = ("run", "check", "lambda", "ode", "diagnose", "qlearn", "report")


class ConfigError(UsageError):
    pass


# ---------------------------------------------------------------------------
# configuration

_ANY = object()  # free-form mapping validated by the factory it feeds
SCHEMA = {
    "name": str,
    "seed": int,
    "seeds": [int],
    "horizon": int,
    "x0": [float],
    "recording": str,
    "offset": int,
    "drift": {"kind": str, "A": _ANY, "a": float, "b": [float], "mdp": str, "reference": _ANY,
              "estimate_holding": bool},
    "stepsize": {"kind": str, "params": _ANY},
    "updates": {"kind": str, "params": _ANY},
    "noise": {
        "martingale": {"kind": str, "params": _ANY},
        "bias": {"delta_kind": str, "params": _ANY},
    },
    "check": {"horizon": int, "x_grid": [float]},
    "diagnostics": {
        "T": float, "cap": float, "window": float, "checkpoints": [int], "tracking_T": float,
        "tracking_checkpoints": [int], "dt": float, "n0": [int], "ratio_x": float, "tolerance": float,
        "dwell": {"delta": float, "checkpoints": [int], "x_star": [float]},
    },
    "ode": {"a": float, "dim": int, "radius": float, "samples": int, "t_max": float, "dt": float},
    "qlearn": {"residual_tol": float, "min_success": float},
}

DEFAULTS = {
    "seed": 0,
    "horizon": 10**5,
    "recording": "auto",
    "offset": 0,
    "drift": {"kind": "affine", "a": -1.0},
    "stepsize": {"kind": "harmonic", "params": {}},
    "updates": {"kind": "uniform_single", "params": {}},
    "noise": {"martingale": {"kind": "zero", "params": {}}, "bias": {"delta_kind": "none", "params": {}}},
    "check": {"horizon": 10**6, "x_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]},
    "diagnostics": {"T": 0.5, "cap": 10.0, "window": 10.0, "checkpoints": [100, 1000, -1], "tracking_T": 5.0,
                    "dt": 1e-3, "n0": [1000, 100000], "ratio_x": 1.0, "tolerance": 0.05},
    "ode": {"a": -1.0, "dim": 1, "radius": 0.125, "samples": 64, "t_max": 20.0, "dt": 1e-3},
    "qlearn": {"residual_tol": 0.05, "min_success": 0.9},
}


def _line(node) -> str:
    return f"line {node.start_mark.line + 1}"


def _validate(node, schema, path):
    """Walk the composed YAML node against the schema, rejecting unknown keys with line context."""
    if schema is _ANY:
        return
    if isinstance(schema, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(f"{path or 'config'} must be a mapping ({_line(node)})")
        for k_node, v_node in node.value:
            key = k_node.value
            where = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError(f"unknown key '{where}' ({_line(k_node)})")
            _validate(v_node, schema[key], where)
        return
    if isinstance(schema, list):
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"'{path}' must be a list ({_line(node)})")
        for item in node.value:
            _validate(item, schema[0], path + "[]")
        return
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"'{path}' must be a {schema.__name__} ({_line(node)})")
    value = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" else node.value
    ok = {
        int: isinstance(value, int) and not isinstance(value, bool),
        float: isinstance(value, (int, float)) and not isinstance(value, bool),
        bool: isinstance(value, bool),
        str: isinstance(value, str),
    }[schema]
    if not ok:
        raise ConfigError(f"'{path}' must be a {schema.__name__}, got {node.value!r} ({_line(node)})")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("params",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    data: dict
    text: str
    path: Path | None
    seeds: list = field(default_factory=list)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def __getitem__(self, key):
        return self.data[key]


def parse_config(path, text: str | None = None) -> ExperimentConfig:
    """Read, validate and default-fill a YAML experiment config."""
    p = Path(path) if path is not None else None
    if text is None:
        if p is None or not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = p.read_text()
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    raw = {}
    if node is not None:
        _validate(node, SCHEMA, "")
        raw = yaml.safe_load(text) or {}
    data = _merge(DEFAULTS, raw)
    if data["horizon"] < 0:
        raise ConfigError(f"'horizon' must be >= 0, got {data['horizon']}")
    if data["check"]["horizon"] < 1000:
        raise ConfigError("'check.horizon' must be >= 1000")
    if "seeds" in raw and "seed" in raw:
        raise ConfigError("give either 'seed' or 'seeds', not both")
    seeds = list(data["seeds"]) if "seeds" in data else [data["seed"]]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("'seeds' must be distinct")
    kind = data["drift"]["kind"]
    if kind not in ("affine", "rvi_mdp", "rvi_smdp"):
        raise ConfigError(f"'drift.kind' must be affine, rvi_mdp or rvi_smdp, got {kind!r}")
    if kind.startswith("rvi"):
        if "mdp" not in data["drift"]:
            raise ConfigError("'drift.mdp' is required for RVI drifts")
        mdp_path = Path(data["drift"]["mdp"])
        if not mdp_path.is_absolute() and p is not None:
            mdp_path = p.parent / mdp_path
        if not mdp_path.is_file():
            raise ConfigError(f"MDP file not found: {mdp_path}")
        data["drift"]["mdp"] = str(mdp_path)
    elif "b" not in data["drift"] and "A" not in data["drift"]:
        raise ConfigError("affine drift needs 'drift.b' or 'drift.A'")
    if kind == "affine":
        d = len(data["drift"]["b"]) if "b" in data["drift"] else len(data["drift"]["A"])
        if "x0" in data and len(data["x0"]) != d:
            raise ConfigError(f"'x0' has {len(data['x0'])} entries, drift has dimension {d}")
    return ExperimentConfig(data, text, p, seeds)


# ---------------------------------------------------------------------------
# model files


def load_mdp(path) -> qlearning.TabularMDP:
    """Parse the text MDP format.

    Sections ``states N``, ``actions M``, then ``transitions`` (S*A rows of S
    probabilities, ordered (s, a)), ``rewards`` (S rows of A values) and an
    optional ``holding`` (S rows of A means). ``#`` starts a comment.
    """
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    header, sections, current = {}, {}, None
    for line in lines:
        parts = line.split()
        if parts[0] in ("states", "actions") and len(parts) == 2:
            header[parts[0]] = int(parts[1])
        elif parts[0] in ("transitions", "rewards", "holding") and len(parts) == 1:
            current = parts[0]
            sections[current] = []
        elif current is None:
            raise ModelError(f"{path}: unexpected line {line!r}")
        else:
            sections[current].append([float(v) for v in parts])
    try:
        S, A = header["states"], header["actions"]
        P = np.asarray(sections["transitions"], dtype=float).reshape(S, A, S)
        r = np.asarray(sections["rewards"], dtype=float).reshape(S, A)
    except (KeyError, ValueError) as exc:
        raise ModelError(f"{path}: malformed MDP file ({exc})") from None
    if "holding" in sections:
        tau = np.asarray(sections["holding"], dtype=float).reshape(S, A)
        return qlearning.TabularSMDP(P, r, tau)
    return qlearning.TabularMDP(P, r)


def build_run_config(cfg: ExperimentConfig, seed: int, horizon: int | None = None,
                     recording=None) -> engine.RunConfig:
    data = cfg.data
    dr = data["drift"]
    params = {k: v for k, v in dr.items() if k in ("A", "a", "b")}
    drift = make_drift("affine", **params)
    d = drift.dim
    mart = data["noise"]["martingale"]
    bias = data["noise"]["bias"]
    return engine.RunConfig(
        drift=drift,
        schedule=schedule.make_schedule(data["stepsize"]["kind"], **data["stepsize"]["params"]),
        updates=schedule.make_updates(data["updates"]["kind"], d, **data["updates"]["params"]),
        x0=np.asarray(data.get("x0", np.zeros(d)), dtype=float),
        horizon=data["horizon"] if horizon is None else horizon,
        seed=seed,
        martingale=noise.make_martingale(mart["kind"], d, **mart["params"]),
        bias=noise.make_bias(bias["delta_kind"], d, **bias["params"]),
        recording=recording or data["recording"],
        offset=data["offset"],
    )


# ---------------------------------------------------------------------------
# outputs


class Bundle:
    """Collects CSV tables and check results, then writes them with a manifest."""

    def __init__(self, out: Path, cfg: ExperimentConfig | None, seeds, subcommand: str):
        self.out = Path(out)
        self.cfg = cfg
        self.seeds = list(seeds)
        self.subcommand = subcommand
        self.tables: dict[str, tuple[list, list]] = {}
        self.checks: list[dict] = []

    def table(self, name: str, columns: list, rows: list):
        self.tables[name] = (columns, rows)

    def check(self, name: str, passed: bool, value=None, detail: str = ""):
        self.checks.append({"name": name, "passed": bool(passed), "value": _plain(value), "detail": detail})

    @property
    def failures(self) -> int:
        return sum(not c["passed"] for c in self.checks)

    def write(self):
        self.out.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, (cols, rows) in self.tables.items():
            text = format_csv(cols, rows)
            (self.out / f"{name}.csv").write_text(text)
            files[f"{name}.csv"] = hashlib.sha256(text.encode()).hexdigest()
        manifest = {
            "subcommand": self.subcommand,
            "config": None if self.cfg is None else self.cfg.text,
            "config_sha256": None if self.cfg is None else self.cfg.sha256,
            "seeds": self.seeds,
            "horizon": None if self.cfg is None else self.cfg.data["horizon"],
            "versions": versions(),
            "outputs": files,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        summary = {"subcommand": self.subcommand, "checks": self.checks, "failures": self.failures}
        (self.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def versions() -> dict:
    import numba
    import scipy

    return {"asyncsa": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def format_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def history_rows(h: engine.RunHistory):
    """Rows ``n, mask, x..., alpha_tilde`` at the recorded indices (row n holds x_n and Y_{n-1})."""
    d = h.dim
    cols = ["n", "mask"] + [f"x{i}" for i in range(d)] + ["alpha_tilde"]
    rows = []
    weights = 1 << np.arange(d, dtype=np.int64)
    for n, x in zip(h.x_index, h.x):
        n = int(n)
        if n == 0 or h.mask is None:
            bits, at = 0, 0.0
        else:
            bits = int(h.mask[n - 1] @ weights)
            at = float(h.alpha_tilde[n - 1])
        rows.append([n, bits, *x.tolist(), at])
    return cols, rows


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(cfg, seeds, bundle, say):
    hists = engine.replicate(build_run_config(cfg, seeds[0]), seeds)
    rows = []
    for s, h in zip(seeds, hists):
        cols, hr = history_rows(h)
        bundle.table(f"history_seed{s}", cols, hr)
        xs = affine_equilibrium(h.config.drift)
        err = None if xs is None else float(np.abs(h.x_final - xs).max())
        rows.append([s, h.n_steps, h.diverged, err])
        bundle.check(f"seed {s}: no divergence", not h.diverged, h.n_steps)
        say(f"seed {s}: {h.n_steps} steps, terminal sup error {err}")
    bundle.table("runs", ["seed", "steps", "diverged", "terminal_sup_error"], rows)


def cmd_check(cfg, seeds, bundle, say):
    st = cfg["stepsize"]
    s = schedule.make_schedule(st["kind"], **st["params"])
    rep = schedule.check_stepsize_assumptions(s, cfg["check"]["horizon"], cfg["check"]["x_grid"])
    bundle.table("check", ["check", "value", "passed", "detail"],
                 [[c.name, c.value, c.passed, c.detail] for c in rep.checks])
    for c in rep.checks:
        bundle.check(c.name, c.passed, c.value, c.detail)
        say(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")


def cmd_lambda(cfg, seeds, bundle, say):
    dg = cfg["diagnostics"]
    h = engine.run(build_run_config(cfg, seeds[0], recording="full"))
    lam = trajectory.build_lambda(h, "random")
    cps = trajectory.checkpoint_times(lam.times, dg["checkpoints"], dg["window"])
    rep = trajectory.lambda_limit_diagnostic(lam, cps, dg["window"], dg["tolerance"])
    bundle.table("lambda", ["checkpoint", "t", "spread", "deviation", "normalized_deviation"],
                 [[n, t, sp, dv, nd] for n, t, sp, dv, nd in
                  zip(dg["checkpoints"], cps, rep.spread, rep.deviation, rep.normalized_deviation)])
    bundle.check("lambda~ terminal deviation", rep.passed, rep.normalized_deviation[-1])
    say(f"lambda~ normalized deviation by checkpoint: {np.round(rep.normalized_deviation, 5).tolist()}")
    reports = trajectory.check_tilde_ratio_all(h, dg["ratio_x"], dg["tolerance"])
    bundle.table("ratio", ["i", "j", "terminal_mean", "deviation", "passed"],
                 [[*r.pair, r.terminal_mean, r.deviation, r.passed] for r in reports])
    for r in reports:
        bundle.check(f"N~ ratio {r.pair}", r.passed, r.terminal_mean)


def cmd_ode(cfg, seeds, bundle, say):
    o = cfg["ode"]
    res = ode.stability_horizon(linear_field(o["a"], o["dim"]), o["radius"], o["samples"], o["t_max"], o["dt"])
    bundle.table("horizon", ["a", "dim", "radius", "found", "T", "starts"],
                 [[o["a"], o["dim"], o["radius"], res.found, res.T, res.n_starts]])
    bundle.check("stability horizon found", res.found, res.T, res.note)
    say(f"stability horizon: found={res.found} T={res.T} {res.note}")
    ident = ode.scaling_identity_selftest(d=4, dt=o["dt"])
    bundle.table("scaling_identity", ["t", "max_abs_error"],
                 [[t, e] for t, e in zip(ident.t[::100], np.abs(ident.numeric - ident.exact).max(axis=1)[::100])])
    bundle.check("time-scaling identity", ident.passed, ident.max_error)
    say(f"time-scaling identity max error {ident.max_error:.3g}")


def cmd_diagnose(cfg, seeds, bundle, say):
    dg = cfg["diagnostics"]
    rc = build_run_config(cfg, seeds[0], recording="full")
    h = engine.run(rc)
    det = trajectory.build_trajectory(h, "deterministic")
    sched = diagnostics.scaling_schedule(det, dg["T"])
    verdict = diagnostics.stability_monitor(sched, diverged=h.diverged)
    seg_rows = [[n, sched.times[n], sched.r[n], None] for n in range(sched.n_segments)]
    if not h.diverged and h.n_steps <= 2 * 10**5:
        lam = trajectory.build_lambda(h, "deterministic", dg["cap"])
        tr = diagnostics.tracking_error_segments(det, sched, rc.drift, lam, dg["dt"])
        for row, e in zip(seg_rows, tr.errors):
            row[3] = e
    bundle.table("segments", ["n", "T_n", "r_n", "tracking_sup"], seg_rows)
    bundle.check("stability monitor", verdict.verdict == "bounded", verdict.verdict, verdict.detail)
    say(f"stability: {verdict.verdict} ({verdict.detail})")
    if h.diverged:
        return
    traj = trajectory.build_trajectory(h, "random")
    T = dg["tracking_T"]
    anchors = [n for n in dg.get("tracking_checkpoints", dg["checkpoints"])]
    s_vals = []
    for n in anchors:
        s_vals.append(traj.t_end - T if n == -1 else float(traj.times[n]))
    fwd = diagnostics.tracking_error_windows(traj, T, rc.drift, "forward", s_vals, dg["dt"])
    bwd = diagnostics.tracking_error_windows(traj, T, rc.drift, "backward", s_vals, dg["dt"])
    fmap, bmap = dict(zip(fwd.labels, fwd.errors)), dict(zip(bwd.labels, bwd.errors))
    bundle.table("windows", ["s", "window_sup_fwd", "window_sup_bwd"],
                 [[s, fmap.get(s), bmap.get(s)] for s in s_vals])
    if fwd.errors.size >= 2:
        bundle.check("forward tracking shrinks", fwd.errors[-1] <= fwd.errors[0], fwd.errors[-1])
    if bwd.errors.size >= 2:
        bundle.check("backward tracking shrinks", bwd.errors[-1] <= bwd.errors[0], bwd.errors[-1])
    n0 = [n for n in dg["n0"] if n <= h.n_steps]
    if len(n0) >= 2:
        mr = diagnostics.martingale_partial_sums(h, n0)
        bundle.table("martingale", ["n0", "tail"], [[a, b] for a, b in zip(mr.n0, mr.tails)])
        bundle.check("martingale tail decays", mr.converging, mr.decay_ratio)
    if "dwell" in dg:
        dw = dg["dwell"]
        x_star = dw.get("x_star")
        x_star = h.x_final if x_star is None else np.asarray(x_star, dtype=float)
        recs = diagnostics.dwell_time(traj, dw.get("checkpoints", [10**4, 10**5]), dw["delta"], x_star)
        bundle.table("dwell", ["k", "n_k", "tau", "censored"], [[r.k, r.n, r.tau, r.censored] for r in recs])
        ok, why = diagnostics.dwell_trend_ok(recs)
        bundle.check("dwell times nondecreasing", ok, None, why)


def cmd_qlearn(cfg, seeds, bundle, say):
    dr, ql = cfg["drift"], cfg["qlearn"]
    model = load_mdp(dr["mdp"])
    if dr["kind"] == "rvi_smdp" and not isinstance(model, qlearning.TabularSMDP):
        raise ModelError("rvi_smdp needs holding-time means in the MDP file")
    ref = dr.get("reference", "mean")
    ref = ref if ref == "mean" else tuple(ref)
    oracle = qlearning.oracle_solve(model, ref)
    say(f"oracle gain {oracle.gain:.6g}, policy {oracle.policy.tolist()}")
    st = cfg["stepsize"]
    upd = cfg["updates"]["kind"]
    rows, good = [], 0
    for s in seeds:
        qc = qlearning.QRunConfig(
            model, cfg["horizon"], seed=s, reference=ref,
            schedule=schedule.make_schedule(st["kind"], **st["params"]),
            updates="behavior" if upd == "behavior" else ("uniform_pair" if upd == "uniform_single" else
                                                           schedule.make_updates(upd, model.d, **cfg["updates"]["params"])),
            estimate_holding=dr.get("estimate_holding", True), recording="stats", offset=cfg["offset"],
        )
        h = qlearning.async_q_run(model, qc)
        res = qlearning.bellman_residual(model, h.x_final, ref)
        pol = qlearning.greedy_policy(model, h.x_final)
        match = bool(np.array_equal(pol, oracle.policy))
        ok = res <= ql["residual_tol"] and match
        good += ok
        rows.append([s, res, " ".join(map(str, pol.tolist())), match, ok])
    bundle.table("qlearn", ["seed", "residual", "policy", "policy_matches", "success"], rows)
    rate = good / len(seeds)
    bundle.check("q-learning success rate", rate >= ql["min_success"], rate,
                 f"{good}/{len(seeds)} runs within residual {ql['residual_tol']} and oracle policy")
    say(f"{good}/{len(seeds)} runs succeeded")


def cmd_report(out: Path, say) -> int:
    if not out.is_dir():
        raise UsageError(f"no such directory: {out}")
    summaries = sorted(out.rglob("summary.json"))
    summaries = [p for p in summaries if p.parent != out or p.name == "summary.json"]
    summaries = [p for p in summaries if json.loads(p.read_text()).get("subcommand") != "report"]
    if not summaries:
        raise UsageError(f"no summaries found under {out}")
    rows, failures = [], 0
    for p in summaries:
        s = json.loads(p.read_text())
        for c in s["checks"]:
            rows.append([str(p.parent.relative_to(out)), s["subcommand"], c["name"], c["passed"]])
            failures += not c["passed"]
    text = format_csv(["bundle", "subcommand", "check", "passed"], rows)
    (out / "report.csv").write_text(text)
    (out / "summary.json").write_text(json.dumps({"subcommand": "report", "checks": [], "failures": failures},
                                                  indent=2, sort_keys=True) + "\n")
    say(f"{len(rows)} checks across {len(summaries)} bundles, {failures} failed")
    return failures


HANDLERS = {"run": cmd_run, "check": cmd_check, "lambda": cmd_lambda, "ode": cmd_ode,
            "diagnose": cmd_diagnose, "qlearn": cmd_qlearn}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyncsa", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, help="YAML experiment config")
    grp = ap.add_mutually_exclusive_group()
    grp.add_argument("--seed", type=int, help="single seed (overrides the config)")
    grp.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",") if v.strip()],
                     help="comma-separated seed list (overrides the config)")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--horizon", type=int, help="override the iteration horizon")
    ap.add_argument("--quiet", action="store_true", help="suppress progress output")
    return ap


def dispatch(subcommand: str, cfg: ExperimentConfig | None, out: Path, seeds=None, quiet: bool = False) -> int:
    """Run one subcommand and write its bundle; returns the number of failed checks."""
    def say(msg):
        if not quiet:
            print(msg)

    if subcommand == "report":
        return cmd_report(Path(out), say)
    if cfg is None:
        raise UsageError(f"'{subcommand}' needs --config")
    seeds = list(seeds) if seeds is not None else cfg.seeds
    if len(set(seeds)) != len(seeds):
        raise UsageError("seeds must be distinct")
    bundle = Bundle(out, cfg, seeds, subcommand)
    HANDLERS[subcommand](cfg, seeds, bundle, say)
    bundle.write()
    return bundle.failures


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config is not None else None
        if cfg is not None and args.horizon is not None:
            if args.horizon < 0:
                raise ConfigError("--horizon must be >= 0")
            cfg.data["horizon"] = args.horizon
        seeds = [args.seed] if args.seed is not None else args.seeds
        failures = dispatch(args.subcommand, cfg, args.out, seeds, args.quiet)
    except (UsageError, ModelError, ScheduleError, IntegrationError, CapExceeded, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
