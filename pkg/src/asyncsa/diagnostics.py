"""Stability and convergence monitors over recorded runs.

* scaling schedule ``T_n, m(n), r(n)`` and scaled segments ``x_hat``;
* stability verdict from the growth of ``r(n)``;
* tracking errors against the modulated ODE per segment and against
  ``x' = (1/d) h(x)`` on windows of the random clock;
* martingale partial sums ``zeta_n``, residual to ``E_h`` and dwell times.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drift import DriftField, affine_equilibrium, eval_drift, scaled_eval
from .exceptions import UsageError
from .ode import integrate_autonomous, integrate_modulated
from .trajectory import InterpolatedTrajectory, LambdaTrajectory


@dataclass
class ScalingSchedule:
    T: float
    m: np.ndarray  # boundary knot indices m(0)=0 < m(1) < ...
    times: np.ndarray  # T_n = t(m(n))
    r: np.ndarray  # r(n) = |x_{m(n)}| v 1, one per boundary

    @property
    def n_segments(self) -> int:
        return self.m.size - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.times)


def scaling_schedule(traj: InterpolatedTrajectory, T: float) -> ScalingSchedule:
    """``m(n+1) = min{m : t(m) >= T_n + T}``, ``T_{n+1} = t(m(n+1))``."""
    if not T > 0:
        raise UsageError("T must be positive")
    times = traj.times
    m = [0]
    while True:
        nxt = int(np.searchsorted(times, times[m[-1]] + T, side="left"))
        if nxt >= times.size:
            break
        m.append(nxt)
    if len(m) < 2:
        raise UsageError(f"trajectory of length {traj.t_end:.4g} is shorter than one segment T={T}")
    m = np.asarray(m)
    r = np.maximum(np.linalg.norm(traj.values[m], axis=1), 1.0)
    return ScalingSchedule(float(T), m, times[m], r)


@dataclass
class Segment:
    n: int
    times: np.ndarray
    values: np.ndarray  # x_bar / r(n) at the knots of [T_n, T_{n+1}]
    r: float


def scaled_segments(traj: InterpolatedTrajectory, sched: ScalingSchedule) -> list[Segment]:
    out = []
    for n in range(sched.n_segments):
        a, b = sched.m[n], sched.m[n + 1]
        out.append(Segment(n, traj.times[a: b + 1], traj.values[a: b + 1] / sched.r[n], float(sched.r[n])))
    return out


@dataclass(frozen=True)
class StabilityThresholds:
    min_segments: int = 20
    growth_factor: float = 2.0  # bounded: late sup r <= growth_factor * early sup r
    ratio: float = 1.5  # diverging: r(n+1)/r(n) above this ...
    consecutive: int = 5  # ... for this many consecutive segments


@dataclass
class StabilityVerdict:
    verdict: str  # bounded | diverging | inconclusive
    n_segments: int
    detected_at: int | None = None
    early_sup: float | None = None
    late_sup: float | None = None
    detail: str = ""


def stability_monitor(sched: ScalingSchedule, thresholds: StabilityThresholds = StabilityThresholds(),
                      diverged: bool = False) -> StabilityVerdict:
    """Verdict from the boundary norms ``r(n)``.

    Sustained geometric growth is checked first, so an exploding run is
    reported as soon as the streak completes, even with few segments.
    """
    r = sched.r
    K = sched.n_segments
    ratios = r[1:] / r[:-1]
    streak = 0
    for k, q in enumerate(ratios):
        streak = streak + 1 if q > thresholds.ratio else 0
        if streak >= thresholds.consecutive:
            return StabilityVerdict("diverging", K, detected_at=k + 1,
                                    detail=f"r grew by > {thresholds.ratio} for {streak} consecutive segments")
    if diverged:
        return StabilityVerdict("diverging", K, detail="iterate overflowed")
    if K < thresholds.min_segments:
        return StabilityVerdict("inconclusive", K, detail=f"only {K} segments (< {thresholds.min_segments})")
    half = (K + 1) // 2
    early, late = float(r[:half].max()), float(r[half:].max())
    if late <= thresholds.growth_factor * early:
        return StabilityVerdict("bounded", K, early_sup=early, late_sup=late,
                                detail=f"late sup r {late:.4g} vs early {early:.4g}")
    return StabilityVerdict("inconclusive", K, early_sup=early, late_sup=late,
                            detail=f"late sup r {late:.4g} exceeds {thresholds.growth_factor} x early {early:.4g}")


@dataclass
class TrackingReport:
    labels: np.ndarray  # segment numbers or checkpoint times
    errors: np.ndarray
    trend: float  # median of late half minus median of early half (negative: shrinking)
    notes: list = field(default_factory=list)


def _trend(errors: np.ndarray) -> float:
    if errors.size < 2:
        return 0.0
    half = errors.size // 2
    return float(np.median(errors[half:]) - np.median(errors[:half]))


def tracking_error_segments(traj: InterpolatedTrajectory, sched: ScalingSchedule, drift: DriftField,
                            lam: LambdaTrajectory, dt: float = 1e-3) -> TrackingReport:
    """Per segment, ``sup |x_hat - x^n|`` at the knots, with ``x^n`` solving ``x' = lambda(t) h_{r(n)}(x)``."""
    if lam.basis != traj.basis:
        raise UsageError(f"lambda basis {lam.basis!r} does not match trajectory basis {traj.basis!r}")
    errs = []
    for seg in scaled_segments(traj, sched):
        c = seg.r

        def g(x, c=c):
            return scaled_eval(drift, c, x)

        sol = integrate_modulated(lam, g, seg.values[0], (seg.times[0], seg.times[-1]), dt)
        ode_at_knots = sol.y[sol.breaks]
        errs.append(float(np.max(np.linalg.norm(ode_at_knots - seg.values, axis=1))))
    errs = np.asarray(errs)
    return TrackingReport(np.arange(errs.size), errs, _trend(errs))


def tracking_error_windows(traj: InterpolatedTrajectory, T: float, drift: DriftField, direction: str,
                           checkpoints, dt: float = 1e-3) -> TrackingReport:
    """``sup |x_bar - x^s|`` on ``[s, s+T]`` (forward) or ``sup |x_bar - x_s|`` on ``[s-T, s]`` (backward).

    The ODE is ``x' = (1/d) h(x)`` started (or ended) at ``x_bar(s)``.
    ``checkpoints`` are window anchor times ``s`` on the trajectory's clock.
    """
    if traj.basis != "random":
        raise UsageError("window tracking runs on the random clock")
    if direction not in ("forward", "backward"):
        raise UsageError("direction must be forward or backward")
    d = drift.dim

    def g(x):
        return eval_drift(drift, x) / d

    labels, errs, notes = [], [], []
    for s in checkpoints:
        s = float(s)
        end = s + T if direction == "forward" else s - T
        if end > traj.t_end + 1e-12 or s > traj.t_end + 1e-12 or (direction == "backward" and end < 0 and s < 0):
            notes.append(f"checkpoint s={s:.6g} skipped: window outside recorded span")
            continue
        sol = integrate_autonomous(g, traj(s), (s, end), dt)
        errs.append(float(np.max(np.linalg.norm(traj(sol.t) - sol.y, axis=1))))
        labels.append(s)
    errs = np.asarray(errs)
    return TrackingReport(np.asarray(labels), errs, _trend(errs), notes)


@dataclass
class MartingaleReport:
    path: np.ndarray  # zeta_0 .. zeta_N
    n0: np.ndarray
    tails: np.ndarray  # sup_{n0 <= m <= N} |zeta_m - zeta_{n0}|
    decay_ratio: float  # tails[-1] / tails[0]
    max_ratio: float

    @property
    def converging(self) -> bool:
        """Tails strictly decrease along the grid and the last is at most ``max_ratio`` of the first."""
        strictly = bool(np.all(np.diff(self.tails) < 0))
        return strictly and self.decay_ratio <= self.max_ratio

    @property
    def flagged(self) -> bool:
        return not self.converging


def martingale_partial_sums(history, n0_grid=(10**3, 10**5), max_ratio: float = 0.5) -> MartingaleReport:
    """``zeta_n = sum_{k<n} alpha~_k Lambda~_k M_{k+1}``, i.e. ``sum_k alpha_{nu(k,i)} M_{k+1}(i)``."""
    h = history.require_full()
    if h.m_trace is None:
        raise UsageError("history has no martingale trace")
    path = np.zeros((h.n_steps + 1, h.dim))
    np.cumsum(h.steps * h.m_trace, axis=0, out=path[1:])
    n0 = np.asarray(n0_grid, dtype=np.int64)
    if np.any(n0 < 0) or np.any(n0 > h.n_steps):
        raise UsageError("n0 grid outside the recorded run")
    tails = np.array([np.linalg.norm(path[k:] - path[k], axis=1).max() for k in n0])
    ratio = float(tails[-1] / tails[0]) if tails[0] > 0 else (0.0 if tails[-1] == 0 else np.inf)
    return MartingaleReport(path, n0, tails, ratio, max_ratio)


@dataclass
class EquilibriumDistance:
    residual: float  # |h(x)|
    exact: float | None  # distance to E_h when it is available in closed form


def distance_to_equilibrium_set(x, drift: DriftField) -> EquilibriumDistance:
    x = np.asarray(x, dtype=float)
    res = float(np.linalg.norm(eval_drift(drift, x)))
    xs = affine_equilibrium(drift)
    return EquilibriumDistance(res, None if xs is None else float(np.linalg.norm(x - xs)))


@dataclass
class DwellRecord:
    k: int
    n: int
    t: float
    tau: float
    censored: bool
    entry: float  # time since the trajectory last entered the ball (backward exit distance)
    entry_censored: bool


def _exit_distance(times, values, x_star, delta, t0, forward: bool, x0) -> tuple[float, bool]:
    """Distance from ``t0`` to the first time ``|x_bar - x*| > delta`` in one direction.

    The norm is convex along each linear piece, so each crossing is the root
    of a quadratic. Backwards, ``x_bar`` continues as ``x0`` for ``t < 0``.
    """
    if forward:
        k = int(np.searchsorted(times, t0, side="right") - 1)
        pts_t = np.concatenate([[t0], times[k + 1:]])
        start = values[k] + (values[min(k + 1, len(times) - 1)] - values[k]) * (
            0.0 if k + 1 >= len(times) else (t0 - times[k]) / (times[k + 1] - times[k]))
        pts_x = np.concatenate([start[None], values[k + 1:]])
    else:
        k = int(np.searchsorted(times, t0, side="left"))
        k = min(k, len(times) - 1)
        if times[k] == t0:
            start = values[k]
        else:
            w = (t0 - times[k - 1]) / (times[k] - times[k - 1])
            start = values[k - 1] + w * (values[k] - values[k - 1])
        pts_t = np.concatenate([[t0], times[:k][::-1]])
        pts_x = np.concatenate([start[None], values[:k][::-1]])
    dev = np.linalg.norm(pts_x - x_star, axis=1)
    if dev[0] > delta:
        return 0.0, False
    outside = np.flatnonzero(dev > delta)
    if outside.size == 0:
        if forward:
            return float(pts_t[-1] - t0), True
        # left extension: constant x0 for t < 0
        if np.linalg.norm(x0 - x_star) > delta:
            return float(t0 - pts_t[-1]), False
        return float(t0 - pts_t[-1]), True
    j = int(outside[0])
    a, b = pts_x[j - 1] - x_star, pts_x[j] - x_star
    # |a + u (b - a)|^2 = delta^2 for u in (0, 1]
    dvec = b - a
    qa, qb, qc = dvec @ dvec, 2 * a @ dvec, a @ a - delta**2
    u = (-qb + np.sqrt(max(qb * qb - 4 * qa * qc, 0.0))) / (2 * qa) if qa > 0 else 1.0
    u = float(np.clip(u, 0.0, 1.0))
    t_cross = pts_t[j - 1] + u * (pts_t[j] - pts_t[j - 1])
    return float(abs(t_cross - t0)), False


def dwell_time(traj: InterpolatedTrajectory, checkpoints, delta: float, x_star) -> list[DwellRecord]:
    """``tau_{delta,k} = min{|s| : |x_bar(t(n_k)+s) - x*| > delta}`` on the recorded span.

    ``checkpoints`` are iteration indices. ``tau`` is censored when neither
    direction exits within the span; a forward search that reaches the span
    end first caps ``tau`` there (censored). ``entry`` is the backward exit
    distance alone.
    """
    if not delta > 0:
        raise UsageError("delta must be positive")
    x_star = np.asarray(x_star, dtype=float)
    out = []
    for k, n in enumerate(checkpoints):
        if not 0 <= n < traj.times.size:
            continue
        t0 = float(traj.times[n])
        fwd, fwd_c = _exit_distance(traj.times, traj.values, x_star, delta, t0, True, traj.x0)
        bwd, bwd_c = _exit_distance(traj.times, traj.values, x_star, delta, t0, False, traj.x0)
        # a censored distance is a lower bound; the minimum is known once an exit beats it
        tau, cens = min((fwd, fwd_c), (bwd, bwd_c), key=lambda p: (p[0], p[1]))
        out.append(DwellRecord(k, int(n), t0, tau, cens, bwd, bwd_c))
    return out


def dwell_trend_ok(records: list[DwellRecord], factor: float = 10.0) -> tuple[bool, str]:
    """Nondecreasing up to censoring, with the last censored or at least ``factor`` x the first.

    A censored value is a lower bound, so only an uncensored successor that
    falls below its predecessor's value counts as a violation.
    """
    if len(records) < 2:
        return False, "need at least two checkpoints"
    for a, b in zip(records[:-1], records[1:]):
        if not b.censored and b.tau < a.tau:
            return False, f"tau dropped from {a.tau:.4g} (n={a.n}) to {b.tau:.4g} (n={b.n})"
    last, first = records[-1], records[0]
    if last.censored:
        return True, "last checkpoint censored"
    if first.tau > 0 and last.tau >= factor * first.tau:
        return True, f"last {last.tau:.4g} >= {factor} x first {first.tau:.4g}"
    return False, f"last {last.tau:.4g} < {factor} x first {first.tau:.4g}"
