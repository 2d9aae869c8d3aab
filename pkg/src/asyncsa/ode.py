"""Fixed-step classical Runge-Kutta for autonomous and lambda-modulated ODEs.

States may carry leading batch axes; the right-hand side must act on the
trailing axis. Integration runs backwards when ``t_span[1] < t_span[0]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .drift import DriftField, callable_field, estimate_lipschitz
from .exceptions import IntegrationError, UsageError
from .trajectory import LambdaTrajectory


@dataclass
class OdeSolution:
    t: np.ndarray
    y: np.ndarray  # (len(t), ..., d)
    rhs: str
    breaks: np.ndarray | None = None  # indices of grid points that sit on lambda breakpoints

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]


def _fn(g) -> Callable:
    if isinstance(g, DriftField):
        return g.fn
    if callable(g):
        return g
    raise UsageError("right-hand side must be a DriftField or a callable")


def _rk4(f, y, h):
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_step(f, y, h)


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _span(t_span):
    if np.isscalar(t_span):
        return 0.0, float(t_span)
    t0, t1 = t_span
    return float(t0), float(t1)


def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"non-finite state at t={t:.6g}", time=t)


def integrate_autonomous(g, x0, t_span, dt: float = 1e-3, name: str = "") -> OdeSolution:
    """RK4 on a uniform grid with ``ceil(|span|/dt)`` steps ending exactly at ``t_span[1]``."""
    if not dt > 0:
        raise UsageError("dt must be positive")
    f = _fn(g)
    t0, t1 = _span(t_span)
    span = t1 - t0
    n = max(int(math.ceil(abs(span) / dt - 1e-9)), 1) if span != 0 else 0
    y = np.array(x0, dtype=float)
    ys = np.empty((n + 1,) + y.shape)
    ys[0] = y
    h = span / n if n else 0.0
    for k in range(n):
        y = _rk4(f, y, h)
        _check_finite(y, t0 + (k + 1) * h)
        ys[k + 1] = y
    t = t0 + h * np.arange(n + 1)
    if n:
        t[-1] = t1
    return OdeSolution(t, ys, name or getattr(g, "name", "") or "autonomous")


def integrate_modulated(l: LambdaTrajectory, g, x0, t_span, dt: float = 1e-3, name: str = "") -> OdeSolution:
    """RK4 for ``x' = lambda(t) g(x)``, never stepping across a breakpoint of ``lambda``.

    Each interval between consecutive breakpoints is split into
    ``ceil(len/dt)`` equal micro-steps with ``lambda`` frozen at its value there.
    """
    if not dt > 0:
        raise UsageError("dt must be positive")
    f = _fn(g)
    t0, t1 = _span(t_span)
    if t1 < t0:
        raise UsageError("modulated integration runs forward only")
    lo, hi = l.span
    tol = 1e-12 * max(1.0, abs(hi))
    if t0 < lo - tol or t1 > hi + tol:
        raise UsageError(f"span [{t0}, {t1}] outside lambda domain [{lo}, {hi}]")
    inner = l.times[(l.times > t0) & (l.times < t1)]
    marks = np.concatenate([[t0], inner, [t1]])
    y = np.array(x0, dtype=float)
    ts, ys, breaks = [t0], [y.copy()], [0]
    for a, b in zip(marks[:-1], marks[1:]):
        length = b - a
        if length <= 0:
            continue
        lam = l.at(a)
        n = max(int(math.ceil(length / dt - 1e-9)), 1)
        h = length / n

        def rhs(z, lam=lam):
            return lam * f(z)

        for k in range(n):
            y = _rk4(rhs, y, h)
            _check_finite(y, a + (k + 1) * h)
            ts.append(b if k == n - 1 else a + (k + 1) * h)
            ys.append(y.copy())
        breaks.append(len(ts) - 1)
    return OdeSolution(np.asarray(ts), np.asarray(ys), name or "modulated", np.asarray(breaks))


def piecewise_lambda(times, rho, dim: int) -> LambdaTrajectory:
    """``lambda(t) = rho_k I`` on ``[times[k], times[k+1])``."""
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (times.size - 1,):
        raise UsageError("need one rho value per interval")
    return LambdaTrajectory("custom", times, np.repeat(rho[:, None], dim, axis=1))


def tau_of(times, rho, t) -> np.ndarray:
    """Exact ``tau(t) = int_{times[0]}^t rho`` for a piecewise-constant ``rho``."""
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(rho * np.diff(times))])
    k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, rho.size - 1)
    return cum[k] + rho[k] * (np.asarray(t) - times[k])


@dataclass
class ScalingIdentityResult:
    max_error: float
    tolerance: float
    t: np.ndarray
    numeric: np.ndarray
    exact: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def scaling_identity_selftest(d: int = 4, cap: float = 10.0, n_intervals: int = 40, t_end: float = 6.0,
                              dt: float = 1e-3, seed: int = 0, tolerance: float = 1e-6) -> ScalingIdentityResult:
    """Modulate ``x' = -x`` by a random ``rho`` in ``{1/d, cap}`` and compare with ``exp(-tau(t)) x0``."""
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.uniform(0.0, t_end, n_intervals - 1))
    times = np.concatenate([[0.0], cuts, [t_end]])
    rho = np.where(rng.random(n_intervals) < 0.5, 1.0 / d, cap)
    lam = piecewise_lambda(times, rho, d)
    x0 = np.linspace(1.0, -0.5, d)
    sol = integrate_modulated(lam, lambda x: -x, x0, (0.0, t_end), dt)
    exact = np.exp(-tau_of(times, rho, sol.t))[:, None] * x0
    err = float(np.max(np.abs(sol.y - exact)))
    return ScalingIdentityResult(err, tolerance, sol.t, sol.y, exact)


# ---------------------------------------------------------------------------
# stability horizon


@dataclass
class HorizonResult:
    found: bool
    T: float | None
    radius: float
    n_starts: int
    witness: np.ndarray | None = None
    witness_norm: float | None = None
    note: str = ""


def sphere_directions(d: int, samples: int) -> np.ndarray:
    """``+-e_i`` followed by ``samples`` unscrambled Sobol points pushed onto the unit sphere."""
    axes = np.concatenate([np.eye(d), -np.eye(d)])
    if samples <= 0:
        return axes
    m = int(math.ceil(math.log2(samples + 1)))
    pts = qmc.Sobol(d, scramble=False).random_base2(m)[1: samples + 1]
    z = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    z = z[norms[:, 0] > 0] / norms[norms[:, 0] > 0]
    return np.concatenate([axes, z])


def stability_horizon(h_inf, radius: float = 0.125, sphere_samples: int = 64, t_max: float = 20.0,
                      dt: float = 1e-3, dim: int | None = None, lipschitz: float | None = None) -> HorizonResult:
    """Smallest grid time after which every sampled unit start stays inside ``radius``.

    Between grid points ``|x(t) - x(t_k)| <= dt L |x(t_k)| e^{L dt}`` (as
    ``h_inf(0) = 0``), so grid norms are inflated by ``1 + L dt e^{L dt}``
    before comparing with ``radius``.
    """
    if not 0 < radius < 1:
        raise UsageError("radius must lie in (0, 1)")
    if sphere_samples < 1:
        raise UsageError("need at least one sphere sample")
    if isinstance(h_inf, DriftField):
        d = h_inf.dim
        L = h_inf.lipschitz_modulus if lipschitz is None else lipschitz
        if h_inf.scaling_limit is not None:
            f = h_inf.scaling_limit
        else:
            f = h_inf.fn
    else:
        if dim is None:
            raise UsageError("dim is required for a bare callable")
        d, f = dim, h_inf
        L = lipschitz if lipschitz is not None else estimate_lipschitz(callable_field(f, d, 0.0), 1.0, 2000, 0)
    starts = sphere_directions(d, sphere_samples)
    try:
        sol = integrate_autonomous(f, starts, (0.0, t_max), dt)
    except IntegrationError as exc:
        return HorizonResult(False, None, radius, len(starts), note=f"blow-up at t={exc.time:.4g}",
                             witness=_blowup_witness(f, starts, t_max, dt))
    norms = np.linalg.norm(sol.y, axis=-1)  # (steps+1, starts)
    h = sol.t[1] - sol.t[0]
    slack = 1.0 + L * h * math.exp(L * h)
    inside = norms.max(axis=1) * slack < radius
    if not inside[-1]:
        w = int(np.argmax(norms[-1]))
        return HorizonResult(False, None, radius, len(starts), starts[w], float(norms[-1, w]),
                             note=f"start leaves or never enters the radius by t_max={t_max}")
    outside = np.flatnonzero(~inside)
    k = 0 if outside.size == 0 else int(outside[-1]) + 1
    return HorizonResult(True, float(sol.t[k]), radius, len(starts))


def _blowup_witness(f, starts, t_max, dt):
    for s in starts:
        try:
            integrate_autonomous(f, s, (0.0, t_max), dt)
        except IntegrationError:
            return s
    return starts[0]


def first_entry_time(sol: OdeSolution, radius: float) -> float | None:
    """Earliest grid time after which the solution norm stays below ``radius``."""
    norms = np.linalg.norm(sol.y, axis=-1)
    if norms.ndim > 1:
        norms = norms.max(axis=tuple(range(1, norms.ndim)))
    outside = np.flatnonzero(norms >= radius)
    if outside.size and outside[-1] == norms.size - 1:
        return None
    return float(sol.t[0 if outside.size == 0 else outside[-1] + 1])
