"""Interpolated trajectories, diagonal lambda paths and the random-clock crossing index.

Two time bases are supported:

* ``deterministic``: knots ``t(n) = sum_{k<n} alpha_k``;
* ``random``: knots ``t~(n) = sum_{k<n} alpha~_k`` with
  ``alpha~_n = sum_{i in Y_n} alpha_{nu(n,i)}``.

Knot times are compensated prefix sums, so e.g. ten steps of 0.1 end at 1.0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import CapExceeded, UsageError
from .schedule import RatioReport, crossing_indices, ratio_sequence

BASES = ("deterministic", "random")


def _check_basis(basis):
    if basis not in BASES:
        raise UsageError(f"basis must be one of {BASES}, got {basis!r}")


def knot_times(history, basis: str) -> np.ndarray:
    """``t(0..N)`` or ``t~(0..N)`` for a history with an update-set record."""
    _check_basis(basis)
    if basis == "deterministic":
        lengths = history.alpha_table[: history.n_steps]
    else:
        if history.alpha_tilde is None:
            raise UsageError("history has no alpha~ record")
        lengths = history.alpha_tilde
    return _kernels.compensated_cumsum(np.ascontiguousarray(lengths, dtype=float))


@dataclass
class InterpolatedTrajectory:
    """Piecewise-linear ``x_bar`` through ``(times[n], values[n])``; ``x_bar = x0`` for ``t < 0``."""

    basis: str
    times: np.ndarray
    values: np.ndarray

    @property
    def x0(self) -> np.ndarray:
        return self.values[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t > self.t_end * (1 + 1e-12) + 1e-12):
            raise UsageError(f"time beyond recorded span {self.t_end}")
        tc = np.clip(t, 0.0, self.t_end)
        out = np.empty((t.size, self.dim))
        for i in range(self.dim):
            out[:, i] = np.interp(tc, self.times, self.values[:, i])
        # exact at knots: np.interp already returns values[k] when t == times[k]
        out[t < 0] = self.x0
        return out[0] if scalar else out

    def knot_index(self, t: float) -> int:
        """Largest ``n`` with ``times[n] <= t``."""
        return int(np.searchsorted(self.times, t, side="right") - 1)


def build_trajectory(history, basis: str = "random") -> InterpolatedTrajectory:
    history.require_full()
    times = knot_times(history, basis)
    if np.any(np.diff(times) <= 0):
        raise UsageError("knot times are not strictly increasing")
    return InterpolatedTrajectory(basis, times, history.x.copy())


@dataclass
class LambdaTrajectory:
    """Piecewise-constant diagonal path; ``entries[n]`` applies on ``[times[n], times[n+1])``."""

    basis: str
    times: np.ndarray
    entries: np.ndarray
    cap: float | None = None
    capped: np.ndarray | None = None  # per-interval flag: some b(n,i) exceeded the cap

    def __post_init__(self):
        self._cum = np.zeros((self.entries.shape[0] + 1, self.entries.shape[1]))
        np.cumsum(self.entries * np.diff(self.times)[:, None], axis=0, out=self._cum[1:])

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.entries.shape[0] - 1))
        return self.entries[k]

    def integral_to(self, t: float) -> np.ndarray:
        """``int_{times[0]}^t lambda``, all components."""
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.entries.shape[0] - 1))
        return self._cum[k] + self.entries[k] * (t - self.times[k])

    @property
    def capped_count(self) -> int:
        return 0 if self.capped is None else int(self.capped.sum())


def build_lambda(history, basis: str = "random", cap: float | None = None) -> LambdaTrajectory:
    """``diag(b(n,i) ^ C)`` on the deterministic basis or ``diag(b~(n,i))`` on the random one."""
    _check_basis(basis)
    if history.mask is None:
        raise UsageError("history has no update-set record")
    steps = _steps(history)
    times = knot_times(history, basis)
    if basis == "deterministic":
        if cap is None:
            raise UsageError("deterministic basis needs a cap C")
        if not cap > 0:
            raise UsageError("cap must be positive")
        b = steps / history.alpha_table[: history.n_steps, None]
        capped = (b > cap).any(axis=1)
        return LambdaTrajectory(basis, times, np.minimum(b, cap), cap, capped)
    b = steps / history.alpha_tilde[:, None]
    return LambdaTrajectory(basis, times, b)


def _steps(history) -> np.ndarray:
    if history.steps is not None:
        return history.steps
    counts = history.counts
    return np.where(history.mask, history.alpha_table[np.maximum(counts - history.offset, 0)], 0.0)


def window_integral(l: LambdaTrajectory, t: float, s: float, i: int | None = None):
    """Exact ``int_t^{t+s} lambda_i``; all components when ``i`` is None."""
    if not s > 0:
        raise UsageError("window length must be positive")
    lo, hi = l.span
    tol = 1e-12 * max(1.0, abs(hi))
    if t < lo - tol or t + s > hi + tol:
        raise UsageError(f"window [{t}, {t + s}] outside span [{lo}, {hi}]")
    vals = l.integral_to(min(t + s, hi)) - l.integral_to(max(t, lo))
    return vals if i is None else float(vals[i])


@dataclass
class LambdaLimitReport:
    checkpoints: np.ndarray  # window start times
    spread: np.ndarray  # max_{i,j} |I_i - I_j|
    deviation: np.ndarray | None  # max_i |I_i - s/d| (random basis only)
    window: float
    tolerance: float

    @property
    def normalized_deviation(self):
        return None if self.deviation is None else self.deviation / self.window

    @property
    def passed(self) -> bool:
        stat = self.normalized_deviation if self.deviation is not None else self.spread / self.window
        return bool(stat[-1] <= self.tolerance)


def lambda_limit_diagnostic(l: LambdaTrajectory, checkpoints, s: float, tolerance: float = 0.05) -> LambdaLimitReport:
    """Window integrals ``[t, t+s]`` at each checkpoint time.

    Against ``lambda ~ (1/d) I`` on the random basis and against equalized
    entries on either basis. ``passed`` looks at the last checkpoint.
    """
    cps = np.asarray(checkpoints, dtype=float)
    integrals = np.array([window_integral(l, t, s) for t in cps])
    spread = integrals.max(axis=1) - integrals.min(axis=1)
    dev = np.abs(integrals - s / l.dim).max(axis=1) if l.basis == "random" else None
    return LambdaLimitReport(cps, spread, dev, float(s), tolerance)


def checkpoint_times(traj_or_times, indices, window: float) -> np.ndarray:
    """Map iteration indices to window starts; ``-1`` means the terminal window ``[end-s, end]``."""
    times = traj_or_times.times if hasattr(traj_or_times, "times") else np.asarray(traj_or_times)
    out = []
    for n in indices:
        if n == -1:
            out.append(times[-1] - window)
        else:
            if not 0 <= n < times.size:
                raise UsageError(f"checkpoint index {n} outside the run")
            out.append(times[n])
    return np.asarray(out)


def tilde_N(history, n: int, x: float) -> int:
    """``min{m > n : sum_{k=n..m} alpha~_k >= x}`` on the recorded run."""
    if not x > 0:
        raise UsageError("x must be positive")
    if history.alpha_tilde is None:
        raise UsageError("history has no alpha~ record")
    j = _kernels.first_crossing(np.ascontiguousarray(history.alpha_tilde), int(n), float(x))
    if j < 0:
        raise CapExceeded(f"no crossing of {x} from n={n} within the recorded {history.n_steps} steps")
    return int(n) + int(j)


def check_tilde_ratio(history, x: float, pair, tolerance: float = 0.05, tail_fraction: float = 0.1) -> RatioReport:
    """As the deterministic-clock ratio check, with ``N~`` in place of ``N``."""
    if not x > 0:
        raise UsageError("x must be positive")
    if history.mask is None:
        raise UsageError("history has no update-set record")
    counts = history.counts
    ends = crossing_indices(history.alpha_tilde, x)
    prefix = _kernels.compensated_cumsum(history.alpha_table)
    return ratio_sequence(counts, prefix, ends, pair, tolerance, tail_fraction)


def check_tilde_ratio_all(history, x: float, tolerance: float = 0.05, tail_fraction: float = 0.1) -> list[RatioReport]:
    d = history.dim
    return [check_tilde_ratio(history, x, (i, j), tolerance, tail_fraction) for i in range(d) for j in range(i + 1, d)]
