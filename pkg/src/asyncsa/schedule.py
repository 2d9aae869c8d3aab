"""Stepsize schedules, update-set processes, update counters and their checkers.

Components are indexed ``0 .. d-1``. The per-component counter follows the
inclusive convention ``nu(n, i) = #{k <= n : i in Y_k}``, so the stepsize used
on component ``i`` at iteration ``n`` is ``alpha[nu(n, i)]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .exceptions import CapExceeded, ScheduleError, UsageError

# ---------------------------------------------------------------------------
# stepsizes


@dataclass(frozen=True)
class StepsizeSchedule:
    """A positive sequence ``alpha_n``; ``fn`` maps an int array to stepsizes."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict, compare=False)

    def table(self, size: int) -> np.ndarray:
        """``alpha_0 .. alpha_{size-1}`` as a float array, validated."""
        vals = np.asarray(self.fn(np.arange(size, dtype=np.int64)), dtype=float)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            bad = int(np.flatnonzero(~(vals > 0) | ~np.isfinite(vals))[0])
            raise ScheduleError(f"schedule {self.name!r} gives alpha_{bad} = {vals[bad]!r}")
        return vals


def alpha(s: StepsizeSchedule, n: int) -> float:
    if n < 0:
        raise UsageError("stepsize index must be >= 0")
    val = float(np.asarray(s.fn(np.array([n], dtype=np.int64)), dtype=float)[0])
    if not (val > 0 and np.isfinite(val)):
        raise ScheduleError(f"schedule {s.name!r} gives alpha_{n} = {val!r}")
    return val


def harmonic(scale: float = 1.0, offset: float = 1.0) -> StepsizeSchedule:
    """``alpha_n = scale / (n + offset)``."""
    return StepsizeSchedule("harmonic", lambda n: scale / (n + offset), {"scale": scale, "offset": offset})


def power(exponent: float, scale: float = 1.0) -> StepsizeSchedule:
    """``alpha_n = scale * (n + 1) ** -exponent``."""
    return StepsizeSchedule(
        f"power({exponent:g})",
        lambda n: scale * (n + 1.0) ** (-exponent),
        {"exponent": exponent, "scale": scale},
    )


def constant(value: float) -> StepsizeSchedule:
    return StepsizeSchedule(f"constant({value:g})", lambda n: np.full(np.shape(n), float(value)), {"value": value})


def geometric(ratio: float) -> StepsizeSchedule:
    """``alpha_n = ratio ** n``; summable, and ``alpha_[xn] / alpha_n`` is unbounded."""
    return StepsizeSchedule(f"geometric({ratio:g})", lambda n: ratio ** np.asarray(n, dtype=float), {"ratio": ratio})


_SCHEDULES = {"harmonic": harmonic, "power": power, "constant": constant, "geometric": geometric}


def make_schedule(kind: str, **params) -> StepsizeSchedule:
    try:
        factory = _SCHEDULES[kind]
    except KeyError:
        raise UsageError(f"unknown stepsize kind {kind!r}; expected one of {sorted(_SCHEDULES)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# assumption checker


@dataclass
class CheckResult:
    name: str
    value: float
    passed: bool
    detail: str = ""


@dataclass
class StepsizeReport:
    schedule: str
    horizon: int
    checks: list[CheckResult]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def condition_i(self) -> bool:
        return all(self[k].passed for k in ("sum_diverges", "sum_squares_converges", "eventually_nonincreasing"))

    @property
    def condition_ii(self) -> bool:
        return self["index_ratio_bounded"].passed

    @property
    def condition_iii(self) -> bool:
        return self["partial_sum_ratio"].passed

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass(frozen=True)
class StepsizeThresholds:
    divergence_growth: float = 0.01  # partial sum must still grow >1% over the last decade
    square_sum_growth: float = 0.05  # sum of squares may grow at most 5% over the last decade
    ratio_growth: float = 0.01  # sup of alpha_[xn]/alpha_n may grow at most 1% over the last decade
    uniformity_decay: float = 0.01  # partial-sum ratio deviation must shrink by >=1% over the last decade
    uniformity_floor: float = 1e-3  # ... unless it is already below this


def _partial_sum_deviation(prefix: np.ndarray, n: int, ys: np.ndarray) -> float:
    # prefix[m] = sum_{k<m} alpha_k, so sum_{k<=m} = prefix[m+1]
    idx = np.floor(ys * n).astype(np.int64)
    return float(np.max(np.abs(prefix[idx + 1] / prefix[n + 1] - 1.0)))


def check_stepsize_assumptions(
    s: StepsizeSchedule,
    horizon: int,
    x_grid,
    thresholds: StepsizeThresholds = StepsizeThresholds(),
) -> StepsizeReport:
    """Finite-horizon evidence for the stepsize conditions.

    Asymptotic statements cannot be decided from a finite prefix; each check
    compares the last decade ``[horizon/10, horizon]`` with what precedes it.
    """
    x_grid = np.asarray(sorted(x_grid), dtype=float)
    if x_grid.size == 0:
        raise UsageError("x_grid must not be empty")
    if np.any((x_grid <= 0) | (x_grid >= 1)):
        raise UsageError("x_grid values must lie in (0, 1)")
    if horizon < 1000:
        raise UsageError("horizon must be >= 1000")
    N = int(horizon)
    n10 = N // 10
    a = s.table(N + 2)
    prefix = _kernels.compensated_cumsum(a)
    checks = []

    s_full, s_dec = prefix[N + 1], prefix[n10 + 1]
    growth = (s_full - s_dec) / s_dec
    checks.append(CheckResult(
        "sum_diverges", float(s_full), growth > thresholds.divergence_growth,
        f"partial sum {s_full:.6g}; grew {growth:.3%} over the last decade",
    ))

    sq = _kernels.compensated_cumsum(a * a)
    q_full, q_dec = sq[N + 1], sq[n10 + 1]
    sq_growth = (q_full - q_dec) / q_dec
    checks.append(CheckResult(
        "sum_squares_converges", float(q_full), sq_growth <= thresholds.square_sum_growth,
        f"partial sum of squares {q_full:.6g}; grew {sq_growth:.3%} over the last decade",
    ))

    tail = a[N // 2: N + 1]
    increases = int(np.count_nonzero(np.diff(tail) > 0))
    checks.append(CheckResult(
        "eventually_nonincreasing", float(increases), increases == 0,
        f"{increases} increases over n in [{N // 2}, {N}]",
    ))

    n = np.arange(1, N + 1)
    worst_growth = 0.0
    worst_sup = 0.0
    for x in x_grid:
        ratio = a[np.floor(x * n).astype(np.int64)] / a[n]
        sup_early = ratio[:n10].max()
        sup_all = ratio.max()
        worst_sup = max(worst_sup, float(sup_all))
        worst_growth = max(worst_growth, float(sup_all / sup_early - 1.0))
    checks.append(CheckResult(
        "index_ratio_bounded", worst_sup, worst_growth <= thresholds.ratio_growth,
        f"max ratio {worst_sup:.6g}; sup grew {worst_growth:.3%} over the last decade",
    ))

    dev_full = _partial_sum_deviation(prefix, N, x_grid)
    dev_dec = _partial_sum_deviation(prefix, n10, x_grid)
    ok = dev_full <= thresholds.uniformity_floor or dev_full < (1 - thresholds.uniformity_decay) * dev_dec
    checks.append(CheckResult(
        "partial_sum_ratio", dev_full, bool(ok),
        f"max deviation {dev_full:.6g} at n={N} vs {dev_dec:.6g} at n={n10}",
    ))
    return StepsizeReport(s.name, N, checks)


def big_N(s: StepsizeSchedule, n: int, x: float, cap: int = 10**8) -> int:
    """``min{m > n : sum_{k=n..m} alpha_k >= x}``."""
    if not x > 0:
        raise UsageError("x must be positive")
    chunk = 4096
    total_len = chunk
    while True:
        if total_len > cap:
            raise CapExceeded(f"no crossing of {x} within {cap} terms from n={n}")
        vals = s.table(n + total_len)[n:]
        j = _kernels.first_crossing(vals, 0, float(x))
        if j >= 0:
            return n + int(j)
        total_len *= 4


# ---------------------------------------------------------------------------
# update-set processes

_PROCESS_KINDS = ("full_sync", "uniform_single", "bernoulli_nonempty", "round_robin", "markov_sweep", "frozen")


class UpdateSetProcess:
    """Random mechanism selecting the nonempty update set ``Y_n``.

    ``draw`` returns a boolean ``(count, d)`` mask for iterations
    ``n_start .. n_start+count-1``. Markov sweeps keep their chain state
    between calls; every other kind is a function of ``(rng, n)`` only.

    ``frozen`` runs ``base`` on all components until iteration ``after`` and on
    every component except ``component`` afterwards. It deliberately breaks the
    positive-update-frequency condition.
    """

    def __init__(self, kind: str, dim: int, **params):
        if kind not in _PROCESS_KINDS:
            raise UsageError(f"unknown update process {kind!r}; expected one of {_PROCESS_KINDS}")
        if dim < 1:
            raise UsageError("dim must be positive")
        self.kind = kind
        self.dim = dim
        self.params = params
        if kind == "bernoulli_nonempty":
            p = float(params.get("p", 0.5))
            if not 0 < p <= 1:
                raise UsageError("bernoulli probability must lie in (0, 1]")
            self.p = p
        elif kind == "markov_sweep":
            P = np.asarray(params["P_sel"], dtype=float)
            if P.shape != (dim, dim) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
                raise UsageError("P_sel must be a row-stochastic d x d matrix")
            self._cum = np.cumsum(P, axis=1)
            self._cum[:, -1] = 1.0
            self.state = int(params.get("start", 0))
            self._start = self.state
        elif kind == "frozen":
            self.component = int(params.get("component", 0))
            self.after = int(params.get("after", 100))
            base = params.get("base", "uniform_single")
            if base not in ("full_sync", "uniform_single", "round_robin"):
                raise UsageError("frozen base must be full_sync, uniform_single or round_robin")
            if dim < 2:
                raise UsageError("frozen process needs d >= 2")
            self.base = base

    def reset(self):
        if self.kind == "markov_sweep":
            self.state = self._start

    def __repr__(self):
        return f"UpdateSetProcess({self.kind!r}, dim={self.dim}, params={self.params!r})"

    def draw(self, rng: np.random.Generator, n_start: int, count: int) -> np.ndarray:
        d = self.dim
        mask = np.zeros((count, d), dtype=bool)
        rows = np.arange(count)
        if self.kind == "full_sync":
            mask[:] = True
        elif self.kind == "uniform_single":
            mask[rows, rng.integers(0, d, size=count)] = True
        elif self.kind == "round_robin":
            mask[rows, (n_start + rows) % d] = True
        elif self.kind == "bernoulli_nonempty":
            mask = rng.random((count, d)) < self.p
            empty = ~mask.any(axis=1)
            while empty.any():
                mask[empty] = rng.random((int(empty.sum()), d)) < self.p
                empty = ~mask.any(axis=1)
        elif self.kind == "markov_sweep":
            states, self.state = _kernels.markov_sweep_states(self._cum, self.state, rng.random(count))
            mask[rows, states] = True
        else:
            mask = self._draw_frozen(rng, n_start, count)
        return mask

    def _draw_frozen(self, rng, n_start, count):
        d = self.dim
        n = n_start + np.arange(count)
        mask = np.zeros((count, d), dtype=bool)
        before = n < self.after
        others = np.array([i for i in range(d) if i != self.component])
        if self.base == "full_sync":
            mask[before] = True
            mask[~before] = np.arange(d) != self.component
        elif self.base == "uniform_single":
            full = rng.integers(0, d, size=count)
            reduced = others[rng.integers(0, d - 1, size=count)]
            mask[np.arange(count), np.where(before, full, reduced)] = True
        else:
            k_after = n - self.after
            chosen = np.where(before, n % d, others[np.maximum(k_after, 0) % (d - 1)])
            mask[np.arange(count), chosen] = True
        return mask


def next_update_set(p: UpdateSetProcess, rng: np.random.Generator, n: int) -> frozenset:
    """The update set of iteration ``n`` as a set of component indices."""
    return frozenset(np.flatnonzero(p.draw(rng, n, 1)[0]).tolist())


def make_updates(kind: str, dim: int, **params) -> UpdateSetProcess:
    return UpdateSetProcess(kind, dim, **params)


# ---------------------------------------------------------------------------
# counters


@dataclass
class UpdateCounters:
    """Cumulative per-component update counts; ``n`` is the last recorded iteration."""

    nu: np.ndarray
    n: int = -1

    @classmethod
    def zeros(cls, dim: int) -> "UpdateCounters":
        return cls(np.zeros(dim, dtype=np.int64), -1)

    def record(self, update_set) -> "UpdateCounters":
        idx = _as_index_array(update_set, self.nu.size)
        if idx.size == 0:
            raise UsageError("update set must be nonempty")
        self.nu[idx] += 1
        self.n += 1
        return self

    def __call__(self, i: int) -> int:
        return int(self.nu[i])


def _as_index_array(update_set, dim) -> np.ndarray:
    arr = np.asarray(list(update_set) if isinstance(update_set, (set, frozenset)) else update_set)
    if arr.dtype == bool:
        if arr.shape != (dim,):
            raise UsageError("boolean update mask has wrong length")
        return np.flatnonzero(arr)
    arr = np.unique(arr.astype(np.int64))
    if arr.size and (arr[0] < 0 or arr[-1] >= dim):
        raise UsageError("update set index out of range")
    return arr


def record_update(c: UpdateCounters, update_set) -> UpdateCounters:
    return c.record(update_set)


def nu(c: UpdateCounters, i: int) -> int:
    return c(i)


def estimate_delta(c: UpdateCounters) -> float:
    """``min_i nu(n, i) / n``, the empirical update-frequency floor."""
    if c.n < 1:
        raise UsageError("need at least two recorded iterations")
    return float(c.nu.min() / c.n)


def delta_path(mask: np.ndarray) -> np.ndarray:
    """``min_i nu(n, i) / n`` for ``n = 1 .. N-1`` from a recorded update mask."""
    counts = np.cumsum(mask, axis=0, dtype=np.int64)
    n = np.arange(mask.shape[0])
    return counts[1:].min(axis=1) / n[1:]


@dataclass
class FrequencyReport:
    delta_terminal: float
    delta_decade: float
    passed: bool
    detail: str


def check_update_frequency(mask: np.ndarray, floor: float | None = None, max_decay: float = 0.5) -> FrequencyReport:
    """Flag a vanishing update frequency.

    Fails when ``min_i nu/n`` at the horizon is below ``floor`` (default
    ``1/(10 d)``) or has dropped below ``max_decay`` times its value a decade
    earlier.
    """
    N, d = mask.shape
    if N < 20:
        raise UsageError("need at least 20 recorded iterations")
    floor = 1.0 / (10 * d) if floor is None else floor
    path = delta_path(mask)
    term = float(path[-1])
    dec = float(path[max(N // 10 - 1, 0)])
    ok = term >= floor and term >= max_decay * dec
    return FrequencyReport(term, dec, bool(ok), f"min nu/n = {term:.4g} at n={N - 1}, {dec:.4g} a decade earlier")


@dataclass
class RatioReport:
    """Ratio sequence over starting indices ``n`` and its terminal-window summary."""

    n: np.ndarray
    ratios: np.ndarray
    terminal_mean: float
    deviation: float
    passed: bool
    pair: tuple


def _window_sums(prefix_alpha: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # sum_{k=lo..hi} alpha_k with prefix[m] = sum_{k<m}
    return prefix_alpha[hi + 1] - prefix_alpha[lo]


def ratio_sequence(
    counts: np.ndarray, prefix_alpha: np.ndarray, ends: np.ndarray, pair, tolerance: float, tail_fraction: float
) -> RatioReport:
    """Shared machinery for the N- and N~-based ratio checks.

    ``counts[n]`` holds ``nu(n, .)``; ``ends[n]`` is the crossing index for
    start ``n`` or -1 when it falls outside the record.
    """
    i, j = pair
    valid = np.flatnonzero(ends >= 0)
    if valid.size == 0:
        raise UsageError("no start index has its crossing inside the recorded span")
    e = ends[valid]
    num = _window_sums(prefix_alpha, counts[valid, i], counts[e, i])
    den = _window_sums(prefix_alpha, counts[valid, j], counts[e, j])
    ok = den > 0
    valid, num, den = valid[ok], num[ok], den[ok]
    ratios = num / den
    k0 = int(len(ratios) * (1 - tail_fraction))
    tail = ratios[k0:]
    mean = float(tail.mean())
    dev = abs(mean - 1.0)
    return RatioReport(valid, ratios, mean, dev, bool(dev <= tolerance), tuple(pair))


def crossing_indices(step_lengths: np.ndarray, x: float) -> np.ndarray:
    """For each n, ``min{m > n : sum_{k=n..m} step_lengths[k] >= x}`` or -1."""
    prefix = _kernels.compensated_cumsum(np.asarray(step_lengths, dtype=float))
    N = step_lengths.size
    # need prefix[m+1] - prefix[n] >= x with m >= n+1
    target = prefix[:N] + x
    m_plus_1 = np.searchsorted(prefix, target, side="left")
    m = np.maximum(m_plus_1 - 1, np.arange(N) + 1)
    m[m >= N] = -1
    return m


def check_async_ratio(history, x: float, pair, tolerance: float = 0.05, tail_fraction: float = 0.1) -> RatioReport:
    """Ratio of per-component stepsize mass between ``n`` and ``N(n, x)``.

    Uses the deterministic clock ``alpha_n``; the ratio should tend to one.
    """
    if not x > 0:
        raise UsageError("x must be positive")
    mask = history.require_full().mask
    N = mask.shape[0]
    counts = np.cumsum(mask, axis=0, dtype=np.int64)
    a = history.alpha_table
    ends = crossing_indices(a[:N], x)
    prefix = _kernels.compensated_cumsum(a)
    return ratio_sequence(counts, prefix, ends, pair, tolerance, tail_fraction)
