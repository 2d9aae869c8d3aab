"""The asynchronous iteration

    x_{n+1}(i) = x_n(i) + alpha_{nu(n,i)} (h_i(x_n) + M_{n+1}(i) + eps_{n+1}(i)),  i in Y_n,

with seeded randomness and replayable history.

Randomness comes from three independent streams spawned from the run seed
(update sets, martingale noise, bias) and is drawn in fixed-size chunks, so a
run is a pure function of its config and seed. Affine drifts go through a
compiled kernel; any other drift uses the Python path, which consumes the
same draws.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .drift import DriftField, eval_drift
from .exceptions import UsageError
from .noise import B_NONE, BiasNoiseModel, MartingaleNoiseModel, no_bias, zero_noise
from .schedule import StepsizeSchedule, UpdateCounters, UpdateSetProcess

CHUNK = 65536
DIVERGENCE_NORM = _kernels.DIVERGENCE_NORM


def parse_recording(policy) -> tuple[str, int]:
    """Normalize ``"full"``, ``"stats"``, ``"thinned"``/``("thinned", k)``/``"thinned:k"``."""
    if isinstance(policy, (tuple, list)):
        kind, k = policy
    elif isinstance(policy, str) and ":" in policy:
        kind, k = policy.split(":", 1)
    else:
        kind, k = policy, 100
    k = int(k)
    if kind not in ("full", "thinned", "stats") or k < 1:
        raise UsageError(f"invalid recording policy {policy!r}")
    return kind, (1 if kind == "full" else k)


@dataclass
class RunConfig:
    drift: DriftField
    schedule: StepsizeSchedule
    updates: UpdateSetProcess
    x0: np.ndarray
    horizon: int
    seed: int = 0
    martingale: MartingaleNoiseModel | None = None
    bias: BiasNoiseModel | None = None
    recording: object = "auto"  # full | thinned[:k] | stats | auto (thinned:100 at horizon >= 1e6)
    offset: int = 0  # 0: inclusive counter nu(n,i) (first step uses alpha_1); 1: exclusive
    backend: str = "auto"  # auto | python

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        d = self.drift.dim
        if self.martingale is None:
            self.martingale = zero_noise(d)
        if self.bias is None:
            self.bias = no_bias(d)
        dims = {"x0": self.x0.size, "updates": self.updates.dim, "martingale": self.martingale.dim, "bias": self.bias.dim}
        for k, v in dims.items():
            if v != d:
                raise UsageError(f"dimension mismatch: drift has d={d}, {k} has {v}")
        if int(self.horizon) < 0:
            raise UsageError("horizon must be >= 0")
        self.horizon = int(self.horizon)
        if self.offset not in (0, 1):
            raise UsageError("offset must be 0 or 1")
        if self.backend not in ("auto", "python"):
            raise UsageError("backend must be 'auto' or 'python'")
        if not np.all(np.isfinite(self.x0)):
            raise UsageError("x0 must be finite")

    @property
    def dim(self) -> int:
        return self.drift.dim

    def recording_policy(self) -> tuple[str, int]:
        if self.recording == "auto":
            return ("thinned", 100) if self.horizon >= 10**6 else ("full", 1)
        return parse_recording(self.recording)


@dataclass
class RunHistory:
    """Record of one run.

    ``x`` holds iterates at indices ``x_index`` (every index under ``full``).
    ``mask`` is ``Y_n`` for every step ``n < n_steps``; ``steps`` holds
    ``alpha_{nu(n,i)}`` on updated components and 0 elsewhere. Noise traces are
    kept under ``full`` only.
    """

    dim: int
    seed: int
    recording: tuple
    x0: np.ndarray
    x: np.ndarray
    x_index: np.ndarray
    mask: np.ndarray | None
    steps: np.ndarray | None
    alpha_tilde: np.ndarray | None
    m_trace: np.ndarray | None
    e_trace: np.ndarray | None
    delta_trace: np.ndarray | None
    x_final: np.ndarray
    nu_final: np.ndarray
    n_steps: int
    diverged: bool
    divergence_step: int | None
    alpha_table: np.ndarray
    offset: int
    max_norm: float
    config: object = field(default=None, repr=False)
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def is_full(self) -> bool:
        return self.recording[0] == "full"

    def require_full(self) -> "RunHistory":
        if not self.is_full:
            raise UsageError(f"operation needs a fully recorded history, got {self.recording[0]}")
        return self

    @property
    def counts(self) -> np.ndarray:
        """``nu(n, i)`` for ``n = 0 .. n_steps-1`` (inclusive convention)."""
        if self.mask is None:
            raise UsageError("history has no update-set record")
        return np.cumsum(self.mask, axis=0, dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, RunHistory):
            return NotImplemented
        for f in dataclasses.fields(self):
            if f.name in ("config", "extras"):
                continue
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None or a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
            elif a != b:
                return False
        return True


@dataclass
class RunState:
    n: int
    x: np.ndarray
    counters: UpdateCounters
    rngs: tuple
    diverged: bool = False


def _streams(seed) -> tuple:
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def initial_state(cfg: RunConfig) -> RunState:
    cfg.updates.reset()
    return RunState(0, cfg.x0.copy(), UpdateCounters.zeros(cfg.dim), _streams(cfg.seed))


def _python_chunk(x, drift, mask, nu, table, offset, mart, zeta, b_code, delta, ball, x_out, steps_out, m_out, e_out, delta_out):
    """Same contract as the compiled kernel, for arbitrary drifts."""
    count, d = mask.shape
    for n in range(count):
        h = eval_drift(drift, x)
        nrm = float(np.sqrt(x @ x))
        upd = np.flatnonzero(mask[n])
        nu[upd] += 1
        a = table[nu[upd] - offset]
        m = mart.apply(zeta[n], x)[upd]
        if b_code == B_NONE:
            e = np.zeros(upd.size)
        elif b_code == 2:
            e = ball[n, upd]
        else:
            e = delta[n] * (1.0 + nrm) * ball[n, upd]
        x = x.copy()
        x[upd] = x[upd] + a * (h[upd] + m + e)
        steps_out[n, upd] = a
        m_out[n, upd] = m
        e_out[n, upd] = e
        delta_out[n] = delta[n] if b_code != B_NONE else 0.0
        x_out[n + 1] = x
        if not np.all(np.isfinite(x)) or float(x @ x) > DIVERGENCE_NORM**2:
            return n + 1, x
    return count, x


def _advance(cfg: RunConfig, x, nu, table, n_start, count, rngs, replay=None):
    """Draw and execute ``count`` steps; returns per-step buffers."""
    d = cfg.dim
    if replay is None:
        mask = cfg.updates.draw(rngs[0], n_start, count)
        zeta = cfg.martingale.draw(rngs[1], count)
        delta, ball = cfg.bias.draw(rngs[2], n_start, count)
        m_code, b_code = cfg.martingale.code, cfg.bias.code
    else:
        mask, zeta, ball, delta = replay
        m_code, b_code = 1, 2
    x_out = np.empty((count + 1, d))
    x_out[0] = x
    steps_out = np.zeros((count, d))
    m_out = np.zeros((count, d))
    e_out = np.zeros((count, d))
    delta_out = np.zeros(count)
    use_kernel = cfg.drift.kind == "affine" and cfg.backend == "auto"
    if use_kernel:
        A = np.ascontiguousarray(cfg.drift.params["A"])
        b = np.ascontiguousarray(cfg.drift.params["b"])
        done = _kernels.affine_chunk(
            x, A, b, mask, nu, table, cfg.offset, m_code, np.ascontiguousarray(zeta), b_code,
            delta, ball, True, x_out, steps_out, m_out, e_out, delta_out,
        )
    else:
        mart = cfg.martingale if replay is None else _RecordedNoise()
        done, x_new = _python_chunk(
            x.copy(), cfg.drift, mask, nu, table, cfg.offset, mart, zeta, b_code, delta, ball,
            x_out, steps_out, m_out, e_out, delta_out,
        )
        x[:] = x_new
    return done, mask[:done], x_out[: done + 1], steps_out[:done], m_out[:done], e_out[:done], delta_out[:done]


class _RecordedNoise:
    @staticmethod
    def apply(zeta, x):
        return zeta


def step(state: RunState, cfg: RunConfig) -> RunState:
    """One iteration; randomness comes from the state's streams."""
    if state.n >= cfg.horizon:
        raise UsageError("state already at horizon")
    if state.diverged:
        raise UsageError("run has diverged")
    table = cfg.schedule.table(state.n + 3)
    x = state.x.copy()
    nu = state.counters.nu.copy()
    done, mask, x_out, *_ = _advance(cfg, x, nu, table, state.n, 1, state.rngs)
    x_new = x_out[-1].copy()
    diverged = not np.all(np.isfinite(x_new)) or float(x_new @ x_new) > DIVERGENCE_NORM**2
    return RunState(state.n + 1, x_new, UpdateCounters(nu, state.n), state.rngs, diverged)


def run(cfg: RunConfig) -> RunHistory:
    """Execute the configured run and record it per the recording policy."""
    return _execute(cfg, replay=None)


def _execute(cfg: RunConfig, replay):
    kind, k = cfg.recording_policy()
    d, N = cfg.dim, cfg.horizon
    cfg.updates.reset()
    rngs = _streams(cfg.seed)
    table = cfg.schedule.table(N + 2)
    x = cfg.x0.copy()
    nu = np.zeros(d, dtype=np.int64)
    full = kind == "full"
    keep_mask = kind != "stats"
    xs, idx, masks, steps_l, at_l, m_l, e_l, dl_l = [cfg.x0.copy()[None]], [np.array([0])], [], [], [], [], [], []
    max_norm = float(np.linalg.norm(x))
    n = 0
    diverged = False
    while n < N:
        count = min(CHUNK, N - n)
        rep = None
        if replay is not None:
            rep = tuple(a[n: n + count] for a in replay)
        done, mask, x_out, st, m, e, dl = _advance(cfg, x, nu, table, n, count, rngs, rep)
        rows = x_out[1:]
        norms = np.linalg.norm(rows, axis=1)
        if norms.size:
            max_norm = max(max_norm, float(np.nanmax(np.where(np.isfinite(norms), norms, np.inf))))
        if keep_mask:
            masks.append(mask)
            at_l.append(st.sum(axis=1))
        if full:
            xs.append(rows)
            idx.append(np.arange(n + 1, n + done + 1))
            steps_l.append(st)
            m_l.append(m)
            e_l.append(e)
            dl_l.append(dl)
        elif kind == "thinned":
            sel = np.arange(n + 1, n + done + 1)
            pick = (sel % k == 0) | (sel == N)
            xs.append(rows[pick])
            idx.append(sel[pick])
        n += done
        if done < count:
            diverged = True
            if kind == "thinned" and (idx[-1].size == 0 or idx[-1][-1] != n):
                xs.append(rows[-1:])
                idx.append(np.array([n]))
            break
    cat = (lambda parts, shape: np.concatenate(parts) if parts else np.zeros(shape))
    return RunHistory(
        dim=d,
        seed=cfg.seed,
        recording=(kind, k),
        x0=cfg.x0.copy(),
        x=np.concatenate(xs),
        x_index=np.concatenate(idx),
        mask=cat(masks, (0, d)).astype(bool) if keep_mask else None,
        steps=cat(steps_l, (0, d)) if full else None,
        alpha_tilde=cat(at_l, (0,)) if keep_mask else None,
        m_trace=cat(m_l, (0, d)) if full else None,
        e_trace=cat(e_l, (0, d)) if full else None,
        delta_trace=cat(dl_l, (0,)) if full else None,
        x_final=x.copy(),
        nu_final=nu.copy(),
        n_steps=n,
        diverged=diverged,
        divergence_step=(n - 1) if diverged else None,
        alpha_table=table,
        offset=cfg.offset,
        max_norm=max_norm,
        config=cfg,
    )


def replay(history: RunHistory, cfg: RunConfig | None = None) -> np.ndarray:
    """Recompute ``x_N`` from ``x0`` and the recorded update sets and noise values."""
    h = history.require_full()
    cfg = cfg or h.config
    if cfg is None:
        raise UsageError("replay needs the run config (drift and schedule)")
    cfg = dataclasses.replace(cfg, horizon=h.n_steps, recording="stats")
    rec = (h.mask, h.m_trace, h.e_trace, h.delta_trace)
    return _execute(cfg, replay=rec).x_final


def replicate(cfg: RunConfig, seeds) -> list[RunHistory]:
    """Independent runs, one per seed, returned in seed order."""
    seeds = list(seeds)
    if len(set(seeds)) != len(seeds):
        raise UsageError("seeds must be distinct")
    return [run(dataclasses.replace(cfg, seed=s)) for s in seeds]
