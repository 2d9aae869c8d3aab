"""Average-reward RVI Q-learning on tabular MDPs and SMDPs.

Pairs ``(s, a)`` are flattened to ``s * A + a``. The drift is

    h(Q)(s,a) = r(s,a) + sum_s' p(s'|s,a) max_a' Q(s',a') - tau(s,a) f(Q) - Q(s,a)

with ``tau = 1`` for an MDP and ``f(Q) = mean(Q)`` or ``Q(s_ref, a_ref)``.
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .drift import DriftField
from .engine import CHUNK, RunHistory, _streams, parse_recording
from .exceptions import ModelError, UsageError
from .schedule import StepsizeSchedule, UpdateSetProcess, harmonic


@dataclass(frozen=True)
class TabularMDP:
    P: np.ndarray  # (S, A, S)
    r: np.ndarray  # (S, A)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or r.shape != P.shape[:2]:
            raise ModelError(f"inconsistent shapes P{P.shape}, r{r.shape}")
        if np.any(P < 0) or np.any(P > 1) or not np.allclose(P.sum(axis=2), 1.0, rtol=0, atol=1e-12):
            raise ModelError("transition rows must be probability vectors")
        if not np.all(np.isfinite(r)):
            raise ModelError("rewards must be finite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)

    @property
    def S(self) -> int:
        return self.P.shape[0]

    @property
    def A(self) -> int:
        return self.P.shape[1]

    @property
    def d(self) -> int:
        return self.S * self.A

    @property
    def holding(self) -> np.ndarray:
        return np.ones((self.S, self.A))


@dataclass(frozen=True)
class TabularSMDP(TabularMDP):
    tau: np.ndarray = None  # holding-time means (S, A)
    sampler: str = "exponential"  # exponential | deterministic | uniform (on [0, 2 tau])

    def __post_init__(self):
        super().__post_init__()
        tau = np.asarray(self.tau, dtype=float)
        if tau.shape != self.r.shape or np.any(~(tau > 0)):
            raise ModelError("holding-time means must be positive, one per pair")
        if self.sampler not in ("exponential", "deterministic", "uniform"):
            raise ModelError(f"unknown holding sampler {self.sampler!r}")
        object.__setattr__(self, "tau", tau)

    @property
    def holding(self) -> np.ndarray:
        return self.tau

    def draw_unit(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Unit-mean multipliers; a holding sample is ``tau(s,a)`` times one of these."""
        if self.sampler == "exponential":
            return rng.standard_exponential(shape)
        if self.sampler == "uniform":
            return rng.uniform(0.0, 2.0, size=shape)
        return np.ones(shape)


def two_state_mdp() -> TabularMDP:
    """States 0/1; action 0 stays (reward 1 in state 0, 2 in state 1), action 1 switches (reward 0)."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    P[0, 1, 1] = P[1, 1, 0] = 1.0
    r = np.array([[1.0, 0.0], [2.0, 0.0]])
    return TabularMDP(P, r)


def two_state_smdp(tau=((1.0, 2.0), (1.5, 0.5)), sampler: str = "exponential") -> TabularSMDP:
    m = two_state_mdp()
    return TabularSMDP(m.P, m.r, np.asarray(tau, dtype=float), sampler)


def _ref_index(mdp: TabularMDP, reference) -> int:
    if reference == "mean":
        return -1
    try:
        s, a = reference
    except (TypeError, ValueError):
        raise UsageError(f"reference must be 'mean' or a pair (s, a), got {reference!r}") from None
    if not (0 <= s < mdp.S and 0 <= a < mdp.A):
        raise UsageError(f"reference pair {reference!r} out of range")
    return int(s) * mdp.A + int(a)


def _f(Q: np.ndarray, ref: int) -> np.ndarray:
    return Q.mean(axis=-1) if ref < 0 else Q[..., ref]


def rvi_drift(mdp: TabularMDP, reference="mean", holding=None) -> DriftField:
    """The RVI drift as a batched field of dimension ``S*A``.

    Declared modulus ``|P_flat|_2 + |I + tau w^T|_2``, where ``w`` is the
    gradient of ``f``: the max over actions is 1-Lipschitz per state, so the
    nonlinear part contributes at most ``|P_flat|_2``.
    """
    ref = _ref_index(mdp, reference)
    S, A, d = mdp.S, mdp.A, mdp.d
    P_flat = mdp.P.reshape(d, S).copy()
    r = mdp.r.reshape(d).copy()
    tau = (mdp.holding if holding is None else np.asarray(holding, dtype=float)).reshape(d).copy()
    for arr in (P_flat, r, tau):
        arr.setflags(write=False)

    def fn(Q):
        vmax = Q.reshape(Q.shape[:-1] + (S, A)).max(axis=-1)
        return r + vmax @ P_flat.T - tau * _f(Q, ref)[..., None] - Q

    w = np.full(d, 1.0 / d) if ref < 0 else np.eye(d)[ref]
    L = float(np.linalg.norm(P_flat, 2) + np.linalg.norm(np.eye(d) + np.outer(tau, w), 2))
    kind = "rvi_smdp" if isinstance(mdp, TabularSMDP) else "rvi_mdp"
    return DriftField(d, fn, L, None, kind, {"P_flat": P_flat, "r": r, "tau": tau, "ref": ref, "S": S, "A": A},
                      name=f"{kind}({reference})")


def sample_backup(mdp: TabularMDP, Q, pair, rng: np.random.Generator, reference="mean"):
    """One sampled backup at ``pair``; returns ``(target_sample, M)`` with ``E[M] = 0``."""
    ref = _ref_index(mdp, reference)
    Q = np.asarray(Q, dtype=float)
    s, a = pair
    i = s * mdp.A + a
    vmax = Q.reshape(mdp.S, mdp.A).max(axis=1)
    sp = rng.choice(mdp.S, p=mdp.P[s, a])
    f = _f(Q, ref)
    tau = mdp.holding[s, a]
    target = mdp.r[s, a] + vmax[sp] - tau * f - Q[i]
    expected = mdp.r[s, a] + mdp.P[s, a] @ vmax - tau * f - Q[i]
    return float(target), float(target - expected)


# ---------------------------------------------------------------------------
# holding-time estimation


@dataclass
class HoldingTimeEstimator:
    """Running means of holding times per pair, seeded with one sample each."""

    tau_true: np.ndarray
    tau_hat: np.ndarray
    counts: np.ndarray
    tau_min: float = 1e-6

    @classmethod
    def initialize(cls, smdp: TabularSMDP, rng: np.random.Generator, tau_min: float = 1e-6):
        tau = smdp.tau.reshape(-1).copy()
        first = smdp.draw_unit(rng, tau.shape) * tau
        return cls(tau, np.maximum(first, tau_min), np.ones(tau.size, dtype=np.int64), tau_min)

    def update(self, i: int, sample: float):
        self.counts[i] += 1
        self.tau_hat[i] += (sample - self.tau_hat[i]) / self.counts[i]
        self.tau_hat[i] = max(self.tau_hat[i], self.tau_min)

    def relative_error(self) -> float:
        return float(np.max(np.abs(self.tau_hat - self.tau_true) / self.tau_true))

    def delta(self) -> float:
        """``delta = |tau|_2 * max relative error``; bounds ``|eps| <= delta |Q| < delta (1 + |Q|)``."""
        return float(np.linalg.norm(self.tau_true)) * self.relative_error()


def smdp_drift_with_estimated_holding(smdp: TabularSMDP, estimator: HoldingTimeEstimator, reference="mean"):
    """``(h at the true means, eps(Q))`` with ``eps = h_estimated - h_true = -(tau_hat - tau) f(Q)``."""
    drift = rvi_drift(smdp, reference)
    ref = drift.params["ref"]
    tau_hat = np.maximum(estimator.tau_hat, estimator.tau_min)

    def eps(Q):
        Q = np.asarray(Q, dtype=float)
        return -(tau_hat - estimator.tau_true) * _f(Q, ref)

    return drift, eps


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleSolution:
    gain: float
    q: np.ndarray  # (S*A,) zero of the RVI drift
    values: np.ndarray  # max_a Q*(s, a)
    policy: np.ndarray  # greedy action per state
    gain_by_state: np.ndarray
    optimal_policies: list = field(default_factory=list)
    residual: float = 0.0


def policy_gain(mdp: TabularMDP, policy) -> np.ndarray:
    """Long-run reward per unit time from each state under a deterministic policy."""
    S = mdp.S
    idx = np.arange(S)
    P = mdp.P[idx, policy]
    r = mdp.r[idx, policy]
    tau = mdp.holding[idx, policy]
    n_comp, labels = connected_components(P > 0, directed=True, connection="strong")
    rate = np.full(n_comp, np.nan)
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        if P[np.ix_(members, np.setdiff1d(idx, members))].sum() > 0:
            continue  # not closed
        sub = P[np.ix_(members, members)]
        k = members.size
        M = np.vstack([sub.T - np.eye(k), np.ones(k)])
        mu = np.linalg.lstsq(M, np.concatenate([np.zeros(k), [1.0]]), rcond=None)[0]
        rate[c] = (mu @ r[members]) / (mu @ tau[members])
    recurrent = ~np.isnan(rate[labels])
    gain = np.where(recurrent, rate[labels], 0.0)
    trans = np.flatnonzero(~recurrent)
    if trans.size:
        rec = np.flatnonzero(recurrent)
        Ptt = P[np.ix_(trans, trans)]
        B = np.linalg.solve(np.eye(trans.size) - Ptt, P[np.ix_(trans, rec)])
        gain[trans] = B @ gain[rec]
    return gain


def oracle_solve(mdp: TabularMDP, reference="mean", tol: float = 1e-12, max_iter: int = 10**6,
                 max_policies: int = 10**4) -> OracleSolution:
    """Optimal gain by exhaustive policy enumeration, then ``Q*`` as a zero of the RVI drift.

    The gain must be state-independent (weakly communicating input). ``Q*``
    comes from damped iteration ``Q <- Q + eta h(Q)`` to a residual below
    ``tol``; its greedy policy is checked against the enumeration.
    """
    S, A = mdp.S, mdp.A
    if A**S > max_policies:
        raise ModelError(f"{A**S} deterministic policies exceed the enumeration limit {max_policies}")
    best = np.full(S, -np.inf)
    gains = {}
    for pol in itertools.product(range(A), repeat=S):
        g = policy_gain(mdp, np.array(pol))
        gains[pol] = g
        best = np.maximum(best, g)
    if np.ptp(best) > 1e-9 * max(1.0, np.abs(best).max()):
        raise ModelError(f"optimal gain depends on the state ({best}); the model is not weakly communicating")
    gain = float(best.mean())
    optimal = [p for p, g in gains.items() if np.all(g >= gain - 1e-9)]

    drift = rvi_drift(mdp, reference)
    Q = np.zeros(mdp.d)
    eta = 0.5 / max(1.0, float(mdp.holding.max()))
    res = np.inf
    for _ in range(max_iter):
        hq = drift.fn(Q)
        res = float(np.abs(hq).max())
        if res <= tol:
            break
        Q = Q + eta * hq
    else:
        raise ModelError(f"relative value iteration did not reach tolerance {tol} (residual {res:.3g})")
    ref = drift.params["ref"]
    f = float(_f(Q, ref))
    if abs(f - gain) > 1e-8 * max(1.0, abs(gain)):
        raise ModelError(f"reference value {f} at the drift zero disagrees with the enumerated gain {gain}")
    Qm = Q.reshape(S, A)
    policy = Qm.argmax(axis=1)
    if tuple(policy) not in optimal:
        raise ModelError(f"greedy policy {tuple(policy)} is not gain-optimal")
    return OracleSolution(gain, Q, Qm.max(axis=1), policy, best, optimal, res)


def bellman_residual(mdp: TabularMDP, Q, reference="mean") -> float:
    """``|h(Q)|_inf`` at the true holding means."""
    return float(np.abs(rvi_drift(mdp, reference).fn(np.asarray(Q, dtype=float))).max())


def greedy_policy(mdp: TabularMDP, Q) -> np.ndarray:
    return np.asarray(Q, dtype=float).reshape(mdp.S, mdp.A).argmax(axis=1)


# ---------------------------------------------------------------------------
# asynchronous runs


@dataclass
class QRunConfig:
    model: TabularMDP
    horizon: int
    seed: int = 0
    reference: object = "mean"
    schedule: StepsizeSchedule = field(default_factory=harmonic)
    updates: object = "uniform_pair"  # uniform_pair | behavior | an UpdateSetProcess over pairs
    q0: np.ndarray | None = None
    estimate_holding: bool = True  # SMDP only: update with running holding-time means
    recording: object = "auto"
    offset: int = 0
    tau_min: float = 1e-6

    def __post_init__(self):
        d = self.model.d
        self.q0 = np.zeros(d) if self.q0 is None else np.asarray(self.q0, dtype=float).reshape(-1)
        if self.q0.size != d:
            raise UsageError(f"q0 has {self.q0.size} entries, expected {d}")
        if int(self.horizon) < 0:
            raise UsageError("horizon must be >= 0")
        self.horizon = int(self.horizon)
        if isinstance(self.updates, str):
            if self.updates == "uniform_pair":
                self.updates = UpdateSetProcess("uniform_single", d)
            elif self.updates != "behavior":
                raise UsageError(f"unknown update mode {self.updates!r}")
        elif self.updates.dim != d:
            raise UsageError("update process dimension must equal S*A")
        _ref_index(self.model, self.reference)

    def recording_policy(self):
        if self.recording == "auto":
            return ("thinned", 100) if self.horizon >= 10**6 else ("full", 1)
        return parse_recording(self.recording)


def async_q_run(model: TabularMDP, cfg: QRunConfig | None = None, **kwargs) -> RunHistory:
    """RVI Q-learning with one sampled backup per updated pair per step.

    For an SMDP with ``estimate_holding`` the step uses the running means
    ``tau_hat``; the recorded bias is ``eps = -(tau_hat - tau) f(Q)`` and the
    recorded ``delta`` is ``|tau|_2 max_i |tau_hat_i - tau_i| / tau_i``.
    """
    if cfg is None:
        cfg = QRunConfig(model, **kwargs)
    elif kwargs:
        cfg = dataclasses.replace(cfg, **kwargs)
    kind, k = cfg.recording_policy()
    mdp = cfg.model
    S, A, d, N = mdp.S, mdp.A, mdp.d, cfg.horizon
    drift = rvi_drift(mdp, cfg.reference)
    p = drift.params
    cum_p = np.cumsum(p["P_flat"], axis=1)
    cum_p[:, -1] = 1.0
    smdp = isinstance(mdp, TabularSMDP) and cfg.estimate_holding
    rng_u, rng_n, rng_h = _streams(cfg.seed)
    behavior = cfg.updates == "behavior"
    if not behavior:
        cfg.updates.reset()
    if smdp:
        est = HoldingTimeEstimator.initialize(mdp, rng_h, cfg.tau_min)
        tau_hat, tau_count = est.tau_hat, est.counts
    else:
        tau_hat, tau_count = p["tau"].copy(), np.ones(d, dtype=np.int64)
    table = cfg.schedule.table(N + 2)
    q = cfg.q0.copy()
    nu = np.zeros(d, dtype=np.int64)
    b_state = 0
    tau_norm = float(np.linalg.norm(p["tau"]))
    full = kind == "full"
    xs, idx, masks, st_l, at_l, m_l, e_l, dl_l = [q.copy()[None]], [np.array([0])], [], [], [], [], [], []
    n = 0
    diverged = False
    max_norm = float(np.linalg.norm(q))
    while n < N:
        count = min(CHUNK, N - n)
        if behavior:
            mask = np.zeros((count, d), dtype=bool)
            actions = rng_u.integers(0, A, size=count)
        else:
            mask = cfg.updates.draw(rng_u, n, count)
            actions = np.zeros(count, dtype=np.int64)
        uniforms = rng_n.random((count, d))
        hold = mdp.draw_unit(rng_h, (count, d)) if smdp else np.zeros((count, d))
        x_out = np.empty((count + 1, d))
        x_out[0] = q
        steps_out = np.zeros((count, d))
        m_out = np.zeros((count, d))
        e_out = np.zeros((count, d))
        delta_out = np.zeros(count)
        mask_out = np.zeros((count, d), dtype=bool)
        done, b_state = _kernels.rvi_chunk(
            q, S, A, cum_p, np.ascontiguousarray(p["P_flat"]), np.ascontiguousarray(p["r"]),
            np.ascontiguousarray(p["tau"]), p["ref"], mask, nu, table, cfg.offset,
            uniforms, behavior, b_state, actions, smdp, tau_hat, tau_count, hold, tau_norm,
            True, x_out, steps_out, m_out, e_out, delta_out, mask_out,
        )
        rows = x_out[1: done + 1]
        if rows.size:
            max_norm = max(max_norm, float(np.nanmax(np.linalg.norm(rows, axis=1))))
        if kind != "stats":
            masks.append(mask_out[:done])
            at_l.append(steps_out[:done].sum(axis=1))
        if full:
            xs.append(rows)
            idx.append(np.arange(n + 1, n + done + 1))
            st_l.append(steps_out[:done])
            m_l.append(m_out[:done])
            e_l.append(e_out[:done])
            dl_l.append(delta_out[:done])
        elif kind == "thinned":
            sel = np.arange(n + 1, n + done + 1)
            pick = (sel % k == 0) | (sel == N)
            xs.append(rows[pick])
            idx.append(sel[pick])
        n += done
        if done < count:
            diverged = True
            break
    cat = (lambda parts, shape: np.concatenate(parts) if parts else np.zeros(shape))
    keep = kind != "stats"
    hist = RunHistory(
        dim=d, seed=cfg.seed, recording=(kind, k), x0=cfg.q0.copy(),
        x=np.concatenate(xs), x_index=np.concatenate(idx),
        mask=cat(masks, (0, d)).astype(bool) if keep else None,
        steps=cat(st_l, (0, d)) if full else None,
        alpha_tilde=cat(at_l, (0,)) if keep else None,
        m_trace=cat(m_l, (0, d)) if full else None,
        e_trace=cat(e_l, (0, d)) if full else None,
        delta_trace=cat(dl_l, (0,)) if full else None,
        x_final=q.copy(), nu_final=nu.copy(), n_steps=n, diverged=diverged,
        divergence_step=(n - 1) if diverged else None, alpha_table=table, offset=cfg.offset,
        max_norm=max_norm, config=cfg,
    )
    hist.extras.update({"drift": drift, "tau_hat": tau_hat.copy(), "tau_count": tau_count.copy()})
    return hist
