"""Martingale-difference noise ``M_{n+1}`` and vanishing bias ``eps_{n+1}``.

Both models separate *drawing* from *applying*: randomness is drawn in
chunks that do not depend on the iterate (so every draw is independent of the
past), then combined with ``x_n`` at update time. The compiled engine kernels
and the pure Python path consume exactly the same arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ModelError, UsageError

# Engine kernel codes
M_ZERO, M_ADDITIVE, M_STATE_SCALED, M_LIPSCHITZ = 0, 1, 2, 3
B_NONE, B_BALL = 0, 1

# Keeps |u| < 1 strictly after rounding, so the bias bound holds per draw.
_BALL_SHRINK = 1.0 - 1e-12


@dataclass(frozen=True)
class MartingaleNoiseModel:
    """Zero-mean noise with ``E|M|^2 <= K (1 + |x|^2)``.

    ``kind`` is one of ``zero``, ``gaussian`` (additive), ``bounded_iid``
    (additive uniform on ``[-c, c]``), ``state_scaled_gaussian``
    (``sigma * sqrt(1+|x|^2) * Z``) or ``lipschitz_family``
    (``F(x, zeta) = G(zeta) x + g(zeta)``).
    """

    kind: str
    dim: int
    variance_constant: float
    params: dict = field(default_factory=dict, compare=False)

    @property
    def code(self) -> int:
        return {
            "zero": M_ZERO,
            "gaussian": M_ADDITIVE,
            "bounded_iid": M_ADDITIVE,
            "state_scaled_gaussian": M_STATE_SCALED,
            "lipschitz_family": M_LIPSCHITZ,
        }[self.kind]

    @property
    def zeta_width(self) -> int:
        return self.dim * self.dim + self.dim if self.kind == "lipschitz_family" else self.dim

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Driving randomness for ``count`` iterations, shape ``(count, zeta_width)``."""
        d = self.dim
        if self.kind == "zero":
            return np.zeros((count, d))
        if self.kind in ("gaussian", "state_scaled_gaussian"):
            return self.params["sigma"] * rng.standard_normal((count, d))
        if self.kind == "bounded_iid":
            c = self.params["c"]
            return rng.uniform(-c, c, size=(count, d))
        G = self.params["G_sampler"](rng, count).reshape(count, d * d)
        g = self.params["g_sampler"](rng, count).reshape(count, d)
        return np.concatenate([G, g], axis=1)

    def apply(self, zeta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """``M`` for one iteration given its driving row ``zeta`` and ``x_n``."""
        d = self.dim
        if self.kind in ("zero", "gaussian", "bounded_iid"):
            return np.array(zeta[:d], dtype=float)
        if self.kind == "state_scaled_gaussian":
            return zeta[:d] * np.sqrt(1.0 + float(x @ x))
        return self.F(x, zeta)

    def F(self, x, zeta) -> np.ndarray:
        """The family map ``F(x, zeta)``; for additive kinds it ignores ``x``."""
        d = self.dim
        if self.kind != "lipschitz_family":
            return self.apply(zeta, np.asarray(x, dtype=float))
        G = zeta[: d * d].reshape(d, d)
        return G @ np.asarray(x, dtype=float) + zeta[d * d:]

    @property
    def lipschitz_constant(self) -> float:
        """``L_F`` for the Lipschitz family (0 for additive noise)."""
        return float(self.params.get("L_F", 0.0))


def zero_noise(dim: int) -> MartingaleNoiseModel:
    return MartingaleNoiseModel("zero", dim, 0.0)


def gaussian_noise(dim: int, sigma: float) -> MartingaleNoiseModel:
    _nonneg(sigma, "sigma")
    return MartingaleNoiseModel("gaussian", dim, dim * sigma**2, {"sigma": float(sigma)})


def state_scaled_gaussian(dim: int, sigma: float) -> MartingaleNoiseModel:
    _nonneg(sigma, "sigma")
    return MartingaleNoiseModel("state_scaled_gaussian", dim, dim * sigma**2, {"sigma": float(sigma)})


def bounded_iid(dim: int, c: float) -> MartingaleNoiseModel:
    _nonneg(c, "c")
    return MartingaleNoiseModel("bounded_iid", dim, dim * c**2 / 3.0, {"c": float(c)})


def lipschitz_family(dim: int, B, g_sigma: float) -> MartingaleNoiseModel:
    """``F(x, zeta) = xi B x + g`` with Rademacher ``xi`` and Gaussian ``g``.

    Per draw ``|F(x)-F(y)| = |B(x-y)| <= |B|_2 |x-y|``, so ``L_F = |B|_2``;
    ``E|F(x)|^2 = |Bx|^2 + d g_sigma^2 <= max(|B|^2, d g_sigma^2)(1+|x|^2)``.
    """
    B = np.asarray(B, dtype=float)
    if B.shape != (dim, dim):
        raise UsageError("B must be d x d")
    _nonneg(g_sigma, "g_sigma")
    B = B.copy()
    B.setflags(write=False)

    def G_sampler(rng, count):
        xi = rng.choice(np.array([-1.0, 1.0]), size=count)
        return xi[:, None, None] * B[None]

    def g_sampler(rng, count):
        return g_sigma * rng.standard_normal((count, dim))

    L = float(np.linalg.norm(B, 2))
    K = max(L**2, dim * g_sigma**2)
    return MartingaleNoiseModel(
        "lipschitz_family", dim, K,
        {"B": B, "g_sigma": float(g_sigma), "G_sampler": G_sampler, "g_sampler": g_sampler, "L_F": L},
    )


def make_martingale(kind: str, dim: int, **params) -> MartingaleNoiseModel:
    factories = {
        "zero": zero_noise,
        "gaussian": gaussian_noise,
        "state_scaled_gaussian": state_scaled_gaussian,
        "bounded_iid": bounded_iid,
        "lipschitz_family": lipschitz_family,
    }
    if kind not in factories:
        raise UsageError(f"unknown martingale kind {kind!r}; expected one of {sorted(factories)}")
    return factories[kind](dim, **params)


def sample_martingale(m: MartingaleNoiseModel, x_n, rng: np.random.Generator) -> np.ndarray:
    x_n = np.asarray(x_n, dtype=float)
    return m.apply(m.draw(rng, 1)[0], x_n)


def _nonneg(v, name):
    if not v >= 0:
        raise UsageError(f"{name} must be nonnegative")


# ---------------------------------------------------------------------------
# bias


@dataclass(frozen=True)
class BiasNoiseModel:
    """``eps_{n+1} = delta_{n+1} (1 + |x_n|) u`` with ``u`` uniform in the open unit ball.

    ``delta`` maps an int array of indices ``n+1`` to ``delta_{n+1}``; it may
    also take the generator (``random_delta``) for an ``F_{n+1}``-measurable
    random schedule.
    """

    kind: str
    dim: int
    delta: Callable | None = None
    random: bool = False
    params: dict = field(default_factory=dict, compare=False)

    @property
    def code(self) -> int:
        return B_NONE if self.kind == "none" else B_BALL

    def draw(self, rng: np.random.Generator, n_start: int, count: int):
        """``(delta_{n+1}, u_n)`` for ``n = n_start .. n_start+count-1``."""
        d = self.dim
        if self.kind == "none":
            return np.zeros(count), np.zeros((count, d))
        idx = np.arange(n_start + 1, n_start + count + 1, dtype=np.int64)
        dvals = np.asarray(self.delta(idx, rng) if self.random else self.delta(idx), dtype=float)
        if np.any(dvals < 0) or not np.all(np.isfinite(dvals)):
            raise ModelError("bias schedule produced a negative or non-finite delta")
        direction = rng.standard_normal((count, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.random(count) ** (1.0 / d) * _BALL_SHRINK
        return dvals, direction * radius[:, None]

    def apply(self, delta_next: float, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        return delta_next * (1.0 + float(np.sqrt(x @ x))) * u


def no_bias(dim: int) -> BiasNoiseModel:
    return BiasNoiseModel("none", dim)


def power_bias(dim: int, scale: float, exponent: float) -> BiasNoiseModel:
    """``delta_n = scale * (n + 1) ** -exponent``."""
    if scale < 0:
        raise ModelError("bias scale must be nonnegative")
    return BiasNoiseModel(
        "power", dim, lambda n: scale * (n + 1.0) ** (-exponent), params={"scale": scale, "exponent": exponent}
    )


def harmonic_bias(dim: int, scale: float) -> BiasNoiseModel:
    return power_bias(dim, scale, 1.0)


def random_bias(dim: int, scale: float, exponent: float) -> BiasNoiseModel:
    """Random schedule ``delta_n = scale * U_n * (n + 1) ** -exponent`` with ``U_n ~ U(0, 1)``."""
    if scale < 0:
        raise ModelError("bias scale must be nonnegative")

    def delta(n, rng):
        return scale * rng.random(n.shape) * (n + 1.0) ** (-exponent)

    return BiasNoiseModel("random", dim, delta, random=True, params={"scale": scale, "exponent": exponent})


def make_bias(kind: str, dim: int, **params) -> BiasNoiseModel:
    if kind == "none":
        return no_bias(dim)
    if kind == "power":
        return power_bias(dim, **params)
    if kind == "harmonic":
        return harmonic_bias(dim, **params)
    if kind == "random":
        return random_bias(dim, **params)
    raise UsageError(f"unknown bias kind {kind!r}; expected none, power, harmonic or random")


def sample_bias(b: BiasNoiseModel, x_n, n: int, rng: np.random.Generator) -> np.ndarray:
    x_n = np.asarray(x_n, dtype=float)
    dvals, u = b.draw(rng, n, 1)
    return b.apply(dvals[0], u[0], x_n)


# ---------------------------------------------------------------------------
# audit


@dataclass
class NoiseAudit:
    window: int
    window_means: np.ndarray  # (n_windows, d), over updated components only
    max_abs_window_mean: float
    second_moment_ratio_max: float  # max_n |M_{n+1}|^2 / (1 + |x_n|^2)
    second_moment_ratio_mean: float
    bias_ratio_max: float  # max_n |eps_{n+1}| / (delta_{n+1} (1 + |x_n|)); 0/0 counts as 0

    @property
    def bias_bound_holds(self) -> bool:
        return self.bias_ratio_max <= 1.0


def audit_noise(history, window: int | None = None) -> NoiseAudit:
    """Confirmatory statistics for the noise conditions over a recorded run."""
    h = history.require_full()
    if h.m_trace is None or h.e_trace is None:
        raise UsageError("history has no noise traces")
    N = h.n_steps
    if N == 0:
        raise UsageError("history has no steps")
    M, E, mask = h.m_trace, h.e_trace, h.mask
    x_prev = h.x[:-1]
    window = window or max(N // 10, 1)
    n_win = max(N // window, 1)
    means = np.zeros((n_win, h.dim))
    for w in range(n_win):
        sl = slice(w * window, min((w + 1) * window, N))
        cnt = mask[sl].sum(axis=0)
        means[w] = np.where(cnt > 0, M[sl].sum(axis=0) / np.maximum(cnt, 1), 0.0)
    scale = 1.0 + np.einsum("ij,ij->i", x_prev, x_prev)
    m2 = np.einsum("ij,ij->i", M, M) / scale
    e_norm = np.linalg.norm(E, axis=1)
    bound = h.delta_trace * (1.0 + np.linalg.norm(x_prev, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(e_norm == 0, 0.0, e_norm / bound)
    return NoiseAudit(
        window=window,
        window_means=means,
        max_abs_window_mean=float(np.abs(means).max()),
        second_moment_ratio_max=float(m2.max()),
        second_moment_ratio_mean=float(m2.mean()),
        bias_ratio_max=float(np.nan_to_num(ratio, nan=np.inf).max()),
    )
