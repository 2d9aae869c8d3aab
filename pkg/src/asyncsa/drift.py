"""Drift fields: the mean dynamics ``h`` driving a stochastic approximation.

A :class:`DriftField` bundles ``h`` with a declared Lipschitz modulus and,
when known in closed form, the scaling limit ``h_inf(x) = lim h(c x) / c``.
Library fields evaluate over arrays of shape ``(..., d)`` so they can be
handed to the batched ODE integrators directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import UsageError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DriftField:
    """An immutable drift ``h: R^d -> R^d``.

    ``kind`` and ``params`` let the engine pick a compiled kernel for library
    fields; anything else runs through the generic (pure Python) path.
    """

    dim: int
    fn: ArrayFn
    lipschitz_modulus: float
    scaling_limit: ArrayFn | None = None
    kind: str = "callable"
    params: dict = field(default_factory=dict, compare=False, repr=False)
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dim must be a positive integer")
        if not self.lipschitz_modulus >= 0:
            raise UsageError("lipschitz_modulus must be nonnegative")

    def __call__(self, x):
        return eval_drift(self, x)


def _as_point(field_: DriftField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (field_.dim,):
        raise UsageError(f"expected trailing dimension {field_.dim}, got shape {x.shape}")
    return x


def eval_drift(field_: DriftField, x) -> np.ndarray:
    """Evaluate ``h(x)``; ``x`` may carry leading batch axes."""
    x = _as_point(field_, x)
    out = np.asarray(field_.fn(x), dtype=float)
    if out.shape != x.shape:
        raise UsageError(f"drift returned shape {out.shape} for input {x.shape}")
    return out


def scaled_eval(field_: DriftField, c: float, x) -> np.ndarray:
    """Evaluate the scaled field ``h_c(x) = h(c x) / c`` for ``c >= 1``."""
    if not c >= 1:
        raise UsageError(f"scale c must be >= 1, got {c}")
    x = _as_point(field_, x)
    return eval_drift(field_, c * x) / c


class LimitValue(NamedTuple):
    value: np.ndarray
    approximate: bool


def scaling_limit_eval(field_: DriftField, x, c_probe: float = 1e6) -> LimitValue:
    """Evaluate ``h_inf(x)``.

    Falls back to ``h_c(x)`` at ``c = c_probe`` when no closed form is stored;
    the result is then flagged ``approximate``.
    """
    x = _as_point(field_, x)
    if field_.scaling_limit is not None:
        return LimitValue(np.asarray(field_.scaling_limit(x), dtype=float), False)
    return LimitValue(scaled_eval(field_, c_probe, x), True)


def estimate_lipschitz(field_: DriftField, box_radius: float, samples: int, rng_seed=None) -> float:
    """Largest ratio ``|h(x)-h(y)| / |x-y|`` over random pairs in a box.

    A lower bound on the true modulus. Pairs at zero distance are skipped.
    """
    if samples < 2:
        raise UsageError("need at least 2 samples")
    rng = np.random.default_rng(rng_seed)
    d = field_.dim
    x = rng.uniform(-box_radius, box_radius, size=(samples, d))
    y = rng.uniform(-box_radius, box_radius, size=(samples, d))
    # half the pairs are local perturbations, where max-type fields reach their modulus
    half = samples // 2
    y[:half] = x[:half] + rng.normal(scale=1e-3 * max(box_radius, 1e-12), size=(half, d))
    dist = np.linalg.norm(x - y, axis=-1)
    keep = dist > 0
    num = np.linalg.norm(eval_drift(field_, x[keep]) - eval_drift(field_, y[keep]), axis=-1)
    if not keep.any():
        return 0.0
    return float(np.max(num / dist[keep]))


def affine_field(A, b=None, name: str = "affine") -> DriftField:
    """``h(x) = A x + b`` with exact modulus ``|A|_2`` and limit ``A x``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise UsageError("A must be square")
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float).reshape(d)
    A = A.copy()
    b = b.copy()
    A.setflags(write=False)
    b.setflags(write=False)

    def fn(x):
        return x @ A.T + b

    def limit(x):
        return x @ A.T

    return DriftField(
        dim=d,
        fn=fn,
        lipschitz_modulus=float(np.linalg.norm(A, 2)),
        scaling_limit=limit,
        kind="affine",
        params={"A": A, "b": b},
        name=name,
    )


def linear_field(a: float, dim: int) -> DriftField:
    """``h(x) = a x`` on ``R^dim``."""
    return affine_field(a * np.eye(dim), name=f"linear({a:g})")


def callable_field(fn: ArrayFn, dim: int, lipschitz_modulus: float, scaling_limit=None, name="callable") -> DriftField:
    """Wrap an arbitrary function; the engine integrates it on the generic path."""
    return DriftField(dim=dim, fn=fn, lipschitz_modulus=lipschitz_modulus, scaling_limit=scaling_limit, name=name)


def affine_equilibrium(field_: DriftField) -> np.ndarray | None:
    """The unique zero of an affine field with invertible ``A``, else ``None``."""
    if field_.kind != "affine":
        return None
    A, b = field_.params["A"], field_.params["b"]
    try:
        return np.linalg.solve(A, -b)
    except np.linalg.LinAlgError:
        return None


def make_drift(kind: str, **params) -> DriftField:
    """Build a library field from config keys (``affine`` only; RVI fields live in ``qlearning``)."""
    if kind == "affine":
        if "A" in params:
            A = np.asarray(params["A"], dtype=float)
        else:
            b = np.asarray(params["b"], dtype=float)
            A = params.get("a", -1.0) * np.eye(b.size)
        return affine_field(A, params.get("b"))
    raise UsageError(f"unknown drift kind {kind!r}")
