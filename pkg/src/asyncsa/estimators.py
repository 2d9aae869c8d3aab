"""Estimator-style wrappers with the usual ``get_params`` / ``fit`` / ``score`` surface.

The core API is the function-based modules; these wrappers are a convenience
for parameter sweeps with scikit-learn tooling.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import engine, noise, qlearning, schedule
from .drift import DriftField, eval_drift


class AsyncSARootFinder(BaseEstimator):
    """Find a zero of ``drift`` by asynchronous stochastic approximation.

    ``fit(x0)`` runs the iteration from ``x0``; ``score(x0)`` is the negative
    residual ``-|h(root_)|``.
    """

    def __init__(self, drift: DriftField | None = None, stepsize="harmonic", updates="uniform_single",
                 noise_sigma=0.0, horizon=10**5, random_state=0):
        self.drift = drift
        self.stepsize = stepsize
        self.updates = updates
        self.noise_sigma = noise_sigma
        self.horizon = horizon
        self.random_state = random_state

    def _config(self, x0):
        d = self.drift.dim
        cfg = engine.RunConfig(
            drift=self.drift,
            schedule=schedule.make_schedule(self.stepsize) if isinstance(self.stepsize, str) else self.stepsize,
            updates=schedule.make_updates(self.updates, d) if isinstance(self.updates, str) else self.updates,
            x0=np.zeros(d) if x0 is None else x0,
            horizon=self.horizon,
            seed=self.random_state,
            martingale=noise.gaussian_noise(d, self.noise_sigma) if self.noise_sigma else None,
            recording="stats",
        )
        return cfg

    def fit(self, X=None, y=None):
        if self.drift is None:
            raise ValueError("drift is required")
        self.history_ = engine.run(self._config(X))
        self.root_ = self.history_.x_final.copy()
        self.n_iter_ = self.history_.n_steps
        return self

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "root_")
        return -float(np.linalg.norm(eval_drift(self.drift, self.root_)))


class RVIQLearning(BaseEstimator):
    """Average-reward RVI Q-learning on a tabular model.

    ``fit(model)`` learns ``q_``; ``predict(states)`` returns greedy actions;
    ``score(model)`` is the negative Bellman residual.
    """

    def __init__(self, horizon=10**6, reference="mean", updates="uniform_pair", stepsize="harmonic",
                 random_state=0):
        self.horizon = horizon
        self.reference = reference
        self.updates = updates
        self.stepsize = stepsize
        self.random_state = random_state

    def fit(self, X, y=None):
        cfg = qlearning.QRunConfig(
            X, self.horizon, seed=self.random_state, reference=self.reference,
            schedule=schedule.make_schedule(self.stepsize) if isinstance(self.stepsize, str) else self.stepsize,
            updates=self.updates, recording="stats",
        )
        h = qlearning.async_q_run(X, cfg)
        self.model_ = X
        self.q_ = h.x_final.reshape(X.S, X.A)
        ref = h.extras["drift"].params["ref"]
        self.gain_ = float(self.q_.mean() if ref < 0 else self.q_.reshape(-1)[ref])
        self.policy_ = self.q_.argmax(axis=1)
        return self

    def predict(self, X):
        check_is_fitted(self, "q_")
        return self.policy_[np.asarray(X, dtype=int)]

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "q_")
        return -qlearning.bellman_residual(X, self.q_.reshape(-1), self.reference)
