"""Compiled inner loops. Everything here is private; callers validate inputs."""
from __future__ import annotations

import numpy as np
from numba import njit

DIVERGENCE_NORM = 1e12


@njit(cache=True)
def compensated_cumsum(values, start=0.0):
    """Prefix sums ``out[k] = start + sum(values[:k])`` with Neumaier compensation.

    ``out`` has ``len(values) + 1`` entries. Each entry is the rounded value of
    the (nearly) exact partial sum, so e.g. ten steps of 0.1 land on 1.0.
    """
    n = values.shape[0]
    out = np.empty(n + 1)
    s = start
    c = 0.0
    out[0] = s
    for k in range(n):
        v = values[k]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[k + 1] = s + c
    return out


@njit(cache=True)
def first_crossing(values, start_index, threshold):
    """Smallest ``j >= 1`` with ``sum(values[start:start+j+1]) >= threshold``.

    Returns -1 when the array runs out first. Uses compensated summation.
    """
    s = 0.0
    c = 0.0
    n = values.shape[0]
    for k in range(start_index, n):
        v = values[k]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        if k > start_index and s + c >= threshold:
            return k - start_index
    return -1


@njit(cache=True)
def markov_sweep_states(cum_rows, state, uniforms):
    """Run a component-selection Markov chain; returns visited states and final state."""
    n = uniforms.shape[0]
    out = np.empty(n, dtype=np.int64)
    d = cum_rows.shape[0]
    for k in range(n):
        out[k] = state
        u = uniforms[k]
        nxt = d - 1
        for j in range(d):
            if u < cum_rows[state, j]:
                nxt = j
                break
        state = nxt
    return out, state


@njit(cache=True)
def affine_chunk(
    x, A, b, mask, nu, alpha_table, offset,
    m_mode, zeta, b_mode, delta, ball,
    record, x_out, steps_out, m_out, e_out, delta_out,
):
    """Advance ``x`` through ``mask.shape[0]`` asynchronous steps of ``h(x) = A x + b``.

    m_mode: 0 zero, 1 additive (zeta holds the noise), 2 state-scaled
    (zeta * sqrt(1+|x|^2)), 3 Lipschitz family (zeta = [G.ravel(), g]).
    b_mode: 0 none, 1 ``delta[n] * (1+|x|) * ball[n]``, 2 ``ball[n]`` verbatim (replay).
    Returns the number of completed steps (< count on divergence).
    """
    count, d = mask.shape
    new = np.empty(d)
    for n in range(count):
        nrm2 = 0.0
        for j in range(d):
            nrm2 += x[j] * x[j]
        nrm = np.sqrt(nrm2)
        for i in range(d):
            new[i] = x[i]
        for i in range(d):
            if not mask[n, i]:
                continue
            nu[i] += 1
            a = alpha_table[nu[i] - offset]
            h = b[i]
            for j in range(d):
                h += A[i, j] * x[j]
            if m_mode == 0:
                m = 0.0
            elif m_mode == 1:
                m = zeta[n, i]
            elif m_mode == 2:
                m = zeta[n, i] * np.sqrt(1.0 + nrm2)
            else:
                m = zeta[n, d * d + i]
                for j in range(d):
                    m += zeta[n, i * d + j] * x[j]
            if b_mode == 1:
                e = delta[n] * (1.0 + nrm) * ball[n, i]
            elif b_mode == 2:
                e = ball[n, i]
            else:
                e = 0.0
            new[i] = x[i] + a * (h + m + e)
            if record:
                steps_out[n, i] = a
                m_out[n, i] = m
                e_out[n, i] = e
        if record:
            delta_out[n] = delta[n] if b_mode != 0 else 0.0
        bad = False
        nrm2 = 0.0
        for i in range(d):
            x[i] = new[i]
            nrm2 += new[i] * new[i]
        if not np.isfinite(nrm2) or nrm2 > DIVERGENCE_NORM * DIVERGENCE_NORM:
            bad = True
        if record:
            for i in range(d):
                x_out[n + 1, i] = x[i]
        if bad:
            return n + 1
    return count


@njit(cache=True)
def rvi_chunk(
    q, n_states, n_actions, cum_p, p_flat, r, tau_true, ref, mask, nu, alpha_table, offset,
    uniforms, behavior, behavior_state, action_draws,
    smdp, tau_hat, tau_count, hold_draws, tau_norm,
    record, x_out, steps_out, m_out, e_out, delta_out, mask_out,
):
    """Asynchronous RVI Q-learning steps with sampled next states.

    ``ref < 0`` selects the mean reference ``f(Q) = mean(Q)``; otherwise
    ``f(Q) = Q[ref]``. With ``smdp`` the update uses running holding-time
    means ``tau_hat``; the bias term is the drift difference against the true
    means. In ``behavior`` mode the update set is the pair visited by a
    uniformly random behavior policy, following the sampled transitions.
    Returns (completed steps, behavior_state).
    """
    count = uniforms.shape[0]
    d = n_states * n_actions
    vmax = np.empty(n_states)
    new = np.empty(d)
    upd = np.zeros(d, dtype=np.bool_)
    for n in range(count):
        if ref < 0:
            f = 0.0
            for i in range(d):
                f += q[i]
            f /= d
        else:
            f = q[ref]
        for s in range(n_states):
            best = q[s * n_actions]
            for a in range(1, n_actions):
                v = q[s * n_actions + a]
                if v > best:
                    best = v
            vmax[s] = best
        if behavior:
            for i in range(d):
                upd[i] = False
            upd[behavior_state * n_actions + action_draws[n]] = True
        else:
            for i in range(d):
                upd[i] = mask[n, i]
        delta = 0.0
        if smdp:
            worst = 0.0
            for i in range(d):
                rel = abs(tau_hat[i] - tau_true[i]) / tau_true[i]
                if rel > worst:
                    worst = rel
            delta = tau_norm * worst
        next_state = behavior_state
        for i in range(d):
            new[i] = q[i]
        for i in range(d):
            if not upd[i]:
                continue
            nu[i] += 1
            a = alpha_table[nu[i] - offset]
            u = uniforms[n, i]
            sp = n_states - 1
            for s in range(n_states):
                if u < cum_p[i, s]:
                    sp = s
                    break
            expect = 0.0
            for s in range(n_states):
                expect += p_flat[i, s] * vmax[s]
            h = r[i] + expect - tau_true[i] * f - q[i]
            m = vmax[sp] - expect
            e = 0.0
            if smdp:
                e = -(tau_hat[i] - tau_true[i]) * f
            new[i] = q[i] + a * (h + m + e)
            if record:
                steps_out[n, i] = a
                m_out[n, i] = m
                e_out[n, i] = e
                mask_out[n, i] = True
            next_state = sp
        if record:
            delta_out[n] = delta
        if smdp:
            for i in range(d):
                if upd[i]:
                    tau_count[i] += 1
                    tau_hat[i] += (hold_draws[n, i] * tau_true[i] - tau_hat[i]) / tau_count[i]
        nrm2 = 0.0
        for i in range(d):
            q[i] = new[i]
            nrm2 += new[i] * new[i]
        if record:
            for i in range(d):
                x_out[n + 1, i] = q[i]
        if behavior:
            behavior_state = next_state
        if not np.isfinite(nrm2) or nrm2 > DIVERGENCE_NORM * DIVERGENCE_NORM:
            return n + 1, behavior_state
    return count, behavior_state
