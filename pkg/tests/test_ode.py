import math

import numpy as np
import pytest

from asyncsa import drift, ode
from asyncsa.exceptions import IntegrationError, UsageError


def test_decay_matches_exponential():
    sol = ode.integrate_autonomous(lambda x: -x, np.array([1.0]), (0.0, 1.0), 1e-3)
    assert abs(sol.final[0] - math.exp(-1)) < 1e-6
    assert sol.t[-1] == 1.0


def test_rk4_fourth_order():
    f = lambda x: np.stack([x[..., 1], -np.sin(x[..., 0])], axis=-1)
    ref = ode.integrate_autonomous(f, np.array([1.0, 0.0]), (0.0, 2.0), 1e-4).final
    e1 = np.abs(ode.integrate_autonomous(f, np.array([1.0, 0.0]), (0.0, 2.0), 2e-2).final - ref).max()
    e2 = np.abs(ode.integrate_autonomous(f, np.array([1.0, 0.0]), (0.0, 2.0), 1e-2).final - ref).max()
    assert e1 / e2 >= 8


def test_backward_integration_inverts_forward():
    A = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    fwd = ode.integrate_autonomous(lambda x: x @ A.T, np.array([1.0, 0.5]), (0.0, 1.0), 1e-3)
    back = ode.integrate_autonomous(lambda x: x @ A.T, fwd.final, (1.0, 0.0), 1e-3)
    np.testing.assert_allclose(back.final, [1.0, 0.5], atol=1e-9)


def test_batch_matches_single():
    starts = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
    batch = ode.integrate_autonomous(lambda x: -x + 0.1 * x**2, starts, 1.0, 1e-2).final
    for k, s in enumerate(starts):
        single = ode.integrate_autonomous(lambda x: -x + 0.1 * x**2, s, 1.0, 1e-2).final
        np.testing.assert_array_equal(batch[k], single)


def test_identity_modulation_equals_autonomous():
    lam = ode.piecewise_lambda([0.0, 0.7, 1.3, 2.0], [1.0, 1.0, 1.0], 2)
    g = lambda x: np.array([-x[0], -2 * x[1]])
    mod = ode.integrate_modulated(lam, g, np.array([1.0, 1.0]), (0.0, 2.0), 1e-3)
    aut = ode.integrate_autonomous(g, np.array([1.0, 1.0]), (0.0, 2.0), 1e-3)
    np.testing.assert_allclose(mod.final, aut.final, atol=1e-10)


def test_constant_scalar_modulation_is_time_scaling():
    lam = ode.piecewise_lambda([0.0, 1.0, 2.0], [0.25, 0.25], 2)
    g = lambda x: np.array([x[1], -x[0]])
    mod = ode.integrate_modulated(lam, g, np.array([1.0, 0.0]), (0.0, 2.0), 1e-3)
    aut = ode.integrate_autonomous(g, np.array([1.0, 0.0]), (0.0, 0.5), 1e-3)
    np.testing.assert_allclose(mod.final, aut.final, atol=1e-9)


def test_grid_lands_on_breakpoints():
    times = [0.0, 0.123, 0.5, 1.0]
    lam = ode.piecewise_lambda(times, [1.0, 3.0, 0.5], 1)
    sol = ode.integrate_modulated(lam, lambda x: -x, np.array([1.0]), (0.0, 1.0), 0.05)
    np.testing.assert_array_equal(sol.t[sol.breaks], times)
    fine = ode.integrate_modulated(lam, lambda x: -x, np.array([1.0]), (0.0, 1.0), 1e-3)
    assert fine.final[0] == pytest.approx(math.exp(-ode.tau_of(times, [1.0, 3.0, 0.5], 1.0)), abs=1e-10)


def test_modulated_rejects_out_of_domain_and_reverse():
    lam = ode.piecewise_lambda([0.0, 1.0], [1.0], 1)
    with pytest.raises(UsageError):
        ode.integrate_modulated(lam, lambda x: -x, np.array([1.0]), (0.0, 2.0))
    with pytest.raises(UsageError):
        ode.integrate_modulated(lam, lambda x: -x, np.array([1.0]), (1.0, 0.0))


def test_scaling_identity_selftest():
    res = ode.scaling_identity_selftest()
    assert res.passed and res.max_error <= 1e-6


def test_blowup_raises_with_time():
    with pytest.raises(IntegrationError) as exc:
        ode.integrate_autonomous(lambda x: x**2, np.array([1.0]), (0.0, 2.0), 1e-3)
    assert 0.9 < exc.value.time < 1.1


def test_horizon_linear_decay():
    res = ode.stability_horizon(drift.linear_field(-1.0, 2))
    assert res.found
    # exact: ln 8 plus one grid step of slack
    assert math.log(8) <= res.T <= math.log(8) + 0.01


def test_horizon_scales_with_rate_and_dimension_bound():
    r1 = ode.stability_horizon(drift.linear_field(-1.0, 3))
    r2 = ode.stability_horizon(drift.linear_field(-2.0, 3))
    assert r2.T == pytest.approx(r1.T / 2, abs=0.01)
    # a uniform 1/d slowdown cannot push the horizon beyond d times the original
    lam = ode.piecewise_lambda([0.0, 100.0], [1 / 3], 3)
    sol = ode.integrate_modulated(lam, lambda x: -x, ode.sphere_directions(3, 64), (0.0, 3 * r1.T + 0.01), 1e-3)
    assert np.linalg.norm(sol.final, axis=-1).max() < 0.125


def test_horizon_unstable_reports_witness():
    res = ode.stability_horizon(drift.linear_field(1.0, 2), t_max=5.0)
    assert not res.found and res.T is None
    assert res.witness is not None and res.witness_norm > 1


def test_horizon_blowup_is_not_found():
    res = ode.stability_horizon(lambda x: x**3, dim=2, lipschitz=3.0, t_max=5.0)
    assert not res.found and "blow-up" in res.note


def test_horizon_validation():
    with pytest.raises(UsageError):
        ode.stability_horizon(drift.linear_field(-1.0, 2), radius=1.5)
    with pytest.raises(UsageError):
        ode.stability_horizon(lambda x: -x)


def test_sphere_directions_unit_and_deterministic():
    a = ode.sphere_directions(4, 64)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0)
    np.testing.assert_array_equal(a, ode.sphere_directions(4, 64))
    assert a.shape[0] <= 8 + 64


def test_first_entry_time():
    sol = ode.integrate_autonomous(lambda x: -x, np.array([1.0]), (0.0, 5.0), 1e-3)
    assert ode.first_entry_time(sol, 0.5) == pytest.approx(math.log(2), abs=2e-3)
    grow = ode.integrate_autonomous(lambda x: x, np.array([1.0]), (0.0, 1.0), 1e-3)
    assert ode.first_entry_time(grow, 0.5) is None
