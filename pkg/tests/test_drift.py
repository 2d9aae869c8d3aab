import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asyncsa import drift
from asyncsa.exceptions import UsageError

finite = st.floats(-50, 50, allow_nan=False)


def test_affine_fixed_point():
    f = drift.affine_field(-np.eye(2), [1.0, 1.0])
    np.testing.assert_array_equal(drift.eval_drift(f, [1.0, 1.0]), [0.0, 0.0])


def test_negative_identity_at_zero():
    f = drift.linear_field(-1.0, 3)
    np.testing.assert_array_equal(f(np.zeros(3)), np.zeros(3))


def test_dimension_mismatch_rejected():
    f = drift.linear_field(-1.0, 3)
    with pytest.raises(UsageError):
        drift.eval_drift(f, np.zeros(2))


def test_batch_evaluation_matches_rowwise():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    f = drift.affine_field(A, [1.0, 0.0, -1.0])
    X = rng.normal(size=(5, 3))
    rows = np.array([f(x) for x in X])
    np.testing.assert_allclose(f(X), rows, rtol=1e-14)


def test_scaled_eval_identity_at_c1():
    f = drift.affine_field([[-1.0, 0.3], [0.0, -2.0]], [0.5, 1.0])
    x = np.array([0.2, -0.7])
    np.testing.assert_array_equal(drift.scaled_eval(f, 1.0, x), f(x))


def test_scaled_eval_affine_hand_algebra():
    b = np.array([1.0, -2.0, 0.5, 3.0])
    f = drift.affine_field(-np.eye(4), b)
    x = np.ones(4)
    np.testing.assert_allclose(drift.scaled_eval(f, 10.0, x), -x + b / 10, rtol=0, atol=1e-15)


@pytest.mark.parametrize("c", [1.0, 3.0, 1e4])
def test_linear_field_scale_invariant(c):
    f = drift.linear_field(-1.0, 2)
    x = np.array([0.3, -1.1])
    np.testing.assert_allclose(drift.scaled_eval(f, c, x), -x, rtol=1e-15)


def test_scaled_eval_rejects_small_c():
    with pytest.raises(UsageError):
        drift.scaled_eval(drift.linear_field(-1.0, 1), 0.5, [1.0])


def test_scaling_limit_affine_exact():
    A = np.array([[-1.0, 2.0], [0.0, -1.0]])
    f = drift.affine_field(A, [5.0, 5.0])
    x = np.array([1.0, 2.0])
    lim = drift.scaling_limit_eval(f, x)
    assert not lim.approximate
    np.testing.assert_array_equal(lim.value, A @ x)
    np.testing.assert_array_equal(drift.scaling_limit_eval(f, np.zeros(2)).value, 0.0)


def test_scaling_limit_probe_on_bounded_perturbation():
    f = drift.callable_field(lambda x: -x + np.sin(x), 1, 2.0)
    lim = drift.scaling_limit_eval(f, [1.0], c_probe=1e6)
    assert lim.approximate
    assert abs(lim.value[0] + 1.0) <= 1e-5


def test_lipschitz_estimate_negative_identity():
    est = drift.estimate_lipschitz(drift.linear_field(-1.0, 3), 5.0, 500, 0)
    assert 1 - 1e-6 < est <= 1 + 1e-12


def test_lipschitz_estimate_doubling():
    est = drift.estimate_lipschitz(drift.linear_field(2.0, 2), 5.0, 500, 0)
    assert est == pytest.approx(2.0, rel=1e-9)


def test_lipschitz_estimate_needs_two_samples():
    with pytest.raises(UsageError):
        drift.estimate_lipschitz(drift.linear_field(1.0, 1), 1.0, 1)


def test_affine_params_are_read_only():
    f = drift.affine_field(-np.eye(2), [1.0, 2.0])
    with pytest.raises(ValueError):
        f.params["A"][0, 0] = 5.0


def test_affine_equilibrium():
    f = drift.affine_field([[-2.0, 0.0], [1.0, -1.0]], [2.0, 0.0])
    xs = drift.affine_equilibrium(f)
    np.testing.assert_allclose(f(xs), 0.0, atol=1e-15)
    assert drift.affine_equilibrium(drift.callable_field(lambda x: x, 1, 1.0)) is None


def test_make_drift_variants():
    f = drift.make_drift("affine", a=-2.0, b=[1.0, 1.0])
    np.testing.assert_allclose(f([0.5, 0.5]), [0.0, 0.0])
    with pytest.raises(UsageError):
        drift.make_drift("quadratic")


@st.composite
def affine_and_points(draw):
    d = draw(st.integers(1, 4))
    A = draw(arrays(float, (d, d), elements=st.floats(-3, 3)))
    b = draw(arrays(float, (d,), elements=st.floats(-3, 3)))
    x = draw(arrays(float, (d,), elements=finite))
    y = draw(arrays(float, (d,), elements=finite))
    return drift.affine_field(A, b), x, y


@settings(max_examples=60, deadline=None)
@given(affine_and_points(), st.sampled_from([1.0, 2.0, 10.0, 100.0]))
def test_declared_modulus_bounds_field_and_scaled_family(fxy, c):
    f, x, y = fxy
    L = f.lipschitz_modulus
    dist = np.linalg.norm(x - y)
    assert np.linalg.norm(f(x) - f(y)) <= L * dist * (1 + 1e-12) + 1e-9
    gap = np.linalg.norm(drift.scaled_eval(f, c, x) - drift.scaled_eval(f, c, y))
    assert gap <= L * dist * (1 + 1e-12) + 1e-9


@settings(max_examples=60, deadline=None)
@given(affine_and_points(), st.floats(1.0, 1e6))
def test_affine_scaled_gap_to_limit(fxy, c):
    f, x, _ = fxy
    gap = np.linalg.norm(drift.scaled_eval(f, c, x) - drift.scaling_limit_eval(f, x).value)
    b = f.params["b"]
    assert gap <= np.linalg.norm(b) / c * (1 + 1e-9) + 1e-12
