import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marks_surrogate.errors import NearZeroCoordinateError, NonPositiveCurvatureError
from marks_surrogate.kernels import GroupedVector, MpeConstraintSpec, mpe_gradient, mpe_value, mpe_values
from marks_surrogate.surrogate import (
    QuadraticSurrogate,
    build_constraint_surrogate,
    check_marks_conditions,
    diagonal_R_from_fisher,
    inflate_curvature,
    perturb_weights,
    quadratic_stationary_point,
    surrogate_value,
)
from marks_surrogate.verify import random_anchor

REFERENCE = MpeConstraintSpec(0.4, 0.2, 7.0, (3, 3, 3, 3))


def _anchor(seed):
    return random_anchor(np.random.default_rng(seed), REFERENCE)


def test_tangency_and_gradient():
    x = _anchor(1)
    s = build_constraint_surrogate(x, REFERENCE)
    assert surrogate_value(s, x) == pytest.approx(mpe_value(x, REFERENCE), rel=1e-14)
    np.testing.assert_allclose(s.gradient(x), mpe_gradient(x, REFERENCE), rtol=1e-12)
    assert np.all(s.linear_offset == 0)


def test_constant_frozen():
    spec = MpeConstraintSpec(0.5, 1.0, 3.0, (1,))
    s = build_constraint_surrogate(np.array([4.0]), spec)
    # g(r) = sqrt(r); k = 0.5 * 4 ** -1.5 = 1/16; const = 2 - k/2 * 16 = 1.5.
    assert s.weights[0] == pytest.approx(1.0 / 16.0)
    assert s.constant == pytest.approx(1.5)


@pytest.mark.parametrize("seed", range(5))
def test_majorization_over_samples(seed):
    x = _anchor(seed)
    s = build_constraint_surrogate(x, REFERENCE)
    report = check_marks_conditions(s, lambda p: mpe_values(p, REFERENCE), x, 5000,
                                    3.0 * np.linalg.norm(x), seed=seed, vectorized=True)
    assert report.ok
    assert report.majorization_violations == 0
    assert report.n_skipped == 0


def test_scalar_and_vectorized_checks_agree():
    x = _anchor(9)
    s = build_constraint_surrogate(x, REFERENCE)
    a = check_marks_conditions(s, lambda p: mpe_value(p, REFERENCE), x, 300, 1.0, seed=4)
    b = check_marks_conditions(s, lambda p: mpe_values(p, REFERENCE), x, 300, 1.0, seed=4, vectorized=True)
    assert a.majorization_violations == b.majorization_violations == 0
    assert a.worst_violation == pytest.approx(b.worst_violation, abs=1e-12)


@pytest.mark.parametrize("factor", [0.5, 1.5])
def test_perturbed_weights_are_caught(factor):
    x = _anchor(2)
    s = perturb_weights(build_constraint_surrogate(x, REFERENCE), factor)
    assert s.value(x) == pytest.approx(mpe_value(x, REFERENCE), rel=1e-12)
    report = check_marks_conditions(s, lambda p: mpe_values(p, REFERENCE), x, 2000,
                                    np.linalg.norm(x), seed=0, vectorized=True)
    assert report.majorization_violations > 0
    assert report.relative_gradient_gap > 1e-3
    assert not report.ok


def test_inflated_curvature_still_majorizes():
    x = _anchor(5)
    s = inflate_curvature(build_constraint_surrogate(x, REFERENCE), 3.0)
    np.testing.assert_allclose(s.gradient(x), mpe_gradient(x, REFERENCE), rtol=1e-10, atol=1e-12)
    report = check_marks_conditions(s, lambda p: mpe_values(p, REFERENCE), x, 2000, 2.0, seed=1, vectorized=True)
    assert report.ok


def test_nonpositive_curvature_rejected():
    anchor = GroupedVector(np.ones(2), (1, 1))
    with pytest.raises(NonPositiveCurvatureError):
        QuadraticSurrogate(anchor, np.array([1.0, 0.0]), np.zeros(2), 0.0)
    with pytest.raises(NonPositiveCurvatureError):
        QuadraticSurrogate(anchor, np.array([1.0, np.nan]), np.zeros(2), 0.0)


def test_diagonal_R_recovery():
    x = np.array([1.0, -2.0, 0.5])
    r = np.array([2.0, 3.0, 4.0])
    b = np.array([0.1, 0.2, -0.3])
    np.testing.assert_allclose(diagonal_R_from_fisher(r * x + b, b, x), r)
    with pytest.raises(NearZeroCoordinateError):
        diagonal_R_from_fisher(np.ones(3), np.zeros(3), np.array([1.0, 0.0, 1.0]))


def test_stationary_point_sign():
    r = np.array([2.0, 4.0])
    b = np.array([1.0, -2.0])
    theta = quadratic_stationary_point(r, b)
    np.testing.assert_allclose(r * theta + b, 0.0)
    np.testing.assert_allclose(theta, [-0.5, 0.5])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 2.0))
def test_majorization_property(seed, q):
    spec = MpeConstraintSpec(q, 0.3, 5.0, (2, 3))
    rng = np.random.default_rng(seed)
    x = random_anchor(rng, spec)
    s = build_constraint_surrogate(x, spec)
    pts = x + rng.standard_normal((200, 5)) * rng.uniform(0.01, 5.0)
    g = mpe_values(pts, spec)
    assert np.all(s.values(pts) >= g - 1e-12 * np.maximum(1.0, np.abs(g)))


def test_fisher_recovery_matches_vmgm_weights():
    x = _anchor(11)
    s = build_constraint_surrogate(x, REFERENCE)
    r = diagonal_R_from_fisher(mpe_gradient(x, REFERENCE), np.zeros(12), x)
    np.testing.assert_allclose(r, s.expanded_weights, rtol=1e-10)


def test_q2_surrogate_is_exact():
    spec = MpeConstraintSpec(2.0, 1.0, 3.0, (1, 1, 1))
    s = build_constraint_surrogate(np.array([0.3, -1.0, 2.0]), spec)
    pts = np.random.default_rng(0).standard_normal((100, 3)) * 5
    np.testing.assert_allclose(s.values(pts), mpe_values(pts, spec), rtol=1e-12)
