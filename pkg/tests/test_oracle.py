import numpy as np
import pytest

from marks_surrogate.errors import OracleError
from marks_surrogate.experiment import generate_small_instance
from marks_surrogate.kernels import MpeConstraintSpec, mpe_value
from marks_surrogate.oracle import DEDUP_TOL, oracle_global_solve, radial_feasibility_project
from marks_surrogate.solvers import ProblemInstance, min_norm_least_squares


def test_radial_projection_frozen():
    spec = MpeConstraintSpec(0.4, 0.2, 1.0, (2,))
    x = np.array([1.0, 1.0])
    x = x * (2.0 / mpe_value(x, spec)) ** (1 / 0.4)
    assert mpe_value(x, spec) == pytest.approx(2.0)
    y = radial_feasibility_project(x, spec)
    assert np.linalg.norm(y) / np.linalg.norm(x) == pytest.approx(0.5**2.5, rel=1e-12)
    assert 0.5**2.5 == pytest.approx(0.17677669, abs=1e-8)
    assert mpe_value(y, spec) == pytest.approx(1.0, rel=1e-12)


def test_radial_projection_trivial_cases():
    spec = MpeConstraintSpec(0.4, 0.2, 7.0, (2, 2))
    x = np.array([0.01, 0.0, 0.0, 0.02])
    np.testing.assert_array_equal(radial_feasibility_project(x, spec), x)
    np.testing.assert_array_equal(radial_feasibility_project(np.zeros(4), spec), 0.0)


def test_inactive_constraint_returns_least_squares():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((8, 2))
    y = rng.standard_normal(8)
    inst = ProblemInstance(A, y, MpeConstraintSpec(0.4, 0.2, 1e6, (1, 1)))
    found = oracle_global_solve(inst, budget=5)
    ls, _ = min_norm_least_squares(A, y)
    np.testing.assert_allclose(found.best_theta, ls, atol=1e-6)


def test_one_dimensional_scan():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 1))
    y = A[:, 0] * 2.0 + 0.1 * rng.standard_normal(6)
    spec = MpeConstraintSpec(0.4, 0.2, 3.0, (1,))
    inst = ProblemInstance(A, y, spec)
    grid = np.linspace(-5, 5, 2_000_001)
    vals = ((5.0 * np.abs(grid)) ** 0.4 <= 3.0)
    obj = ((A[:, 0][None, :] * grid[vals][:, None] - y) ** 2).sum(axis=1)
    found = oracle_global_solve(inst, budget=5)
    assert found.best_objective <= obj.min() + 1e-9
    assert abs(found.best_theta[0] - grid[vals][np.argmin(obj)]) <= 1e-5


def test_result_feasible_and_deduplicated():
    inst = generate_small_instance(0, 4)
    found = oracle_global_solve(inst, budget=5, seed=1)
    assert mpe_value(found.best_theta, inst.constraint) <= inst.constraint.gamma * (1 + 1e-12)
    optima = [x for x, _ in found.all_local_optima_found]
    for i in range(len(optima)):
        for j in range(i):
            assert np.max(np.abs(optima[i] - optima[j])) > DEDUP_TOL
    assert found.best_objective <= min(o for _, o in found.all_local_optima_found) + 1e-12
    assert found.n_grid_points > 0 and found.n_starts > 0


def test_extra_start_is_respected():
    inst = generate_small_instance(0, 7)
    found = oracle_global_solve(inst, budget=3, seed=0)
    again = oracle_global_solve(inst, budget=1, seed=5, extra_starts=[found.best_theta])
    assert again.best_objective <= found.best_objective + 1e-12


def test_deterministic_per_seed():
    inst = generate_small_instance(2, 1)
    a = oracle_global_solve(inst, budget=3, seed=9)
    b = oracle_global_solve(inst, budget=3, seed=9)
    np.testing.assert_array_equal(a.best_theta, b.best_theta)


def test_dimension_cap():
    inst = ProblemInstance(np.eye(8), np.ones(8), MpeConstraintSpec(0.4, 0.2, 1.0, (4, 4)))
    with pytest.raises(OracleError):
        oracle_global_solve(inst)
