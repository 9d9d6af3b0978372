"""Property suite run by ``marks-surrogate verify``.

Every property is deterministic for a given seed.  ``perturb_weights`` scales
the surrogate curvature (re-fitting only the value at the anchor) so that the
gradient-matching and majorization checks have something to catch.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from .experiment import generate_small_instance, starting_point
from .kernels import MpeConstraintSpec, check_fisher_identity, mpe_value, mpe_values
from .oracle import oracle_global_solve
from .solvers import QclsSolver, marks_solve, qcls_kkt_residuals
from .surrogate import build_constraint_surrogate, check_marks_conditions, perturb_weights

REFERENCE_SPEC = MpeConstraintSpec(0.4, 0.2, 7.0, (3, 3, 3, 3))


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str


@dataclass
class SuiteSizes:
    fisher_anchors: int = 100
    marks_anchors: int = 100
    marks_samples: int = 10_000
    kkt_problems: int = 1000
    oracle_instances: int = 10
    oracle_budget: int = 20

    @classmethod
    def quick(cls):
        return cls(fisher_anchors=20, marks_anchors=20, marks_samples=1000,
                   kkt_problems=100, oracle_instances=3, oracle_budget=10)


def random_anchor(rng, spec, min_norm=1e-3, max_norm=3.0):
    """Random point whose group norms are log-uniform in ``[min_norm, max_norm]``."""
    parts = []
    for size in spec.group_sizes:
        direction = rng.standard_normal(size)
        direction /= np.linalg.norm(direction)
        parts.append(direction * np.exp(rng.uniform(np.log(min_norm), np.log(max_norm))))
    return np.concatenate(parts)


def _surrogate(anchor, spec, factor):
    s = build_constraint_surrogate(anchor, spec)
    return s if factor == 1.0 else perturb_weights(s, factor)


def check_fisher(n_anchors, seed, factor=1.0, spec=REFERENCE_SPEC):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_anchors):
        x = random_anchor(rng, spec)
        report = check_fisher_identity(lambda t: mpe_value(t, spec), _surrogate(x, spec, factor), x)
        worst = max(worst, report.relative_gap)
    return PropertyResult("fisher_identity", worst <= 1e-5, f"max relative gap {worst:.3e} (tol 1e-05)")


def check_majorization(n_anchors, n_samples, seed, factor=1.0, spec=REFERENCE_SPEC):
    rng = np.random.default_rng(seed)
    violations = 0
    worst_tangency = 0.0
    worst_gradient = 0.0
    for i in range(n_anchors):
        x = random_anchor(rng, spec)
        s = _surrogate(x, spec, factor)
        radius = float(rng.uniform(0.1, 10.0)) * np.linalg.norm(x)
        report = check_marks_conditions(s, lambda p: mpe_values(p, spec), x, n_samples, radius,
                                        seed=seed + i, vectorized=True)
        violations += report.majorization_violations
        worst_tangency = max(worst_tangency, report.tangency_gap / max(1.0, mpe_value(x, spec)))
        worst_gradient = max(worst_gradient, report.relative_gradient_gap)
    passed = violations == 0 and worst_tangency <= 1e-12 and worst_gradient <= 1e-5
    return PropertyResult("majorization_tangency", passed,
                          f"{violations} violations, max relative tangency gap {worst_tangency:.3e}, "
                          f"max relative gradient gap {worst_gradient:.3e}")


def random_active_qcls(rng):
    """Random QCLS problem whose least-squares point violates the constraint."""
    n = int(rng.integers(3, 30))
    p = int(rng.integers(1, 10))
    A = rng.standard_normal((n, p))
    y = rng.standard_normal(n) * rng.uniform(0.1, 10.0)
    d = np.exp(rng.uniform(-3.0, 3.0, p))
    solver = QclsSolver(A, y)
    ls = solver.theta_ls
    c = float(rng.uniform(0.01, 0.99)) * 0.5 * float(ls @ (d * ls))
    return A, y, d, c, solver


def check_kkt(n_problems, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    negative = 0
    for _ in range(n_problems):
        A, y, d, c, solver = random_active_qcls(rng)
        theta, lam = solver.solve(d, c)
        res = qcls_kkt_residuals(A, y, d, c, theta, lam)
        worst = max(worst, res.stationarity, res.primal, res.complementarity)
        negative += lam < 0
    passed = worst <= 1e-8 and negative == 0
    return PropertyResult("inner_kkt", passed, f"max scaled residual {worst:.3e} (tol 1e-08)")


def check_oracle(n_instances, budget, seed):
    within = 0
    better = 0
    for i in range(n_instances):
        inst = generate_small_instance(seed, i)
        theta, _ = marks_solve(inst, starting_point(inst))
        found = oracle_global_solve(inst, budget=budget, seed=seed + i)
        obj = inst.objective(theta)
        within += obj <= found.best_objective * (1.0 + 1e-3)
        better += obj < found.best_objective - 1e-9
    passed = within >= 0.9 * n_instances and better == 0
    return PropertyResult("oracle_equivalence", passed,
                          f"{within}/{n_instances} within 1e-3 of the oracle, {better} beat it")


def run_suite(seed=0, quick=False, perturb=1.0) -> List[PropertyResult]:
    sizes = SuiteSizes.quick() if quick else SuiteSizes()
    return [
        check_fisher(sizes.fisher_anchors, seed, perturb),
        check_majorization(sizes.marks_anchors, sizes.marks_samples, seed, perturb),
        check_kkt(sizes.kkt_problems, seed),
        check_oracle(sizes.oracle_instances, sizes.oracle_budget, seed),
    ]
