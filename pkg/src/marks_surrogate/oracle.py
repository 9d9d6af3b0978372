"""Brute-force global reference for small constrained least-squares instances.

Works in two stages.  A dense grid over a box around the least-squares point
locates the promising basins; then local solves started from the best grid
points and from random feasible points polish each candidate to a KKT point.
Local solves are run separately for every sparsity pattern of the groups:
within one pattern the constraint is smooth, and optima with a zero group are
covered by the pattern that leaves that group out.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import OracleError
from .kernels import MpeConstraintSpec, as_values, mpe_value, mpe_values
from .solvers import ProblemInstance, min_norm_least_squares

MAX_DIM = 6
DEDUP_TOL = 1e-4
_GRID_POINTS_PER_BUDGET = 2000
_CHUNK = 200_000


@dataclass
class OracleResult:
    best_theta: np.ndarray
    best_objective: float
    n_starts: int
    n_grid_points: int
    all_local_optima_found: List[Tuple[np.ndarray, float]] = field(default_factory=list)


def radial_feasibility_project(theta, spec: MpeConstraintSpec) -> np.ndarray:
    """Largest shrink ``s * theta`` (``0 < s <= 1``) with ``f(s * theta) <= gamma``.

    ``f`` is positively homogeneous of degree ``q``, so
    ``s = min(1, (gamma / f(theta)) ** (1 / q))`` lands on the boundary.
    """
    x = np.asarray(as_values(theta, spec), dtype=float)
    value = mpe_value(x, spec)
    if value <= spec.gamma:
        return x.copy()
    return (spec.gamma / value) ** (1.0 / spec.q) * x


def _grid_axis_size(dim, budget):
    n = int(math.floor((_GRID_POINTS_PER_BUDGET * budget) ** (1.0 / dim)))
    n = max(3, min(n, 200_001))
    return n if n % 2 else n - 1


def _grid_search(instance, half_width, n_axis, keep):
    """Best ``keep`` feasible grid points, ordered by objective."""
    spec = instance.constraint
    A, y = instance.regressors, instance.measurements
    axis = np.linspace(-half_width, half_width, n_axis)
    axis[n_axis // 2] = 0.0
    dim = instance.dim
    total = n_axis**dim
    best_pts = np.empty((0, dim))
    best_obj = np.empty(0)
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total))
        digits = np.stack(np.unravel_index(idx, (n_axis,) * dim), axis=1)
        pts = axis[digits]
        ok = mpe_values(pts, spec) <= spec.gamma
        pts = pts[ok]
        if pts.size == 0:
            continue
        resid = pts @ A.T - y
        obj = np.einsum("ij,ij->i", resid, resid)
        best_pts = np.vstack([best_pts, pts])
        best_obj = np.concatenate([best_obj, obj])
        if best_obj.size > keep:
            order = np.argsort(best_obj, kind="stable")[:keep]
            best_pts, best_obj = best_pts[order], best_obj[order]
    order = np.argsort(best_obj, kind="stable")
    return best_pts[order], best_obj[order], total


class _Pattern:
    """The problem restricted to a subset of groups (the others fixed at zero)."""

    def __init__(self, instance, groups):
        spec = instance.constraint
        self.groups = groups
        bounds = np.cumsum((0,) + spec.group_sizes)
        self.index = np.concatenate([np.arange(bounds[m], bounds[m + 1]) for m in groups])
        self.sizes = [spec.group_sizes[m] for m in groups]
        self.scales = spec.group_scales[list(groups)] ** spec.q
        self.q = spec.q
        self.gamma = spec.gamma
        self.A = instance.regressors[:, self.index]
        self.y = instance.measurements
        self.AtA = self.A.T @ self.A
        self.Aty = self.A.T @ self.y
        self.dim = instance.dim
        self.splits = np.cumsum(self.sizes)[:-1]

    def embed(self, z):
        x = np.zeros(self.dim)
        x[self.index] = z
        return x

    def objective(self, z):
        r = self.A @ z - self.y
        return float(r @ r)

    def objective_grad(self, z):
        return 2.0 * (self.AtA @ z - self.Aty)

    def constraint(self, z):
        norms = np.array([np.linalg.norm(b) for b in np.split(z, self.splits)])
        return float(np.sum(self.scales * norms**self.q))

    def constraint_grad(self, z):
        parts = []
        for b, a in zip(np.split(z, self.splits), self.scales):
            n = np.linalg.norm(b)
            parts.append(a * self.q * n ** (self.q - 2.0) * b if n > 0 else np.zeros_like(b))
        return np.concatenate(parts)

    def constraint_hess(self, z):
        blocks = []
        for b, a in zip(np.split(z, self.splits), self.scales):
            n = np.linalg.norm(b)
            u = b / n
            blocks.append(a * self.q * n ** (self.q - 2.0)
                          * (np.eye(b.size) + (self.q - 2.0) * np.outer(u, u)))
        size = sum(self.sizes)
        H = np.zeros((size, size))
        pos = 0
        for blk in blocks:
            k = blk.shape[0]
            H[pos:pos + k, pos:pos + k] = blk
            pos += k
        return H

    def min_group_norm(self, z):
        return min(np.linalg.norm(b) for b in np.split(z, self.splits))

    def shrink_to_feasible(self, z):
        value = self.constraint(z)
        if value <= self.gamma:
            return z
        return (self.gamma / value) ** (1.0 / self.q) * z


def _newton_kkt(pat, z, iterations=30):
    """Refine a boundary point by Newton's method on the KKT system."""
    g = pat.constraint_grad(z)
    mult = -float(g @ pat.objective_grad(z)) / max(float(g @ g), 1e-300)
    best = z
    best_res = _kkt_norm(pat, z, mult)
    for _ in range(iterations):
        if pat.min_group_norm(z) <= 1e-12 or mult < 0:
            break
        g = pat.constraint_grad(z)
        n = z.size
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = 2.0 * pat.AtA + mult * pat.constraint_hess(z)
        J[:n, n] = g
        J[n, :n] = g
        F = np.concatenate([pat.objective_grad(z) + mult * g, [pat.constraint(z) - pat.gamma]])
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        z = z + delta[:n]
        mult = mult + delta[n]
        res = _kkt_norm(pat, z, mult)
        if not np.isfinite(res):
            break
        if res < best_res:
            best, best_res = z, res
        if res <= 1e-14 * (1.0 + np.linalg.norm(pat.Aty)):
            break
    return best


def _kkt_norm(pat, z, mult):
    if pat.min_group_norm(z) <= 0:
        return math.inf
    stat = pat.objective_grad(z) + mult * pat.constraint_grad(z)
    return float(np.linalg.norm(stat)) + abs(pat.constraint(z) - pat.gamma)


def _polish(pat, z0):
    """Local solve within one sparsity pattern; returns a feasible point."""
    z_ls = np.linalg.lstsq(pat.A, pat.y, rcond=None)[0]
    if pat.constraint(z_ls) <= pat.gamma:
        return z_ls
    z0 = pat.shrink_to_feasible(np.asarray(z0, dtype=float))
    if pat.min_group_norm(z0) == 0:
        return z0
    res = minimize(
        pat.objective, z0, jac=pat.objective_grad, method="SLSQP",
        constraints=[{"type": "ineq",
                      "fun": lambda z: pat.gamma - pat.constraint(z),
                      "jac": lambda z: -pat.constraint_grad(z)}],
        options={"ftol": 1e-12, "maxiter": 200},
    )
    z = res.x if np.all(np.isfinite(res.x)) else z0
    z = pat.shrink_to_feasible(z)
    if pat.min_group_norm(z) > 1e-10:
        z = pat.shrink_to_feasible(_newton_kkt(pat, z))
    # Never hand back something worse than the (feasible) starting point.
    return z if pat.objective(z) <= pat.objective(z0) else z0


def oracle_global_solve(instance: ProblemInstance, budget: int = 20, seed: int = 0,
                        extra_starts=()) -> OracleResult:
    """Best feasible point found by grid search plus multistart local polishing.

    ``budget`` sets both the grid size (about ``2000 * budget`` points) and the
    number of random starts per sparsity pattern.  ``extra_starts`` are feasible
    points the result must not be worse than.
    """
    spec = instance.constraint
    if instance.dim > MAX_DIM:
        raise OracleError(f"dimension {instance.dim} exceeds the oracle cap of {MAX_DIM}")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    theta_ls, _ = min_norm_least_squares(instance.regressors, instance.measurements)

    half_width = 2.0 * float(np.max(np.abs(theta_ls))) + 1.0
    n_axis = _grid_axis_size(instance.dim, budget)
    grid_pts, grid_obj, n_grid = _grid_search(instance, half_width, n_axis, keep=budget)
    if grid_pts.shape[0] == 0:
        raise OracleError("no feasible grid point; gamma is too small for the grid resolution")

    candidates = []
    polished = []

    for x in extra_starts:
        x = np.asarray(as_values(x, spec), dtype=float)
        if mpe_value(x, spec) <= spec.gamma:
            candidates.append((x.copy(), instance.objective(x)))
    for x in grid_pts:
        candidates.append((x.copy(), instance.objective(x)))
    if mpe_value(theta_ls, spec) <= spec.gamma:
        candidates.append((theta_ls.copy(), instance.objective(theta_ls)))

    n_starts = 0
    for size in range(1, spec.n_groups + 1):
        for groups in itertools.combinations(range(spec.n_groups), size):
            pat = _Pattern(instance, groups)
            starts = [x[pat.index] for x in grid_pts if pat.min_group_norm(x[pat.index]) > 0
                      and np.all(np.delete(x, pat.index) == 0)]
            starts.append(theta_ls[pat.index])
            starts.extend(rng.uniform(-half_width, half_width, size=(budget, pat.index.size)))
            for z0 in starts:
                n_starts += 1
                x = radial_feasibility_project(pat.embed(_polish(pat, z0)), spec)
                polished.append((x, instance.objective(x)))
    candidates.extend(polished)

    best_theta, best_obj = min(candidates, key=lambda c: c[1])
    return OracleResult(
        best_theta=best_theta,
        best_objective=instance.objective(best_theta),
        n_starts=n_starts,
        n_grid_points=n_grid,
        all_local_optima_found=_dedup(polished),
    )


def _dedup(candidates):
    kept = []
    for x, obj in sorted(candidates, key=lambda c: c[1]):
        if all(np.max(np.abs(x - k[0])) > DEDUP_TOL for k in kept):
            kept.append((x, obj))
    return kept
