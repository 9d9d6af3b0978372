"""Iterative drivers: Marks' inner-approximation loop and the MM loop.

``marks_solve`` handles

    minimize ||y - A theta||^2   subject to   f(theta) <= gamma

by replacing the nonconvex ``f`` at each iterate with its tangent quadratic
majorizer.  The subproblem is then a least-squares problem with one
ellipsoidal constraint, solved exactly by :class:`QclsSolver` through a
one-dimensional search on the ridge parameter.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .errors import (
    DimensionError,
    InfeasibleStartError,
    InnerSolverError,
    MajorizationError,
)
from .kernels import DEFAULT_SINGULARITY_FLOOR, GroupedVector, MpeConstraintSpec, as_values, mpe_value
from .surrogate import QuadraticSurrogate, build_constraint_surrogate, quadratic_stationary_point

RANK_RTOL = 1e-10
_FIXED_POINT_RTOL = 1e-12
_LAMBDA_START = (1e-12, 1e12)
_LAMBDA_LIMITS = (1e-300, 1e300)


@dataclass(frozen=True)
class ProblemInstance:
    regressors: np.ndarray
    measurements: np.ndarray
    constraint: MpeConstraintSpec

    def __post_init__(self):
        A = np.array(self.regressors, dtype=float)
        y = np.array(self.measurements, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise DimensionError(f"regressor matrix must be 2-D and non-empty, got shape {A.shape}")
        if A.shape[0] != y.size:
            raise DimensionError(f"A has {A.shape[0]} rows but y has {y.size} entries")
        if A.shape[1] != self.constraint.dim:
            raise DimensionError(
                f"A has {A.shape[1]} columns but the groups cover {self.constraint.dim} coordinates"
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise ValueError("A and y must be finite")
        A.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "regressors", A)
        object.__setattr__(self, "measurements", y)

    @property
    def group_sizes(self):
        return self.constraint.group_sizes

    @property
    def n_measurements(self):
        return self.regressors.shape[0]

    @property
    def dim(self):
        return self.regressors.shape[1]

    def objective(self, theta):
        r = self.measurements - self.regressors @ as_values(theta)
        return float(r @ r)


@dataclass
class SolverOptions:
    max_iterations: int = 100
    objective_tolerance: float = 1e-6
    consecutive_hits: int = 2
    # A tolerance hit also needs ||step|| <= step_tolerance * ||theta||, so the
    # slow geometric climb out of the origin is not mistaken for convergence.
    step_tolerance: float = 1e-2
    constraint_feasibility_tolerance: float = 1e-9
    inner_multiplier_tolerance: float = 1e-13
    singularity_floor: float = DEFAULT_SINGULARITY_FLOOR
    random_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.consecutive_hits < 1:
            raise ValueError("consecutive_hits must be at least 1")
        for name in ("objective_tolerance", "step_tolerance", "constraint_feasibility_tolerance",
                     "inner_multiplier_tolerance", "singularity_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class IterateRecord:
    iteration: int
    theta: np.ndarray
    objective: float
    weights: np.ndarray
    wall_time: float
    constraint_value: Optional[float] = None
    surrogate_bound: Optional[float] = None
    multiplier: Optional[float] = None
    feasible: Optional[bool] = None


TERMINATION_REASONS = ("converged", "max_iterations", "inner_solver_failure")

TRACE_COLUMNS = ("iter", "objective", "constraint_value", "surrogate_bound",
                 "lambda", "feasible", "wall_ms")


@dataclass
class IterateTrace:
    initial_theta: np.ndarray
    initial_objective: float
    records: List[IterateRecord] = field(default_factory=list)
    termination_reason: Optional[str] = None

    @property
    def n_iterations(self):
        return len(self.records)

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])

    def rows(self, timing=True):
        """One dict per iteration keyed by :data:`TRACE_COLUMNS`."""
        out = []
        for r in self.records:
            out.append({
                "iter": r.iteration,
                "objective": r.objective,
                "constraint_value": r.constraint_value,
                "surrogate_bound": r.surrogate_bound,
                "lambda": r.multiplier,
                "feasible": r.feasible,
                "wall_ms": 1e3 * r.wall_time if timing else 0.0,
            })
        return out


class KktResiduals(NamedTuple):
    """Scaled optimality residuals of the QCLS subproblem.

    The objective is ``||y - A theta||^2`` (gradient ``2 A^T (A theta - y)``),
    so the constraint multiplier is twice the ridge parameter returned by the
    solver.
    """

    stationarity: float
    primal: float
    complementarity: float
    dual: float

    def ok(self, tol=1e-8):
        return max(self) <= tol


def min_norm_least_squares(A, y, rcond=RANK_RTOL):
    """Minimum-norm least-squares solution and numerical rank (SVD based)."""
    theta, _, rank, _ = np.linalg.lstsq(np.asarray(A, float), np.asarray(y, float), rcond=rcond)
    return theta, int(rank)


class QclsSolver:
    """Repeated solves of ``min ||y - A theta||^2  s.t.  0.5 theta' D theta <= c``.

    ``A`` and ``y`` are fixed; ``D = diag(d)`` and ``c`` change between calls,
    which is the situation inside :func:`marks_solve`.
    """

    def __init__(self, A, y):
        self.A = np.asarray(A, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        self.AtA = self.A.T @ self.A
        self.Aty = self.A.T @ self.y
        self.theta_ls, self.rank = min_norm_least_squares(self.A, self.y)

    def _spectral(self, d):
        # Work in the coordinates u = D^(1/2) theta so that wildly different
        # curvature entries (capped weights reach 1e40 and beyond) stay harmless.
        s = 1.0 / np.sqrt(d)
        mu, V = np.linalg.eigh(s[:, None] * self.AtA * s[None, :])
        mu = np.maximum(mu, 0.0)
        w = V.T @ (s * self.Aty)
        return s, mu, V, w

    def constraint_at(self, d, lam):
        """``0.5 theta(lam)' D theta(lam)`` for the ridge solution at ``lam``."""
        _, mu, _, w = self._spectral(np.asarray(d, float))
        return 0.5 * float(np.sum((w / (mu + lam)) ** 2))

    def solve(self, d, c, opts: SolverOptions = None):
        opts = opts or SolverOptions()
        d = np.asarray(d, dtype=float).reshape(-1)
        if d.size != self.A.shape[1]:
            raise DimensionError(f"d has length {d.size}, expected {self.A.shape[1]}")
        if not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise ValueError("curvature entries must be finite and positive")
        if c < 0:
            raise InnerSolverError(f"constraint bound {c!r} is negative; the feasible set is empty")
        if c == 0:
            return np.zeros_like(d), math.inf

        tol = opts.inner_multiplier_tolerance * max(1.0, c)
        ls = self.theta_ls
        if 0.5 * float(ls @ (d * ls)) <= c + tol:
            return ls.copy(), 0.0

        s, mu, V, w = self._spectral(d)
        w2 = w * w
        target = math.sqrt(2.0 * c)

        def norm_u(lam):
            return math.sqrt(float(np.sum(w2 / (mu + lam) ** 2)))

        def theta_at(lam):
            return s * (V @ (w / (mu + lam)))

        lo, hi = _LAMBDA_START
        while norm_u(hi) > target:
            if hi >= _LAMBDA_LIMITS[1]:
                raise InnerSolverError("multiplier bracket could not be closed from above",
                                       bracket=(lo, hi))
            lo, hi = hi, min(hi * 1e6, _LAMBDA_LIMITS[1])
        while norm_u(lo) < target:
            if lo <= _LAMBDA_LIMITS[0]:
                # The weighted-minimum-norm LS point is feasible (rank-deficient A).
                return theta_at(lo), 0.0
            lo, hi = max(lo * 1e-6, _LAMBDA_LIMITS[0]), lo

        # Newton on 1/||u(lam)|| - 1/target, which is close to linear in lam,
        # guarded by bisection on log(lam).
        lam = math.sqrt(lo * hi)
        for _ in range(500):
            n = norm_u(lam)
            resid = 0.5 * (n * n - target * target)
            if abs(resid) <= tol:
                break
            if resid > 0:
                lo = lam
            else:
                hi = lam
            if hi <= lo * (1.0 + 4e-16):
                lam = hi
                break
            slope = float(np.sum(w2 / (mu + lam) ** 3)) / n**3
            step = (1.0 / target - 1.0 / n) / slope if slope > 0 else math.nan
            candidate = lam + step
            if not (lo < candidate < hi) or not math.isfinite(candidate):
                candidate = math.sqrt(lo * hi)
            lam = candidate
        else:
            raise InnerSolverError("multiplier search did not converge", bracket=(lo, hi))
        return theta_at(lam), lam


def inner_qcls_solve(A, y, weights_expanded, c, opts: SolverOptions = None):
    """Solve ``min ||y - A theta||^2  s.t.  0.5 theta' diag(d) theta <= c``.

    Returns ``(theta, lam)`` where ``theta = (A'A + lam D)^-1 A'y``.  ``lam`` is 0
    when the least-squares solution is already feasible and ``inf`` when
    ``c == 0`` forces the origin.
    """
    return QclsSolver(A, y).solve(weights_expanded, c, opts)


def qcls_kkt_residuals(A, y, weights_expanded, c, theta, lam) -> KktResiduals:
    A = np.asarray(A, float)
    y = np.asarray(y, float).reshape(-1)
    d = np.asarray(weights_expanded, float).reshape(-1)
    theta = np.asarray(theta, float).reshape(-1)
    Aty = A.T @ y
    grad = 2.0 * (A.T @ (A @ theta) - Aty)
    g = 0.5 * float(theta @ (d * theta)) - c
    if math.isinf(lam):
        # Bound of zero: no finite multiplier exists, report the raw imbalance.
        stationarity = float(np.linalg.norm(grad))
        complementarity = 0.0
    else:
        stationarity = float(np.linalg.norm(grad + 2.0 * lam * d * theta))
        complementarity = abs(lam * g)
    return KktResiduals(
        stationarity=stationarity / (1.0 + float(np.linalg.norm(Aty))),
        primal=max(0.0, g) / (1.0 + abs(c)),
        complementarity=complementarity / (1.0 + abs(c)),
        dual=max(0.0, -lam),
    )


def _relative_change(old, new):
    scale = max(abs(old), abs(new))
    return 0.0 if scale == 0 else abs(old - new) / scale


def marks_solve(instance: ProblemInstance, theta0, opts: SolverOptions = None):
    """Marks' iterative inner approximation for the group l_q constrained problem.

    Each iteration replaces the constraint by its tangent majorizer at the
    current iterate and solves the resulting convex subproblem exactly.  Every
    iterate is therefore feasible for the original constraint, and the
    objective never increases.

    Stops when the relative objective change stays below
    ``opts.objective_tolerance`` for ``opts.consecutive_hits`` iterations in a
    row (each with a relative step below ``opts.step_tolerance``), when the subproblem's constraint is inactive (the least-squares point
    is then optimal), or when the surrogate rebuilt at the new iterate is the
    same as the previous one (a fixed point; always the case for ``q = 2``).
    """
    opts = opts or SolverOptions()
    spec = instance.constraint
    x = np.array(as_values(theta0, spec), dtype=float)
    start_value = mpe_value(x, spec)
    if start_value > spec.gamma - opts.constraint_feasibility_tolerance:
        raise InfeasibleStartError(
            f"starting point has constraint value {start_value:.6g}, needs at most "
            f"{spec.gamma - opts.constraint_feasibility_tolerance:.6g}"
        )
    qcls = QclsSolver(instance.regressors, instance.measurements)
    trace = IterateTrace(x.copy(), instance.objective(x))
    prev_obj = trace.initial_objective
    prev = None
    hits = 0

    for it in range(1, opts.max_iterations + 1):
        tick = time.perf_counter()
        s = build_constraint_surrogate(spec.grouped(x), spec, opts.singularity_floor)
        if prev is not None and _same_subproblem(prev, s, spec.gamma):
            trace.termination_reason = "converged"
            break
        bound = spec.gamma - s.constant
        try:
            x_new, lam = qcls.solve(s.expanded_weights, bound, opts)
        except InnerSolverError as exc:
            trace.termination_reason = "inner_solver_failure"
            exc.iteration = it
            exc.trace = trace
            raise
        obj = instance.objective(x_new)
        value = mpe_value(x_new, spec)
        trace.records.append(IterateRecord(
            iteration=it,
            theta=x_new,
            objective=obj,
            weights=s.weights.copy(),
            wall_time=time.perf_counter() - tick,
            constraint_value=value,
            surrogate_bound=s.value(x_new),
            multiplier=lam,
            feasible=bool(value <= spec.gamma + opts.constraint_feasibility_tolerance),
        ))
        small_step = np.linalg.norm(x_new - x) <= opts.step_tolerance * np.linalg.norm(x_new)
        x, prev = x_new, s
        if lam == 0.0:
            trace.termination_reason = "converged"
            break
        hit = small_step and _relative_change(prev_obj, obj) <= opts.objective_tolerance
        hits = hits + 1 if hit else 0
        prev_obj = obj
        if hits >= opts.consecutive_hits:
            trace.termination_reason = "converged"
            break
    else:
        trace.termination_reason = "max_iterations"
    return spec.grouped(x), trace


def _same_subproblem(a: QuadraticSurrogate, b: QuadraticSurrogate, gamma):
    return (np.allclose(a.weights, b.weights, rtol=1e-14, atol=0.0)
            and abs(a.constant - b.constant) <= 1e-14 * max(1.0, abs(gamma)))


def mm_minimize(objective: Callable, surrogate_builder: Callable, theta0: GroupedVector,
                opts: SolverOptions = None):
    """Majorize-minimize with quadratic surrogates.

    ``surrogate_builder(anchor)`` must return a :class:`QuadraticSurrogate`
    that majorizes ``objective`` and touches it at ``anchor``; each step jumps
    to the surrogate's stationary point.  An objective increase larger than
    ``1e-10`` relative means the builder is broken and raises
    :class:`MajorizationError`.
    """
    opts = opts or SolverOptions()
    if not isinstance(theta0, GroupedVector):
        raise TypeError("theta0 must be a GroupedVector so the builder knows the groups")
    x = theta0.values.copy()
    f_prev = float(objective(x))
    trace = IterateTrace(x.copy(), f_prev)
    hits = 0
    for it in range(1, opts.max_iterations + 1):
        tick = time.perf_counter()
        s = surrogate_builder(theta0.with_values(x))
        x_new = quadratic_stationary_point(s.expanded_weights, s.linear_offset)
        if np.linalg.norm(x_new - x) <= _FIXED_POINT_RTOL * (1.0 + np.linalg.norm(x)):
            trace.termination_reason = "converged"
            break
        f_new = float(objective(x_new))
        if f_new > f_prev + 1e-10 * max(1.0, abs(f_prev)):
            raise MajorizationError(
                f"objective rose from {f_prev!r} to {f_new!r} at iteration {it}"
            )
        trace.records.append(IterateRecord(
            iteration=it, theta=x_new, objective=f_new, weights=s.weights.copy(),
            wall_time=time.perf_counter() - tick,
        ))
        hits = hits + 1 if _relative_change(f_prev, f_new) <= opts.objective_tolerance else 0
        x, f_prev = x_new, f_new
        if hits >= opts.consecutive_hits:
            trace.termination_reason = "converged"
            break
    else:
        trace.termination_reason = "max_iterations"
    return theta0.with_values(x), trace
