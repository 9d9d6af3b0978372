"""Quadratic surrogates with block-scalar curvature and the checks they must pass.

A surrogate anchored at ``theta_hat`` has the form

    Q(theta) = sum_m k_m / 2 * ||theta_m||^2 + b . theta + constant

For the group l_q constraint the offset ``b`` is zero and the constant is
chosen so that ``Q(theta_hat) = f(theta_hat)``.  Because each group term is
concave in ``||theta_m||^2`` for ``q <= 2``, the tangent quadratic lies above
it everywhere.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NearZeroCoordinateError, NonPositiveCurvatureError
from .kernels import (
    DEFAULT_SINGULARITY_FLOOR,
    GroupedVector,
    MpeConstraintSpec,
    as_values,
    central_difference,
    group_norms,
    mpe_group_terms,
    vmgm_weights,
)


@dataclass(frozen=True)
class QuadraticSurrogate:
    anchor: GroupedVector
    weights: np.ndarray
    linear_offset: np.ndarray
    constant: float

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float).reshape(-1)
        offset = np.array(self.linear_offset, dtype=float).reshape(-1)
        if weights.size != self.anchor.n_groups:
            raise DimensionError(
                f"{weights.size} weights for {self.anchor.n_groups} groups"
            )
        if offset.size != len(self.anchor):
            raise DimensionError(f"offset has length {offset.size}, expected {len(self.anchor)}")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(weights) & (weights > 0)))[0])
            raise NonPositiveCurvatureError(bad, float(weights[bad]))
        weights.setflags(write=False)
        offset.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "linear_offset", offset)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def group_sizes(self):
        return self.anchor.group_sizes

    @property
    def expanded_weights(self):
        """Diagonal of the curvature matrix, one entry per coordinate."""
        return np.repeat(self.weights, self.group_sizes)

    def _check(self, theta):
        values = as_values(theta)
        if values.size != len(self.anchor):
            raise DimensionError(f"expected length {len(self.anchor)}, got {values.size}")
        return values

    def value(self, theta):
        x = self._check(theta)
        return float(0.5 * np.dot(self.expanded_weights * x, x)
                     + np.dot(self.linear_offset, x) + self.constant)

    def values(self, points):
        """Vectorized :meth:`value` over the rows of ``points``."""
        points = np.asarray(points, dtype=float)
        return (0.5 * np.einsum("ij,j,ij->i", points, self.expanded_weights, points)
                + points @ self.linear_offset + self.constant)

    def gradient(self, theta):
        x = self._check(theta)
        return self.expanded_weights * x + self.linear_offset

    def __call__(self, theta):
        return self.value(theta)


@dataclass
class MarksConditionReport:
    n_samples: int
    majorization_violations: int
    worst_violation: float
    tangency_gap: float
    gradient_gap: float
    relative_gradient_gap: float
    n_skipped: int = 0

    @property
    def ok(self):
        return self.majorization_violations == 0


def build_constraint_surrogate(theta_hat, spec: MpeConstraintSpec,
                               floor: float = DEFAULT_SINGULARITY_FLOOR) -> QuadraticSurrogate:
    """Tangent quadratic majorizer of the group l_q constraint at ``theta_hat``.

    Evaluating it at ``theta`` gives

        sum_m k_m / 2 * (||theta_m||^2 - ||theta_hat_m||^2) + (c_m ||theta_hat_m||)^q
    """
    anchor = theta_hat if isinstance(theta_hat, GroupedVector) else spec.grouped(theta_hat)
    as_values(anchor, spec)
    weights = vmgm_weights(anchor, spec, floor)
    norms = group_norms(anchor, spec)
    constant = float(np.sum(mpe_group_terms(anchor, spec) - 0.5 * weights * norms**2))
    return QuadraticSurrogate(anchor, weights, np.zeros(spec.dim), constant)


def surrogate_value(s: QuadraticSurrogate, theta) -> float:
    return s.value(theta)


def inflate_curvature(s: QuadraticSurrogate, factor: float) -> QuadraticSurrogate:
    """Scale the curvature while keeping value and gradient at the anchor.

    For ``factor >= 1`` the result still majorizes whatever ``s`` majorizes,
    since it exceeds ``s`` by ``(factor - 1) * k_m / 2 * ||theta_m - anchor_m||^2``.
    """
    if not factor > 0:
        raise ValueError("factor must be positive")
    new_weights = factor * s.weights
    x = s.anchor.values
    delta = np.repeat(s.weights - new_weights, s.group_sizes)
    offset = s.linear_offset + delta * x
    constant = s.constant - 0.5 * np.dot(delta * x, x)
    return QuadraticSurrogate(s.anchor, new_weights, offset, constant)


def perturb_weights(s: QuadraticSurrogate, factor: float) -> QuadraticSurrogate:
    """Scale the curvature but only re-fit the value at the anchor (negative control).

    The gradient at the anchor no longer matches, so for ``factor != 1`` the
    result crosses the function it was built for.
    """
    if not factor > 0:
        raise ValueError("factor must be positive")
    new_weights = factor * s.weights
    x = s.anchor.values
    extra = 0.5 * np.dot(np.repeat(new_weights - s.weights, s.group_sizes) * x, x)
    return QuadraticSurrogate(s.anchor, new_weights, s.linear_offset, s.constant - extra)


def _ball_samples(rng, center, radius, n, near_fraction=0.5, near_decades=6.0):
    """Uniform points in the ball, plus a share with log-uniform distance.

    Uniform sampling in many dimensions lands almost everything near the
    boundary sphere; the log-uniform share probes the neighbourhood of the
    anchor, where a first-order mismatch shows up first.
    """
    dim = center.size
    directions = rng.standard_normal((n, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / dim)
    n_near = int(near_fraction * n)
    radii[:n_near] = radius * 10.0 ** (-near_decades * rng.random(n_near))
    return center + directions * radii[:, None]


def check_marks_conditions(s: QuadraticSurrogate, g: Callable, theta_hat, n_samples: int,
                           radius: float, *, seed: int = 0, vectorized: bool = False,
                           step: float = 1e-6, slack: float = 1e-12) -> MarksConditionReport:
    """Sample-based witness of majorization, tangency and gradient matching.

    Half the points are drawn uniformly from the Euclidean ball of ``radius``
    around the anchor, the other half at log-uniform distances down to
    ``1e-6 * radius``; the anchor itself is always included.  A point counts as a violation when
    ``g - Q > slack * max(1, |g|)``, which absorbs rounding in the comparison.
    With ``vectorized=True``, ``g`` is called once on an ``(n, dim)`` array.
    Samples where ``g`` is not finite are skipped and counted.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    x0 = as_values(theta_hat)
    rng = np.random.default_rng(seed)
    points = np.vstack([x0, _ball_samples(rng, x0, radius, n_samples)])
    if vectorized:
        g_vals = np.asarray(g(points), dtype=float)
    else:
        g_vals = np.array([float(g(p)) for p in points])
    q_vals = s.values(points)
    finite = np.isfinite(g_vals)
    excess = np.where(finite, g_vals - q_vals, -np.inf)
    tol = slack * np.maximum(1.0, np.abs(np.where(finite, g_vals, 0.0)))
    violating = excess > tol
    worst = float(max(0.0, np.max(excess[finite], initial=0.0)))

    tangency = abs(s.value(x0) - float(g_vals[0])) if finite[0] else np.inf

    if vectorized:
        scalar_g = lambda x: float(g(np.asarray(x)[None, :])[0])
    else:
        scalar_g = g
    numeric = central_difference(scalar_g, x0, step)
    analytic = s.gradient(x0)
    grad_gap = float(np.max(np.abs(numeric - analytic), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(analytic), initial=0.0)))
    return MarksConditionReport(
        n_samples=n_samples,
        majorization_violations=int(np.count_nonzero(violating)),
        worst_violation=worst,
        tangency_gap=tangency,
        gradient_gap=grad_gap,
        relative_gradient_gap=grad_gap / scale,
        n_skipped=int(np.count_nonzero(~finite)),
    )


def diagonal_R_from_fisher(grad_J_at_anchor, b, theta_hat, divide_floor: float = 1e-12) -> np.ndarray:
    """Diagonal curvature recovered from gradient matching at the anchor.

    Solves ``grad_J = r * theta_hat + b`` coordinate-wise.
    """
    grad = np.asarray(grad_J_at_anchor, dtype=float).reshape(-1)
    offset = np.asarray(b, dtype=float).reshape(-1)
    x = as_values(theta_hat)
    if not grad.size == offset.size == x.size:
        raise DimensionError(f"lengths differ: {grad.size}, {offset.size}, {x.size}")
    small = np.flatnonzero(np.abs(x) <= divide_floor)
    if small.size:
        raise NearZeroCoordinateError(int(small[0]), float(x[small[0]]))
    return (grad - offset) / x


def quadratic_stationary_point(weights_expanded, b) -> np.ndarray:
    """Unique zero of ``r * theta + b``, i.e. ``theta = -b / r``."""
    r = np.asarray(weights_expanded, dtype=float).reshape(-1)
    offset = np.asarray(b, dtype=float).reshape(-1)
    if r.size != offset.size:
        raise DimensionError(f"lengths differ: {r.size} and {offset.size}")
    bad = np.flatnonzero(~(r > 0))
    if bad.size:
        raise NonPositiveCurvatureError(int(bad[0]), float(r[bad[0]]))
    return -offset / r
