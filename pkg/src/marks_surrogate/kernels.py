"""Group l_q constraint kernel: values, gradients and VMGM curvature weights.

The constraint function is

    f(theta) = sum_m ( sqrt(beta_m) / tau * ||theta_m||_2 ) ** q

Read as the negative log of a multivariate power-exponential density, each
group term admits a variance-mean Gaussian mixture representation, which is
what makes a per-group quadratic surrogate ``k_m / 2 * ||theta_m||^2`` exact
in gradient at the anchor.  The curvature ``k_m`` is recovered from that
gradient-matching requirement directly, so neither the density's normalizing
constant nor its mixing density is ever evaluated.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DimensionError, NonFiniteValueError, SingularGroupError

# Group norms below this are treated as zero when forming curvature weights.
# For q < 2 the weight grows like norm**(q - 2); capping it keeps the inner
# problem finite.  It must be small in *function value* terms too, because a
# capped weight does not majorize on roughly (norm, 2.7 * floor).
DEFAULT_SINGULARITY_FLOOR = 1e-30


def _sizes_tuple(group_sizes):
    sizes = tuple(int(b) for b in group_sizes)
    if len(sizes) == 0:
        raise DimensionError("at least one group is required")
    if any(b < 1 for b in sizes):
        raise DimensionError(f"group sizes must be positive, got {sizes}")
    return sizes


@dataclass(frozen=True)
class GroupedVector:
    """A parameter vector split into consecutive groups.

    Group ``m`` is ``values[offsets[m]:offsets[m] + group_sizes[m]]``.
    """

    values: np.ndarray
    group_sizes: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        sizes = _sizes_tuple(self.group_sizes)
        if sum(sizes) != values.size:
            raise DimensionError(
                f"group sizes {sizes} sum to {sum(sizes)} but the vector has length {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "group_sizes", sizes)

    @property
    def n_groups(self):
        return len(self.group_sizes)

    @property
    def offsets(self):
        return np.concatenate(([0], np.cumsum(self.group_sizes)[:-1])).astype(int)

    def group(self, m):
        start = int(self.offsets[m])
        return self.values[start:start + self.group_sizes[m]]

    def groups(self):
        return [self.group(m) for m in range(self.n_groups)]

    def group_norms(self):
        return np.array([np.linalg.norm(g) for g in self.groups()])

    def with_values(self, values):
        return GroupedVector(values, self.group_sizes)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class MpeConstraintSpec:
    """Parameters of the group l_q constraint ``f(theta) <= gamma``."""

    q: float
    tau: float
    gamma: float
    group_sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, "group_sizes", _sizes_tuple(self.group_sizes))
        if not 0.0 < self.q <= 2.0:
            raise ValueError(f"q must lie in (0, 2], got {self.q}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def dim(self):
        return sum(self.group_sizes)

    @property
    def n_groups(self):
        return len(self.group_sizes)

    @property
    def group_scales(self):
        """Per-group factors ``sqrt(beta_m) / tau``."""
        return np.sqrt(np.asarray(self.group_sizes, dtype=float)) / self.tau

    def expand(self, per_group):
        """Repeat one value per group into one value per coordinate."""
        return np.repeat(np.asarray(per_group, dtype=float), self.group_sizes)

    def grouped(self, values):
        return GroupedVector(values, self.group_sizes)


@dataclass
class FisherReport:
    """Coordinate-wise gap between a finite-difference and an analytic gradient."""

    max_abs_gradient_gap: float
    per_coordinate_gaps: np.ndarray
    step_size_used: float
    analytic_gradient: np.ndarray = field(repr=False)

    @property
    def relative_gap(self):
        """Largest gap divided by the largest analytic gradient entry (at least 1)."""
        scale = max(1.0, float(np.max(np.abs(self.analytic_gradient), initial=0.0)))
        return self.max_abs_gradient_gap / scale


ThetaLike = Union[GroupedVector, np.ndarray, Sequence[float]]


def as_values(theta: ThetaLike, spec: MpeConstraintSpec = None) -> np.ndarray:
    """Return the raw coordinates of ``theta``, checking them against ``spec``."""
    if isinstance(theta, GroupedVector):
        if spec is not None and theta.group_sizes != spec.group_sizes:
            raise DimensionError(
                f"group structure {theta.group_sizes} does not match {spec.group_sizes}"
            )
        return theta.values
    values = np.asarray(theta, dtype=float).reshape(-1)
    if spec is not None and values.size != spec.dim:
        raise DimensionError(f"expected a vector of length {spec.dim}, got {values.size}")
    return values


def group_norms(theta: ThetaLike, spec: MpeConstraintSpec) -> np.ndarray:
    values = as_values(theta, spec)
    bounds = np.cumsum((0,) + spec.group_sizes)
    return np.array([np.linalg.norm(values[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])


def mpe_group_terms(theta: ThetaLike, spec: MpeConstraintSpec) -> np.ndarray:
    """Per-group contributions ``(c_m * ||theta_m||) ** q``."""
    return (spec.group_scales * group_norms(theta, spec)) ** spec.q


def mpe_value(theta: ThetaLike, spec: MpeConstraintSpec) -> float:
    """Group l_q constraint value; zero exactly when ``theta`` is zero."""
    return float(np.sum(mpe_group_terms(theta, spec)))


def mpe_values(points: np.ndarray, spec: MpeConstraintSpec) -> np.ndarray:
    """Vectorized :func:`mpe_value` over the rows of ``points``."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != spec.dim:
        raise DimensionError(f"expected an (n, {spec.dim}) array, got shape {points.shape}")
    starts = np.cumsum((0,) + spec.group_sizes[:-1])
    sq = np.add.reduceat(points * points, starts, axis=1)
    return np.sum((spec.group_scales**2 * sq) ** (0.5 * spec.q), axis=1)


def mpe_gradient(theta: ThetaLike, spec: MpeConstraintSpec,
                 floor: float = DEFAULT_SINGULARITY_FLOOR) -> np.ndarray:
    """Gradient of :func:`mpe_value`.

    Block ``m`` is ``q * c_m**q * ||theta_m||**(q-2) * theta_m``.  For ``q < 2``
    this is singular at a zero group, so a group whose norm is below ``floor``
    raises :class:`SingularGroupError`.
    """
    values = as_values(theta, spec)
    norms = group_norms(values, spec)
    if spec.q < 2.0:
        bad = np.flatnonzero(norms < floor)
        if bad.size:
            raise SingularGroupError(int(bad[0]), float(norms[bad[0]]))
        factors = spec.q * spec.group_scales**spec.q * norms ** (spec.q - 2.0)
    else:
        factors = 2.0 * spec.group_scales**2
    return spec.expand(factors) * values


def vmgm_weight(theta_hat_group, group_index: int, spec: MpeConstraintSpec,
                floor: float = DEFAULT_SINGULARITY_FLOOR) -> float:
    """Curvature ``k_m`` of the tangent quadratic for group ``group_index``.

    ``k_m = q * c_m**q * max(||theta_hat_m||, floor)**(q - 2)`` is the only
    isotropic curvature whose gradient ``k_m * theta_hat_m`` equals the group
    gradient of the constraint at the anchor.
    """
    if not 0 <= group_index < spec.n_groups:
        raise IndexError(f"group index {group_index} out of range for {spec.n_groups} groups")
    group = np.asarray(theta_hat_group, dtype=float).reshape(-1)
    if group.size != spec.group_sizes[group_index]:
        raise DimensionError(
            f"group {group_index} has size {spec.group_sizes[group_index]}, got {group.size}"
        )
    scale = spec.group_scales[group_index]
    norm = max(float(np.linalg.norm(group)), floor)
    return float(spec.q * scale**spec.q * norm ** (spec.q - 2.0))


def vmgm_weights(theta_hat: ThetaLike, spec: MpeConstraintSpec,
                 floor: float = DEFAULT_SINGULARITY_FLOOR) -> np.ndarray:
    """All per-group weights at once."""
    norms = np.maximum(group_norms(theta_hat, spec), floor)
    return spec.q * spec.group_scales**spec.q * norms ** (spec.q - 2.0)


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        plus = float(fn(x + e))
        minus = float(fn(x - e))
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NonFiniteValueError(f"function is not finite near coordinate {j}")
        grad[j] = (plus - minus) / (2.0 * step)
    return grad


def check_fisher_identity(value_fn: Callable[[np.ndarray], float], surrogate,
                          theta_hat: ThetaLike, step: float = 1e-6) -> FisherReport:
    """Compare the gradient of ``value_fn`` with that of ``surrogate`` at the anchor.

    ``value_fn`` is differenced centrally; the surrogate gradient is analytic.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = as_values(theta_hat)
    numeric = central_difference(value_fn, x, step)
    analytic = surrogate.gradient(x)
    gaps = np.abs(numeric - analytic)
    return FisherReport(float(np.max(gaps, initial=0.0)), gaps, step, analytic)
