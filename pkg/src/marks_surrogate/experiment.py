"""Group l_q constrained regression experiment and its Monte Carlo harness.

Each run draws ``A`` with i.i.d. standard normal entries and
``y = A theta_true + n`` with ``n ~ N(0, noise_variance I)``, then compares
the constrained estimate with ordinary least squares.  Random streams are
Philox generators keyed by ``(seed, run_index)``, so any run can be
regenerated on its own and runs can execute in any order.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .errors import MonteCarloError, SurrogateError
from .kernels import MpeConstraintSpec, mpe_value
from .oracle import radial_feasibility_project
from .solvers import ProblemInstance, SolverOptions, marks_solve, min_norm_least_squares

REFERENCE_TRUE_THETA = (0.54, 1.83, -2.26, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.86, 0.32, -1.31)
REFERENCE_GROUP_SIZES = (3, 3, 3, 3)
START_KINDS = ("projected-ls", "zero")
MAX_FAILURE_FRACTION = 0.05


@dataclass
class ExperimentConfig:
    n_measurements: int = 256
    true_theta: tuple = REFERENCE_TRUE_THETA
    group_sizes: tuple = REFERENCE_GROUP_SIZES
    q: float = 0.4
    tau: float = 0.2
    gamma: float = 7.0
    noise_variance: float = 0.01
    n_monte_carlo: int = 150
    seed: int = 0
    start: str = "projected-ls"
    start_margin: float = 1e-3
    solver: SolverOptions = field(default_factory=SolverOptions)
    workers: int = 1

    def __post_init__(self):
        self.true_theta = tuple(float(v) for v in self.true_theta)
        self.group_sizes = tuple(int(b) for b in self.group_sizes)
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        if self.n_monte_carlo < 1:
            raise ValueError("n_monte_carlo must be at least 1")
        if self.n_measurements < 1:
            raise ValueError("n_measurements must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.start not in START_KINDS:
            raise ValueError(f"start must be one of {START_KINDS}, got {self.start!r}")
        if not 0 < self.start_margin < 1:
            raise ValueError("start_margin must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        # Also validates q, tau, gamma and the group structure.
        self.spec.grouped(self.true_theta)

    @property
    def spec(self):
        return MpeConstraintSpec(self.q, self.tau, self.gamma, self.group_sizes)

    @property
    def dim(self):
        return len(self.true_theta)


@dataclass
class RunRecord:
    run_index: int
    theta_constrained: Optional[np.ndarray] = None
    theta_least_squares: Optional[np.ndarray] = None
    mse_constrained: float = math.nan
    mse_least_squares: float = math.nan
    iterations: int = 0
    termination_reason: str = ""
    constraint_value: float = math.nan
    objective_trace: Optional[np.ndarray] = None
    constraint_trace: Optional[np.ndarray] = None
    initial_objective: float = math.nan
    error: Optional[str] = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class ExperimentSummary:
    mse_constrained: float
    mse_least_squares: float
    win_rate: float
    mean_iterations: float
    n_runs: int
    n_failed: int
    per_run_records: List[RunRecord]


class LeastSquaresFit(NamedTuple):
    theta: np.ndarray
    rank: int
    rank_deficient: bool


def instance_rng(seed: int, run_index: int) -> np.random.Generator:
    """Counter-based stream for one run."""
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(run_index) << 64)))


def generate_instance(config: ExperimentConfig, run_index: int) -> ProblemInstance:
    if not 0 <= run_index < config.n_monte_carlo:
        raise IndexError(f"run_index {run_index} outside [0, {config.n_monte_carlo})")
    rng = instance_rng(config.seed, run_index)
    A = rng.standard_normal((config.n_measurements, config.dim))
    noise = math.sqrt(config.noise_variance) * rng.standard_normal(config.n_measurements)
    y = A @ np.asarray(config.true_theta) + noise
    return ProblemInstance(A, y, config.spec)


def least_squares_baseline(A, y) -> LeastSquaresFit:
    """Unconstrained least squares; the minimum-norm solution if ``A`` is rank deficient."""
    A = np.asarray(A, dtype=float)
    theta, rank = min_norm_least_squares(A, y)
    return LeastSquaresFit(theta, rank, rank < A.shape[1])


def starting_point(instance: ProblemInstance, kind: str = "projected-ls",
                   margin: float = 1e-3) -> np.ndarray:
    """Strictly feasible starting point for :func:`marks_solve`.

    ``"zero"`` is always strictly feasible.  ``"projected-ls"`` shrinks the
    least-squares solution radially until the constraint value is at most
    ``(1 - margin) * gamma``; it starts much closer to the solution because
    climbing out of the origin is slow when ``q < 2``.
    """
    spec = instance.constraint
    if kind == "zero":
        return np.zeros(instance.dim)
    if kind != "projected-ls":
        raise ValueError(f"unknown start kind {kind!r}")
    theta_ls, _ = min_norm_least_squares(instance.regressors, instance.measurements)
    inner = MpeConstraintSpec(spec.q, spec.tau, (1.0 - margin) * spec.gamma, spec.group_sizes)
    return radial_feasibility_project(theta_ls, inner)


def mse(estimate, truth) -> float:
    diff = np.asarray(estimate, float) - np.asarray(truth, float)
    return float(diff @ diff) / diff.size


def run_single(config: ExperimentConfig, run_index: int) -> RunRecord:
    """One Monte Carlo replication.  Solver failures are captured, not raised."""
    record = RunRecord(run_index)
    instance = generate_instance(config, run_index)
    truth = np.asarray(config.true_theta)
    fit = least_squares_baseline(instance.regressors, instance.measurements)
    record.theta_least_squares = fit.theta
    record.mse_least_squares = mse(fit.theta, truth)
    try:
        theta0 = starting_point(instance, config.start, config.start_margin)
        theta, trace = marks_solve(instance, theta0, config.solver)
    except SurrogateError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        return record
    record.theta_constrained = theta.values
    record.mse_constrained = mse(theta.values, truth)
    record.iterations = trace.n_iterations
    record.termination_reason = trace.termination_reason
    record.constraint_value = mpe_value(theta, config.spec)
    record.objective_trace = trace.objectives
    record.constraint_trace = np.array([r.constraint_value for r in trace.records])
    record.initial_objective = trace.initial_objective
    return record


def summarize(records, truth) -> ExperimentSummary:
    ok = [r for r in records if not r.failed]
    n_failed = len(records) - len(ok)
    if n_failed > MAX_FAILURE_FRACTION * len(records):
        raise MonteCarloError(f"{n_failed} of {len(records)} runs failed")
    if not ok:
        raise MonteCarloError("no successful runs")
    truth = np.asarray(truth, float)
    mse_c = np.array([mse(r.theta_constrained, truth) for r in ok])
    mse_ls = np.array([mse(r.theta_least_squares, truth) for r in ok])
    return ExperimentSummary(
        mse_constrained=float(np.mean(mse_c)),
        mse_least_squares=float(np.mean(mse_ls)),
        win_rate=float(np.mean(mse_c < mse_ls)),
        mean_iterations=float(np.mean([r.iterations for r in ok])),
        n_runs=len(records),
        n_failed=n_failed,
        per_run_records=list(records),
    )


def run_monte_carlo(config: ExperimentConfig) -> ExperimentSummary:
    indices = range(config.n_monte_carlo)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(run_single, [config] * len(indices), indices))
    else:
        records = [run_single(config, i) for i in indices]
    return summarize(records, config.true_theta)


def generate_small_instance(seed: int, index: int, *, group_sizes=(2, 2), n_measurements=12,
                            noise_variance=0.05, q=0.4, tau=0.2,
                            gamma_fraction=0.6) -> ProblemInstance:
    """Desk-scale instance for global-optimum checks.

    Each true group is zero with probability one half (at least one group is
    kept) and ``gamma`` is ``gamma_fraction`` times the constraint value of the
    least-squares point, so the constraint is active.
    """
    rng = instance_rng(seed, index)
    dim = sum(group_sizes)
    keep = rng.random(len(group_sizes)) < 0.5
    if not keep.any():
        keep[rng.integers(len(group_sizes))] = True
    truth = rng.standard_normal(dim) * np.repeat(keep, group_sizes)
    A = rng.standard_normal((n_measurements, dim))
    y = A @ truth + math.sqrt(noise_variance) * rng.standard_normal(n_measurements)
    theta_ls, _ = min_norm_least_squares(A, y)
    probe = MpeConstraintSpec(q, tau, 1.0, group_sizes)
    gamma = gamma_fraction * mpe_value(theta_ls, probe)
    return ProblemInstance(A, y, MpeConstraintSpec(q, tau, gamma, group_sizes))
