"""Communication-policy generation.

Pipeline: feasible intervals for the coupling weight rho and the mean
iteration time t-bar, an LP that picks neighbor probabilities for a fixed
(rho, t-bar), the gossip-expectation matrix Y of the resulting policy, its
second eigenvalue, and the nested grid search that minimizes the estimated
convergence time ``t-bar * ln(eps) / ln(lambda2)``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from netmax.core.exceptions import NetMaxError
from netmax.services.network_model import Topology
from netmax.services.simplex import DEFAULT_MAX_ITERATIONS, LPStatus, solve_standard_form
from netmax.services.spectral import EIGEN_TOL, deflated_power_iteration, jacobi_second_eigenvalue

logger = structlog.get_logger(__name__)

DEFAULT_MARGIN = 1e-6
DEFAULT_EPSILON = 0.01
ROW_SUM_TOL = 1e-9
EQUAL_TIME_RTOL = 1e-9
TIE_DIGITS = 12


class PolicyEngineError(NetMaxError):
    """Base exception for policy generation errors."""
    pass


class NonPositiveAlphaError(PolicyEngineError):
    pass


class EmptyIntervalError(PolicyEngineError):
    """Raised when the t-bar interval is empty (L > U)."""
    def __init__(self, low: float, high: float):
        self.low = low
        self.high = high
        super().__init__(f"empty t-bar interval: L={low} > U={high}")


class InfeasibleError(PolicyEngineError):
    """Raised when the policy LP has no solution."""
    pass


class NumericalFailureError(PolicyEngineError):
    """Raised when the LP solver exhausts its iteration cap."""
    pass


class ZeroProbabilityEdgeError(PolicyEngineError):
    def __init__(self, link: Tuple[int, int]):
        self.link = link
        super().__init__(f"edge {link} has zero selection probability")


class NotConvergedError(PolicyEngineError):
    pass


class DegenerateLambdaError(PolicyEngineError):
    def __init__(self, lambda2: float):
        self.lambda2 = lambda2
        super().__init__(f"lambda2={lambda2} is outside (0, 1)")


class NoFeasiblePolicyError(PolicyEngineError):
    """Raised when every grid point of the search is infeasible."""
    def __init__(self, evaluated: int):
        self.evaluated = evaluated
        super().__init__(f"no feasible policy among {evaluated} grid points")


class ZeroIterationTimeError(PolicyEngineError):
    pass


class InvalidMError(PolicyEngineError):
    pass


class InvalidAError(PolicyEngineError):
    pass


@dataclass(frozen=True)
class PolicyMatrix:
    """Row-stochastic neighbor-selection probabilities; the diagonal is self-selection."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
            raise PolicyEngineError(f"policy must be square, got shape {probs.shape}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def node_count(self) -> int:
        return self.probs.shape[0]

    @property
    def self_selection(self) -> float:
        return float(np.trace(self.probs))

    def row(self, i: int) -> np.ndarray:
        return self.probs[i].copy()

    @classmethod
    def uniform_neighbors(cls, topology: Topology, include_self: bool = False) -> "PolicyMatrix":
        adj = topology.adjacency.astype(float)
        if include_self:
            adj = adj + np.eye(topology.node_count)
        sums = adj.sum(axis=1, keepdims=True)
        probs = np.divide(adj, sums, out=np.eye(topology.node_count), where=sums > 0)
        return cls(probs)


@dataclass(frozen=True)
class GossipExpectation:
    y: np.ndarray
    alpha: float
    rho: float

    @property
    def node_count(self) -> int:
        return self.y.shape[0]

    def min_positive_entry(self) -> float:
        positive = self.y[self.y > 0]
        return float(positive.min()) if positive.size else 0.0


@dataclass(frozen=True)
class FeasibleIntervals:
    rho_low: float
    rho_high: float
    tbar_low: float
    tbar_high: float

    @property
    def is_empty(self) -> bool:
        return self.tbar_low > self.tbar_high

    def tbar_grid(self, inner_rounds: int) -> np.ndarray:
        if self.is_empty:
            raise EmptyIntervalError(self.tbar_low, self.tbar_high)
        return np.linspace(self.tbar_low, self.tbar_high, inner_rounds + 1)[1:]


@dataclass(frozen=True)
class PolicyResult:
    policy: PolicyMatrix
    rho: float
    tbar: float
    lambda2: float
    t_convergence: float
    alpha: float
    gossip: GossipExpectation
    evaluated: int = 0
    feasible: int = 0
    tbar_low: float = 0.0
    approximation_ratio: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "P": self.policy.probs.tolist(),
            "rho": self.rho,
            "tbar": self.tbar,
            "lambda2": self.lambda2,
            "t_convergence": self.t_convergence,
            "alpha": self.alpha,
            "evaluated": self.evaluated,
            "feasible": self.feasible,
            "approximation_ratio": self.approximation_ratio,
        }


def rho_interval(alpha: float) -> Tuple[float, float]:
    if alpha <= 0:
        raise NonPositiveAlphaError(f"alpha must be positive, got {alpha}")
    return 0.0, 0.5 / alpha


def _edge_mask(topology: Topology) -> np.ndarray:
    return topology.adjacency == 1


def tbar_interval(alpha: float, rho: float, times: np.ndarray, topology: Topology) -> Tuple[float, float]:
    """Bounds (L, U) on t-bar for a given rho; the interval may be empty."""
    m = topology.node_count
    d = topology.adjacency.astype(float)
    times = np.asarray(times, dtype=float)
    low = float(np.max((alpha * rho / m) * np.sum(times * (d + d.T), axis=1)))
    high = float(np.min(np.max(times * d, axis=1)) / m)
    return low, high


def feasible_intervals(alpha: float, rho: float, times: np.ndarray, topology: Topology) -> FeasibleIntervals:
    rho_low, rho_high = rho_interval(alpha)
    low, high = tbar_interval(alpha, rho, times, topology)
    return FeasibleIntervals(rho_low, rho_high, low, high)


def probability_floor(alpha: float, rho: float, topology: Topology, margin: float) -> np.ndarray:
    d = topology.adjacency.astype(float)
    return np.where(_edge_mask(topology), alpha * rho * (d + d.T) + margin, 0.0)


def _balance_ties(row: np.ndarray, neighbors: Sequence[int], times_row: np.ndarray) -> None:
    groups: Dict[float, List[int]] = defaultdict(list)
    for m in neighbors:
        groups[float(f"{times_row[m]:.{TIE_DIGITS}g}")].append(m)
    for members in groups.values():
        if len(members) > 1:
            row[members] = row[members].mean()


def solve_policy_lp(
    alpha: float,
    rho: float,
    tbar: float,
    times: np.ndarray,
    topology: Topology,
    margin: float = DEFAULT_MARGIN,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> PolicyMatrix:
    """Policy minimizing total self-selection for fixed (rho, t-bar).

    Rows decouple: row i carries its own time equality and its own sum
    constraint, so each row is a separate LP over its neighbor
    probabilities (shifted by their floor) and the self-selection slack.
    Links of a row with equal iteration times share one probability.
    """
    if margin <= 0:
        raise PolicyEngineError(f"margin must be positive, got {margin}")
    if alpha <= 0:
        raise NonPositiveAlphaError(f"alpha must be positive, got {alpha}")
    m = topology.node_count
    times = np.asarray(times, dtype=float)
    floor = probability_floor(alpha, rho, topology, margin)
    probs = np.zeros((m, m))

    for i in range(m):
        neighbors = topology.neighbors(i)
        if not neighbors:
            probs[i, i] = 1.0
            continue
        t_row = times[i, neighbors]
        f_row = floor[i, neighbors]
        k = len(neighbors)
        a_eq = np.zeros((2, k + 1))
        a_eq[0, :k] = t_row
        a_eq[1, :] = 1.0
        b_eq = np.array([m * tbar - float(t_row @ f_row), 1.0 - float(f_row.sum())])
        c = np.zeros(k + 1)
        c[k] = 1.0

        solution = solve_standard_form(c, a_eq, b_eq, max_iterations=max_iterations)
        if solution.status is LPStatus.ITERATION_LIMIT:
            raise NumericalFailureError(f"simplex hit the iteration cap on row {i}")
        if solution.status is not LPStatus.OPTIMAL:
            raise InfeasibleError(f"row {i} has no feasible probabilities for rho={rho}, tbar={tbar}")

        probs[i, neighbors] = f_row + solution.x[:k]
        probs[i, i] = solution.x[k]
        _balance_ties(probs[i], neighbors, times[i])

    return PolicyMatrix(probs)


def build_gossip_expectation(
    policy: PolicyMatrix, alpha: float, rho: float, topology: Topology
) -> GossipExpectation:
    """Expected quadratic form E[D^T D] of one global update step, with p_i = 1/M."""
    m = topology.node_count
    p = policy.probs
    d = topology.adjacency.astype(float)
    d_sum = d + d.T
    off_diag = ~np.eye(m, dtype=bool)

    missing = (d_sum > 0) & off_diag & (p <= 0)
    if missing.any():
        i, k = np.argwhere(missing)[0]
        raise ZeroProbabilityEdgeError((int(i), int(k)))

    active = off_diag & (p > 0) & (d_sum > 0)
    gamma = np.divide(d_sum, 2.0 * p, out=np.zeros((m, m)), where=active)
    node_prob = 1.0 / m
    first = node_prob * p * gamma
    second = node_prob * p * gamma ** 2
    ar = alpha * rho

    y = ar * (first + first.T) - ar ** 2 * (second + second.T)
    np.fill_diagonal(y, 0.0)
    diag = 1.0 - 2.0 * ar * first.sum(axis=1) + ar ** 2 * (second + second.T).sum(axis=1)
    y[np.diag_indices(m)] = diag
    return GossipExpectation(y, alpha, rho)


def second_largest_eigenvalue(y: Union[GossipExpectation, np.ndarray], tol: float = EIGEN_TOL) -> float:
    matrix = y.y if isinstance(y, GossipExpectation) else np.asarray(y, dtype=float)
    if matrix.shape[0] < 2:
        raise PolicyEngineError("lambda2 needs at least 2 nodes")
    result = deflated_power_iteration(matrix, tol=tol)
    if result.converged:
        return result.value
    logger.debug("Power iteration stalled, using Jacobi", residual=result.residual)
    try:
        return jacobi_second_eigenvalue(matrix)
    except ArithmeticError as e:
        raise NotConvergedError(str(e)) from e


def convergence_time(tbar: float, lambda2: float, epsilon: float) -> float:
    if not 0.0 < lambda2 < 1.0:
        raise DegenerateLambdaError(lambda2)
    if not 0.0 < epsilon < 1.0:
        raise PolicyEngineError(f"epsilon must be in (0, 1), got {epsilon}")
    return tbar * math.log(epsilon) / math.log(lambda2)


def generate_policy_matrix(
    alpha: float,
    outer_rounds: int,
    inner_rounds: int,
    times: np.ndarray,
    topology: Topology,
    epsilon: float = DEFAULT_EPSILON,
    margin: float = DEFAULT_MARGIN,
) -> PolicyResult:
    """Nested grid search over (rho, t-bar) for the fastest estimated convergence."""
    if outer_rounds < 1 or inner_rounds < 1:
        raise PolicyEngineError("outer_rounds and inner_rounds must be >= 1")
    if topology.node_count < 2:
        raise PolicyEngineError("policy generation needs at least 2 nodes")
    times = np.asarray(times, dtype=float)
    rho_low, rho_high = rho_interval(alpha)

    best: Optional[Tuple[Tuple[float, float, float], PolicyMatrix, GossipExpectation, float, float]] = None
    evaluated = feasible = empty = 0
    for rho in np.linspace(rho_low, rho_high, outer_rounds + 1)[1:]:
        rho = float(rho)
        intervals = feasible_intervals(alpha, rho, times, topology)
        if intervals.is_empty:
            empty += 1
            continue
        for tbar in intervals.tbar_grid(inner_rounds):
            tbar = float(tbar)
            evaluated += 1
            try:
                policy = solve_policy_lp(alpha, rho, tbar, times, topology, margin)
                gossip = build_gossip_expectation(policy, alpha, rho, topology)
                lambda2 = second_largest_eigenvalue(gossip)
            except (InfeasibleError, ZeroProbabilityEdgeError):
                continue
            except (NumericalFailureError, NotConvergedError) as e:
                logger.warning("Skipping grid point", rho=rho, tbar=tbar, error=str(e))
                continue
            feasible += 1
            try:
                t_conv = convergence_time(tbar, lambda2, epsilon)
            except DegenerateLambdaError:
                continue
            key = (t_conv, lambda2, rho)
            if best is None or key < best[0]:
                best = (key, policy, gossip, tbar, intervals.tbar_low)

    if best is None:
        logger.warning(
            "No feasible policy", alpha=alpha, outer_rounds=outer_rounds,
            inner_rounds=inner_rounds, empty_intervals=empty, evaluated=evaluated,
        )
        raise NoFeasiblePolicyError(evaluated)

    (t_conv, lambda2, rho), policy, gossip, tbar, tbar_low = best
    ratio = None
    if topology.node_count > 3:
        try:
            high = tbar_interval(alpha, rho, times, topology)[1]
            ratio = approximation_ratio_bound(topology.node_count, gossip.min_positive_entry(), high, tbar_low)
        except PolicyEngineError:
            ratio = None

    logger.info(
        "Policy selected", rho=rho, tbar=tbar, lambda2=lambda2,
        t_convergence=t_conv, evaluated=evaluated, feasible=feasible,
    )
    return PolicyResult(
        policy=policy, rho=rho, tbar=tbar, lambda2=lambda2, t_convergence=t_conv,
        alpha=alpha, gossip=gossip, evaluated=evaluated, feasible=feasible,
        tbar_low=tbar_low, approximation_ratio=ratio,
    )


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    passed: bool
    worst_violation: float


@dataclass(frozen=True)
class FeasibilityReport:
    checks: List[ConstraintCheck] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def get(self, name: str) -> ConstraintCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> Dict[str, object]:
        return {
            "all_passed": self.all_passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "worst_violation": c.worst_violation}
                for c in self.checks
            ],
        }


def per_node_iteration_time(policy: PolicyMatrix, times: np.ndarray, topology: Topology) -> np.ndarray:
    """Expected iteration time per node, self-iterations contributing zero."""
    d = topology.adjacency.astype(float)
    return np.sum(np.asarray(times, dtype=float) * policy.probs * d, axis=1)


def check_feasibility(
    policy: PolicyMatrix,
    alpha: float,
    rho: float,
    times: np.ndarray,
    topology: Topology,
    margin: float = DEFAULT_MARGIN,
) -> FeasibilityReport:
    p = policy.probs
    m = topology.node_count
    edge = _edge_mask(topology)
    off_edge = ~edge & ~np.eye(m, dtype=bool)

    row_violation = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
    negative = float(max(0.0, -p.min()))
    support = float(np.max(np.abs(p[off_edge]), initial=0.0))
    floor = probability_floor(alpha, rho, topology, margin)
    shortfall = float(np.max(np.where(edge, floor - p, 0.0), initial=0.0))
    shortfall = max(shortfall, 0.0)

    node_times = per_node_iteration_time(policy, times, topology)
    top = float(np.max(np.abs(node_times)))
    spread = float((node_times.max() - node_times.min()) / top) if top > 0 else 0.0

    return FeasibilityReport([
        ConstraintCheck("row_stochastic", row_violation <= ROW_SUM_TOL, row_violation),
        ConstraintCheck("nonnegative", negative <= 1e-12, negative),
        ConstraintCheck("edge_support", support <= 1e-12, support),
        ConstraintCheck("lower_bounds", shortfall <= 1e-12, shortfall),
        ConstraintCheck("equal_time", spread <= EQUAL_TIME_RTOL, spread),
    ])


def expected_selection_probabilities(policy: PolicyMatrix, times: np.ndarray, topology: Topology) -> np.ndarray:
    """Share of global steps taken by each node, proportional to its iteration frequency."""
    if topology.node_count == 1:
        return np.ones(1)
    node_times = per_node_iteration_time(policy, times, topology)
    if np.any(node_times <= 0):
        raise ZeroIterationTimeError(f"nodes {np.flatnonzero(node_times <= 0).tolist()} have zero iteration time")
    freq = 1.0 / node_times
    return freq / freq.sum()


def approximation_ratio_bound(node_count: int, a: float, high: float, low: float) -> float:
    """Worst-case ratio between the grid-search objective and the true optimum."""
    if node_count <= 3:
        raise InvalidMError(f"the bound needs more than 3 nodes, got {node_count}")
    if not 0.0 < a < 1.0:
        raise InvalidAError(f"a must be in (0, 1), got {a}")
    if not 0.0 < low <= high:
        raise PolicyEngineError(f"need 0 < L <= U, got L={low}, U={high}")
    base = 1.0 - 2.0 * a + a ** (node_count + 1)
    if base <= 0.0 or 1.0 - 2.0 * a + a ** node_count <= 0.0:
        raise InvalidAError(f"a={a} puts the logarithm arguments out of domain for M={node_count}")
    numerator = math.log((node_count - 1) / (node_count - 3))
    denominator = math.log1p(a ** node_count * (1.0 - a) / base)
    return (high / low) * numerator / denominator
