"""Property suites run by ``netmax verify``.

Each property is a small self-contained experiment returning pass/fail and a
one-line detail. Suites: policy, consensus, sim, bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal, localcontext
from typing import Callable, Dict, List, Optional, Tuple

import networkx as nx
import numpy as np
import structlog

from netmax.core.config import get_settings, parse_experiment_config
from netmax.models.experiment import ExperimentConfig
from netmax.services.consensus import (
    QuadraticLoss,
    UpdateParams,
    optimum_oracle,
    two_step_update,
    update_operator,
)
from netmax.services.metrics import (
    DYNAMIC,
    STATIC,
    DeviationTrace,
    check_bound_trace,
    link_usage,
    mean_trace,
    running_lambda_max,
    theorem_bound,
)
from netmax.services.network_model import Topology
from netmax.services.policy_engine import (
    DEFAULT_MARGIN,
    InfeasibleError,
    InvalidMError,
    PolicyMatrix,
    approximation_ratio_bound,
    build_gossip_expectation,
    check_feasibility,
    generate_policy_matrix,
    second_largest_eigenvalue,
    solve_policy_lp,
    tbar_interval,
)
from netmax.services.simulation import run_simulation
from netmax.services.spectral import jacobi_eigenvalues, shifted_complement_operator

logger = structlog.get_logger(__name__)

SUITES = ("policy", "consensus", "sim", "bounds")


@dataclass(frozen=True)
class PropertyResult:
    suite: str
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class VerifyContext:
    margin: float = DEFAULT_MARGIN
    topology_count: int = 200
    seed_count: int = 20


PropertyFn = Callable[[VerifyContext], Tuple[bool, str]]
_REGISTRY: Dict[str, List[Tuple[str, PropertyFn]]] = {suite: [] for suite in SUITES}


def _property(suite: str, name: str):
    def register(fn: PropertyFn) -> PropertyFn:
        _REGISTRY[suite].append((name, fn))
        return fn
    return register


def small_config(**sections) -> ExperimentConfig:
    document = {
        "name": "verify",
        "topology": {"kind": "fully_connected", "node_count": 4},
        "link_times": {"compute_time": 1.0, "comm_time": 1.0},
        "loss": {"dim": 3, "mu": 1.0, "lips": 1.0, "noise_sigma": 0.0},
        "protocol": {"alpha": 1.0, "outer_rounds": 16, "inner_rounds": 16, "monitor_period": 1000.0},
        "stop": {"max_time": None, "max_steps": 60},
    }
    for key, value in sections.items():
        document[key] = {**document.get(key, {}), **value}
    return parse_experiment_config(document)


# policy


@_property("policy", "gossip_golden_values")
def _golden(ctx: VerifyContext) -> Tuple[bool, str]:
    topo = Topology.fully_connected(2)
    gossip = build_gossip_expectation(PolicyMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.1, 1.0, topo)
    expected = np.array([[0.91, 0.09], [0.09, 0.91]])
    lam = second_largest_eigenvalue(gossip)
    err = max(float(np.abs(gossip.y - expected).max()), abs(lam - 0.82))
    return err <= 1e-12, f"max error {err:.2e}"


def _random_instance(rng: np.random.Generator) -> Tuple[Topology, np.ndarray]:
    m = int(rng.integers(3, 9))
    topology = Topology.random_connected(m, float(rng.uniform(0.3, 0.9)), int(rng.integers(2**31)))
    times = rng.uniform(0.5, 2.0, size=(m, m))
    times = np.where(topology.adjacency == 1, (times + times.T) / 2.0, 0.0)
    return topology, times


def _lp_policy(topology: Topology, times: np.ndarray, alpha: float, margin: float) -> Optional[Tuple[PolicyMatrix, float]]:
    """Some LP policy for the instance: smallest grid rho, t-bar scanned down from U."""
    for rho in np.linspace(0.0, 0.5 / alpha, 65)[1:4]:
        low, high = tbar_interval(alpha, rho, times, topology)
        if low > high:
            continue
        for tbar in np.linspace(low, high, 5)[::-1][:-1]:
            try:
                return solve_policy_lp(alpha, float(rho), float(tbar), times, topology, margin), float(rho)
            except InfeasibleError:
                continue
    return None


@_property("policy", "gossip_matrix_properties")
def _gossip_properties(ctx: VerifyContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(20240601)
    alpha = 0.1
    checked = 0
    for _ in range(ctx.topology_count):
        topology, times = _random_instance(rng)
        found = _lp_policy(topology, times, alpha, ctx.margin)
        if found is None:
            continue
        policy, rho = found
        report = check_feasibility(policy, alpha, rho, times, topology, ctx.margin)
        if not report.all_passed:
            return False, f"LP policy violates {[c.name for c in report.checks if not c.passed]}"
        y = build_gossip_expectation(policy, alpha, rho, topology).y
        if not np.allclose(y, y.T, atol=1e-12, rtol=0):
            return False, "Y is not symmetric"
        if y.min() < -1e-12:
            return False, f"Y has negative entry {y.min():.3e}"
        if np.abs(y.sum(axis=1) - 1).max() > 1e-9:
            return False, "Y is not doubly stochastic"
        support = nx.from_numpy_array((np.abs(y) > 0).astype(int) - np.eye(topology.node_count, dtype=int))
        if not nx.is_connected(support):
            return False, "support graph of Y is disconnected"
        lam = second_largest_eigenvalue(y)
        if lam >= 1 - 1e-8:
            return False, f"lambda2={lam} is not below 1"
        oracle = 2.0 * float(jacobi_eigenvalues(shifted_complement_operator(y))[-1]) - 1.0
        if abs(oracle - lam) > 1e-8:
            return False, f"power iteration {lam} disagrees with Jacobi {oracle}"
        checked += 1
    return checked > 0, f"{checked} random topologies checked"


@_property("policy", "homogeneous_policy_uniform")
def _homogeneous(ctx: VerifyContext) -> Tuple[bool, str]:
    topology = Topology.fully_connected(4)
    times = np.where(topology.adjacency == 1, 1.0, 0.0)
    result = generate_policy_matrix(0.1, 16, 16, times, topology, margin=ctx.margin)
    off = result.policy.probs[topology.adjacency == 1]
    spread = float(off.max() - off.min())
    return spread <= 1e-4, f"off-diagonal spread {spread:.2e}"


@_property("policy", "approximation_ratio_precision")
def _ratio(ctx: VerifyContext) -> Tuple[bool, str]:
    m, a, high, low = 5, Decimal("0.1"), Decimal(2), Decimal(1)
    with localcontext() as dec:
        dec.prec = 50
        num = (Decimal(m - 1) / Decimal(m - 3)).ln()
        den = (1 + a ** m * (1 - a) / (1 - 2 * a + a ** (m + 1))).ln()
        exact = float(high / low * num / den)
    got = approximation_ratio_bound(m, 0.1, 2.0, 1.0)
    try:
        approximation_ratio_bound(3, 0.1, 2.0, 1.0)
        return False, "M=3 accepted"
    except InvalidMError:
        pass
    rel = abs(got - exact) / exact
    return rel <= 1e-9, f"relative error {rel:.2e}"


# consensus


@_property("consensus", "operator_equivalence")
def _operator(ctx: VerifyContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        m = int(rng.integers(2, 7))
        i, k = (int(v) for v in rng.choice(m, size=2, replace=False))
        alpha, rho, p = rng.uniform(0.01, 0.5), rng.uniform(0.0, 1.0), rng.uniform(0.5, 1.0)
        xs = rng.standard_normal(m)
        g = rng.standard_normal()
        params = UpdateParams(alpha, rho, 2.0, p)
        stepped = xs.copy()
        stepped[i] = two_step_update(xs[i:i + 1], np.array([g]), xs[k:k + 1], params)[0]
        g_stacked = np.zeros(m)
        g_stacked[i] = g
        matrix = update_operator(i, k, alpha, rho, 1.0 / p, m) @ (xs - alpha * g_stacked)
        worst = max(worst, float(np.abs(matrix - stepped).max()))
    return worst <= 1e-12, f"max difference {worst:.2e}"


@_property("consensus", "gradient_finite_differences")
def _gradient(ctx: VerifyContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(1, 6))
        q = rng.standard_normal((dim, dim))
        loss = QuadraticLoss(q @ q.T + dim * np.eye(dim), rng.standard_normal(dim))
        x = rng.standard_normal(dim)
        h = 1e-5
        fd = np.array([
            (loss.value(x + h * e) - loss.value(x - h * e)) / (2 * h) for e in np.eye(dim)
        ])
        grad = loss.gradient(x)
        worst = max(worst, float(np.abs(fd - grad).max() / max(1.0, np.abs(grad).max())))
    return worst <= 1e-6, f"max relative error {worst:.2e}"


@_property("consensus", "communication_preserves_consensus")
def _consensus_fixed(ctx: VerifyContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(3)
    c = rng.standard_normal(3)
    params = UpdateParams(0.2, 0.5, 2.0, 0.3)
    out = two_step_update(c, np.zeros(3), c, params)
    err = float(np.abs(out - c).max())
    return err <= 1e-12, f"drift {err:.2e}"


@_property("consensus", "optimum_matches_gradient_descent")
def _optimum(ctx: VerifyContext) -> Tuple[bool, str]:
    losses = [QuadraticLoss(np.array([1.0, 2.0]), np.array([1.0, -1.0])),
              QuadraticLoss(np.array([3.0, 4.0]), np.array([-2.0, 0.5]))]
    x = np.zeros(2)
    for _ in range(10_000):
        step = sum(loss.gradient(x) for loss in losses)
        x = x - 0.1 * step
        if np.abs(step).max() < 1e-13:
            break
    err = float(np.abs(optimum_oracle(losses) - x).max())
    return err <= 1e-10, f"difference {err:.2e}"


# sim


def _record_json(config: ExperimentConfig) -> str:
    return json.dumps(run_simulation(config).model_dump(mode="json"), sort_keys=True)


@_property("sim", "determinism")
def _determinism(ctx: VerifyContext) -> Tuple[bool, str]:
    config = small_config(
        loss={"noise_sigma": 0.1, "center_spread": 0.5},
        protocol={"alpha": 0.3},
        link_times={"comm_jitter": 1.0},
        slowdown={"enabled": True, "factor_low": 2.0, "factor_high": 5.0, "rotation_interval": 5.0},
        stop={"max_time": 40.0, "max_steps": None},
    )
    same = _record_json(config) == _record_json(config)
    return same, "identical records" if same else "records differ"


@_property("sim", "event_accounting")
def _accounting(ctx: VerifyContext) -> Tuple[bool, str]:
    config = small_config(
        link_times={"compute_time": 0.2, "comm_jitter": 2.0},
        protocol={"alpha": 0.3},
        loss={"noise_sigma": 0.05},
        stop={"max_steps": 400},
    )
    record = run_simulation(config)
    clocks = [row.clock for row in record.trace]
    if any(b < a for a, b in zip(clocks, clocks[1:])):
        return False, "trace clocks decrease"
    if sum(record.node_steps) != record.steps:
        return False, f"sum of node steps {sum(record.node_steps)} != {record.steps}"
    non_self = sum(1 for row in record.trace[1:] if row.node != row.neighbor)
    if sum(link_usage(record).values()) != non_self:
        return False, "link usage does not sum to non-self iterations"
    return True, f"{record.steps} steps"


@_property("sim", "iteration_time_matches_policy")
def _iteration_time(ctx: VerifyContext) -> Tuple[bool, str]:
    config = small_config(
        link_times={"compute_time": 0.2, "comm_time": 1.0, "link_overrides": [{"link": [0, 1], "comm_time": 3.0}]},
        protocol={"alpha": 0.1},
        stop={"max_steps": 30000},
    )
    record = run_simulation(config)
    worst = 0.0
    for realized, predicted in zip(record.realized_iteration_time, record.predicted_iteration_time):
        worst = max(worst, abs(realized - predicted) / predicted)
    return worst <= 0.05, f"max relative gap {worst:.3f}"


@_property("sim", "consensus_fixed_point")
def _fixed_point(ctx: VerifyContext) -> Tuple[bool, str]:
    details = []
    for m in (2, 4, 8):
        config = small_config(topology={"node_count": m}, protocol={"alpha": 0.5, "outer_rounds": 64, "inner_rounds": 8},
                              stop={"max_steps": 60 * m})
        record = run_simulation(config)
        last = record.trace[-1]
        if last.deviation >= 1e-6 or last.spread >= 1e-6:
            return False, f"M={m}: deviation {last.deviation:.2e}, spread {last.spread:.2e}"
        details.append(f"M={m}: {last.deviation:.1e}")
    return True, ", ".join(details)


# bounds


@_property("bounds", "bound_arithmetic")
def _arithmetic(ctx: VerifyContext) -> Tuple[bool, str]:
    value = theorem_bound(STATIC, 0.82, 10, 4.0, 0.1, 1.0)
    expected = 4.0 * 0.82 ** 10 + 0.01 * 0.82 / 0.18
    return abs(value - expected) <= 1e-12, f"{value:.6f}"


def _seed_records(config: ExperimentConfig, seeds: int):
    return [run_simulation(config.with_seed(s)) for s in range(seeds)]


@_property("bounds", "deterministic_bound")
def _deterministic(ctx: VerifyContext) -> Tuple[bool, str]:
    config = small_config(stop={"max_steps": 40})
    for record in _seed_records(config, ctx.seed_count):
        lam = record.lambda_history[0][1]
        report = check_bound_trace(DeviationTrace.from_record(record), STATIC, lam, record.alpha, 0.0, slack=0.0,
                                   assumptions_met=record.learning_rate_ok)
        if not report.binding or report.violations:
            return False, f"seed {record.seed}: {report.violations} violations"
    return True, f"{ctx.seed_count} seeds, zero slack"


def noisy_config(dynamic: bool) -> ExperimentConfig:
    sections = dict(
        loss={"noise_sigma": 0.1},
        protocol={"beta": 0.5, "monitor_period": 3.0, "outer_rounds": 8, "inner_rounds": 8},
        stop={"max_steps": 120},
    )
    if dynamic:
        sections["slowdown"] = {"enabled": True, "factor_low": 2.0, "factor_high": 3.0,
                                "rotation_interval": 5.0, "start_time": 8.0}
        sections["stop"] = {"max_steps": 120, "max_time": 400.0}
    return small_config(**sections)


def noisy_bound_report(dynamic: bool, seeds: int, lam_scale: float = 1.0):
    records = _seed_records(noisy_config(dynamic), seeds)
    trace = mean_trace([DeviationTrace.from_record(r) for r in records])
    n = len(trace)
    if dynamic:
        lam = np.max([running_lambda_max(r)[:n] for r in records], axis=0)
    else:
        lam = records[0].lambda_history[0][1]
    return check_bound_trace(trace, DYNAMIC if dynamic else STATIC, np.asarray(lam) * lam_scale,
                             records[0].alpha, records[0].noise_sigma,
                             assumptions_met=all(r.learning_rate_ok for r in records))


@_property("bounds", "noisy_static_bound")
def _noisy_static(ctx: VerifyContext) -> Tuple[bool, str]:
    report = noisy_bound_report(False, ctx.seed_count)
    return report.violations == 0, f"{report.violations} violations over {ctx.seed_count} seeds"


@_property("bounds", "noisy_dynamic_bound")
def _noisy_dynamic(ctx: VerifyContext) -> Tuple[bool, str]:
    report = noisy_bound_report(True, ctx.seed_count)
    return report.violations == 0, f"{report.violations} violations over {ctx.seed_count} seeds"


@_property("bounds", "wrong_lambda_is_caught")
def _negative_control(ctx: VerifyContext) -> Tuple[bool, str]:
    report = noisy_bound_report(False, ctx.seed_count, lam_scale=0.5)
    return report.violations > 0, f"{report.violations} violations with lambda2/2"


def run_suites(
    suite: str = "all",
    margin: float = DEFAULT_MARGIN,
    topology_count: Optional[int] = None,
    seed_count: Optional[int] = None,
) -> List[PropertyResult]:
    settings = get_settings()
    ctx = VerifyContext(
        margin=margin,
        topology_count=topology_count or settings.verify_topology_count,
        seed_count=seed_count or settings.verify_seed_count,
    )
    selected = SUITES if suite == "all" else (suite,)
    results: List[PropertyResult] = []
    for name in selected:
        if name not in _REGISTRY:
            raise KeyError(f"unknown suite '{name}'")
        for prop, fn in _REGISTRY[name]:
            try:
                passed, detail = fn(ctx)
            except Exception as e:
                passed, detail = False, f"{type(e).__name__}: {e}"
            logger.info("Property checked", suite=name, property=prop, passed=passed, detail=detail)
            results.append(PropertyResult(name, prop, bool(passed), detail))
    return results
