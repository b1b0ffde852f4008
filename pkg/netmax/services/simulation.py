"""Discrete-event simulation of asynchronous consensus SGD.

Workers pick a neighbor from their policy row, spend the link's iteration
time, then apply a local gradient step mixed with the neighbor's model. A
monitor periodically collects the workers' smoothed link times, asks the
policy engine for a new policy and hands it to every worker; a worker
switches at the start of its next iteration. Events fire in time order,
ties broken by kind (slowdown change, monitor cycle, worker completion) and
then node id, so a (config, seed) pair always yields the same record.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Any, List, Optional, Tuple

import numpy as np
import structlog

from netmax.core.exceptions import NetMaxError
from netmax.models.experiment import ExperimentConfig, ProtocolName
from netmax.models.records import PolicyChange, RunRecord, SlowdownChange, TraceRow
from netmax.services.consensus import QuadraticLoss, global_objective, local_gradient, mixing_update, UpdateParams
from netmax.services.environment import RunInputs, build_run_inputs
from netmax.services.metrics import consensus_spread, deviation
from netmax.services.network_model import LinkTimeModel, Topology
from netmax.services.policy_engine import (
    NoFeasiblePolicyError,
    PolicyMatrix,
    PolicyResult,
    generate_policy_matrix,
    per_node_iteration_time,
)

logger = structlog.get_logger(__name__)

UNIFORM_MIXING_WEIGHT = 0.5
MONITORED = (ProtocolName.NETMAX, ProtocolName.UNIFORM_ASYNC_WITH_MONITOR)
# protocols mixing with weight alpha*rho*d_sum/(2*p_im) instead of one half
POLICY_WEIGHTED = (ProtocolName.NETMAX, ProtocolName.NETMAX_UNIFORM)


class SimulationError(NetMaxError):
    """Base exception for simulation errors."""
    pass


class BetaOutOfRangeError(SimulationError):
    pass


def ema_update(prev: Optional[float], observed: float, beta: float) -> float:
    """beta * prev + (1 - beta) * observed; an unset ``prev`` (None) takes the observation."""
    if not 0.0 <= beta <= 1.0:
        raise BetaOutOfRangeError(f"beta must be in [0, 1], got {beta}")
    if prev is None:
        return observed
    return beta * prev + (1.0 - beta) * observed


class EventKind(IntEnum):
    SLOWDOWN_CHANGE = 0
    MONITOR_CYCLE = 1
    WORKER_COMPLETE = 2
    WORKER_START = 3


@dataclass(frozen=True, order=True)
class SimEvent:
    fire_time: float
    kind: EventKind
    node: int
    seq: int
    payload: Any = field(default=None, compare=False)


@dataclass
class InFlight:
    neighbor: int
    started: float
    duration: float
    p_im: float
    rho: float
    snapshot: Optional[np.ndarray] = None


@dataclass
class WorkerState:
    node: int
    model: np.ndarray
    probs: np.ndarray
    rho: float
    ema_times: np.ndarray
    observed: np.ndarray
    local_step: int = 0
    busy_until: float = 0.0
    busy_time: float = 0.0
    pending: Optional[Tuple[np.ndarray, float]] = None
    in_flight: Optional[InFlight] = None

    @classmethod
    def create(cls, node: int, model: np.ndarray, probs: np.ndarray, rho: float) -> "WorkerState":
        m = probs.size
        return cls(node, np.array(model, dtype=float), np.array(probs, dtype=float), rho,
                   np.zeros(m), np.zeros(m, dtype=bool))

    def sample_neighbor(self, u: float) -> int:
        """Inverse-CDF draw over nodes 0..M-1 in index order."""
        cdf = np.cumsum(self.probs)
        idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
        if idx >= self.probs.size or self.probs[idx] <= 0:
            idx = int(np.flatnonzero(self.probs > 0)[-1])
        return idx

    def ema_entry(self, m: int) -> Optional[float]:
        return float(self.ema_times[m]) if self.observed[m] else None


@dataclass
class SimEnvironment:
    topology: Topology
    link_model: LinkTimeModel
    losses: List[QuadraticLoss]
    alpha: float
    beta: float
    protocol: ProtocolName
    read_at_start: bool = False
    workers: List[WorkerState] = field(default_factory=list)
    _seq: Any = field(default_factory=itertools.count, repr=False)

    def next_seq(self) -> int:
        return next(self._seq)

    def mixing_weight(self, i: int, flight: InFlight) -> float:
        if self.protocol in POLICY_WEIGHTED:
            m = flight.neighbor
            d_sum = float(self.topology.adjacency[i, m] + self.topology.adjacency[m, i])
            return UpdateParams(self.alpha, flight.rho, d_sum, flight.p_im).mixing_weight
        return UNIFORM_MIXING_WEIGHT


def worker_iteration(state: WorkerState, env: SimEnvironment, rng: np.random.Generator, clock: float) -> SimEvent:
    """Start one iteration: adopt a pending policy, pick a neighbor and schedule completion."""
    if state.in_flight is not None or state.busy_until > clock:
        raise SimulationError(f"worker {state.node} is busy until {state.busy_until}")
    if state.pending is not None:
        state.probs, state.rho = state.pending
        state.pending = None

    i = state.node
    m = state.sample_neighbor(float(rng.random()))
    duration = env.link_model.iteration_time(i, m, clock)
    snapshot = None
    if env.read_at_start and m != i:
        snapshot = env.workers[m].model.copy()
    state.in_flight = InFlight(m, clock, duration, float(state.probs[m]), state.rho, snapshot)
    state.busy_until = clock + duration
    return SimEvent(state.busy_until, EventKind.WORKER_COMPLETE, i, env.next_seq())


def complete_iteration(state: WorkerState, env: SimEnvironment, rng: np.random.Generator) -> InFlight:
    """Apply the gradient and mixing step of the in-flight iteration."""
    flight = state.in_flight
    if flight is None:
        raise SimulationError(f"worker {state.node} has no iteration in flight")
    i, m = state.node, flight.neighbor
    grad = local_gradient(env.losses[i], state.model, rng)
    if m == i:
        state.model = state.model - env.alpha * grad
    else:
        x_m = flight.snapshot if flight.snapshot is not None else env.workers[m].model
        state.model = mixing_update(state.model, grad, x_m, env.alpha, env.mixing_weight(i, flight))
        state.ema_times[m] = ema_update(state.ema_entry(m), flight.duration, env.beta)
        state.observed[m] = True
        state.busy_time += flight.duration
    state.local_step += 1
    state.in_flight = None
    return flight


@lru_cache(maxsize=512)
def _cached_policy(
    alpha: float, outer: int, inner: int, epsilon: float, margin: float,
    times_key: bytes, adjacency_key: bytes, node_count: int,
) -> PolicyResult:
    times = np.frombuffer(times_key, dtype=float).reshape(node_count, node_count)
    adjacency = np.frombuffer(adjacency_key, dtype=np.int64).reshape(node_count, node_count)
    return generate_policy_matrix(alpha, outer, inner, times, Topology(adjacency), epsilon, margin)


def cached_policy(
    alpha: float, outer: int, inner: int, times: np.ndarray, topology: Topology,
    epsilon: float, margin: float,
) -> PolicyResult:
    """``generate_policy_matrix`` memoised on the exact time matrix."""
    times = np.ascontiguousarray(times, dtype=float)
    adjacency = np.ascontiguousarray(topology.adjacency, dtype=np.int64)
    return _cached_policy(alpha, outer, inner, epsilon, margin,
                          times.tobytes(), adjacency.tobytes(), topology.node_count)


@dataclass
class MonitorState:
    period: float
    alpha: float
    outer_rounds: int
    inner_rounds: int
    epsilon: float
    margin: float
    rho: float
    time_matrix: Optional[np.ndarray] = None
    policy: Optional[PolicyResult] = None
    lambda_history: List[Tuple[float, float]] = field(default_factory=list)
    cycles: int = 0
    failures: int = 0

    @property
    def lambda_max(self) -> Optional[float]:
        return max(v for _, v in self.lambda_history) if self.lambda_history else None


def collect_time_matrix(workers: List[WorkerState], link_model: LinkTimeModel) -> np.ndarray:
    """Workers' smoothed link times, never-observed edges filled with base times."""
    times = link_model.base_time_matrix()
    for w in workers:
        times[w.node, w.observed] = w.ema_times[w.observed]
    return times


def monitor_cycle(
    mon: MonitorState, workers: List[WorkerState], env: SimEnvironment, clock: float
) -> Optional[PolicyResult]:
    """Regenerate the policy from collected times and deliver it to every worker.

    On ``NoFeasiblePolicyError`` the previous policy stays in force.
    """
    mon.cycles += 1
    times = collect_time_matrix(workers, env.link_model)
    mon.time_matrix = times
    try:
        result = cached_policy(mon.alpha, mon.outer_rounds, mon.inner_rounds, times,
                               env.topology, mon.epsilon, mon.margin)
    except NoFeasiblePolicyError as e:
        mon.failures += 1
        logger.warning("Monitor kept previous policy", clock=clock, evaluated=e.evaluated)
        return None
    mon.policy = result
    mon.rho = result.rho
    mon.lambda_history.append((clock, result.lambda2))
    for w in workers:
        w.pending = (result.policy.row(w.node), result.rho)
    logger.debug("Monitor delivered policy", clock=clock, rho=result.rho, lambda2=result.lambda2)
    return result


def initial_policy(topology: Topology, protocol: ProtocolName) -> PolicyMatrix:
    """Uniform over neighbors and self until a monitor replaces it; neighbors only for plain gossip."""
    return PolicyMatrix.uniform_neighbors(topology, include_self=protocol is not ProtocolName.UNIFORM_ASYNC)


class Simulation:
    """One run of an asynchronous protocol from a validated config."""

    def __init__(self, config: ExperimentConfig, inputs: Optional[RunInputs] = None):
        if config.protocol.name is ProtocolName.SYNC_ALLREDUCE:
            raise SimulationError("sync-allreduce runs through run_allreduce")
        self.config = config
        self.inputs = inputs or build_run_inputs(config)
        proto = config.protocol
        self.env = SimEnvironment(
            topology=self.inputs.topology,
            link_model=self.inputs.link_model,
            losses=self.inputs.losses,
            alpha=proto.alpha,
            beta=proto.beta,
            protocol=proto.name,
            read_at_start=proto.neighbor_read == "start",
        )
        probs = initial_policy(self.inputs.topology, proto.name)
        self.env.workers = [
            WorkerState.create(i, self.inputs.initial_models[i], probs.row(i), proto.initial_rho)
            for i in range(self.inputs.topology.node_count)
        ]
        self.rngs = [np.random.default_rng(s) for s in self.inputs.worker_seeds]
        self.monitor: Optional[MonitorState] = None
        if proto.name in MONITORED:
            self.monitor = MonitorState(
                period=proto.monitor_period, alpha=proto.alpha, outer_rounds=proto.outer_rounds,
                inner_rounds=proto.inner_rounds, epsilon=proto.epsilon, margin=proto.margin,
                rho=proto.initial_rho,
            )
        self.queue: List[SimEvent] = []
        self.record = RunRecord(
            name=config.output.name or config.name,
            protocol=proto.name.value,
            seed=config.seed,
            config=config.model_dump(mode="json"),
            x_star=self.inputs.x_star.tolist(),
            alpha=proto.alpha,
            noise_sigma=config.loss.noise_sigma,
            learning_rate_ok=self.inputs.learning_rate.ok,
            warnings=[self.inputs.learning_rate.message] if self.inputs.learning_rate.message else [],
        )
        self.step = 0

    @property
    def models(self) -> np.ndarray:
        return np.stack([w.model for w in self.env.workers])

    def _objective_rho(self) -> float:
        return self.monitor.rho if self.monitor is not None else self.config.protocol.initial_rho

    def _row(self, clock: float, node=None, neighbor=None, iter_time=None) -> TraceRow:
        xs = self.models
        return TraceRow(
            k=self.step, clock=clock, node=node, neighbor=neighbor, iter_time=iter_time,
            deviation=deviation(xs, self.inputs.x_star),
            spread=consensus_spread(xs),
            objective=global_objective(xs, self.inputs.losses, self._objective_rho(), self.inputs.topology),
        )

    def _push(self, event: SimEvent) -> None:
        heapq.heappush(self.queue, event)

    def _schedule_initial(self) -> None:
        for event in self.inputs.link_model.slowdown_schedule:
            self._push(SimEvent(event.start_time, EventKind.SLOWDOWN_CHANGE, -1, self.env.next_seq(), event))
        if self.monitor is not None:
            self._push(SimEvent(0.0, EventKind.MONITOR_CYCLE, -1, self.env.next_seq()))
        for w in self.env.workers:
            self._push(SimEvent(0.0, EventKind.WORKER_START, w.node, self.env.next_seq()))

    def _on_monitor(self, clock: float) -> None:
        result = monitor_cycle(self.monitor, self.env.workers, self.env, clock)
        if result is not None:
            self.record.policy_changes.append(PolicyChange(
                clock=clock, rho=result.rho, tbar=result.tbar, lambda2=result.lambda2,
                t_convergence=result.t_convergence, probs=result.policy.probs.tolist(),
            ))
        self._push(SimEvent(clock + self.monitor.period, EventKind.MONITOR_CYCLE, -1, self.env.next_seq()))

    def _on_complete(self, node: int, clock: float) -> Optional[str]:
        worker = self.env.workers[node]
        flight = complete_iteration(worker, self.env, self.rngs[node])
        self.step += 1
        row = self._row(clock, node, flight.neighbor, flight.duration)
        self.record.trace.append(row)
        stop = self.config.stop
        if stop.max_steps is not None and self.step >= stop.max_steps:
            return "max_steps"
        if stop.target_deviation is not None and row.deviation < stop.target_deviation:
            return "target_deviation"
        self._push(worker_iteration(worker, self.env, self.rngs[node], clock))
        return None

    def run(self) -> RunRecord:
        stop = self.config.stop
        self.record.trace.append(self._row(0.0))
        reason = None
        clock = 0.0
        if stop.max_steps == 0:
            reason = "max_steps"
        elif stop.target_deviation is not None and self.record.trace[0].deviation < stop.target_deviation:
            reason = "target_deviation"
        else:
            self._schedule_initial()

        while reason is None and self.queue:
            event = heapq.heappop(self.queue)
            if stop.max_time is not None and event.fire_time > stop.max_time:
                reason = "max_time"
                clock = stop.max_time
                break
            clock = event.fire_time
            if event.kind is EventKind.SLOWDOWN_CHANGE:
                self.record.slowdown_changes.append(
                    SlowdownChange(clock=clock, link=event.payload.link, factor=event.payload.factor)
                )
                logger.debug("Slowdown change", clock=clock, link=event.payload.link, factor=event.payload.factor)
            elif event.kind is EventKind.MONITOR_CYCLE:
                self._on_monitor(clock)
            elif event.kind is EventKind.WORKER_START:
                self._push(worker_iteration(self.env.workers[event.node], self.env, self.rngs[event.node], clock))
            else:
                reason = self._on_complete(event.node, clock)
        return self._finish(reason or "exhausted", clock)

    def _finish(self, reason: str, clock: float) -> RunRecord:
        record = self.record
        workers = self.env.workers
        record.stop_reason = reason
        record.end_clock = clock
        record.final_models = self.models.tolist()
        record.node_steps = [w.local_step for w in workers]
        record.realized_iteration_time = [
            w.busy_time / w.local_step if w.local_step else None for w in workers
        ]
        probs = PolicyMatrix(np.stack([w.pending[0] if w.pending else w.probs for w in workers]))
        record.predicted_iteration_time = per_node_iteration_time(
            probs, self.inputs.link_model.time_matrix(clock), self.inputs.topology
        ).tolist()
        if self.monitor is not None:
            record.lambda_history = list(self.monitor.lambda_history)
            record.monitor_cycles = self.monitor.cycles
            record.monitor_failures = self.monitor.failures
        logger.info(
            "Run finished", name=record.name, protocol=record.protocol, seed=record.seed,
            steps=self.step, clock=clock, stop_reason=reason,
            final_deviation=record.trace[-1].deviation,
        )
        return record


def allreduce_round_time(link_model: LinkTimeModel, clock: float, scope: str) -> float:
    """Barrier round: the slowest node's compute plus its slowest paid link."""
    topology = link_model.topology
    ring = set(topology.ring_edges()) if scope == "ring" else None
    slowest = 0.0
    for i in range(topology.node_count):
        links = [
            link_model.effective_comm_time((i, m), clock)
            for m in topology.neighbors(i)
            if ring is None or (min(i, m), max(i, m)) in ring
        ]
        slowest = max(slowest, float(link_model.compute_time[i]) + max(links, default=0.0))
    return slowest


def run_allreduce(config: ExperimentConfig, inputs: Optional[RunInputs] = None) -> RunRecord:
    """Synchronous baseline: every round all nodes step, then models become their exact mean."""
    inputs = inputs or build_run_inputs(config)
    proto, stop = config.protocol, config.stop
    rngs = [np.random.default_rng(s) for s in inputs.worker_seeds]
    xs = np.array(inputs.initial_models, dtype=float)
    m = inputs.topology.node_count

    def row(k: int, clock: float, iter_time: Optional[float]) -> TraceRow:
        return TraceRow(
            k=k, clock=clock, iter_time=iter_time,
            deviation=deviation(xs, inputs.x_star), spread=consensus_spread(xs),
            objective=global_objective(xs, inputs.losses, proto.initial_rho, inputs.topology),
        )

    record = RunRecord(
        name=config.output.name or config.name,
        protocol=proto.name.value,
        seed=config.seed,
        config=config.model_dump(mode="json"),
        x_star=inputs.x_star.tolist(),
        alpha=proto.alpha,
        noise_sigma=config.loss.noise_sigma,
        learning_rate_ok=inputs.learning_rate.ok,
        warnings=[inputs.learning_rate.message] if inputs.learning_rate.message else [],
    )
    record.trace.append(row(0, 0.0, None))

    clock, k, reason = 0.0, 0, None
    busy = np.zeros(m)
    while reason is None:
        if stop.max_steps is not None and k >= stop.max_steps:
            reason = "max_steps"
            break
        if stop.target_deviation is not None and record.trace[-1].deviation < stop.target_deviation:
            reason = "target_deviation"
            break
        duration = allreduce_round_time(inputs.link_model, clock, proto.allreduce_scope)
        if stop.max_time is not None and clock + duration > stop.max_time:
            reason = "max_time"
            clock = stop.max_time
            break
        stepped = np.stack([
            xs[i] - proto.alpha * local_gradient(inputs.losses[i], xs[i], rngs[i]) for i in range(m)
        ])
        xs = np.repeat(stepped.mean(axis=0, keepdims=True), m, axis=0)
        clock += duration
        busy += duration
        k += 1
        record.trace.append(row(k, clock, duration))

    record.stop_reason = reason
    record.end_clock = clock
    record.final_models = xs.tolist()
    record.node_steps = [k] * m
    record.realized_iteration_time = [float(b / k) if k else None for b in busy]
    record.slowdown_changes = [
        SlowdownChange(clock=e.start_time, link=e.link, factor=e.factor)
        for e in inputs.link_model.slowdown_schedule if e.start_time <= clock
    ]
    logger.info(
        "Run finished", name=record.name, protocol=record.protocol, seed=record.seed,
        steps=k, clock=clock, stop_reason=reason, final_deviation=record.trace[-1].deviation,
    )
    return record


def run_simulation(config: ExperimentConfig) -> RunRecord:
    """Run the protocol named in the config."""
    if config.protocol.name is ProtocolName.SYNC_ALLREDUCE:
        return run_allreduce(config)
    return Simulation(config).run()


BASELINES = (
    ProtocolName.UNIFORM_ASYNC,
    ProtocolName.UNIFORM_ASYNC_WITH_MONITOR,
    ProtocolName.SYNC_ALLREDUCE,
    ProtocolName.NETMAX_UNIFORM,
)


def run_baseline(config: ExperimentConfig, variant: ProtocolName) -> RunRecord:
    variant = ProtocolName(variant)
    if variant not in BASELINES:
        raise SimulationError(f"'{variant.value}' is not a baseline protocol")
    return run_simulation(config.with_protocol(variant))
