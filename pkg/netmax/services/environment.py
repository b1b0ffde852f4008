"""Turns an ``ExperimentConfig`` into the objects a run needs."""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import structlog

from netmax.models.experiment import ExperimentConfig, LinkTimesSpec, SlowdownSpec, StopSpec, TopologySpec
from netmax.services.consensus import (
    LearningRateCheck,
    QuadraticLoss,
    build_losses,
    initial_models,
    optimum_oracle,
    validate_learning_rate,
)
from netmax.services.network_model import (
    LinkTimeModel,
    SlowdownEvent,
    Topology,
    generate_slowdown_schedule,
    validate_topology,
)

logger = structlog.get_logger(__name__)

# Cap on generated slowdown events when only a step budget bounds the run
MAX_GENERATED_ROTATIONS = 10_000


def build_topology(spec: TopologySpec) -> Topology:
    if spec.kind == "ring":
        topology = Topology.ring(spec.node_count)
    elif spec.kind == "fully_connected":
        topology = Topology.fully_connected(spec.node_count)
    elif spec.kind == "random":
        topology = Topology.random_connected(spec.node_count, spec.edge_probability, spec.seed)
    else:
        topology = Topology(np.asarray(spec.adjacency))
    validate_topology(topology)
    return topology


def build_base_comm(spec: LinkTimesSpec, topology: Topology) -> np.ndarray:
    m = topology.node_count
    if isinstance(spec.comm_time, list):
        comm = np.asarray(spec.comm_time, dtype=float)
    else:
        comm = np.full((m, m), float(spec.comm_time))
    if spec.comm_jitter > 0:
        rng = np.random.default_rng(spec.seed)
        for i, k in topology.edges():
            factor = rng.uniform(1.0, 1.0 + spec.comm_jitter)
            comm[i, k] *= factor
            comm[k, i] = comm[i, k]
    for override in spec.link_overrides:
        i, k = override.link
        comm[i, k] = comm[k, i] = override.comm_time
    return comm


def run_horizon(stop: StopSpec, slowest_iteration: float, rotation_interval: float) -> float:
    if stop.max_time is not None:
        return stop.max_time
    cap = rotation_interval * MAX_GENERATED_ROTATIONS
    if stop.max_steps is not None:
        return min(stop.max_steps * slowest_iteration, cap)
    return cap


def build_slowdown_schedule(
    spec: SlowdownSpec, topology: Topology, horizon: float, run_seed: int
) -> List[SlowdownEvent]:
    if not spec.enabled:
        return []
    if spec.events is not None:
        return [SlowdownEvent(e.start_time, e.link, e.factor) for e in spec.events]
    seed = spec.seed if spec.seed is not None else run_seed
    return generate_slowdown_schedule(
        topology, spec.factor_low, spec.factor_high, spec.rotation_interval,
        horizon, start_time=spec.start_time, seed=seed,
    )


def build_link_model(config: ExperimentConfig, topology: Topology) -> LinkTimeModel:
    compute = np.asarray(config.link_times.compute_time, dtype=float)
    serial = config.link_times.execution == "serial"
    comm = build_base_comm(config.link_times, topology)
    static = LinkTimeModel(topology, compute, comm, serial=serial)
    base = static.base_time_matrix()
    slowest = float(max(base.max(), static.compute_time.max())) * config.slowdown.factor_high
    horizon = run_horizon(config.stop, slowest, config.slowdown.rotation_interval)
    schedule = build_slowdown_schedule(config.slowdown, topology, horizon, config.seed)
    return LinkTimeModel(topology, compute, comm, tuple(schedule), serial=serial)


@dataclass
class RunInputs:
    topology: Topology
    link_model: LinkTimeModel
    losses: List[QuadraticLoss]
    x_star: np.ndarray
    initial_models: np.ndarray
    learning_rate: LearningRateCheck
    worker_seeds: List[np.random.SeedSequence]


def build_run_inputs(config: ExperimentConfig, seed: Optional[int] = None) -> RunInputs:
    """Topology, timing, losses, x* and the seeded initial state of one run."""
    seed = config.seed if seed is None else seed
    topology = build_topology(config.topology)
    link_model = build_link_model(config.with_seed(seed), topology)
    losses = build_losses(config.loss, topology.node_count)
    x_star = optimum_oracle(losses)

    init_seq, *worker_seqs = np.random.SeedSequence(seed).spawn(topology.node_count + 1)
    models = initial_models(
        x_star, topology.node_count, config.loss.init_mode, config.loss.init_scale,
        np.random.default_rng(init_seq),
    )
    check = validate_learning_rate(config.protocol.alpha, losses)
    if not check.ok:
        logger.warning("Learning rate outside the convergence range", alpha=check.alpha, limit=check.limit)
    return RunInputs(topology, link_model, losses, x_star, models, check, worker_seqs)
