import json

import numpy as np
import pytest

from netmax.models.experiment import ProtocolName
from netmax.services.network_model import LinkTimeModel, Topology
from netmax.services.consensus import QuadraticLoss
from netmax.services.simulation import (
    BetaOutOfRangeError,
    EventKind,
    InFlight,
    SimEnvironment,
    Simulation,
    SimulationError,
    WorkerState,
    allreduce_round_time,
    collect_time_matrix,
    complete_iteration,
    ema_update,
    monitor_cycle,
    run_baseline,
    run_simulation,
    worker_iteration,
)
from netmax.services.verification import small_config


class TestEma:
    def test_formula(self):
        assert ema_update(2.0, 1.0, 0.9) == pytest.approx(1.9)

    def test_no_memory(self):
        assert ema_update(2.0, 1.0, 0.0) == 1.0

    def test_frozen(self):
        assert ema_update(2.0, 1.0, 1.0) == 2.0

    def test_first_observation(self):
        assert ema_update(None, 3.0, 0.9) == 3.0

    def test_beta_out_of_range(self):
        with pytest.raises(BetaOutOfRangeError):
            ema_update(1.0, 1.0, 1.5)


def _env(node_count=3, compute=0.2, comm=1.0):
    topology = Topology.fully_connected(node_count)
    link_model = LinkTimeModel(topology, compute, np.full((node_count, node_count), comm))
    losses = [QuadraticLoss(np.eye(2), np.zeros(2)) for _ in range(node_count)]
    env = SimEnvironment(topology, link_model, losses, alpha=0.5, beta=0.9, protocol=ProtocolName.NETMAX)
    env.workers = [
        WorkerState.create(i, np.full(2, float(i + 1)), np.full(node_count, 1.0 / node_count), 0.1)
        for i in range(node_count)
    ]
    return env


class TestWorker:
    def test_degenerate_row_always_picks_that_neighbor(self):
        env = _env()
        worker = env.workers[0]
        worker.probs = np.array([0.0, 0.0, 1.0])
        rng = np.random.default_rng(0)
        for _ in range(20):
            event = worker_iteration(worker, env, rng, 0.0)
            assert worker.in_flight.neighbor == 2
            assert event.kind is EventKind.WORKER_COMPLETE
            assert event.fire_time == 1.0
            complete_iteration(worker, env, rng)
            worker.busy_until = 0.0

    def test_self_iteration_is_gradient_only(self):
        env = _env()
        worker = env.workers[1]
        worker.probs = np.array([0.0, 1.0, 0.0])
        rng = np.random.default_rng(0)
        event = worker_iteration(worker, env, rng, 0.0)
        assert event.fire_time == pytest.approx(0.2)
        complete_iteration(worker, env, rng)
        assert worker.model == pytest.approx([1.0, 1.0])
        assert not worker.observed.any()

    def test_busy_worker_cannot_start(self):
        env = _env()
        rng = np.random.default_rng(0)
        worker_iteration(env.workers[0], env, rng, 0.0)
        with pytest.raises(SimulationError):
            worker_iteration(env.workers[0], env, rng, 0.5)

    def test_pending_policy_applies_at_next_start(self):
        env = _env()
        worker = env.workers[0]
        worker.pending = (np.array([0.0, 1.0, 0.0]), 0.3)
        worker_iteration(worker, env, np.random.default_rng(0), 0.0)
        assert worker.rho == 0.3
        assert worker.in_flight.neighbor == 1
        assert worker.pending is None

    def test_completion_updates_ema(self):
        env = _env()
        worker = env.workers[0]
        worker.probs = np.array([0.0, 1.0, 0.0])
        rng = np.random.default_rng(0)
        worker_iteration(worker, env, rng, 0.0)
        complete_iteration(worker, env, rng)
        assert worker.ema_entry(1) == 1.0
        assert worker.ema_entry(2) is None


class TestMonitor:
    def test_unobserved_links_use_base_times(self):
        env = _env(compute=0.2, comm=1.0)
        env.workers[0].ema_times[1] = 3.0
        env.workers[0].observed[1] = True
        times = collect_time_matrix(env.workers, env.link_model)
        assert times[0, 1] == 3.0
        assert times[1, 0] == 1.0

    def test_homogeneous_network_gets_near_uniform_policy(self):
        sim = Simulation(small_config())
        result = monitor_cycle(sim.monitor, sim.env.workers, sim.env, 0.0)
        off = result.policy.probs[sim.inputs.topology.adjacency == 1]
        assert off.max() - off.min() <= 1e-4
        assert all(w.pending is not None for w in sim.env.workers)
        assert sim.monitor.lambda_history == [(0.0, result.lambda2)]

    def test_infeasible_cycle_keeps_previous_policy(self):
        sim = Simulation(small_config(protocol={"outer_rounds": 1, "alpha": 1.0}))
        result = monitor_cycle(sim.monitor, sim.env.workers, sim.env, 0.0)
        assert result is None
        assert sim.monitor.failures == 1
        assert all(w.pending is None for w in sim.env.workers)

    def test_long_period_gives_one_cycle(self):
        record = run_simulation(small_config(protocol={"monitor_period": 1e6}, stop={"max_steps": 50}))
        assert record.monitor_cycles == 1
        assert len(record.policy_changes) == 1


class TestRun:
    def test_zero_steps(self):
        record = run_simulation(small_config(stop={"max_steps": 0}))
        assert record.steps == 0
        assert len(record.trace) == 1
        assert record.trace[0].k == 0
        assert record.stop_reason == "max_steps"

    def test_deterministic(self):
        config = small_config(loss={"noise_sigma": 0.2}, link_times={"comm_jitter": 1.0},
                              protocol={"alpha": 0.3}, stop={"max_steps": 200})
        first = json.dumps(run_simulation(config).model_dump(mode="json"))
        second = json.dumps(run_simulation(config).model_dump(mode="json"))
        assert first == second

    def test_seed_changes_trace(self):
        config = small_config(loss={"noise_sigma": 0.2}, protocol={"alpha": 0.3}, stop={"max_steps": 50})
        a = run_simulation(config.with_seed(1))
        b = run_simulation(config.with_seed(2))
        assert a.trace[-1].deviation != b.trace[-1].deviation

    def test_two_nodes_reach_consensus(self):
        config = small_config(topology={"node_count": 2}, protocol={"alpha": 0.5}, stop={"max_steps": 200})
        last = run_simulation(config).trace[-1]
        assert last.deviation < 1e-6
        assert last.spread < 1e-6

    def test_clock_is_monotone_and_steps_add_up(self):
        config = small_config(link_times={"compute_time": 0.2, "comm_jitter": 2.0},
                              protocol={"alpha": 0.3}, stop={"max_steps": 300})
        record = run_simulation(config)
        clocks = [row.clock for row in record.trace]
        assert clocks == sorted(clocks)
        assert sum(record.node_steps) == record.steps == 300

    def test_max_time_stops_run(self):
        record = run_simulation(small_config(stop={"max_steps": None, "max_time": 5.0}))
        assert record.stop_reason == "max_time"
        assert record.end_clock == 5.0
        assert all(row.clock <= 5.0 for row in record.trace)

    def test_target_deviation_stops_run(self):
        record = run_simulation(small_config(stop={"max_steps": 1000, "target_deviation": 1e-3}))
        assert record.stop_reason == "target_deviation"
        assert record.trace[-1].deviation < 1e-3

    def test_slowdown_changes_are_recorded(self):
        config = small_config(
            slowdown={"enabled": True, "factor_low": 4.0, "factor_high": 4.0, "rotation_interval": 3.0},
            stop={"max_steps": None, "max_time": 20.0},
        )
        record = run_simulation(config)
        assert [c.clock for c in record.slowdown_changes] == [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0]
        assert all(c.factor == 4.0 for c in record.slowdown_changes)


class TestBaselines:
    def test_uniform_async_has_no_monitor(self):
        record = run_baseline(small_config(stop={"max_steps": 40}), ProtocolName.UNIFORM_ASYNC)
        assert record.protocol == "uniform-async"
        assert record.monitor_cycles == 0
        assert all(row.node != row.neighbor for row in record.trace[1:])

    def test_uniform_with_monitor_records_lambda(self):
        record = run_baseline(small_config(stop={"max_steps": 40}), ProtocolName.UNIFORM_ASYNC_WITH_MONITOR)
        assert record.monitor_cycles == 1
        assert record.lambda_history

    def test_allreduce_pays_slow_link_every_round(self):
        config = small_config(
            link_times={"compute_time": 0.2, "comm_time": 1.0, "link_overrides": [{"link": [0, 1], "comm_time": 10.0}]},
            stop={"max_steps": 5},
        )
        record = run_baseline(config, ProtocolName.SYNC_ALLREDUCE)
        assert [row.iter_time for row in record.trace[1:]] == pytest.approx([10.2] * 5)
        assert record.end_clock == pytest.approx(51.0)

    def test_allreduce_reaches_consensus_each_round(self):
        record = run_baseline(small_config(stop={"max_steps": 3}), ProtocolName.SYNC_ALLREDUCE)
        assert all(row.spread == pytest.approx(0.0, abs=1e-12) for row in record.trace[1:])

    def test_ring_scope(self):
        topology = Topology.fully_connected(4)
        comm = np.ones((4, 4))
        comm[0, 2] = comm[2, 0] = 10.0
        model = LinkTimeModel(topology, 0.2, comm)
        assert allreduce_round_time(model, 0.0, "all") == pytest.approx(10.2)
        assert allreduce_round_time(model, 0.0, "ring") == pytest.approx(1.2)

    def test_default_scope_skips_slow_chord(self):
        config = small_config(
            link_times={"compute_time": 0.2, "comm_time": 1.0, "link_overrides": [{"link": [0, 2], "comm_time": 10.0}]},
            stop={"max_steps": 3},
        )
        record = run_baseline(config, ProtocolName.SYNC_ALLREDUCE)
        assert [row.iter_time for row in record.trace[1:]] == pytest.approx([1.2] * 3)
        wide = run_baseline(config.model_copy(update={"protocol": config.protocol.model_copy(update={"allreduce_scope": "all"})}),
                            ProtocolName.SYNC_ALLREDUCE)
        assert [row.iter_time for row in wide.trace[1:]] == pytest.approx([10.2] * 3)

    def test_fixed_uniform_policy_keeps_policy_weighted_step(self):
        config = small_config(protocol={"name": "netmax-uniform", "alpha": 0.5, "initial_rho": 0.2})
        sim = Simulation(config)
        assert sim.monitor is None
        assert sim.env.workers[0].probs == pytest.approx([0.25] * 4)
        flight = InFlight(neighbor=1, started=0.0, duration=1.0, p_im=0.25, rho=0.2)
        assert sim.env.mixing_weight(0, flight) == pytest.approx(0.5 * 0.2 * 2 / (2 * 0.25))
        sim.env.protocol = ProtocolName.UNIFORM_ASYNC
        assert sim.env.mixing_weight(0, flight) == 0.5

    def test_fixed_uniform_policy_never_changes(self):
        record = run_baseline(small_config(stop={"max_steps": 200}), ProtocolName.NETMAX_UNIFORM)
        assert record.protocol == "netmax-uniform"
        assert record.monitor_cycles == 0
        assert record.policy_changes == []
        assert record.lambda_history == []
        assert any(row.node == row.neighbor for row in record.trace[1:])

    def test_netmax_is_not_a_baseline(self):
        with pytest.raises(SimulationError):
            run_baseline(small_config(), ProtocolName.NETMAX)
