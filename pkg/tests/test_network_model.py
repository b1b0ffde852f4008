import numpy as np
import pytest

from netmax.services.network_model import (
    AsymmetricAdjacencyError,
    DisconnectedGraphError,
    LinkTimeModel,
    NetworkModelError,
    SelfLoopError,
    SlowdownEvent,
    Topology,
    UnknownEdgeError,
    generate_slowdown_schedule,
    topology_for_times,
    validate_topology,
)


def _model(compute=0.2, comm=0.5, node_count=2, schedule=()):
    topology = Topology.fully_connected(node_count)
    return LinkTimeModel(topology, compute, np.full((node_count, node_count), comm), tuple(schedule))


class TestTopology:
    def test_two_nodes_valid(self):
        validate_topology(Topology(np.array([[0, 1], [1, 0]])))

    def test_isolated_node_is_disconnected(self):
        with pytest.raises(DisconnectedGraphError):
            validate_topology(Topology.from_edges(3, [(0, 1)]))

    def test_ring_valid(self):
        ring = Topology.ring(4)
        validate_topology(ring)
        assert ring.neighbors(0) == [1, 3]
        assert ring.ring_edges() == [(0, 1), (0, 3), (1, 2), (2, 3)]

    def test_asymmetric_rejected(self):
        with pytest.raises(AsymmetricAdjacencyError):
            validate_topology(Topology(np.array([[0, 1], [0, 0]])))

    def test_self_loop_rejected(self):
        with pytest.raises(SelfLoopError):
            validate_topology(Topology(np.array([[1, 1], [1, 0]])))

    def test_non_square_rejected(self):
        with pytest.raises(NetworkModelError):
            Topology(np.zeros((2, 3)))

    def test_random_connected_is_connected(self):
        for seed in range(10):
            validate_topology(Topology.random_connected(6, 0.2, seed))


class TestLinkTimes:
    def test_no_event_returns_base(self):
        assert _model().effective_comm_time((0, 1), 10.0) == 0.5

    def test_active_factor_multiplies(self):
        model = _model(schedule=[SlowdownEvent(0.0, (1, 0), 2.0)])
        assert model.effective_comm_time((0, 1), 5.0) == pytest.approx(1.0)

    def test_event_not_yet_active(self):
        model = _model(schedule=[SlowdownEvent(300.0, (0, 1), 2.0)])
        assert model.effective_comm_time((0, 1), 299.9) == 0.5
        assert model.effective_comm_time((0, 1), 300.0) == pytest.approx(1.0)

    def test_iteration_time_max_rule(self):
        assert _model(compute=0.2, comm=1.0).iteration_time(0, 1, 0.0) == 1.0
        assert _model(compute=0.5, comm=0.1).iteration_time(0, 1, 0.0) == 0.5

    def test_self_iteration_costs_compute(self):
        assert _model(compute=0.2, comm=1.0).iteration_time(1, 1, 0.0) == 0.2

    def test_unknown_edge(self):
        model = LinkTimeModel(Topology.ring(4), 0.2, np.ones((4, 4)))
        with pytest.raises(UnknownEdgeError):
            model.iteration_time(0, 2, 0.0)

    def test_time_matrix_tracks_slowdown(self):
        model = _model(node_count=3, comm=1.0, schedule=[SlowdownEvent(5.0, (0, 2), 10.0)])
        assert model.time_matrix(0.0)[0, 2] == 1.0
        slowed = model.time_matrix(6.0)
        assert slowed[0, 2] == slowed[2, 0] == 10.0
        assert slowed[0, 1] == 1.0
        assert np.all(np.diag(slowed) == 0.0)

    def test_serial_execution_adds_compute_and_comm(self):
        topology = Topology.fully_connected(3)
        model = LinkTimeModel(topology, 0.2, np.ones((3, 3)), (SlowdownEvent(5.0, (0, 2), 10.0),), serial=True)
        assert model.iteration_time(0, 1, 0.0) == pytest.approx(1.2)
        assert model.iteration_time(0, 0, 0.0) == pytest.approx(0.2)
        assert model.iteration_time(0, 2, 6.0) == pytest.approx(10.2)
        base = model.base_time_matrix()
        assert base[0, 1] == pytest.approx(1.2)
        assert np.all(np.diag(base) == 0.0)
        slowed = model.time_matrix(6.0)
        assert slowed[0, 2] == pytest.approx(10.2)
        assert slowed[2, 0] == pytest.approx(10.2)

    def test_serial_never_faster_than_parallel(self):
        parallel = _model(compute=0.5, comm=0.1, node_count=3)
        serial = LinkTimeModel(parallel.topology, 0.5, np.full((3, 3), 0.1), serial=True)
        assert np.all(serial.base_time_matrix() >= parallel.base_time_matrix())
        assert serial.iteration_time(1, 2, 0.0) == pytest.approx(0.6)
        assert parallel.iteration_time(1, 2, 0.0) == 0.5

    def test_rejects_non_positive_compute(self):
        with pytest.raises(NetworkModelError):
            _model(compute=0.0)

    def test_rejects_duplicate_event_times(self):
        with pytest.raises(NetworkModelError):
            _model(schedule=[SlowdownEvent(1.0, (0, 1), 2.0), SlowdownEvent(1.0, (0, 1), 3.0)])

    def test_slowdown_factor_below_one(self):
        with pytest.raises(NetworkModelError):
            SlowdownEvent(0.0, (0, 1), 0.5)


class TestSlowdownSchedule:
    def test_one_link_per_interval(self):
        events = generate_slowdown_schedule(Topology.fully_connected(4), 2.0, 5.0, 10.0, 100.0, seed=3)
        assert [e.start_time for e in events] == [10.0 * i for i in range(10)]
        assert all(2.0 <= e.factor <= 5.0 for e in events)

    def test_start_time_inserts_identity(self):
        events = generate_slowdown_schedule(Topology.ring(4), 3.0, 3.0, 5.0, 20.0, start_time=8.0)
        assert events[0].is_identity
        assert events[1].start_time == 8.0

    def test_seeded(self):
        topo = Topology.fully_connected(5)
        a = generate_slowdown_schedule(topo, 2.0, 100.0, 1.0, 50.0, seed=9)
        b = generate_slowdown_schedule(topo, 2.0, 100.0, 1.0, 50.0, seed=9)
        assert a == b


class TestTopologyForTimes:
    def test_infers_edges_from_positive_times(self):
        times = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 2.0, 0.0]])
        topology = topology_for_times(times)
        assert topology.edges() == [(0, 1), (1, 2)]

    def test_non_square(self):
        with pytest.raises(NetworkModelError):
            topology_for_times(np.ones((2, 3)))

    def test_zero_time_on_explicit_edge(self):
        with pytest.raises(NetworkModelError):
            topology_for_times(np.zeros((2, 2)), np.array([[0, 1], [1, 0]]))
