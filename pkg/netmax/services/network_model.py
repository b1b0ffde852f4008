"""Worker graph and heterogeneous, time-varying link timing.

The simulator and the policy optimizer both read link conditions from a
``LinkTimeModel``: base compute times C_i, base communication times N_{i,m}
and a schedule of slowdown events. An iteration pulling from neighbor m costs
``max(C_i, N_{i,m} * factor)``; a self-iteration costs C_i.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import structlog

from netmax.core.exceptions import NetMaxError

logger = structlog.get_logger(__name__)

Edge = Tuple[int, int]


class NetworkModelError(NetMaxError):
    """Base exception for topology and link-time errors."""
    pass


class DisconnectedGraphError(NetworkModelError):
    """Raised when some node cannot be reached from node 0."""
    pass


class AsymmetricAdjacencyError(NetworkModelError):
    """Raised when d_{i,m} != d_{m,i} for some pair."""
    pass


class SelfLoopError(NetworkModelError):
    """Raised when the adjacency diagonal is nonzero."""
    pass


class UnknownEdgeError(NetworkModelError):
    """Raised when a link is queried that is not an edge of the topology."""
    def __init__(self, link: Edge):
        self.link = link
        super().__init__(f"({link[0]}, {link[1]}) is not an edge of the topology")


def _canonical(link: Sequence[int]) -> Edge:
    i, m = int(link[0]), int(link[1])
    return (i, m) if i <= m else (m, i)


@dataclass(frozen=True)
class Topology:
    """Undirected worker graph given by a 0/1 adjacency matrix.

    Construction does not validate; call ``validate_topology`` before use.
    """

    adjacency: np.ndarray

    def __post_init__(self) -> None:
        adj = np.array(self.adjacency, dtype=np.int64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise NetworkModelError(f"adjacency must be square, got shape {adj.shape}")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    def has_edge(self, i: int, m: int) -> bool:
        return i != m and bool(self.adjacency[i, m])

    def neighbors(self, i: int) -> List[int]:
        return [int(m) for m in np.flatnonzero(self.adjacency[i]) if m != i]

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def edges(self) -> List[Edge]:
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(i), int(m)) for i, m in zip(rows, cols)]

    def ring_edges(self) -> List[Edge]:
        """Edges of the cycle 0 -> 1 -> ... -> M-1 -> 0 that exist in this graph."""
        m = self.node_count
        if m < 2:
            return []
        pairs = {_canonical((i, (i + 1) % m)) for i in range(m)}
        return sorted(p for p in pairs if self.has_edge(*p))

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.node_count))
        graph.add_edges_from(self.edges())
        return graph

    @classmethod
    def ring(cls, node_count: int) -> "Topology":
        if node_count < 2:
            raise NetworkModelError(f"ring topology requires at least 2 nodes, got {node_count}")
        return cls.from_graph(nx.cycle_graph(node_count), node_count)

    @classmethod
    def fully_connected(cls, node_count: int) -> "Topology":
        return cls.from_graph(nx.complete_graph(node_count), node_count)

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[Sequence[int]]) -> "Topology":
        adj = np.zeros((node_count, node_count), dtype=np.int64)
        for i, m in edges:
            adj[i, m] = adj[m, i] = 1
        return cls(adj)

    @classmethod
    def from_graph(cls, graph: nx.Graph, node_count: Optional[int] = None) -> "Topology":
        n = node_count if node_count is not None else graph.number_of_nodes()
        return cls.from_edges(n, graph.edges())

    @classmethod
    def random_connected(
        cls, node_count: int, edge_probability: float, seed: int, max_attempts: int = 50
    ) -> "Topology":
        """Erdos-Renyi graph redrawn until connected; falls back to adding a spanning ring."""
        rng = np.random.default_rng(seed)
        graph = None
        for _ in range(max_attempts):
            graph = nx.gnp_random_graph(node_count, edge_probability, seed=int(rng.integers(2**31)))
            if node_count == 1 or nx.is_connected(graph):
                return cls.from_graph(graph, node_count)
        graph.add_edges_from((i, (i + 1) % node_count) for i in range(node_count) if node_count > 1)
        return cls.from_graph(graph, node_count)


def validate_topology(topology: Topology) -> None:
    """Raise unless the adjacency is symmetric, loop-free and connected."""
    adj = topology.adjacency
    if np.any(np.diag(adj) != 0):
        raise SelfLoopError("adjacency diagonal must be zero")
    if not np.array_equal(adj, adj.T):
        raise AsymmetricAdjacencyError("adjacency must be symmetric")
    if np.any((adj != 0) & (adj != 1)):
        raise NetworkModelError("adjacency entries must be 0 or 1")
    if topology.node_count > 1:
        reached = nx.node_connected_component(topology.to_graph(), 0)
        if len(reached) != topology.node_count:
            missing = sorted(set(range(topology.node_count)) - reached)
            raise DisconnectedGraphError(f"nodes {missing} are unreachable from node 0")


@dataclass(frozen=True)
class SlowdownEvent:
    start_time: float
    link: Edge
    factor: float

    def __post_init__(self) -> None:
        if self.factor < 1.0:
            raise NetworkModelError(f"slowdown factor must be >= 1, got {self.factor}")
        object.__setattr__(self, "link", _canonical(self.link))

    @property
    def is_identity(self) -> bool:
        return self.factor == 1.0


@dataclass(frozen=True)
class LinkTimeModel:
    topology: Topology
    compute_time: np.ndarray
    base_comm_time: np.ndarray
    slowdown_schedule: Tuple[SlowdownEvent, ...] = ()
    serial: bool = False
    _starts: Tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        m = self.topology.node_count
        compute = np.broadcast_to(np.asarray(self.compute_time, dtype=float), (m,)).copy()
        comm = np.array(self.base_comm_time, dtype=float)
        if comm.shape != (m, m):
            raise NetworkModelError(f"base_comm_time must be {m}x{m}, got {comm.shape}")
        if np.any(compute <= 0):
            raise NetworkModelError("compute times must be positive")
        edge_mask = self.topology.adjacency == 1
        if np.any(comm[edge_mask] <= 0):
            raise NetworkModelError("communication times must be positive on every edge")
        if not np.allclose(comm[edge_mask], comm.T[edge_mask], rtol=0.0, atol=0.0):
            raise NetworkModelError("communication times must be symmetric on edges")
        comm = np.where(edge_mask, comm, 0.0)
        schedule = tuple(sorted(self.slowdown_schedule, key=lambda e: e.start_time))
        starts = tuple(e.start_time for e in schedule)
        if any(b == a for a, b in zip(starts, starts[1:])):
            raise NetworkModelError("slowdown events must have distinct start times")
        for event in schedule:
            if not self.topology.has_edge(*event.link):
                raise UnknownEdgeError(event.link)
        for arr in (compute, comm):
            arr.setflags(write=False)
        object.__setattr__(self, "compute_time", compute)
        object.__setattr__(self, "base_comm_time", comm)
        object.__setattr__(self, "slowdown_schedule", schedule)
        object.__setattr__(self, "_starts", starts)

    @property
    def node_count(self) -> int:
        return self.topology.node_count

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return self._starts

    def active_event(self, clock: float) -> Optional[SlowdownEvent]:
        idx = bisect.bisect_right(self._starts, clock) - 1
        return self.slowdown_schedule[idx] if idx >= 0 else None

    def effective_comm_time(self, link: Sequence[int], clock: float) -> float:
        i, m = int(link[0]), int(link[1])
        if not self.topology.has_edge(i, m):
            raise UnknownEdgeError((i, m))
        base = float(self.base_comm_time[i, m])
        event = self.active_event(clock)
        if event is not None and event.link == _canonical((i, m)):
            return base * event.factor
        return base

    def iteration_time(self, i: int, m: int, clock: float) -> float:
        if m == i:
            return float(self.compute_time[i])
        return float(self._combine(self.compute_time[i], self.effective_comm_time((i, m), clock)))

    def time_matrix(self, clock: float) -> np.ndarray:
        """Iteration times t_{i,m} on edges at ``clock``; zero off edges and on the diagonal."""
        times = self.base_time_matrix()
        event = self.active_event(clock)
        if event is not None and not event.is_identity:
            i, m = event.link
            for a, b in ((i, m), (m, i)):
                times[a, b] = self._combine(self.compute_time[a], self.base_comm_time[a, b] * event.factor)
        return times

    def base_time_matrix(self) -> np.ndarray:
        edge_mask = self.topology.adjacency == 1
        return np.where(edge_mask, self._combine(self.compute_time[:, None], self.base_comm_time), 0.0)

    def _combine(self, compute: Union[float, np.ndarray], comm: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        # serial: the gradient and the pull do not overlap
        return compute + comm if self.serial else np.maximum(compute, comm)


def generate_slowdown_schedule(
    topology: Topology,
    factor_low: float,
    factor_high: float,
    rotation_interval: float,
    horizon: float,
    start_time: float = 0.0,
    seed: int = 0,
) -> List[SlowdownEvent]:
    """Slow one random link at a time, moving to a new random link every interval."""
    if factor_low < 1.0 or factor_high < factor_low:
        raise NetworkModelError(f"invalid slowdown factor bounds [{factor_low}, {factor_high}]")
    if rotation_interval <= 0:
        raise NetworkModelError("rotation interval must be positive")
    edges = topology.edges()
    if not edges:
        return []
    rng = np.random.default_rng(seed)
    events: List[SlowdownEvent] = []
    if start_time > 0:
        events.append(SlowdownEvent(0.0, edges[0], 1.0))
    clock = start_time
    while clock < horizon:
        link = edges[int(rng.integers(len(edges)))]
        factor = float(rng.uniform(factor_low, factor_high)) if factor_high > factor_low else factor_low
        events.append(SlowdownEvent(clock, link, factor))
        clock += rotation_interval
    logger.debug("Slowdown schedule generated", events=len(events), horizon=horizon, seed=seed)
    return events


def topology_for_times(times: np.ndarray, adjacency: Optional[np.ndarray] = None) -> Topology:
    """Topology of a time-matrix document: explicit adjacency, else positive off-diagonal entries."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 2 or times.shape[0] != times.shape[1]:
        raise NetworkModelError(f"time matrix must be square, got shape {times.shape}")
    if adjacency is None:
        mask = (times > 0).astype(np.int64)
        np.fill_diagonal(mask, 0)
        mask = mask | mask.T
    else:
        mask = np.asarray(adjacency, dtype=np.int64)
        if mask.shape != times.shape:
            raise NetworkModelError("adjacency and time matrix shapes differ")
    topology = Topology(mask)
    validate_topology(topology)
    if np.any(times[mask == 1] <= 0):
        raise NetworkModelError("iteration times must be positive on every edge")
    return topology
