"""Experiment configuration document.

One JSON document describes a whole run: the worker graph, the timing
environment, the loss functions, the protocol and its tuning knobs, stop
conditions, metrics and output paths. Every default lives here so that
``ExperimentConfig().model_dump()`` is the fully materialized config.
"""

from enum import Enum
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class ProtocolName(str, Enum):
    NETMAX = "netmax"
    UNIFORM_ASYNC = "uniform-async"
    UNIFORM_ASYNC_WITH_MONITOR = "uniform-async-with-monitor"
    SYNC_ALLREDUCE = "sync-allreduce"
    NETMAX_UNIFORM = "netmax-uniform"


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TopologySpec(_Spec):
    kind: Literal["ring", "fully_connected", "explicit", "random"] = Field(
        "fully_connected", description="Graph generator or explicit adjacency"
    )
    node_count: int = Field(8, ge=1, description="Number of worker nodes M")
    adjacency: Optional[List[List[int]]] = Field(None, description="Explicit 0/1 adjacency matrix")
    edge_probability: float = Field(0.5, gt=0, le=1, description="Edge probability for random graphs")
    seed: int = Field(0, description="Seed for random graphs")

    @model_validator(mode="after")
    def check_explicit(self):
        if self.kind == "explicit":
            if self.adjacency is None:
                raise ValueError("explicit topology requires 'adjacency'")
            if len(self.adjacency) != self.node_count:
                raise ValueError("adjacency row count must equal node_count")
            if any(len(row) != self.node_count for row in self.adjacency):
                raise ValueError("adjacency must be square")
        return self


class LinkOverride(_Spec):
    link: Tuple[int, int] = Field(..., description="Undirected edge (i, m)")
    comm_time: float = Field(..., gt=0, description="Base communication time of this edge in seconds")


class LinkTimesSpec(_Spec):
    compute_time: Union[float, List[float]] = Field(0.2, description="C_i in seconds, scalar or per node")
    comm_time: Union[float, List[List[float]]] = Field(1.0, description="N_{i,m} in seconds, scalar or matrix")
    link_overrides: List[LinkOverride] = Field(default_factory=list, description="Per-edge base times")
    comm_jitter: float = Field(0.0, ge=0, description="Multiplicative spread U[1, 1+jitter] drawn per edge")
    seed: int = Field(0, description="Seed for the jitter draw")
    execution: Literal["parallel", "serial"] = Field(
        "parallel", description="parallel: max(C_i, N_{i,m}); serial: C_i + N_{i,m}"
    )

    @field_validator("compute_time")
    @classmethod
    def positive_compute(cls, v):
        values = v if isinstance(v, list) else [v]
        if any(c <= 0 for c in values):
            raise ValueError("compute times must be positive")
        return v


class SlowdownEventSpec(_Spec):
    start_time: float = Field(..., ge=0)
    link: Tuple[int, int]
    factor: float = Field(..., ge=1)


class SlowdownSpec(_Spec):
    enabled: bool = Field(False, description="Rotate a slowed link during the run")
    factor_low: float = Field(2.0, ge=1)
    factor_high: float = Field(100.0, ge=1)
    rotation_interval: float = Field(50.0, gt=0, description="Seconds between slowed-link changes")
    start_time: float = Field(0.0, ge=0, description="First slowdown activation")
    seed: Optional[int] = Field(None, description="Schedule seed; the run seed when unset")
    events: Optional[List[SlowdownEventSpec]] = Field(None, description="Explicit schedule, replaces the generator")

    @model_validator(mode="after")
    def check_bounds(self):
        if self.factor_low > self.factor_high:
            raise ValueError("factor_low must not exceed factor_high")
        if self.events:
            starts = [e.start_time for e in self.events]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError("slowdown events must have strictly increasing start times")
        return self


class LossSpec(_Spec):
    kind: Literal["generated", "explicit"] = "generated"
    dim: int = Field(4, ge=1, description="Model dimension")
    mu: float = Field(1.0, gt=0, description="Smallest Hessian eigenvalue of generated losses")
    lips: float = Field(1.0, gt=0, description="Largest Hessian eigenvalue of generated losses")
    center: Optional[List[float]] = Field(None, description="Shared minimizer; zeros when unset")
    center_spread: float = Field(0.0, ge=0, description="Std dev of per-node minimizer offsets")
    shared: bool = Field(True, description="All nodes use the same Hessian")
    a_diagonals: Optional[List[List[float]]] = Field(None, description="Explicit diagonal A_i per node")
    centers: Optional[List[List[float]]] = Field(None, description="Explicit b_i per node")
    noise_sigma: float = Field(0.0, ge=0, description="Gradient noise level sigma")
    noise_kind: Literal["gaussian", "rademacher"] = "gaussian"
    grad_bound: Optional[float] = Field(None, gt=0)
    seed: int = Field(0, description="Seed for generated losses")
    init_mode: Literal["sphere", "gaussian"] = Field("sphere", description="Initial model placement around x*")
    init_scale: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def check_shape(self):
        if self.lips < self.mu:
            raise ValueError("lips must be >= mu")
        if self.kind == "explicit":
            if self.a_diagonals is None or self.centers is None:
                raise ValueError("explicit losses require 'a_diagonals' and 'centers'")
            if len(self.a_diagonals) != len(self.centers):
                raise ValueError("a_diagonals and centers must list the same nodes")
            for diag, center in zip(self.a_diagonals, self.centers):
                if len(diag) != self.dim or len(center) != self.dim:
                    raise ValueError("explicit loss entries must have length dim")
                if any(a <= 0 for a in diag):
                    raise ValueError("explicit Hessian diagonals must be positive")
        if self.center is not None and len(self.center) != self.dim:
            raise ValueError("center must have length dim")
        return self


class ProtocolSpec(_Spec):
    name: ProtocolName = ProtocolName.NETMAX
    alpha: float = Field(0.1, gt=0, description="Learning rate")
    initial_rho: float = Field(0.1, ge=0, description="Coupling weight before the first policy")
    beta: float = Field(0.9, ge=0, le=1, description="EMA smoothing factor")
    monitor_period: float = Field(20.0, gt=0, description="Monitor collection period T_s in seconds")
    epsilon: float = Field(0.01, gt=0, lt=1, description="Target factor in the convergence-time objective")
    outer_rounds: int = Field(16, ge=1, description="K, rho grid size")
    inner_rounds: int = Field(16, ge=1, description="R, t-bar grid size")
    margin: float = Field(1e-6, gt=0, description="Closes the strict probability floor")
    neighbor_read: Literal["completion", "start"] = Field("completion", description="When x_m is read")
    allreduce_scope: Literal["all", "ring"] = Field("ring", description="Links paid per allreduce round")


class StopSpec(_Spec):
    max_time: Optional[float] = Field(200.0, gt=0, description="Simulated seconds")
    max_steps: Optional[int] = Field(20000, ge=0, description="Global steps")
    target_deviation: Optional[float] = Field(None, gt=0, description="Stop once deviation falls below")

    @model_validator(mode="after")
    def check_any(self):
        if self.max_time is None and self.max_steps is None and self.target_deviation is None:
            raise ValueError("at least one stop condition is required")
        return self


class MetricsSpec(_Spec):
    epsilons: List[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3])

    @field_validator("epsilons")
    @classmethod
    def positive(cls, v):
        if any(e <= 0 for e in v):
            raise ValueError("epsilons must be positive")
        return sorted(v, reverse=True)


class CompareSpec(_Spec):
    protocols: List[ProtocolName] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=lambda: list(range(5)))
    epsilon: Optional[float] = Field(None, gt=0, description="Time-to-epsilon compared; smallest metrics epsilon when unset")


class OutputSpec(_Spec):
    out_dir: str = "results"
    name: Optional[str] = None
    csv: bool = False


class ExperimentConfig(_Spec):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "experiment"
    seed: int = 0
    topology: TopologySpec = Field(default_factory=TopologySpec)
    link_times: LinkTimesSpec = Field(default_factory=LinkTimesSpec)
    slowdown: SlowdownSpec = Field(default_factory=SlowdownSpec)
    loss: LossSpec = Field(default_factory=LossSpec)
    protocol: ProtocolSpec = Field(default_factory=ProtocolSpec)
    stop: StopSpec = Field(default_factory=StopSpec)
    metrics: MetricsSpec = Field(default_factory=MetricsSpec)
    compare: CompareSpec = Field(default_factory=CompareSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @property
    def node_count(self) -> int:
        return self.topology.node_count

    @model_validator(mode="after")
    def check_shapes(self):
        m = self.node_count
        compute = self.link_times.compute_time
        if isinstance(compute, list) and len(compute) != m:
            raise ValueError("compute_time list must have node_count entries")
        comm = self.link_times.comm_time
        if isinstance(comm, list) and (len(comm) != m or any(len(row) != m for row in comm)):
            raise ValueError("comm_time matrix must be node_count x node_count")
        links = [o.link for o in self.link_times.link_overrides]
        if self.slowdown.events:
            links += [e.link for e in self.slowdown.events]
        for i, k in links:
            if not (0 <= i < m and 0 <= k < m) or i == k:
                raise ValueError(f"link ({i}, {k}) is not a valid node pair")
        if self.loss.kind == "explicit" and len(self.loss.a_diagonals) != m:
            raise ValueError("explicit losses must list node_count nodes")
        return self

    def with_protocol(self, name: ProtocolName) -> "ExperimentConfig":
        return self.model_copy(update={"protocol": self.protocol.model_copy(update={"name": name})})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.model_copy(update={"seed": seed})
