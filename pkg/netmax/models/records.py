from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from netmax.models.experiment import SCHEMA_VERSION


class TraceRow(BaseModel):
    """One global step; the row with k=0 holds the initial state."""
    k: int
    clock: float
    node: Optional[int] = None
    neighbor: Optional[int] = None
    iter_time: Optional[float] = None
    deviation: float
    spread: float
    objective: float


class PolicyChange(BaseModel):
    clock: float
    rho: float
    tbar: float
    lambda2: float
    t_convergence: float
    probs: List[List[float]]


class SlowdownChange(BaseModel):
    clock: float
    link: Tuple[int, int]
    factor: float


class RunRecord(BaseModel):
    schema_version: int = SCHEMA_VERSION
    name: str
    protocol: str
    seed: int
    config: Dict[str, Any] = Field(..., description="Fully materialized experiment config")
    trace: List[TraceRow] = Field(default_factory=list)
    policy_changes: List[PolicyChange] = Field(default_factory=list)
    slowdown_changes: List[SlowdownChange] = Field(default_factory=list)
    lambda_history: List[Tuple[float, float]] = Field(default_factory=list, description="(clock, lambda2) per monitor cycle")
    monitor_cycles: int = 0
    monitor_failures: int = 0
    final_models: List[List[float]] = Field(default_factory=list)
    x_star: List[float] = Field(default_factory=list)
    node_steps: List[int] = Field(default_factory=list)
    realized_iteration_time: List[Optional[float]] = Field(default_factory=list)
    predicted_iteration_time: Optional[List[float]] = None
    alpha: float
    noise_sigma: float = 0.0
    learning_rate_ok: bool = True
    warnings: List[str] = Field(default_factory=list)
    stop_reason: str = ""
    end_clock: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.trace) - 1 if self.trace else 0


class RunSummary(BaseModel):
    schema_version: int = SCHEMA_VERSION
    name: str
    protocol: str
    seed: int
    steps: int
    end_clock: float
    stop_reason: str
    initial_deviation: Optional[float] = None
    final_deviation: Optional[float] = None
    final_spread: Optional[float] = None
    time_to_epsilon: Dict[str, Optional[float]] = Field(default_factory=dict)
    link_usage: Dict[str, int] = Field(default_factory=dict)
    policy_changes: List[PolicyChange] = Field(default_factory=list)
    lambda_history: List[Tuple[float, float]] = Field(default_factory=list)
    lambda_max: Optional[float] = None
    monitor_failures: int = 0
    learning_rate_ok: bool = True
    warnings: List[str] = Field(default_factory=list)
    config: Dict[str, Any]


class ProtocolComparison(BaseModel):
    protocol: str
    seeds: List[int]
    time_to_epsilon: List[Optional[float]]
    mean_time_to_epsilon: Optional[float] = None
    speedup_vs_first: Optional[float] = None


class ComparisonSummary(BaseModel):
    schema_version: int = SCHEMA_VERSION
    name: str
    epsilon: float
    protocols: List[ProtocolComparison]
