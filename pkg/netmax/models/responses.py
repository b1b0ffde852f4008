from pydantic import BaseModel, Field
from typing import List, Optional
from datetime import datetime


class PolicyResponse(BaseModel):
    P: List[List[float]] = Field(..., description="Selected policy matrix")
    rho: float = Field(..., description="Selected coupling weight")
    tbar: float = Field(..., description="Selected mean iteration time")
    lambda2: float = Field(..., description="Second largest eigenvalue of the gossip matrix")
    t_convergence: float = Field(..., description="Estimated convergence time")
    alpha: float = Field(..., description="Learning rate used")
    evaluated: int = Field(..., description="Grid points evaluated")
    feasible: int = Field(..., description="Grid points with a feasible policy")
    approximation_ratio: Optional[float] = Field(None, description="Worst-case ratio to the optimum when M > 3")


class ConstraintCheckResponse(BaseModel):
    name: str = Field(..., description="Constraint name")
    passed: bool = Field(..., description="Whether the constraint holds")
    worst_violation: float = Field(..., description="Largest violation magnitude")


class FeasibilityResponse(BaseModel):
    all_passed: bool = Field(..., description="True when every constraint holds")
    checks: List[ConstraintCheckResponse] = Field(..., description="Per-constraint results")


class GossipResponse(BaseModel):
    Y: List[List[float]] = Field(..., description="Gossip expectation matrix")
    lambda2: float = Field(..., description="Second largest eigenvalue of Y")


class HealthResponse(BaseModel):
    status: str = Field(..., description="Service health status")
    timestamp: datetime = Field(..., description="Health check timestamp")
    version: str = Field(..., description="Service version")
    uptime: int = Field(..., description="Service uptime in seconds")


class ErrorResponse(BaseModel):
    error: str = Field(..., description="Error type")
    detail: str = Field(..., description="Error details")
    timestamp: datetime = Field(..., description="Error timestamp")
    request_id: Optional[str] = Field(None, description="Request ID for tracking")
    status_code: int = Field(..., description="HTTP status code")
