from pydantic import BaseModel, Field, field_validator, model_validator
from typing import List, Optional


def _check_square(v: List[List[float]], what: str) -> List[List[float]]:
    if not v or any(len(row) != len(v) for row in v):
        raise ValueError(f"{what} must be a non-empty square matrix")
    return v


class _MatrixRequest(BaseModel):
    adjacency: Optional[List[List[int]]] = Field(
        None, description="0/1 adjacency; inferred from positive off-diagonal times when omitted"
    )

    @field_validator("adjacency")
    @classmethod
    def validate_adjacency(cls, v):
        return v if v is None else _check_square(v, "adjacency")


class PolicyRequest(_MatrixRequest):
    times: List[List[float]] = Field(..., description="Iteration times t_{i,m} in seconds")
    alpha: float = Field(0.1, gt=0, description="Learning rate")
    outer_rounds: int = Field(16, ge=1, le=512, description="rho grid size K")
    inner_rounds: int = Field(16, ge=1, le=512, description="t-bar grid size R")
    epsilon: float = Field(0.01, gt=0, lt=1, description="Deviation shrink factor in the objective")
    margin: float = Field(1e-6, gt=0, description="Strict lower-bound margin")

    @field_validator("times")
    @classmethod
    def validate_times(cls, v):
        return _check_square(v, "times")


class FeasibilityRequest(_MatrixRequest):
    probs: List[List[float]] = Field(..., description="Policy matrix P")
    times: List[List[float]] = Field(..., description="Iteration times t_{i,m} in seconds")
    alpha: float = Field(..., gt=0, description="Learning rate")
    rho: float = Field(..., ge=0, description="Coupling weight")
    margin: float = Field(1e-6, ge=0, description="Strict lower-bound margin")

    @model_validator(mode="after")
    def validate_shapes(self):
        _check_square(self.probs, "probs")
        _check_square(self.times, "times")
        if len(self.probs) != len(self.times):
            raise ValueError("probs and times must have the same size")
        return self


class GossipRequest(_MatrixRequest):
    probs: List[List[float]] = Field(..., description="Policy matrix P")
    alpha: float = Field(..., gt=0, description="Learning rate")
    rho: float = Field(..., ge=0, description="Coupling weight")

    @field_validator("probs")
    @classmethod
    def validate_probs(cls, v):
        return _check_square(v, "probs")
