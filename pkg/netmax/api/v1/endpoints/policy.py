from fastapi import APIRouter, Request
import numpy as np
import structlog

from netmax.core.config import settings
from netmax.middleware.rate_limit import limiter
from netmax.models.requests import FeasibilityRequest, GossipRequest, PolicyRequest
from netmax.models.responses import (
    ConstraintCheckResponse, FeasibilityResponse, GossipResponse, PolicyResponse
)
from netmax.services.network_model import topology_for_times
from netmax.services.policy_engine import (
    NoFeasiblePolicyError,
    PolicyMatrix,
    build_gossip_expectation,
    check_feasibility,
    generate_policy_matrix,
    second_largest_eigenvalue,
)

router = APIRouter()

logger = structlog.get_logger(__name__)


def _request_id(request: Request) -> str:
    return getattr(request.state, "request_id", "unknown")


@router.post("/generate", response_model=PolicyResponse, tags=["Policy"])
@limiter.limit(f"{settings.rate_limit_per_minute}/minute")
def generate_policy(request: Request, body: PolicyRequest):
    """
    Generate a communication policy for the given iteration-time matrix.

    Runs the nested (rho, t-bar) grid search and returns the policy with the
    smallest estimated convergence time. Responds 409 when no grid point is feasible.
    """
    times = np.asarray(body.times, dtype=float)
    topology = topology_for_times(times, body.adjacency)
    request.state.node_count = topology.node_count
    try:
        result = generate_policy_matrix(
            body.alpha, body.outer_rounds, body.inner_rounds, times, topology,
            epsilon=body.epsilon, margin=body.margin,
        )
    except NoFeasiblePolicyError as e:
        logger.warning(
            "No feasible policy for request",
            request_id=_request_id(request),
            node_count=topology.node_count,
            evaluated=e.evaluated,
        )
        raise

    logger.info(
        "Policy generated",
        request_id=_request_id(request),
        node_count=topology.node_count,
        rho=result.rho,
        lambda2=result.lambda2,
    )
    return PolicyResponse(**result.to_dict())


@router.post("/check", response_model=FeasibilityResponse, tags=["Policy"])
@limiter.limit(f"{settings.rate_limit_per_minute}/minute")
def check_policy(request: Request, body: FeasibilityRequest):
    """Check a policy against the stochasticity, support, floor and equal-time constraints."""
    times = np.asarray(body.times, dtype=float)
    topology = topology_for_times(times, body.adjacency)
    request.state.node_count = topology.node_count
    report = check_feasibility(
        PolicyMatrix(np.asarray(body.probs, dtype=float)), body.alpha, body.rho, times, topology, body.margin
    )
    return FeasibilityResponse(
        all_passed=report.all_passed,
        checks=[ConstraintCheckResponse(**c.__dict__) for c in report.checks],
    )


@router.post("/gossip", response_model=GossipResponse, tags=["Policy"])
@limiter.limit(f"{settings.rate_limit_per_minute}/minute")
def gossip_matrix(request: Request, body: GossipRequest):
    """Gossip expectation matrix Y of a policy and its second largest eigenvalue."""
    probs = np.asarray(body.probs, dtype=float)
    topology = topology_for_times(probs, body.adjacency)
    request.state.node_count = topology.node_count
    gossip = build_gossip_expectation(PolicyMatrix(probs), body.alpha, body.rho, topology)
    return GossipResponse(Y=gossip.y.tolist(), lambda2=second_largest_eigenvalue(gossip))
