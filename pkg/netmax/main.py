from contextlib import asynccontextmanager
from datetime import datetime
import time
import uuid

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from slowapi.errors import RateLimitExceeded
import structlog

from netmax.api.v1.endpoints import policy
from netmax.core.config import settings
from netmax.core.exceptions import ConfigInvalidError, NetMaxError
from netmax.core.logging import setup_logging
from netmax.middleware.auth import verify_api_key
from netmax.middleware.logging import LoggingMiddleware
from netmax.middleware.rate_limit import limiter
from netmax.models.responses import ErrorResponse, HealthResponse
from netmax.services.network_model import NetworkModelError
from netmax.services.policy_engine import NoFeasiblePolicyError, PolicyEngineError

setup_logging()
logger = structlog.get_logger(__name__)

START_TIME = time.time()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager."""
    logger.info(
        "Service starting",
        project=settings.project_name,
        version=settings.version,
        debug=settings.debug,
        host=settings.host,
        port=settings.port,
        auth_enabled=settings.api_key is not None,
    )
    yield
    logger.info("Service stopping", project=settings.project_name)


app = FastAPI(
    title=settings.project_name,
    version=settings.version,
    description="Communication-policy optimizer for decentralized consensus SGD",
    docs_url="/docs" if settings.debug else None,
    redoc_url="/redoc" if settings.debug else None,
    lifespan=lifespan,
)

app.state.limiter = limiter

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)
app.add_middleware(LoggingMiddleware)


def _error(request: Request, status_code: int, error: str, detail: str) -> JSONResponse:
    request_id = getattr(request.state, "request_id", str(uuid.uuid4()))
    error_response = ErrorResponse(
        error=error,
        detail=detail,
        timestamp=datetime.utcnow(),
        request_id=request_id,
        status_code=status_code,
    )
    return JSONResponse(status_code=status_code, content=error_response.model_dump(mode="json"))


@app.exception_handler(NoFeasiblePolicyError)
async def no_feasible_policy_handler(request: Request, exc: NoFeasiblePolicyError):
    """Every grid point was infeasible."""
    return _error(request, 409, "No Feasible Policy", str(exc))


@app.exception_handler(PolicyEngineError)
async def policy_engine_exception_handler(request: Request, exc: PolicyEngineError):
    return _error(request, 422, "Invalid Policy Input", str(exc))


@app.exception_handler(NetworkModelError)
async def network_model_exception_handler(request: Request, exc: NetworkModelError):
    return _error(request, 422, "Invalid Topology", str(exc))


@app.exception_handler(ConfigInvalidError)
async def config_exception_handler(request: Request, exc: ConfigInvalidError):
    return _error(request, 422, "Invalid Config", exc.describe())


@app.exception_handler(NetMaxError)
async def netmax_exception_handler(request: Request, exc: NetMaxError):
    return _error(request, 500, "Internal Error", str(exc))


@app.exception_handler(HTTPException)
async def http_exception_handler(request: Request, exc: HTTPException):
    return _error(request, exc.status_code, "HTTP Error", str(exc.detail))


@app.exception_handler(RateLimitExceeded)
async def ratelimit_handler(request: Request, exc: RateLimitExceeded):
    return _error(request, 429, "Rate Limit Exceeded", "Too many requests. Please try again later.")


@app.exception_handler(Exception)
async def general_exception_handler(request: Request, exc: Exception):
    detail = str(exc) if settings.debug else "An unexpected error occurred"
    return _error(request, 500, "Internal Server Error", detail)


@app.get("/health", response_model=HealthResponse, tags=["Health"])
async def health_check():
    """Health check endpoint."""
    return HealthResponse(
        status="healthy",
        timestamp=datetime.utcnow(),
        version=settings.version,
        uptime=int(time.time() - START_TIME),
    )


@app.get("/", tags=["Root"])
async def root():
    """Root endpoint with service information."""
    return {
        "service": settings.project_name,
        "version": settings.version,
        "status": "running",
        "timestamp": datetime.utcnow().isoformat(),
        "docs": "/docs" if settings.debug else None,
    }


app.include_router(
    policy.router,
    prefix="/api/v1/policy",
    tags=["Policy"],
    dependencies=[Depends(verify_api_key)],
)
