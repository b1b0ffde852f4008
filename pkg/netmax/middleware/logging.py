import time
import uuid
from typing import Callable, Optional

import structlog
from fastapi import Request, Response
from starlette.middleware.base import BaseHTTPMiddleware
from starlette.types import ASGIApp

NODE_COUNT_HEADER = "X-Node-Count"


def _node_count(request: Request) -> Optional[int]:
    # set by the policy endpoints once the time matrix has a topology
    return getattr(request.state, "node_count", None)


class LoggingMiddleware(BaseHTTPMiddleware):
    """Request logging with a per-request ID, timing headers and the policy problem size.

    Policy endpoints record the node count of the matrix they solved on
    ``request.state``; it is logged on completion and echoed in ``X-Node-Count``.
    """

    def __init__(self, app: ASGIApp):
        super().__init__(app)
        self.logger = structlog.get_logger(__name__)

    async def dispatch(self, request: Request, call_next: Callable) -> Response:
        request_id = str(uuid.uuid4())
        request.state.request_id = request_id
        start_time = time.perf_counter()

        self.logger.info(
            "Request started",
            request_id=request_id,
            method=request.method,
            path=request.url.path,
            client_ip=request.client.host if request.client else None,
        )

        try:
            response = await call_next(request)
        except Exception as e:
            self.logger.error(
                "Request failed",
                request_id=request_id,
                path=request.url.path,
                node_count=_node_count(request),
                error_type=type(e).__name__,
                process_time_ms=round((time.perf_counter() - start_time) * 1000, 2),
                exc_info=True,
            )
            raise

        process_time = round((time.perf_counter() - start_time) * 1000, 2)
        node_count = _node_count(request)
        self.logger.info(
            "Request completed",
            request_id=request_id,
            path=request.url.path,
            status_code=response.status_code,
            node_count=node_count,
            process_time_ms=process_time,
        )
        response.headers["X-Request-ID"] = request_id
        response.headers["X-Process-Time"] = str(process_time)
        if node_count is not None:
            response.headers[NODE_COUNT_HEADER] = str(node_count)
        return response
