"""Quadratic losses, noisy gradient oracles and the pairwise consensus update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import structlog

from netmax.core.exceptions import NetMaxError
from netmax.models.experiment import LossSpec
from netmax.services.network_model import Topology

logger = structlog.get_logger(__name__)


class ConsensusError(NetMaxError):
    """Base exception for loss and update errors."""
    pass


class ZeroProbabilityError(ConsensusError):
    """Raised when an edge update is requested with selection probability 0."""
    pass


class SingularSystemError(ConsensusError):
    pass


@dataclass(frozen=True)
class QuadraticLoss:
    """f(x) = 1/2 (x - b)^T A (x - b) with additive zero-mean gradient noise."""

    a_matrix: np.ndarray
    center: np.ndarray
    noise_sigma: float = 0.0
    noise_kind: str = "gaussian"
    grad_bound: Optional[float] = None
    mu: float = field(init=False)
    lips: float = field(init=False)

    def __post_init__(self) -> None:
        a = np.array(self.a_matrix, dtype=float)
        if a.ndim == 1:
            a = np.diag(a)
        b = np.array(self.center, dtype=float).reshape(-1)
        if a.shape != (b.size, b.size):
            raise ConsensusError(f"A must be {b.size}x{b.size}, got {a.shape}")
        if not np.allclose(a, a.T):
            raise ConsensusError("A must be symmetric")
        eigs = np.linalg.eigvalsh(a)
        if eigs[0] <= 0:
            raise ConsensusError("A must be positive definite")
        if self.noise_sigma < 0:
            raise ConsensusError("noise_sigma must be non-negative")
        if self.noise_kind not in ("gaussian", "rademacher"):
            raise ConsensusError(f"unknown noise kind '{self.noise_kind}'")
        for arr in (a, b):
            arr.setflags(write=False)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "center", b)
        object.__setattr__(self, "mu", float(eigs[0]))
        object.__setattr__(self, "lips", float(eigs[-1]))

    @property
    def dim(self) -> int:
        return self.center.size

    def value(self, x: np.ndarray) -> float:
        r = np.asarray(x, dtype=float) - self.center
        return 0.5 * float(r @ self.a_matrix @ r)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.a_matrix @ (np.asarray(x, dtype=float) - self.center)


def local_gradient(loss: QuadraticLoss, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact gradient plus noise with E[xi^T xi] = sigma^2; sigma = 0 consumes no randomness."""
    grad = loss.gradient(x)
    if loss.noise_sigma == 0.0:
        return grad
    scale = loss.noise_sigma / np.sqrt(loss.dim)
    if loss.noise_kind == "rademacher":
        noise = scale * (2.0 * rng.integers(0, 2, size=loss.dim) - 1.0)
    else:
        noise = rng.normal(0.0, scale, size=loss.dim)
    return grad + noise


@dataclass(frozen=True)
class UpdateParams:
    alpha: float
    rho: float
    d_sum: float
    p_im: float

    @property
    def mixing_weight(self) -> float:
        if self.d_sum == 0:
            return 0.0
        if self.p_im <= 0:
            raise ZeroProbabilityError(f"edge update with selection probability {self.p_im}")
        return self.alpha * self.rho * self.d_sum / (2.0 * self.p_im)


def mixing_update(x_i: np.ndarray, g: np.ndarray, x_m: np.ndarray, alpha: float, weight: float) -> np.ndarray:
    """(1 - w)(x_i - alpha g) + w x_m."""
    local = np.asarray(x_i, dtype=float) - alpha * np.asarray(g, dtype=float)
    if weight == 0.0:
        return local
    return (1.0 - weight) * local + weight * np.asarray(x_m, dtype=float)


def two_step_update(x_i: np.ndarray, g: np.ndarray, x_m: np.ndarray, params: UpdateParams) -> np.ndarray:
    return mixing_update(x_i, g, x_m, params.alpha, params.mixing_weight)


def update_operator(i: int, m: int, alpha: float, rho: float, gamma: float, node_count: int) -> np.ndarray:
    """D = I + alpha*rho*gamma e_i (e_m - e_i)^T for a single global step."""
    if i == m:
        raise ConsensusError("update operator needs i != m")
    if gamma <= 0:
        raise ConsensusError(f"gamma must be positive, got {gamma}")
    d = np.eye(node_count)
    w = alpha * rho * gamma
    d[i, i] -= w
    d[i, m] += w
    return d


def global_objective(xs: np.ndarray, losses: Sequence[QuadraticLoss], rho: float, topology: Topology) -> float:
    xs = np.asarray(xs, dtype=float)
    if xs.shape[0] != len(losses):
        raise ConsensusError(f"got {xs.shape[0]} models for {len(losses)} losses")
    total = sum(loss.value(x) for loss, x in zip(losses, xs))
    if rho == 0.0:
        return float(total)
    sq = np.sum((xs[:, None, :] - xs[None, :, :]) ** 2, axis=2)
    return float(total + rho / 4.0 * np.sum(topology.adjacency * sq))


def optimum_oracle(losses: Sequence[QuadraticLoss]) -> np.ndarray:
    a_sum = sum(loss.a_matrix for loss in losses)
    rhs = sum(loss.a_matrix @ loss.center for loss in losses)
    try:
        return np.linalg.solve(a_sum, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError(f"sum of Hessians is singular: {e}") from e


@dataclass(frozen=True)
class LearningRateCheck:
    ok: bool
    alpha: float
    limit: float
    message: Optional[str] = None


def validate_learning_rate(alpha: float, losses: Sequence[QuadraticLoss]) -> LearningRateCheck:
    mu = min(loss.mu for loss in losses)
    lips = max(loss.lips for loss in losses)
    limit = 2.0 / (mu + lips)
    if alpha <= 0:
        return LearningRateCheck(False, alpha, limit, f"learning rate {alpha} is not positive")
    if alpha > limit * (1.0 + 1e-12):
        return LearningRateCheck(False, alpha, limit, f"learning rate {alpha} exceeds 2/(mu+L) = {limit:.6g}")
    return LearningRateCheck(True, alpha, limit)


def _random_spd(rng: np.random.Generator, dim: int, mu: float, lips: float) -> np.ndarray:
    eigs = np.linspace(mu, lips, dim)
    if dim == 1:
        return np.array([[mu]])
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    a = (q * eigs) @ q.T
    return (a + a.T) / 2.0


def build_losses(spec: LossSpec, node_count: int) -> List[QuadraticLoss]:
    """Explicit diagonal losses, or seeded random SPD quadratics with spectrum in [mu, L]."""
    extra = dict(noise_sigma=spec.noise_sigma, noise_kind=spec.noise_kind, grad_bound=spec.grad_bound)
    if spec.kind == "explicit":
        return [
            QuadraticLoss(np.asarray(diag, dtype=float), np.asarray(center, dtype=float), **extra)
            for diag, center in zip(spec.a_diagonals, spec.centers)
        ]

    rng = np.random.default_rng(spec.seed)
    base_center = np.zeros(spec.dim) if spec.center is None else np.asarray(spec.center, dtype=float)
    shared = _random_spd(rng, spec.dim, spec.mu, spec.lips) if spec.shared else None
    losses = []
    for _ in range(node_count):
        a = shared if shared is not None else _random_spd(rng, spec.dim, spec.mu, spec.lips)
        center = base_center
        if spec.center_spread > 0:
            center = base_center + spec.center_spread * rng.standard_normal(spec.dim)
        losses.append(QuadraticLoss(a, center, **extra))
    return losses


def initial_models(
    x_star: np.ndarray, node_count: int, mode: str, scale: float, rng: np.random.Generator
) -> np.ndarray:
    """Starting models around x*; 'sphere' puts every node at distance exactly ``scale``."""
    dim = x_star.size
    offsets = rng.standard_normal((node_count, dim))
    if mode == "sphere":
        norms = np.linalg.norm(offsets, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        offsets = offsets / norms
    elif mode != "gaussian":
        raise ConsensusError(f"unknown init mode '{mode}'")
    return x_star[None, :] + scale * offsets
