"""Symmetric eigenvalue kernels used by the policy engine.

``deflated_power_iteration`` finds the largest eigenvalue of a symmetric,
doubly stochastic matrix on the complement of the all-ones vector. The
operator is shifted to ``Q (Y + I) Q / 2`` so that every complement
eigenvalue lies in [0, 1] and the all-ones direction maps to 0; the
dominant eigenvector is then isolated by repeated squaring and polished with
plain power steps. ``jacobi_eigenvalues`` is the cyclic Jacobi full
decomposition used as fallback and as a test oracle.
"""

from dataclasses import dataclass

import numpy as np

EIGEN_TOL = 1e-10


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    converged: bool
    residual: float
    method: str


def shifted_complement_operator(y: np.ndarray) -> np.ndarray:
    m = y.shape[0]
    q = np.eye(m) - np.full((m, m), 1.0 / m)
    op = q @ (y + np.eye(m)) @ q / 2.0
    return (op + op.T) / 2.0


def deflated_power_iteration(
    y: np.ndarray,
    tol: float = EIGEN_TOL,
    squarings: int = 48,
    polish_steps: int = 200,
    seed: int = 0,
) -> EigenResult:
    """Second largest eigenvalue of ``y`` via power iteration on the deflated operator."""
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    op = shifted_complement_operator(y)
    ones = np.full(m, 1.0 / np.sqrt(m))

    power = op.copy()
    for _ in range(squarings):
        scale = np.abs(power).max()
        if scale == 0.0:
            break
        power = power / scale
        power = power @ power
    norms = np.linalg.norm(power, axis=0)
    if norms.max() > 0.0:
        v = power[:, int(np.argmax(norms))]
    else:
        v = np.random.default_rng(seed).standard_normal(m)
    v = v - ones * (ones @ v)
    v /= np.linalg.norm(v)

    mu = float(v @ op @ v)
    residual = float(np.linalg.norm(op @ v - mu * v))
    for _ in range(polish_steps):
        if residual <= tol:
            break
        w = op @ v
        w = w - ones * (ones @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
        mu = float(v @ op @ v)
        residual = float(np.linalg.norm(op @ v - mu * v))

    return EigenResult(2.0 * mu - 1.0, v, residual <= tol, residual, "power")


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.

    Raises ``ArithmeticError`` if the off-diagonal mass does not vanish within
    ``max_sweeps`` sweeps.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        off = float(np.sqrt(np.sum(np.triu(a, k=1) ** 2)))
        if off <= tol * scale:
            return np.sort(np.diag(a))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
    raise ArithmeticError(f"Jacobi sweeps did not converge within {max_sweeps} sweeps")


def jacobi_second_eigenvalue(y: np.ndarray) -> float:
    op = shifted_complement_operator(np.asarray(y, dtype=float))
    return 2.0 * float(jacobi_eigenvalues(op)[-1]) - 1.0
