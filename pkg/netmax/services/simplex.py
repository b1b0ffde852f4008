"""Dense two-phase primal simplex for small equality-form LPs.

Solves ``minimize c^T x  s.t.  A x = b, x >= 0`` on a full tableau.
Row 0 of the tableau holds reduced costs with ``-z`` in the last column;
rows 1..m hold the constraints. Entering and leaving variables follow
Bland's rule, so the method terminates on degenerate problems.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

DEFAULT_MAX_ITERATIONS = 10_000
PIVOT_TOL = 1e-10
FEASIBILITY_TOL = 1e-9


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class LPSolution:
    status: LPStatus
    x: Optional[np.ndarray]
    objective: Optional[float]
    iterations: int


class _Tableau:
    def __init__(self, table: np.ndarray, basis: List[int]):
        self.table = table
        self.basis = basis

    @property
    def rows(self) -> int:
        return self.table.shape[0] - 1

    def pivot(self, row: int, col: int) -> None:
        t = self.table
        t[row] /= t[row, col]
        factors = t[:, col].copy()
        factors[row] = 0.0
        t -= np.outer(factors, t[row])
        self.basis[row - 1] = col

    def run(self, allowed: int, budget: int) -> "tuple[LPStatus, int]":
        """Pivot until optimal over the first ``allowed`` columns or the budget runs out."""
        t = self.table
        for used in range(budget):
            reduced = t[0, :allowed]
            entering = np.flatnonzero(reduced < -PIVOT_TOL)
            if entering.size == 0:
                return LPStatus.OPTIMAL, used
            col = int(entering[0])
            column = t[1:, col]
            positive = column > PIVOT_TOL
            if not positive.any():
                return LPStatus.UNBOUNDED, used
            ratios = np.full(self.rows, np.inf)
            ratios[positive] = t[1:, -1][positive] / column[positive]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
            row = 1 + int(min(ties, key=lambda r: self.basis[r]))
            self.pivot(row, col)
        return LPStatus.ITERATION_LIMIT, budget


def solve_standard_form(
    c: np.ndarray,
    a_eq: np.ndarray,
    b_eq: np.ndarray,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> LPSolution:
    c = np.asarray(c, dtype=float)
    a = np.array(a_eq, dtype=float, ndmin=2)
    b = np.array(b_eq, dtype=float)
    m, n = a.shape

    # Artificial basis needs a non-negative right-hand side
    flip = b < 0
    a[flip] *= -1
    b[flip] *= -1

    table = np.zeros((m + 1, n + m + 1))
    table[1:, :n] = a
    table[1:, n:n + m] = np.eye(m)
    table[1:, -1] = b
    table[0, n:n + m] = 1.0
    table[0] -= table[1:].sum(axis=0)
    tab = _Tableau(table, list(range(n, n + m)))

    status, used = tab.run(n + m, max_iterations)
    if status is LPStatus.ITERATION_LIMIT:
        return LPSolution(status, None, None, used)
    if -tab.table[0, -1] > FEASIBILITY_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
        return LPSolution(LPStatus.INFEASIBLE, None, None, used)

    # Drive remaining artificials out of the basis; rows that cannot pivot are redundant
    redundant = []
    for r in range(m):
        if tab.basis[r] < n:
            continue
        candidates = np.flatnonzero(np.abs(tab.table[r + 1, :n]) > PIVOT_TOL)
        if candidates.size:
            tab.pivot(r + 1, int(candidates[0]))
        else:
            redundant.append(r)
    if redundant:
        keep = [0] + [r + 1 for r in range(m) if r not in redundant]
        tab.basis = [tab.basis[r - 1] for r in keep[1:]]
        tab.table = tab.table[keep]

    # Phase two on the original columns
    table = np.hstack([tab.table[:, :n], tab.table[:, -1:]])
    table[0] = 0.0
    table[0, :n] = c
    for r, var in enumerate(tab.basis):
        table[0] -= c[var] * table[r + 1]
    tab = _Tableau(table, tab.basis)
    status, more = tab.run(n, max_iterations - used)
    used += more
    if status is not LPStatus.OPTIMAL:
        return LPSolution(status, None, None, used)

    x = np.zeros(n)
    for r, var in enumerate(tab.basis):
        x[var] = tab.table[r + 1, -1]
    x = np.maximum(x, 0.0)
    return LPSolution(LPStatus.OPTIMAL, x, float(c @ x), used)
