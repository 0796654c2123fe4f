"""
Damped Gauss-Newton (Levenberg-Marquardt) least squares with a forward-difference Jacobian.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import LinAlgError, lstsq, solve

from ..utils.parallel import ordered_map

logger = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray], np.ndarray]

INITIAL_DAMPING = 1e-3
DAMPING_UP = 10.0
DAMPING_DOWN = 0.1
MIN_DAMPING = 1e-12
MAX_DAMPING = 1e12


@dataclass
class LsqProblem:
    residuals: ResidualFn
    x0: np.ndarray
    max_iterations: int = 200
    jacobian_step: float = 1e-5
    ftol: float = 1e-8  # relative cost decrease
    xtol: float = 1e-9  # step norm
    damping: float = INITIAL_DAMPING
    workers: Optional[int] = None


@dataclass
class LsqResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str
    costs: List[float] = field(default_factory=list)

    @property
    def stalled(self) -> bool:
        return not self.converged


def cost_of(r: np.ndarray) -> float:
    return 0.5 * float(r @ r)


def forward_difference_jacobian(fn: ResidualFn, x: np.ndarray, r0: Optional[np.ndarray] = None,
                                step: float = 1e-5, workers: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r0 = fn(x) if r0 is None else r0

    def column(j):
        xj = x.copy()
        xj[j] += step
        return (fn(xj) - r0) / step

    return np.column_stack(ordered_map(column, range(x.size), workers=workers))


def central_difference_jacobian(fn: ResidualFn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[j] += step
        lo[j] -= step
        cols.append((fn(hi) - fn(lo)) / (2 * step))
    return np.column_stack(cols)


def _damped_step(jtj: np.ndarray, gradient: np.ndarray, damping: float) -> np.ndarray:
    system = jtj + damping * np.eye(len(gradient))
    try:
        return solve(system, -gradient, assume_a="pos", check_finite=False)
    except LinAlgError:
        return lstsq(system, -gradient, check_finite=False)[0]


def solve_lsq(problem: LsqProblem, logger: logging.Logger = logger) -> LsqResult:
    """
    Minimizes 0.5 * ||r(x)||^2.

    Converges when an accepted step lowers the cost by less than ftol
    (relative) or the proposed step is shorter than xtol. Rejected steps raise
    the damping x10; accepted ones lower it x10. The cost never increases
    across accepted iterations.
    """
    x = np.array(problem.x0, dtype=float)
    r = problem.residuals(x)
    cost = initial_cost = cost_of(r)
    costs = [cost]
    damping = problem.damping
    reason = "max-iterations"
    converged = False
    iteration = 0

    for iteration in range(1, problem.max_iterations + 1):
        if cost == 0.0:
            reason, converged = "zero-cost", True
            break
        jac = forward_difference_jacobian(problem.residuals, x, r, problem.jacobian_step, problem.workers)
        jtj = jac.T @ jac
        gradient = jac.T @ r

        accepted = False
        while not accepted:
            delta = _damped_step(jtj, gradient, damping)
            if np.linalg.norm(delta) < problem.xtol:
                reason, converged = "step", True
                break
            x_new = x + delta
            r_new = problem.residuals(x_new)
            cost_new = cost_of(r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                decrease = (cost - cost_new) / cost
                x, r, cost = x_new, r_new, cost_new
                costs.append(cost)
                damping = max(damping * DAMPING_DOWN, MIN_DAMPING)
                if decrease < problem.ftol:
                    reason, converged = "ftol", True
            else:
                damping *= DAMPING_UP
                if damping > MAX_DAMPING:
                    reason = "damping-limit"
                    break
        if converged or reason == "damping-limit":
            break

    logger.info(f"LM stopped after {iteration} iterations ({reason}): cost {initial_cost:.4e} -> {cost:.4e}")
    return LsqResult(x=x, cost=cost, initial_cost=initial_cost, iterations=iteration,
                     converged=converged, reason=reason, costs=costs)
