"""Restarted flexible GMRES for the matrix-free field equation

Notes
-----
Arnoldi with modified Gram-Schmidt, Givens rotations on the Hessenberg
matrix. Flexible: the preconditioned directions are stored, so the
preconditioner may change between steps (an inner GMRES is used).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import LinearOperator

from momentpic.exceptions import MomentPICException

logger = logging.getLogger(__name__)

MatVec = Callable[[np.ndarray], np.ndarray]


@dataclass
class KrylovReport:
    """Outcome of one solve. residual is relative to the norm of the rhs"""

    iterations: int
    residual: float
    converged: bool
    restarts: int = 0


def _as_matvec(operator: Union[LinearOperator, MatVec]) -> MatVec:
    if isinstance(operator, LinearOperator):
        return operator.matvec
    return operator


def arnoldi_cycle(
    matvec: MatVec,
    r0: np.ndarray,
    steps: int,
    precondition: Optional[MatVec] = None,
    absolute_tolerance: float = 0.0,
) -> Tuple[np.ndarray, float, int]:
    """One GMRES cycle from residual r0

    Returns
    -------
    Tuple[np.ndarray, float, int]
        correction to add to the current iterate, estimated residual norm,
        number of Arnoldi steps taken
    """
    beta = float(np.linalg.norm(r0))
    n = r0.size
    if beta == 0.0:
        return np.zeros(n), 0.0, 0

    V = np.zeros((steps + 1, n))
    Z = np.zeros((steps, n)) if precondition is not None else None
    H = np.zeros((steps + 1, steps))
    cs = np.zeros(steps)
    sn = np.zeros(steps)
    g = np.zeros(steps + 1)
    g[0] = beta
    V[0] = r0 / beta

    k = 0
    for j in range(steps):
        if precondition is not None:
            z = precondition(V[j])
            Z[j] = z
        else:
            z = V[j]
        w = matvec(z)
        for i in range(j + 1):
            H[i, j] = np.dot(V[i], w)
            w = w - H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        breakdown = H[j + 1, j] <= 1e-14 * beta
        if not breakdown:
            V[j + 1] = w / H[j + 1, j]

        for i in range(j):
            upper = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = upper
        denominator = np.hypot(H[j, j], H[j + 1, j])
        if denominator == 0.0:
            break
        cs[j] = H[j, j] / denominator
        sn[j] = H[j + 1, j] / denominator
        H[j, j] = denominator
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        if abs(g[k]) <= absolute_tolerance or breakdown:
            break

    if k == 0:
        return np.zeros(n), beta, 0
    y = solve_triangular(H[:k, :k], g[:k])
    directions = Z[:k] if Z is not None else V[:k]
    return directions.T @ y, float(abs(g[k])), k


def gmres_preconditioner(operator: Union[LinearOperator, MatVec], steps: int) -> MatVec:
    """Approximate inverse: a fixed number of plain GMRES steps from zero"""
    matvec = _as_matvec(operator)

    def precondition(v: np.ndarray) -> np.ndarray:
        correction, _, taken = arnoldi_cycle(matvec, v, steps)
        if taken == 0:
            return v.copy()
        return correction

    return precondition


def fgmres(
    operator: Union[LinearOperator, MatVec],
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    tolerance: float = 1e-8,
    restart: int = 20,
    max_iterations: int = 200,
    precondition: Optional[MatVec] = None,
) -> Tuple[np.ndarray, KrylovReport]:
    """Solve A x = b to a relative residual below tolerance

    Parameters
    ----------
    operator:
        A as a scipy LinearOperator or a plain matvec callable
    b: np.ndarray
        right hand side
    x0: np.ndarray, optional
        initial guess. Defaults to zero
    tolerance: float
        on |b - A x| / |b|, checked on the true residual after every cycle
    restart: int
        Arnoldi steps per cycle
    max_iterations: int
        total Arnoldi steps over all cycles
    precondition: callable, optional
        right preconditioner, may vary between calls

    Returns
    -------
    Tuple[np.ndarray, KrylovReport]
        the last iterate, which is also the best one seen, and a report.
        Not converging is reported, not raised
    """
    matvec = _as_matvec(operator)
    b = np.asarray(b, dtype=float)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), KrylovReport(0, 0.0, True, 0)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x)
    residual = float(np.linalg.norm(r)) / b_norm
    iterations = cycles = 0
    while residual > tolerance and iterations < max_iterations:
        steps = min(restart, max_iterations - iterations)
        correction, _, taken = arnoldi_cycle(
            matvec, r, steps, precondition, tolerance * b_norm
        )
        if taken == 0:
            break
        candidate = x + correction
        candidate_r = b - matvec(candidate)
        candidate_residual = float(np.linalg.norm(candidate_r)) / b_norm
        iterations += taken
        cycles += 1
        if candidate_residual < residual:
            x, r, residual = candidate, candidate_r, candidate_residual
        else:
            logger.debug(f"GMRES cycle {cycles} did not reduce the residual")
            break
        logger.debug(f"GMRES cycle {cycles}: {iterations} steps, residual {residual:.3e}")

    return x, KrylovReport(
        iterations=iterations,
        residual=residual,
        converged=residual <= tolerance,
        restarts=max(cycles - 1, 0),
    )


class SolverError(MomentPICException):
    pass


class SolverNotConvergedException(SolverError):
    """The field solve did not reach its tolerance

    Parameters
    ----------
    message: str
        description
    report: KrylovReport
        how far the solve got
    best: np.ndarray
        best iterate found
    """

    def __init__(self, message: str, report: KrylovReport, best: np.ndarray):
        super().__init__(message)
        self.report = report
        self.best = best
