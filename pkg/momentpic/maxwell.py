"""Implicit field equation for E^{n+1}, magnetic field advance and Gauss law
check

Notes
-----
The electric field at n+1 solves::

    (I + chi) E - (c dt)^2 [lap E + grad div (chi E)]
        = E^n + c dt (curl B^n - 4 pi J_hat / c) - (c dt)^2 grad (4 pi rho_hat)

on the unique nodes. Unknowns are ordered node by node in C order with the
three components innermost.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator

from momentpic.core import FailurePolicy, SolverParams
from momentpic.grid import FieldGrid, Mesh, curl, divergence, gradient, laplacian
from momentpic.krylov import (
    KrylovReport,
    SolverError,
    SolverNotConvergedException,
    fgmres,
    gmres_preconditioner,
)
from momentpic.moments import HatMoments

logger = logging.getLogger(__name__)


def apply_maxwell_operator(
    E: np.ndarray, chi: np.ndarray, dt: float, c: float, mesh: Mesh
) -> np.ndarray:
    """A(E) for E given flat or as a unique (P0, P1, P2, 3) array

    Returns
    -------
    np.ndarray
        flat A(E)
    """
    field = mesh.unflatten(E)
    chi_E = np.einsum("...ij,...j->...i", chi, field)
    div_chi_E = divergence(mesh.pad(chi_E), mesh)
    result = field + chi_E - (c * dt) ** 2 * (
        laplacian(mesh.pad(field), mesh) + gradient(mesh.pad(div_chi_E), mesh)
    )
    return result.reshape(-1)


def maxwell_operator(chi: np.ndarray, dt: float, c: float, mesh: Mesh) -> LinearOperator:
    """A as a matrix-free scipy LinearOperator"""
    size = 3 * mesh.n_unique
    return LinearOperator(
        shape=(size, size),
        matvec=lambda E: apply_maxwell_operator(E, chi, dt, c, mesh),
        dtype=float,
    )


def build_rhs(grid: FieldGrid, hat: HatMoments, dt: float, c: float) -> np.ndarray:
    """Right hand side from E^n, B^n (ghosts synced) and the hat moments"""
    mesh = grid.mesh
    rhs = (
        grid.E_unique
        + c * dt * (curl(grid.B, mesh) - 4 * np.pi * hat.J_hat / c)
        - (c * dt) ** 2 * gradient(mesh.pad(4 * np.pi * hat.rho_hat), mesh)
    )
    if not np.all(np.isfinite(rhs)):
        raise SolverError("Non-finite right hand side")
    return rhs.reshape(-1)


def solve_fields(
    operator: LinearOperator,
    rhs: np.ndarray,
    params: SolverParams = SolverParams(),
    x0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, KrylovReport]:
    """Solve A E = rhs with FGMRES, preconditioned by a short inner GMRES

    Raises
    ------
    SolverNotConvergedException
        When the tolerance is not reached and on_failure is abort. With warn,
        the best iterate is returned and a warning logged

    Returns
    -------
    Tuple[np.ndarray, KrylovReport]
        flat E^{n+1} and the solve report
    """
    precondition = None
    if params.preconditioner_iterations > 0:
        precondition = gmres_preconditioner(operator, params.preconditioner_iterations)
    solution, report = fgmres(
        operator,
        rhs,
        x0=x0,
        tolerance=params.tolerance,
        restart=params.restart,
        max_iterations=params.max_iterations,
        precondition=precondition,
    )
    if not report.converged:
        message = (
            f"Field solve stopped at residual {report.residual:.3e} after "
            f"{report.iterations} iterations, tolerance {params.tolerance:.1e}"
        )
        if params.on_failure == FailurePolicy.ABORT:
            raise SolverNotConvergedException(message, report=report, best=solution)
        logger.warning(message)
    return solution, report


def advance_B(grid: FieldGrid, E_np1: np.ndarray, dt: float, c: float) -> np.ndarray:
    """B^{n+1} = B^n - c dt curl E^{n+1}

    Parameters
    ----------
    grid: FieldGrid
        holds B^n
    E_np1: np.ndarray
        unique (P0, P1, P2, 3) new electric field

    Returns
    -------
    np.ndarray
        unique B^{n+1}
    """
    mesh = grid.mesh
    return grid.B_unique - c * dt * curl(mesh.pad(E_np1), mesh)


def gauss_residual(grid: FieldGrid, rho: np.ndarray, floor: float = 1e-300) -> float:
    """|div E - 4 pi rho| / max(|4 pi rho|, floor) over the unique nodes, with
    the ghosts currently on the grid
    """
    source = 4 * np.pi * np.asarray(rho)
    difference = divergence(grid.E, grid.mesh) - source
    return float(np.linalg.norm(difference) / max(np.linalg.norm(source), floor))
