import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import aslinearoperator

from momentpic.krylov import (
    KrylovReport,
    SolverNotConvergedException,
    arnoldi_cycle,
    fgmres,
    gmres_preconditioner,
)


def _system(seed: int, size: int = 40):
    """Diagonally dominant non-symmetric system with known solution"""
    rng = np.random.default_rng(seed)
    A = 4 * np.eye(size) + rng.normal(scale=0.3, size=(size, size))
    x = rng.normal(size=size)
    return A, x, A @ x


def test_solves_small_system():
    A, x, b = _system(0)
    solution, report = fgmres(lambda v: A @ v, b, tolerance=1e-10)
    assert report.converged
    assert report.residual <= 1e-10
    assert np.allclose(solution, x, atol=1e-8)
    assert report.iterations > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_residual_reaches_tolerance(seed):
    A, _, b = _system(seed, size=25)
    solution, report = fgmres(aslinearoperator(A), b, tolerance=1e-9, restart=10)
    assert report.converged
    assert np.linalg.norm(b - A @ solution) / np.linalg.norm(b) <= 1e-9 * (1 + 1e-6)


def test_zero_rhs():
    A, _, _ = _system(1)
    solution, report = fgmres(lambda v: A @ v, np.zeros(40))
    assert not np.any(solution)
    assert report == KrylovReport(iterations=0, residual=0.0, converged=True, restarts=0)


def test_exact_initial_guess_needs_no_iterations():
    A, x, b = _system(2)
    solution, report = fgmres(lambda v: A @ v, b, x0=x, tolerance=1e-8)
    assert report.iterations == 0
    assert np.array_equal(solution, x)


def test_not_converging_is_reported():
    A, _, b = _system(3)
    _, report = fgmres(lambda v: A @ v, b, tolerance=1e-14, restart=2, max_iterations=3)
    assert not report.converged
    assert report.iterations == 3
    assert report.restarts == 1
    assert 0 < report.residual < 1


def test_restarts_still_converge():
    A, x, b = _system(4)
    solution, report = fgmres(lambda v: A @ v, b, tolerance=1e-10, restart=3)
    assert report.converged
    assert report.restarts > 0
    assert np.allclose(solution, x, atol=1e-8)


def test_preconditioning_reduces_outer_iterations():
    rng = np.random.default_rng(5)
    size = 200
    A = np.diag(np.linspace(1.0, 100.0, size)) + rng.normal(scale=0.01, size=(size, size))
    b = rng.normal(size=size)
    operator = aslinearoperator(A)
    _, plain = fgmres(operator, b, tolerance=1e-8, restart=50, max_iterations=400)
    _, preconditioned = fgmres(
        operator, b, tolerance=1e-8, restart=50, max_iterations=400,
        precondition=gmres_preconditioner(operator, 5),
    )
    assert preconditioned.converged
    assert not plain.converged or preconditioned.iterations < plain.iterations


def test_arnoldi_cycle_of_zero_residual():
    correction, residual, steps = arnoldi_cycle(lambda v: v, np.zeros(5), 3)
    assert steps == 0
    assert residual == 0.0
    assert not np.any(correction)


def test_arnoldi_cycle_exact_for_identity():
    r0 = np.arange(1.0, 6.0)
    correction, residual, steps = arnoldi_cycle(lambda v: 2 * v, r0, 5)
    # the Krylov space of a multiple of I is one dimensional
    assert steps == 1
    assert residual == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(correction, r0 / 2)


def test_not_converged_exception_carries_best():
    report = KrylovReport(iterations=5, residual=0.1, converged=False)
    error = SolverNotConvergedException("stopped", report=report, best=np.ones(3))
    assert error.report is report
    assert np.array_equal(error.best, np.ones(3))
    assert str(error) == "stopped"
