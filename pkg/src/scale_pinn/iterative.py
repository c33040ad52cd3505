"""Stationary residual-correction solvers and their loss-form equivalent.

``u^{k+1} = u^k + B^{-1} (h - A u^k)`` with B = I/xi (modified Richardson),
D (Jacobi) or D + L (Gauss-Seidel).
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

METHODS = ("richardson", "jacobi", "gauss_seidel")


class SingularDiagonalError(ArithmeticError):
    pass


def correction_matrix(method: str, A: np.ndarray, xi: float | None = None) -> np.ndarray:
    """The matrix B of the residual-correction update."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if method == "richardson":
        if xi is None or not xi > 0:
            raise ValueError("richardson needs a relaxation factor xi > 0")
        return np.eye(n) / xi
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if np.any(np.diag(A) == 0.0):
        raise SingularDiagonalError(f"{method} needs a nonzero diagonal")
    if method == "jacobi":
        return np.diag(np.diag(A))
    return np.tril(A)


def _apply_inverse(method, B, r):
    if method == "richardson":
        return r / B[0, 0]
    if method == "jacobi":
        return r / np.diag(B)
    return solve_triangular(B, r, lower=True)


def linear_iterate(method: str, A, h, u0, iters: int, xi: float | None = None):
    """Run ``iters`` correction steps; returns (iterates, residual norms).

    ``iterates[k]`` is u^k (``iterates[0] = u0``) and ``norms[k]`` is
    ``||h - A u^k||_2``.
    """
    A = np.asarray(A, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != h.shape[0]:
        raise ValueError("A must be square and match h")
    B = correction_matrix(method, A, xi)
    u = np.array(u0, dtype=np.float64)
    iterates, norms = [u.copy()], []
    r = h - A @ u
    norms.append(float(np.linalg.norm(r)))
    for _ in range(iters):
        u = u + _apply_inverse(method, B, r)
        r = h - A @ u
        iterates.append(u.copy())
        norms.append(float(np.linalg.norm(r)))
    return np.array(iterates), np.array(norms)


def minimise_correction_loss(B, A, h, u_prev) -> np.ndarray:
    """argmin_u ||B (u - u_prev) + (A u_prev - h)||^2, solved as least squares."""
    rhs = B @ u_prev - (A @ u_prev - h)
    sol, *_ = np.linalg.lstsq(B, rhs, rcond=None)
    return sol


def linear_sc_equivalence(A, h, xi: float, steps: int, method: str = "richardson", u0=None) -> float:
    """Max elementwise gap between loss-minimisation steps and the direct iteration.

    Each outer step treats the solution vector as the trainable parameters
    and minimises the correction loss around the previous iterate; the
    sequence must coincide with ``linear_iterate``.
    """
    A = np.asarray(A, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    u = np.zeros_like(h) if u0 is None else np.array(u0, dtype=np.float64)
    direct, _ = linear_iterate(method, A, h, u, steps, xi=xi)
    B = correction_matrix(method, A, xi)
    worst = 0.0
    for k in range(steps):
        u = minimise_correction_loss(B, A, h, u)
        worst = max(worst, float(np.max(np.abs(u - direct[k + 1]))))
    return worst


def poisson_1d(n: int) -> np.ndarray:
    """Tridiagonal (2, -1) matrix of the 1-D Dirichlet Laplacian (unscaled)."""
    return 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
