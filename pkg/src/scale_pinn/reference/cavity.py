"""Steady lid-driven cavity in vorticity-streamfunction form on a uniform grid.

Second-order central differences with Thom wall vorticity.  The coupled
(psi, omega) system is solved by damped Newton iteration, continued in the
Reynolds number from a low-Re start.  Velocities come from central
differences of psi.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..autodiff import ConfigurationError
from .grid import FieldGrid

log = logging.getLogger(__name__)

RE_MAX = 1000.0
RE_START = 100.0


class OracleConvergenceError(RuntimeError):
    pass


class _Operators:
    """Sparse difference operators on the full n x n node grid, index i*n + j for (x_i, y_j)."""

    def __init__(self, n: int):
        self.n = n
        self.h = h = 1.0 / (n - 1)
        eye = sp.identity(n, format="csr")
        d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2 * h)
        d2 = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2
        self.Dx = sp.kron(d1, eye, format="csr")
        self.Dy = sp.kron(eye, d1, format="csr")
        self.Lap = (sp.kron(d2, eye) + sp.kron(eye, d2)).tocsr()
        mask = np.zeros((n, n), dtype=bool)
        mask[1:-1, 1:-1] = True
        self.interior = mask.ravel()
        self.P_int = sp.diags(self.interior.astype(float))
        self.P_bnd = sp.diags((~self.interior).astype(float))
        self.I = sp.identity(n * n, format="csr")
        # Thom rows: omega_wall + 2 psi_adjacent / h^2 = lid term
        idx = np.arange(n * n).reshape(n, n)
        rows, cols = [], []
        for wall, adj in ((idx[0, 1:-1], idx[1, 1:-1]), (idx[-1, 1:-1], idx[-2, 1:-1]),
                          (idx[1:-1, 0], idx[1:-1, 1]), (idx[1:-1, -1], idx[1:-1, -2])):
            rows.append(wall)
            cols.append(adj)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        self.Thom = sp.csr_matrix((np.full(rows.size, 2.0 / h**2), (rows, cols)), shape=(n * n, n * n))
        self.lid = np.zeros(n * n)
        self.lid[idx[1:-1, -1]] = 1.0  # open top edge

    def residual(self, z, Re, u_lid):
        nn = self.n**2
        psi, w = z[:nn], z[nn:]
        u, v = self.Dy @ psi, -(self.Dx @ psi)
        f_psi = np.where(self.interior, self.Lap @ psi + w, psi)
        transport = u * (self.Dx @ w) + v * (self.Dy @ w) - (self.Lap @ w) / Re
        wall = w + self.Thom @ psi + 2.0 * u_lid / self.h * self.lid
        f_w = np.where(self.interior, transport, wall)
        return np.concatenate([f_psi, f_w])

    def jacobian(self, z, Re):
        nn = self.n**2
        psi, w = z[:nn], z[nn:]
        u, v = self.Dy @ psi, -(self.Dx @ psi)
        wx, wy = self.Dx @ w, self.Dy @ w
        j_pp = self.P_int @ self.Lap + self.P_bnd
        j_pw = self.P_int
        t_psi = sp.diags(wx) @ self.Dy - sp.diags(wy) @ self.Dx
        t_w = sp.diags(u) @ self.Dx + sp.diags(v) @ self.Dy - self.Lap / Re
        j_wp = self.P_int @ t_psi + self.P_bnd @ self.Thom
        j_ww = self.P_int @ t_w + self.P_bnd
        return sp.bmat([[j_pp, j_pw], [j_wp, j_ww]], format="csc")


def _newton(ops, z, Re, u_lid, tol, max_iter):
    scale = ops.h**2
    f = ops.residual(z, Re, u_lid)
    res = float(np.abs(f).max()) * scale
    for it in range(max_iter):
        if res < tol:
            return z, res, it
        dz = spla.spsolve(ops.jacobian(z, Re), -f)
        step = 1.0
        while True:
            trial = z + step * dz
            ft = ops.residual(trial, Re, u_lid)
            rt = float(np.abs(ft).max()) * scale
            if np.isfinite(rt) and (rt < res or step < 1e-3):
                break
            step *= 0.5
        z, f, res = trial, ft, rt
        if not np.isfinite(res):
            break
    if res < tol:
        return z, res, max_iter
    raise OracleConvergenceError(f"cavity oracle did not reach tol={tol:g} at Re={Re:g} "
                                 f"within {max_iter} Newton steps (residual {res:.3e})")


def cavity_solve(Re: float, n: int = 129, tol: float = 1e-10, u_lid: float = 1.0, max_iter: int = 50,
                 enforce_envelope: bool = True) -> FieldGrid:
    """Steady cavity fields (u, v, psi, omega) on an n x n node grid over [0, 1]^2.

    Stops when the max-norm residual of the discrete system, times h^2, is
    below ``tol``.  Reynolds numbers above 100 are reached by doubling from 100.
    """
    if n < 33 or n % 2 == 0:
        raise ConfigurationError("cavity grid size must be odd and >= 33")
    if not Re > 0:
        raise ConfigurationError("Re must be positive")
    if enforce_envelope and Re > RE_MAX:
        raise ConfigurationError(f"cavity oracle is limited to Re <= {RE_MAX:g}")
    ops = _Operators(n)
    ladder = [Re]
    while ladder[0] > RE_START:
        ladder.insert(0, max(RE_START, ladder[0] / 2.0))
    z = np.zeros(2 * n * n)
    steps = 0
    for r in ladder:
        z, res, it = _newton(ops, z, r, u_lid, tol, max_iter)
        steps += it
    psi = z[:n * n].reshape(n, n)
    w = z[n * n:].reshape(n, n)
    u = (ops.Dy @ z[:n * n]).reshape(n, n)
    v = -(ops.Dx @ z[:n * n]).reshape(n, n)
    u[0, :] = u[-1, :] = u[:, 0] = 0.0
    v[0, :] = v[-1, :] = v[:, 0] = v[:, -1] = 0.0
    u[:, -1] = u_lid * ops.lid.reshape(n, n)[:, -1]
    log.info("cavity Re=%g n=%d: %d Newton steps over Re ladder %s, residual %.3e", Re, n, steps, ladder, res)
    x = np.linspace(0.0, 1.0, n)
    meta = {"method": "vorticity-streamfunction", "Re": Re, "n": n, "newton_steps": steps, "residual": res}
    return FieldGrid("cavity", ("x", "y"), (x, x), {"u": u, "v": v, "psi": psi, "omega": w}, meta)


def richardson_extrapolate(coarse: FieldGrid, fine: FieldGrid, order: int = 2) -> FieldGrid:
    """Combine a grid with its 2x refinement on the coarse nodes, removing the h^order term."""
    nc, nf = coarse.shape[0], fine.shape[0]
    if nf != 2 * nc - 1:
        raise ConfigurationError("fine grid must be a 2x refinement of the coarse grid")
    r = 2.0**order
    values = {}
    for k, vc in coarse.values.items():
        vf = fine.values[k][::2, ::2]
        values[k] = (r * vf - vc) / (r - 1.0)
    meta = dict(coarse.metadata, method="vorticity-streamfunction+richardson", n_fine=nf)
    return FieldGrid("cavity", coarse.axis_names, coarse.axes, values, meta)


def discrete_divergence(grid: FieldGrid) -> np.ndarray:
    """Central-difference divergence of (u, v) on nodes two cells from the wall."""
    h = grid.axes[0][1] - grid.axes[0][0]
    u, v = grid.values["u"], grid.values["v"]
    ux = (u[3:-1, 2:-2] - u[1:-3, 2:-2]) / (2 * h)
    vy = (v[2:-2, 3:-1] - v[2:-2, 1:-3]) / (2 * h)
    return ux + vy
