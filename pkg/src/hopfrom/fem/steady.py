"""Steady Navier-Stokes solves and the quadratic DAE around a steady state.

The steady weak form (free velocity rows m, continuity rows i) is

    conv(u, u)_m + (1/Re) K_visc u_m - (D^T p)_m = 0,     D u = 0,

with u carrying the inflow lift on its constrained entries.  Newton uses the
exact Jacobian; if it diverges the solve restarts from Stokes flow and
continues in Re with steps of at most 10.  The perturbation dynamics around
a converged state (u0, p0, eta0 = 1/Re0) is packed into a QuadraticDae with
state [free velocity, pressure, parameter offset eta'].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..dae import DofPartition, QuadraticDae
from ..exceptions import ConfigError, NumericalError
from .mesh import CYLINDER_DIAMETER
from .taylor_hood import FemProblem

NEWTON_TOL = 1e-10
NEWTON_MAXIT = 25
CONTINUATION_STEP = 10.0


@dataclass
class SteadyState:
    """Converged steady fields; u0 is the full velocity vector (with the
    inflow data on its constrained entries)."""
    u0: np.ndarray
    p0: np.ndarray
    re0: float
    residual: float
    newton_iters: int = 0

    @property
    def eta0(self) -> float:
        return 1.0 / self.re0


def _saddle_matrix(fem: FemProblem, a_vv: sp.spmatrix) -> sp.csc_matrix:
    """[[a_vv, -D_f^T], [D_f, 0]] on free velocity + pressure unknowns."""
    free = fem.free_vel_dofs
    d_f = fem.div[:, free]
    return sp.bmat([[a_vv[free][:, free], -d_f.T],
                    [d_f, None]], format="csc")


def _steady_residual(fem: FemProblem, u_full: np.ndarray, p: np.ndarray,
                     eta: float) -> np.ndarray:
    mom = (fem.convection(u_full, u_full) + eta * (fem.visc_stiffness @ u_full)
           - fem.div.T @ p)
    return np.concatenate([mom[fem.free_vel_dofs], fem.div @ u_full])


def stokes_solve(fem: FemProblem, re: float) -> SteadyState:
    """Linear Stokes flow with the inflow data; Newton's starting point."""
    eta = 1.0 / re
    lift = fem.dirichlet_lift()
    mat = _saddle_matrix(fem, eta * fem.visc_stiffness)
    free = fem.free_vel_dofs
    rhs = np.concatenate([-(eta * (fem.visc_stiffness @ lift))[free],
                          -(fem.div @ lift)])
    sol = spla.splu(mat).solve(rhs)
    u_full = lift + fem.expand_velocity(sol[:fem.n_free])
    p = sol[fem.n_free:]
    res = np.linalg.norm(_steady_residual(fem, u_full, p, eta))
    return SteadyState(u0=u_full, p0=p, re0=re, residual=res)


def _newton(fem: FemProblem, re: float, u_full: np.ndarray, p: np.ndarray,
            scale: float) -> SteadyState | None:
    eta = 1.0 / re
    tol = NEWTON_TOL * max(scale, 1.0)
    for it in range(1, NEWTON_MAXIT + 1):
        res = _steady_residual(fem, u_full, p, eta)
        rnorm = np.linalg.norm(res)
        if rnorm <= tol:
            return SteadyState(u0=u_full, p0=p, re0=re, residual=rnorm,
                               newton_iters=it - 1)
        if not np.isfinite(rnorm) or rnorm > 1e8 * max(scale, 1.0):
            return None
        conv_jac = (fem.convection_matrix_fixed_first(u_full)
                    + fem.convection_matrix_fixed_second(u_full))
        mat = _saddle_matrix(fem, conv_jac + eta * fem.visc_stiffness)
        try:
            delta = spla.splu(mat).solve(-res)
        except RuntimeError:
            return None
        u_full = u_full + fem.expand_velocity(delta[:fem.n_free])
        p = p + delta[fem.n_free:]
    return None


def steady_solve(fem: FemProblem, re: float,
                 initial: SteadyState | None = None) -> SteadyState:
    """Newton solve at the requested Reynolds number, with Re-continuation
    from Stokes flow as the fallback globalization."""
    if re <= 0:
        raise ConfigError(f"Reynolds number must be positive, got {re}")
    scale = np.linalg.norm(fem.dirichlet_lift())
    if initial is None:
        initial = stokes_solve(fem, re)
    state = _newton(fem, re, initial.u0, initial.p0, scale)
    if state is not None:
        return state

    state = stokes_solve(fem, min(re, CONTINUATION_STEP))
    re_cur = min(re, CONTINUATION_STEP)
    while True:
        nxt = _newton(fem, re_cur, state.u0, state.p0, scale)
        if nxt is None:
            raise NumericalError(
                f"steady Newton diverged at Re = {re_cur} even under "
                f"continuation; refine the mesh or reduce Re")
        state = nxt
        if re_cur >= re:
            return state
        re_cur = min(re, re_cur + CONTINUATION_STEP)


def drag_lift(fem: FemProblem, state: SteadyState) -> tuple[float, float]:
    """Drag and lift coefficients c = 2 F / (U_mean^2 D) with U_mean = 1."""
    force = fem.surface_force(state.u0, state.p0, state.re0)
    return tuple(2.0 * force / CYLINDER_DIAMETER)


def assemble_dae(fem: FemProblem, steady: SteadyState) -> QuadraticDae:
    """Quadratic DAE  B y' = A y + Q(y, y)  for the perturbation state
    y = [free velocity u', pressure p', parameter eta' = 1/Re - 1/Re0]."""
    free = fem.free_vel_dofs
    n_free, n_p = fem.n_free, fem.n_p1
    n_dof = n_free + n_p + 1
    eta0 = steady.eta0
    u0 = steady.u0

    conv_lin = (fem.convection_matrix_fixed_first(u0)
                + fem.convection_matrix_fixed_second(u0))
    a_vv = -(conv_lin + eta0 * fem.visc_stiffness)[free][:, free]
    a_vp = fem.div[:, free].T.tocsr()
    a_veta = -(fem.visc_stiffness @ u0)[free]
    A = sp.vstack([
        sp.hstack([a_vv, a_vp, sp.csr_matrix(a_veta[:, None])]),
        sp.hstack([-fem.div[:, free], sp.csr_matrix((n_p, n_p + 1))]),
        sp.csr_matrix((1, n_dof)),          # the parameter is autonomous
    ], format="csr")

    B = sp.bmat([[fem.velocity_mass[free][:, free], None, None],
                 [None, sp.csr_matrix((n_p, n_p)), None],
                 [None, None, sp.identity(1, format="csr")]], format="csr")

    def q_raw(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        u1 = fem.expand_velocity(y1[:n_free])
        u2 = fem.expand_velocity(y2[:n_free])
        eta1 = y1[n_dof - 1]
        mom = -fem.convection(u1, u2) - eta1 * (fem.visc_stiffness @ u2)
        out = np.zeros(n_dof, dtype=mom.dtype)
        out[:n_free] = mom[free]
        return out

    def q_left_matrix_raw(y1: np.ndarray) -> sp.spmatrix:
        # matrix of y2 -> 0.5 * (q_raw(y1, y2) + q_raw(y2, y1))
        u1 = fem.expand_velocity(y1[:n_free])
        eta1 = y1[n_dof - 1]
        vv = -0.5 * (fem.convection_matrix_fixed_first(u1)
                     + fem.convection_matrix_fixed_second(u1)
                     + eta1 * fem.visc_stiffness)[free][:, free]
        veta = -0.5 * (fem.visc_stiffness @ u1)[free]
        top = sp.hstack([vv, sp.csr_matrix((n_free, n_p)),
                         sp.csr_matrix(veta[:, None])], format="csr")
        return sp.vstack([top, sp.csr_matrix((n_p + 1, n_dof))],
                         format="csr")

    partition = DofPartition(velocity=np.arange(n_free),
                             pressure=np.arange(n_free, n_free + n_p),
                             param=n_dof - 1)
    return QuadraticDae(n_dof=n_dof, B=B.tocsr(), A=A.tocsr(), q_raw=q_raw,
                        partition=partition,
                        q_left_matrix_raw=q_left_matrix_raw,
                        meta={"fem": fem, "steady": steady,
                              "mesh_hash": fem.mesh.hash()})
