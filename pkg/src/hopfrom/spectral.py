"""Master eigenpair, adjoint modes and parameter mode of the augmented pencil.

Strategy: shift-invert Krylov iteration on (A, B) with a complex shift;
dense generalized eigensolve below ``DENSE_CUTOFF`` degrees of freedom.
The inner product is the Euclidean pairing on discrete coefficient vectors,
so adjoint operators are plain transposes.  Infinite eigenvalues of the DAE
pencil (from the singular B) are excluded by construction in both paths.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dae import QuadraticDae
from .exceptions import AmbiguousModeError, EigenSolveError, SingularSystemError

DENSE_CUTOFF = 2000


@dataclass(frozen=True)
class ModeSet:
    """Master eigenpair, its conjugate, and the parameter mode, with adjoints.

    ``lambdas = (lam, conj(lam), 0)``; ``phi``/``psi`` hold the direct and
    adjoint mode vectors as columns in the same order.  The parameter-mode
    eigenvalue is 0 exactly by construction, never computed numerically.
    """
    lambdas: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    inner_product: str = "euclidean"

    @property
    def lam(self) -> complex:
        return complex(self.lambdas[0])

    @property
    def n_dof(self) -> int:
        return self.phi.shape[0]


def _flow_indices(dae: QuadraticDae) -> np.ndarray:
    mask = np.ones(dae.n_dof, dtype=bool)
    mask[dae.partition.param] = False
    return np.nonzero(mask)[0]


def _refine_eigenpair(A: sp.spmatrix, B: sp.spmatrix, lam: complex,
                      v: np.ndarray, iters: int = 2) -> tuple[complex, np.ndarray]:
    """Bordered Newton polish of an eigenpair of the pencil (A, B)."""
    n = A.shape[0]
    for _ in range(iters):
        res = A @ v - lam * (B @ v)
        if np.linalg.norm(res) <= 1e-10 * np.linalg.norm(A @ v):
            break
        M = sp.bmat([[(A - lam * B).astype(complex), -(B @ v).reshape(-1, 1)],
                     [np.conj(v).reshape(1, -1), None]], format="csc")
        rhs = np.concatenate([-res, [0.0]])
        try:
            sol = spla.splu(M).solve(rhs)
        except RuntimeError:
            break
        v = v + sol[:n]
        lam = lam + sol[n]
        v = v / np.linalg.norm(v)
    return lam, v


def _select_near(evals: np.ndarray, shift: complex, ambiguity_tol: float) -> int:
    """Index of the largest-real-part eigenvalue among those near the shift."""
    dist = np.abs(evals - shift)
    near = np.argsort(dist)[: min(6, len(evals))]
    cand = evals[near]
    order = np.argsort(-cand.real)
    best = near[order[0]]
    if len(order) > 1:
        second = cand[order[1]]
        # the conjugate partner and the zero parameter mode are not rivals
        rival = (abs(second - np.conj(evals[best])) > ambiguity_tol
                 and abs(second) > ambiguity_tol
                 and abs(second.imag) > ambiguity_tol)
        if rival and abs(second.real - evals[best].real) <= ambiguity_tol:
            raise AmbiguousModeError(
                f"two candidate pairs with real parts within {ambiguity_tol}: "
                f"{evals[best]} vs {second}")
    return int(best)


def _solve_pencil(A: sp.spmatrix, B: sp.spmatrix, shift: complex,
                  ambiguity_tol: float) -> tuple[complex, np.ndarray]:
    n = A.shape[0]
    if n <= DENSE_CUTOFF:
        evals, evecs = sla.eig(A.toarray(), B.toarray())
        finite = np.isfinite(evals)
        evals, evecs = evals[finite], evecs[:, finite]
        idx = _select_near(evals, shift, ambiguity_tol)
        lam, v = complex(evals[idx]), evecs[:, idx]
    else:
        try:
            evals, evecs = spla.eigs(A.tocsc(), k=4, M=B.tocsc(), sigma=shift,
                                     which="LM", tol=0, maxiter=5000)
        except (spla.ArpackNoConvergence, RuntimeError) as exc:
            raise EigenSolveError(f"shift-invert iteration failed near "
                                  f"shift {shift}: {exc}") from exc
        idx = _select_near(evals, shift, ambiguity_tol)
        lam, v = complex(evals[idx]), evecs[:, idx]
    lam, v = _refine_eigenpair(A.tocsr(), B.tocsr(), lam, v)
    res = np.linalg.norm(A @ v - lam * (B @ v))
    scale = np.linalg.norm(A @ v)
    if res > 1e-8 * scale:
        raise EigenSolveError(f"eigenpair residual {res:.3e} exceeds "
                              f"1e-8 * {scale:.3e} (lambda = {lam})")
    return lam, v


def solve_master_pair(dae: QuadraticDae, shift: complex,
                      ambiguity_tol: float = 1e-10) -> tuple[complex, np.ndarray]:
    """Eigenpair of (A, B) with largest real part among those near the shift.

    Any eigenvector with a nonzero eigenvalue has zero parameter component
    (the parameter row reads lam * v_eta = 0), so the pencil is solved on
    the flow block, which also keeps the dense parameter column out of the
    sparse factorizations.
    """
    flow = _flow_indices(dae)
    A_ff = dae.A.tocsc()[flow][:, flow].tocsr()
    B_ff = dae.B.tocsc()[flow][:, flow].tocsr()
    lam, v_f = _solve_pencil(A_ff, B_ff, shift, ambiguity_tol)
    if abs(lam) <= ambiguity_tol:
        raise EigenSolveError(
            f"master-pair search near shift {shift} landed on a neutral "
            f"eigenvalue {lam}; adjust the shift")
    v = np.zeros(dae.n_dof, dtype=complex)
    v[flow] = v_f
    return lam, v


def solve_adjoint_pair(dae: QuadraticDae, lam: complex) -> np.ndarray:
    """Adjoint mode: A^T psi = conj(lam) B^T psi (Euclidean pairing).

    The adjoint eigenvalue is known exactly, so the mode comes from inverse
    iteration on the flow block: the near-singularity of the shifted
    operator is what amplifies precisely the sought mode.  The parameter
    component follows from the parameter row of the adjoint problem,
    psi_eta = (a_eta . psi_flow) / conj(lam), with a_eta the parameter
    column of A.
    """
    flow = _flow_indices(dae)
    par = dae.partition.param
    A = dae.A.tocsc()
    At = A[flow][:, flow].T.tocsr()
    Bt = dae.B.tocsc()[flow][:, flow].T.tocsr()
    n = At.shape[0]
    lam_adj = np.conj(lam)
    lu = None
    for nudge in (0.0, 1e-8 * max(1.0, abs(lam)), 1e-6 * max(1.0, abs(lam))):
        try:
            lu = spla.splu((At - (lam_adj + nudge) * Bt).astype(complex)
                           .tocsc())
            break
        except RuntimeError:
            # shift exactly on the eigenvalue: nudge it off and retry
            continue
    if lu is None:
        raise EigenSolveError(
            f"adjoint shift factorization failed at conj(lambda) = {lam_adj}")
    rng = np.random.default_rng(1729)
    psi_f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    psi_f /= np.linalg.norm(psi_f)
    scale = max(np.linalg.norm(At @ psi_f), 1.0)
    for _ in range(5):
        psi_f = lu.solve(Bt @ psi_f.astype(complex))
        psi_f /= np.linalg.norm(psi_f)
        res = np.linalg.norm(At @ psi_f - lam_adj * (Bt @ psi_f))
        scale = np.linalg.norm(At @ psi_f)
        if res <= 1e-10 * scale:
            break
    res = np.linalg.norm(At @ psi_f - lam_adj * (Bt @ psi_f))
    if res > 1e-8 * scale:
        raise EigenSolveError(f"adjoint eigenpair residual {res:.3e} exceeds "
                              f"1e-8 * {scale:.3e}")
    a_eta = np.asarray(A[flow][:, [par]].todense()).ravel()
    psi = np.zeros(dae.n_dof, dtype=complex)
    psi[flow] = psi_f
    psi[par] = np.dot(a_eta, psi_f) / lam_adj
    return psi


def compute_parameter_mode(dae: QuadraticDae) -> np.ndarray:
    """Neutral mode with the parameter component pinned to 1.

    Solves the flow-block system A_ff v = -A[:, param] restricted to the
    flow rows; the zero eigenvalue is exact by construction.
    """
    flow = _flow_indices(dae)
    par = dae.partition.param
    A = dae.A.tocsc()
    A_ff = A[flow][:, flow]
    a_eta = np.asarray(A[flow][:, [par]].todense()).ravel()
    try:
        lu = spla.splu(A_ff.tocsc())
        v = lu.solve(-a_eta)
    except RuntimeError as exc:
        raise SingularSystemError(
            "flow block is singular (steady state at the bifurcation point?); "
            "regularize by deflating against the critical mode or move Re0 "
            "slightly away from Re_c") from exc
    res = np.linalg.norm(A_ff @ v + a_eta)
    if not np.isfinite(res) or res > 1e-10 * max(1.0, np.linalg.norm(a_eta)):
        raise SingularSystemError(
            f"parameter-mode solve residual {res:.3e} too large; the flow "
            "block is near-singular at this expansion point")
    phi3 = np.zeros(dae.n_dof)
    phi3[flow] = v
    phi3[par] = 1.0
    return phi3


def _normalize_phi1(phi1: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    """Scale so the largest-magnitude velocity entry equals exactly 1."""
    vel = phi1[velocity]
    pivot = int(np.argmax(np.abs(vel)))
    ref = vel[pivot]
    if ref == 0:
        raise EigenSolveError("master mode has zero velocity component")
    return phi1 / ref


def biorthonormalize(dae: QuadraticDae, modes: ModeSet,
                     gram_tol: float = 1e-10) -> ModeSet:
    """Enforce <psi_i, B phi_j> = delta_ij with a deterministic phase.

    phi_1 is scaled so its largest-magnitude velocity entry is exactly 1
    (real, positive), phi_2 = conj(phi_1); only the adjoints absorb the
    normalisation factors.  Idempotent.
    """
    B = dae.B
    phi1 = _normalize_phi1(modes.phi[:, 0], dae.partition.velocity)
    phi = np.column_stack([phi1, np.conj(phi1), modes.phi[:, 2]])
    psi = modes.psi.astype(complex).copy()
    psi[:, 1] = np.conj(psi[:, 0])
    for i in range(3):
        g = np.vdot(psi[:, i], B @ phi[:, i])
        if abs(g) < 1e-12 * np.linalg.norm(psi[:, i]) * max(1.0, np.linalg.norm(B @ phi[:, i])):
            raise SingularSystemError(
                f"mode {i + 1} is nearly B-orthogonal to its adjoint "
                f"(<psi,B phi> = {g:.3e}); biorthonormalization ill-posed")
        psi[:, i] = psi[:, i] / np.conj(g)
        if i == 0:
            psi[:, 1] = np.conj(psi[:, 0])
    gram = np.conj(psi).T @ (B @ phi)
    if np.max(np.abs(gram - np.eye(3))) > gram_tol:
        raise EigenSolveError(
            f"biorthogonality defect {np.max(np.abs(gram - np.eye(3))):.3e} "
            f"exceeds {gram_tol}")
    return replace(modes, phi=phi, psi=psi)


def build_mode_set(dae: QuadraticDae, shift: complex) -> ModeSet:
    """Master pair + conjugate + parameter mode, adjoints, biorthonormalized."""
    lam, phi1 = solve_master_pair(dae, shift)
    if lam.imag < 0:
        lam, phi1 = np.conj(lam), np.conj(phi1)
    psi1 = solve_adjoint_pair(dae, lam)
    phi3 = compute_parameter_mode(dae)
    # the adjoint parameter mode is the unit parameter vector exactly:
    # A's parameter row is zero, so A^T e_eta = 0, and the flow block being
    # nonsingular makes the transposed nullspace one-dimensional
    psi3 = dae.unit_param_vector(dtype=complex)
    lambdas = np.array([lam, np.conj(lam), 0.0], dtype=complex)
    phi = np.column_stack([phi1, np.conj(phi1), phi3.astype(complex)])
    psi = np.column_stack([psi1, np.conj(psi1), psi3])
    return biorthonormalize(dae, ModeSet(lambdas=lambdas, phi=phi, psi=psi))
