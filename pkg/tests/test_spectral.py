"""Eigen machinery: master pair, adjoints, parameter mode, biorthonormality."""

import numpy as np
import pytest
import scipy.sparse as sp

from hopfrom.dae import CooBilinear, DofPartition, coo_bilinear_dae
from hopfrom.exceptions import AmbiguousModeError
from hopfrom.spectral import (biorthonormalize, build_mode_set,
                              compute_parameter_mode, solve_adjoint_pair,
                              solve_master_pair)


def linear_dae(A_flow, part=None):
    """Toy quadratic DAE with no quadratic term and an appended parameter."""
    n_flow = A_flow.shape[0]
    n = n_flow + 1
    A = sp.block_diag([sp.csr_matrix(A_flow), sp.csr_matrix((1, 1))]).tocsr()
    B = sp.eye(n, format="csr")
    tensor = CooBilinear(n, [], [], [], [])
    if part is None:
        part = DofPartition(velocity=np.arange(n_flow),
                            pressure=np.array([], dtype=int), param=n_flow)
    return coo_bilinear_dae(n, B, A, tensor, part)


def rotation_block(a, w):
    return np.array([[a, -w], [w, a]])


class TestMasterPair:
    def test_synthetic_eigenvalue(self, synth):
        dae, oracle, _ = synth
        lam, phi = solve_master_pair(dae, shift=1j)
        assert lam == pytest.approx(complex(oracle.a0, oracle.omega), abs=1e-10)
        res = dae.A @ phi - lam * (dae.B @ phi)
        assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(dae.A @ phi)

    def test_conjugate_shift_gives_conjugate_eigenvalue(self, synth):
        dae, oracle, _ = synth
        lam_p, _ = solve_master_pair(dae, shift=1j)
        lam_m, _ = solve_master_pair(dae, shift=-1j)
        assert lam_m == pytest.approx(np.conj(lam_p), abs=1e-10)

    def test_parameter_component_zero(self, cheap_modes, cheap_dae):
        par = cheap_dae.partition.param
        assert cheap_modes.phi[par, 0] == 0.0
        assert cheap_modes.phi[par, 1] == 0.0

    def test_ambiguous_selection_reported(self):
        A_flow = np.block([
            [rotation_block(0.1, 1.0), np.zeros((2, 2))],
            [np.zeros((2, 2)), rotation_block(0.1, 2.0)]])
        dae = linear_dae(A_flow)
        with pytest.raises(AmbiguousModeError):
            solve_master_pair(dae, shift=1.5j, ambiguity_tol=1e-6)


class TestAdjoint:
    def test_selfadjoint_toy(self):
        rng = np.random.default_rng(0)
        S = rng.standard_normal((5, 5))
        A_flow = 0.5 * (S + S.T)
        dae = linear_dae(A_flow)
        evals = np.linalg.eigvalsh(A_flow)
        lam = complex(evals[-1])
        psi = solve_adjoint_pair(dae, lam)
        _, phi = solve_master_pair(dae, shift=lam + 1e-3)
        flow = slice(0, 5)
        cross = np.abs(np.vdot(psi[flow], phi[flow]))
        assert cross >= 0.999 * (np.linalg.norm(psi[flow])
                                 * np.linalg.norm(phi[flow]))

    def test_synthetic_matches_closed_form_left_vector(self, synth):
        dae, oracle, _ = synth
        lam = complex(oracle.a0, oracle.omega)
        psi = solve_adjoint_pair(dae, lam)
        At = dae.A.toarray().T
        Bt = dae.B.toarray().T
        res = At @ psi - np.conj(lam) * (Bt @ psi)
        assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(At @ psi)
        # closed form: left eigenvector of the recast system has zero r and
        # eta components except the analytic eta coupling a_eta/conj(lam)
        x, y = psi[0], psi[1]
        assert y / x == pytest.approx(-1j, abs=1e-8)
        assert psi[2] == pytest.approx(0.0, abs=1e-8 * abs(x))
        # the linear parameter column of this recast is zero, so psi_eta = 0
        assert psi[3] == pytest.approx(0.0, abs=1e-8 * abs(x))

    def test_biorthogonality_off_diagonal(self, cheap_modes, cheap_dae):
        gram = np.conj(cheap_modes.psi).T @ (cheap_dae.B @ cheap_modes.phi)
        assert abs(gram[0, 1]) <= 1e-10


class TestParameterMode:
    def test_eta_component_is_one(self, cheap_modes, cheap_dae):
        assert cheap_modes.phi[cheap_dae.partition.param, 2] == 1.0

    def test_defining_equations(self, cheap_dae):
        import scipy.sparse.linalg as spla
        phi3 = compute_parameter_mode(cheap_dae)
        # the parameter mode is the exact lambda = 0 null direction of A
        res = np.linalg.norm(cheap_dae.A @ phi3)
        scale = spla.norm(cheap_dae.A) * np.linalg.norm(phi3)
        assert res <= 1e-10 * scale

    def test_finite_difference_consistency(self, cheap_fem, cheap_steady,
                                           cheap_dae):
        from hopfrom.fem import steady_solve
        phi3 = compute_parameter_mode(cheap_dae)
        fem = cheap_fem
        re0 = cheap_steady.re0
        d_eta = 1e-6
        re_pert = 1.0 / (1.0 / re0 + d_eta)
        pert = steady_solve(fem, re_pert, initial=cheap_steady)
        fd = (pert.u0 - cheap_steady.u0)[fem.free_vel_dofs] / d_eta
        mode = phi3[: fem.n_free].real
        err = np.linalg.norm(fd - mode) / np.linalg.norm(mode)
        assert err <= 1e-3


class TestBiorthonormalize:
    def test_gram_is_identity(self, cheap_modes, cheap_dae):
        gram = np.conj(cheap_modes.psi).T @ (cheap_dae.B @ cheap_modes.phi)
        assert np.max(np.abs(gram - np.eye(3))) <= 1e-10

    def test_idempotent(self, cheap_modes, cheap_dae):
        again = biorthonormalize(cheap_dae, cheap_modes)
        assert np.allclose(again.phi, cheap_modes.phi, rtol=1e-12, atol=1e-14)
        assert np.allclose(again.psi, cheap_modes.psi, rtol=1e-10, atol=1e-12)

    def test_scaling_absorbed(self, cheap_modes, cheap_dae):
        from dataclasses import replace
        scaled_phi = cheap_modes.phi.copy()
        scale = 3.0 * np.exp(1j * np.pi / 4)
        scaled_phi[:, 0] *= scale
        scaled_phi[:, 1] = np.conj(scaled_phi[:, 0])
        scaled = replace(cheap_modes, phi=scaled_phi)
        out = biorthonormalize(cheap_dae, scaled)
        assert np.allclose(out.phi, cheap_modes.phi, rtol=1e-10, atol=1e-12)

    def test_lambda_structure(self, cheap_modes):
        lams = cheap_modes.lambdas
        assert lams[2] == 0.0
        assert lams[1] == np.conj(lams[0])
        assert lams[0].imag > 0

    def test_projection_identity(self, cheap_modes, cheap_dae):
        rng = np.random.default_rng(1)
        v = rng.standard_normal(cheap_dae.n_dof)
        for j in range(3):
            psi_j = cheap_modes.psi[:, j]
            lam_j = cheap_modes.lambdas[j]
            lhs = np.vdot(psi_j, cheap_dae.A @ v)
            rhs = lam_j * np.vdot(psi_j, cheap_dae.B @ v)
            # vdot conjugates psi, so the conjugated vector pairs with lam_j
            adj_res = (cheap_dae.A.T @ np.conj(psi_j)
                       - lam_j * (cheap_dae.B.T @ np.conj(psi_j)))
            bound = np.linalg.norm(adj_res) * np.linalg.norm(v)
            assert abs(lhs - rhs) <= bound + 1e-12
            assert np.linalg.norm(adj_res) <= 1e-6 * max(
                np.linalg.norm(cheap_dae.A.T @ np.conj(psi_j)), 1e-4)
