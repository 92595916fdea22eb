"""End-to-end acceptance criteria.

Nine claims, one test each; every test prints a single ``CRITERION n``
pass/fail line and the lines are echoed again in the pytest terminal
summary.  The module builds a ~7.7k-DOF cylinder-wake mesh and runs
full-order reference simulations, so it takes on the order of an hour;
deselect with ``-m "not acceptance"`` for quick iteration.

Oracle provenance tags: [DERIVED] closed-form consequence of the
constructed system, [PAPER] published benchmark number, [TRIVIAL]
combinatorial/structural identity.
"""

import time

import numpy as np
import pytest

from hopfrom.estimation import a_priori_nrmse, invariance_residual
from hopfrom.fem import assemble_dae, build_fem, build_mesh, steady_solve
from hopfrom.fom import (a_posteriori_error, detect_limit_cycle,
                         fom_critical_re, integrate_fom)
from hopfrom.multiindex import MonomialTable
from hopfrom.parametrisation import build_rom
from hopfrom.reduced import (find_critical_re, graph_mean_tke, limit_cycle,
                             mean_tke, reconstruct, to_polar)
from hopfrom.spectral import build_mode_set, solve_master_pair
from hopfrom.synthetic import make_hopf_dae
from tests.conftest import ACCEPTANCE_LINES, GRAPH, NORMAL_FORM

pytestmark = pytest.mark.acceptance

# -- acceptance configuration ------------------------------------------------

RESOLUTION = 0.04          # ~7.7k DOFs: inside the mandated 3k-8k window
REFERENCE_RE_C = 49.03     # [PAPER] benchmark critical Reynolds number
RE0_NF = 52.0              # normal-form expansion point (near criticality)
NF_SHIFT = 16j             # eigensolve shift near the shedding frequency
R1_FACTOR = 1.035          # test point inside the tight validity window
R2_FACTOR = 1.10           # test point at the edge of the wide window
FAR_FACTOR = 1.4           # "expand beyond criticality" expansion point
FOM_AMP_TOL = 5e-3         # cycle-detector spread tolerance for the runs here


def record(num: int, desc: str, ok: bool, detail: str = "") -> None:
    line = f"CRITERION {num} ({desc}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- shared expensive state --------------------------------------------------

@pytest.fixture(scope="module")
def acc_fem():
    return build_fem(build_mesh(RESOLUTION))


@pytest.fixture(scope="module")
def fom_re_c(acc_fem):
    """Full-order critical Reynolds number on the acceptance mesh."""
    return fom_critical_re(acc_fem, 45.0, 55.0, shift=17j)


@pytest.fixture(scope="module")
def nf_setup(acc_fem):
    """Steady state + DAE + modes at the normal-form expansion point."""
    steady = steady_solve(acc_fem, RE0_NF)
    dae = assemble_dae(acc_fem, steady)
    modes = build_mode_set(dae, shift=NF_SHIFT)
    return steady, dae, modes


@pytest.fixture(scope="module")
def rom_nf5(nf_setup):
    steady, dae, modes = nf_setup
    return build_rom(dae, modes, 5, NORMAL_FORM, re0=RE0_NF, steady=steady)


@pytest.fixture(scope="module")
def crit_setup(acc_fem, fom_re_c):
    """Steady state + DAE + modes at the measured critical point."""
    steady = steady_solve(acc_fem, fom_re_c)
    dae = assemble_dae(acc_fem, steady)
    modes = build_mode_set(dae, shift=NF_SHIFT)
    return steady, dae, modes


@pytest.fixture(scope="module")
def graph_roms_crit(crit_setup, fom_re_c):
    """Graph-style artifacts of orders 3, 5, 7, 9 expanded at Re_c."""
    steady, dae, modes = crit_setup
    return {o: build_rom(dae, modes, o, GRAPH, re0=fom_re_c, steady=steady)
            for o in (3, 5, 7, 9)}


@pytest.fixture(scope="module")
def rom_far(acc_fem, fom_re_c):
    """Graph-style order-5 artifact expanded well beyond criticality."""
    re0 = FAR_FACTOR * fom_re_c
    steady = steady_solve(acc_fem, re0)
    dae = assemble_dae(acc_fem, steady)
    lam, _ = solve_master_pair(dae, NF_SHIFT)
    modes = build_mode_set(dae, shift=1j * abs(lam.imag))
    return build_rom(dae, modes, 5, GRAPH, re0=re0, steady=steady)


@pytest.fixture(scope="module")
def fom_hi(acc_fem, fom_re_c):
    """The honest full-order reference: small perturbation of the steady
    state at Re = 1.10 Re_c, marched to the developed periodic regime.
    Wall time of the time integration is recorded for criterion 9."""
    re = R2_FACTOR * fom_re_c
    steady = steady_solve(acc_fem, re)
    dae = assemble_dae(acc_fem, steady)
    lam, phi = solve_master_pair(dae, 17j)
    if lam.imag < 0:
        lam, phi = np.conj(lam), np.conj(phi)
    dae.meta["master_mode"] = phi
    period = 2.0 * np.pi / lam.imag
    dt = period / 100.0
    # linear growth from eps to saturation plus nonlinear settling
    horizon = float(np.ceil(np.log(1e4) / lam.real + 8.0 / lam.real))
    stride = max(int(round(period / (25.0 * dt))), 1)
    t0 = time.perf_counter()
    run = integrate_fom(acc_fem, re, horizon=horizon, dt=dt, dae=dae,
                        eps=1e-3, stride=stride)
    wall = time.perf_counter() - t0
    period_got, tke, _ = detect_limit_cycle(run, amp_tol=FOM_AMP_TOL)
    return {"run": run, "re": re, "wall": wall, "tke": tke,
            "period": period_got}


@pytest.fixture(scope="module")
def fom_lo(acc_fem, fom_re_c, rom_nf5):
    """Full-order reference at Re = 1.035 Re_c, started on the reduced
    model's reconstructed cycle so it settles within a short horizon."""
    re = R1_FACTOR * fom_re_c
    lc = limit_cycle(to_polar(rom_nf5), re)
    assert lc is not None
    snap0 = reconstruct(rom_nf5, lc.rho, 0.0, re)
    steady = steady_solve(acc_fem, re)
    dae = assemble_dae(acc_fem, steady)
    period = 2.0 * np.pi / lc.freq
    dt = period / 100.0
    stride = max(int(round(period / (25.0 * dt))), 1)
    run = integrate_fom(acc_fem, re, initial=snap0, horizon=12.0, dt=dt,
                        dae=dae, stride=stride)
    _, tke, _ = detect_limit_cycle(run, amp_tol=FOM_AMP_TOL)
    return {"run": run, "re": re, "tke": tke}


# -- criteria ----------------------------------------------------------------

def test_criterion_1_synthetic_oracle():
    """[DERIVED] The pipeline recovers the closed-form reduced dynamics of
    the recast oscillator: growth rate, frequency, and both cubic
    coefficients to 1e-6 relative, in under a second."""
    t0 = time.perf_counter()
    dae, oracle = make_hopf_dae()
    modes = build_mode_set(dae, shift=complex(oracle.a0, oracle.omega))
    rom = build_rom(dae, modes, 3, NORMAL_FORM, re0=50.0)
    polar = to_polar(rom)
    elapsed = time.perf_counter() - t0
    got = {"c0": polar.phase[0, 0], "c1": polar.amp[0, 0],
           "c2": polar.phase[1, 0], "c3": polar.amp[1, 0]}
    want = {"c0": oracle.omega, "c1": oracle.a0,
            "c2": oracle.cubic_reduced.imag, "c3": oracle.cubic_reduced.real}
    rel = max(abs(got[k] - want[k]) / abs(want[k]) for k in want)
    record(1, "synthetic Hopf oracle",
           rel < 1e-6 and elapsed < 1.0,
           f"max rel dev {rel:.2e}, runtime {elapsed:.2f} s")


def test_criterion_2_solve_count(rom_nf5):
    """[PAPER] An order-5, 3-coordinate build performs exactly 31
    homological solves, independent of the underlying mesh."""
    dae, oracle = make_hopf_dae()
    modes = build_mode_set(dae, shift=complex(oracle.a0, oracle.omega))
    rom_synth = build_rom(dae, modes, 5, NORMAL_FORM, re0=50.0)
    ok = rom_synth.solve_count == 31 and rom_nf5.solve_count == 31
    record(2, "solve-count exactness", ok,
           f"synthetic {rom_synth.solve_count}, mesh {rom_nf5.solve_count}")


def test_criterion_3_critical_re(acc_fem, fom_re_c):
    """[PAPER] Full-order eigen-sweep locates Re_c within 10% of 49.03;
    a model expanded at Re0 = 20 predicts the same-mesh Re_c within 5%."""
    dev_fom = abs(fom_re_c - REFERENCE_RE_C) / REFERENCE_RE_C

    steady20 = steady_solve(acc_fem, 20.0)
    dae20 = assemble_dae(acc_fem, steady20)
    n_dof = dae20.n_dof
    lam20, _ = solve_master_pair(dae20, 17j)
    modes20 = build_mode_set(dae20, shift=1j * abs(lam20.imag))
    rom20 = build_rom(dae20, modes20, 3, NORMAL_FORM, re0=20.0,
                      steady=steady20)
    re_c_rom = find_critical_re(to_polar(rom20))
    dev_rom = abs(re_c_rom - fom_re_c) / fom_re_c
    ok = 3000 <= n_dof <= 8000 and dev_fom < 0.10 and dev_rom < 0.05
    record(3, "critical Reynolds number", ok,
           f"{n_dof} DOFs; FOM Re_c {fom_re_c:.2f} ({100*dev_fom:.1f}% off "
           f"{REFERENCE_RE_C}); Re0=20 model predicts {re_c_rom:.2f} "
           f"({100*dev_rom:.1f}% off)")


def test_criterion_4_expansion_point(fom_re_c, graph_roms_crit, rom_far,
                                     fom_lo, fom_hi):
    """[PAPER] Expanding beyond criticality widens the validity window:
    the far model matches full-order <TKE> within 5% across
    [Re_c, 1.10 Re_c], the at-criticality model only on the tight window."""
    rom_crit = graph_roms_crit[5]
    errs = {}
    for name, rom in (("far", rom_far), ("crit", rom_crit)):
        for tag, fom in (("r1", fom_lo), ("r2", fom_hi)):
            tke_rom = graph_mean_tke(rom, fom["re"])
            errs[name, tag] = abs(tke_rom - fom["tke"]) / fom["tke"]
    ok = (errs["far", "r1"] <= 0.05 and errs["far", "r2"] <= 0.05
          and errs["crit", "r1"] <= 0.05 and errs["crit", "r2"] > 0.05)
    detail = ", ".join(f"{n}@{t}: {100*e:.1f}%"
                       for (n, t), e in sorted(errs.items()))
    record(4, "post-critical expansion superiority", ok, detail)


def test_criterion_5_order_study(fom_re_c, graph_roms_crit):
    """[PAPER] Graph-style orders 3/5/7/9 at Re0 = Re_c agree within 1%
    inside the validity window and separate beyond it."""
    def spread(re):
        vals = [graph_mean_tke(rom, re) for rom in graph_roms_crit.values()]
        return (max(vals) - min(vals)) / max(vals)

    s_in = spread(R1_FACTOR * fom_re_c)
    s_out = spread(R2_FACTOR * fom_re_c)
    ok = s_in <= 0.01 and s_out > 0.01
    record(5, "order study at criticality", ok,
           f"spread {100*s_in:.2f}% inside window, "
           f"{100*s_out:.1f}% beyond")


def test_criterion_6_error_estimator(rom_nf5, fom_lo, fom_hi):
    """[PAPER] The residual-based prediction is within a factor 2 of the
    measured error at every tested Re, and the predicted error field
    correlates >= 0.7 with the measured one."""
    ratios, corrs = [], []
    for fom in (fom_lo, fom_hi):
        apost, env_post = a_posteriori_error(fom["run"], rom_nf5, fom["re"],
                                             amp_tol=FOM_AMP_TOL)
        report = a_priori_nrmse(rom_nf5, rom_nf5.dae, fom["re"])
        ratios.append(report.nrmse_apriori / apost)
        corrs.append(float(np.corrcoef(report.vorticity_env, env_post)[0, 1]))
    ok = all(0.5 <= r <= 2.0 for r in ratios) and all(c >= 0.7 for c in corrs)
    record(6, "error-estimator fidelity", ok,
           "ratios " + ", ".join(f"{r:.2f}" for r in ratios)
           + "; correlations " + ", ".join(f"{c:.2f}" for c in corrs))


def test_criterion_7_residual_slopes(nf_setup):
    """[DERIVED] The invariance residual of an order-o truncation scales
    like rho^(o+1): fitted log-log slopes within 0.3 of o+1 for o in
    {3, 5}, on both the synthetic system and the mesh."""
    def slope(dae, modes, order, rho, re0):
        rom = build_rom(dae, modes, order, NORMAL_FORM, re0=re0)
        norms = [np.linalg.norm(invariance_residual(rom, dae, (r, r, 0.0)))
                 for r in (0.5 * rho, rho)]
        return np.log(norms[1] / norms[0]) / np.log(2.0)

    sdae, oracle = make_hopf_dae(delta=0.35)
    smodes = build_mode_set(sdae, shift=complex(oracle.a0, oracle.omega))
    steady, dae, modes = nf_setup
    slopes = {}
    for o in (3, 5):
        slopes["synth", o] = slope(sdae, smodes, o, 0.05, 50.0)
        slopes["mesh", o] = slope(dae, modes, o, 0.02, RE0_NF)
    ok = all(abs(s - (o + 1)) <= 0.3 for (_, o), s in slopes.items())
    detail = ", ".join(f"{sys}-o{o}: {s:.2f}"
                       for (sys, o), s in sorted(slopes.items()))
    record(7, "invariance-residual slope", ok, detail)


def test_criterion_8_structural_invariants(nf_setup, rom_nf5, cheap_fem,
                                           cheap_dae, cheap_modes):
    """[TRIVIAL] Structural identities: biorthonormality, conjugate
    symmetry, invariance under eigenmode rescaling, monomial counts, and
    second-order time accuracy of the reference integrator."""
    _, dae, modes = nf_setup
    gram = modes.psi.conj().T @ (dae.B @ modes.phi)
    biorth = float(np.max(np.abs(gram - np.eye(3))))

    conj_res = 0.0
    for p in rom_nf5.W.orders():
        scale = max(float(np.max(np.abs(rom_nf5.W.coeffs[p]))), 1e-300)
        for k, alpha in enumerate(rom_nf5.table.monomials(p)):
            pc, kc = rom_nf5.table.position(rom_nf5.table.conjugate(alpha))
            res = np.max(np.abs(rom_nf5.W.coeffs[p][k]
                                - np.conj(rom_nf5.W.coeffs[pc][kc])))
            conj_res = max(conj_res, res / scale)

    from dataclasses import replace
    from hopfrom.multiindex import eval_poly
    sdae, oracle = make_hopf_dae()
    smodes = build_mode_set(sdae, shift=complex(oracle.a0, oracle.omega))
    c = 2.0 * np.exp(0.3j)
    phi = smodes.phi.copy()
    psi = smodes.psi.copy()
    phi[:, 0] *= c
    phi[:, 1] = np.conj(phi[:, 0])
    psi[:, 0] /= np.conj(c)
    psi[:, 1] = np.conj(psi[:, 0])
    rom_a = build_rom(sdae, smodes, 3, NORMAL_FORM, re0=50.0)
    rom_b = build_rom(sdae, replace(smodes, phi=phi, psi=psi), 3,
                      NORMAL_FORM, re0=50.0)
    z1 = 0.1 + 0.04j
    w_a = eval_poly(rom_a.W, (z1, np.conj(z1), 0.002))
    w_b = eval_poly(rom_b.W, (z1 / c, np.conj(z1 / c), 0.002))
    rescale_res = float(np.max(np.abs(w_a - w_b)) / np.max(np.abs(w_a)))

    table = MonomialTable(3, 5)
    counts_ok = (
        [len(table.monomials(p)) for p in range(1, 6)] == [3, 6, 10, 15, 21]
        and sum(sum(1 for a in table.monomials(p)
                    if table.is_representative(a)) for p in range(2, 6)) == 31)

    lam, phi1 = solve_master_pair(cheap_dae, 16j)
    cheap_dae.meta["master_mode"] = phi1 if lam.imag > 0 else np.conj(phi1)
    horizon = 0.2
    runs = {}
    for dt in (0.02, 0.01, 0.005, 0.00125):
        n_steps = int(round(horizon / dt))
        runs[dt] = integrate_fom(cheap_fem, 52.0, horizon=horizon, dt=dt,
                                 dae=cheap_dae, stride=n_steps, eps=1e-2)
    ref = runs[0.00125].states[-1]
    errs = [np.linalg.norm(runs[dt].states[-1] - ref)
            for dt in (0.02, 0.01, 0.005)]
    cn_order = float(np.mean([np.log2(errs[i] / errs[i + 1])
                              for i in range(2)]))

    ok = (biorth <= 1e-10 and conj_res <= 1e-12 and rescale_res <= 1e-8
          and counts_ok and abs(cn_order - 2.0) <= 0.1)
    record(8, "structural invariants", ok,
           f"biorth {biorth:.1e}, conj {conj_res:.1e}, rescale "
           f"{rescale_res:.1e}, counts {'ok' if counts_ok else 'BAD'}, "
           f"CN order {cn_order:.2f}")


def test_criterion_9_relative_cost(nf_setup, fom_hi):
    """[PAPER, desk-scaled] Building the reduced model costs <= 1/50 of one
    full-order run to the periodic state, and a 50-point Reynolds sweep
    through the built model takes under 10 s."""
    steady, dae, modes = nf_setup
    t0 = time.perf_counter()
    rom = build_rom(dae, modes, 5, NORMAL_FORM, re0=RE0_NF, steady=steady)
    t_build = time.perf_counter() - t0

    t0 = time.perf_counter()
    polar = to_polar(rom)
    rows = []
    for re in np.linspace(49.0, 55.0, 50):
        lc = limit_cycle(polar, re)
        # 32 phases: periodic trapezoid quadrature is exact for the
        # trigonometric polynomial of an order-5 cycle
        rows.append((re, lc.rho if lc else 0.0,
                     mean_tke(rom, re, n_phase=32) if lc else 0.0))
    t_sweep = time.perf_counter() - t0

    ratio = fom_hi["wall"] / t_build
    ok = ratio >= 50.0 and t_sweep < 10.0 and len(rows) == 50
    record(9, "relative cost", ok,
           f"FOM {fom_hi['wall']:.0f} s vs build {t_build:.1f} s "
           f"(ratio {ratio:.0f}); 50-point sweep {t_sweep:.1f} s")
