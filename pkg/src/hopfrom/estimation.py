"""A priori error estimation for manifold-based reduced models.

The truncated mapping satisfies the invariance equation only up to a
residual r(z) = B (grad_z W) f - A W - Q(W, W).  Lifting that residual
through the frozen linear operator, A dy = r, predicts the full-order
error field without ever running the full model; averaging over one
reduced limit cycle gives an a priori normalised RMS error (NRMSE).
An order-by-order convergence study based on the cycle amplitude and
the NRMSE provides a practical validity verdict per Reynolds number.
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dae import QuadraticDae
from .exceptions import ConfigError, NumericalError
from .parametrisation import RomArtifact, StyleChoice, build_rom
from .reduced import limit_cycle, manifold_coords, to_polar
from .spectral import ModeSet

INLET_VELOCITY_SCALE = 1.5   # peak of the parabolic inflow profile
DEFAULT_N_PHASE = 32
CONVERGENCE_REL_TOL = 0.05


@dataclass
class ErrorReport:
    """Cycle-averaged a priori error prediction at one Reynolds number."""
    re: float
    rho: float
    nrmse_apriori: float
    delta_field: np.ndarray      # lifted error state (parameter slot 0)
    residual_norm: float
    vorticity_env: np.ndarray | None = None  # phase-RMS of the error vorticity

    def to_json(self) -> str:
        doc = {
            "format": "errreport v1",
            "re": self.re,
            "rho": self.rho,
            "nrmse_apriori": self.nrmse_apriori,
            "residual_norm": self.residual_norm,
            "delta_field": np.asarray(self.delta_field, dtype=float).tolist(),
        }
        if self.vorticity_env is not None:
            doc["vorticity_env"] = np.asarray(self.vorticity_env,
                                              dtype=float).tolist()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ErrorReport":
        obj = json.loads(text)
        if obj.get("format") != "errreport v1":
            raise ConfigError("not an 'errreport v1' document")
        env = obj.get("vorticity_env")
        return cls(re=float(obj["re"]), rho=float(obj["rho"]),
                   nrmse_apriori=float(obj["nrmse_apriori"]),
                   delta_field=np.asarray(obj["delta_field"], dtype=float),
                   residual_norm=float(obj["residual_norm"]),
                   vorticity_env=(None if env is None
                                  else np.asarray(env, dtype=float)))


def _grad_w_times_f(rom: RomArtifact, z: Sequence[complex]) -> np.ndarray:
    """(grad_z W) f evaluated exactly (terms beyond the stored order kept)."""
    zarr = np.asarray(z, dtype=complex)
    f_val = rom.f.eval(z)
    out = np.zeros(rom.W.dim, dtype=complex)
    for p, block in rom.W.coeffs.items():
        for k, alpha in enumerate(rom.W.table.monomials(p)):
            dfac = 0.0 + 0.0j
            for s, a_s in enumerate(alpha):
                if a_s == 0 or f_val[s] == 0:
                    continue
                prod = complex(a_s) * f_val[s]
                for t, a_t in enumerate(alpha):
                    e = a_t - (1 if t == s else 0)
                    if e:
                        prod *= zarr[t] ** e
                dfac += prod
            if dfac != 0:
                out += dfac * block[k]
    return out


def invariance_residual(rom: RomArtifact, dae: QuadraticDae,
                        z: Sequence[complex]) -> np.ndarray:
    """Defect of the invariance equation at the manifold point z.

    The stored expansions of W and f are used as-is; the products
    (grad_z W) f and Q(W, W) are evaluated exactly, so the result measures
    the genuine invariance defect of the truncated model.
    """
    w_z = rom.W.eval(z)
    grad = _grad_w_times_f(rom, z)
    return dae.B @ grad - dae.A @ w_z - dae.q_bilinear(w_z, w_z)


def _flow_solver(dae: QuadraticDae):
    """Factorized solver of the flow block of A with the parameter pinned."""
    par = dae.partition.param
    flow = np.array([i for i in range(dae.n_dof) if i != par])
    A_ff = dae.A.tocsr()[flow][:, flow].tocsc()
    try:
        lu = spla.splu(A_ff)
    except RuntimeError as exc:
        raise NumericalError(
            "frozen linear operator is singular; the expansion point sits "
            "exactly on a steady bifurcation") from exc

    def solve(r_vec: np.ndarray) -> np.ndarray:
        dy = np.zeros(dae.n_dof)
        dy[flow] = lu.solve(np.asarray(r_vec, dtype=float)[flow])
        return dy

    return solve


def _velocity_ms(dae: QuadraticDae, vec: np.ndarray) -> float:
    """Spatial mean square of the velocity slot of a state vector."""
    fem = dae.meta.get("fem")
    if fem is not None:
        u, _ = fem.expand_state(vec)
        return float(np.real(np.vdot(u, fem.velocity_mass @ u))
                     / fem.domain_area)
    u = vec[dae.partition.velocity]
    return float(np.real(np.vdot(u, u)) / max(len(u), 1))


def a_priori_nrmse(rom: RomArtifact, dae: QuadraticDae, re: float,
                   n_phase: int = DEFAULT_N_PHASE) -> ErrorReport:
    """Residual-lifted error prediction at one Reynolds number.

    The residual is sampled at uniformly spaced phases of the reduced limit
    cycle (amplitude 0 when no cycle exists), lifted through the flow block
    of A with the parameter component pinned to zero, and the velocity slot
    is RMS-averaged over space and phase, normalised by the peak inlet
    velocity.
    """
    polar = to_polar(rom)
    lc = limit_cycle(polar, re)
    rho = lc.rho if lc is not None else 0.0
    solve = _flow_solver(dae)

    thetas = np.linspace(0.0, 2.0 * np.pi, n_phase, endpoint=False)
    ms_sum = 0.0
    res_sq = 0.0
    best_dy = np.zeros(dae.n_dof)
    best_norm = -1.0
    fem = dae.meta.get("fem")
    delta_fields = []
    for th in thetas:
        z = manifold_coords(rho, th, re, rom.re0)
        r = invariance_residual(rom, dae, z)
        imag = np.linalg.norm(r.imag)
        if imag > 1e-8 * max(np.linalg.norm(r), 1e-300):
            raise NumericalError(
                f"invariance residual has imaginary residue {imag:.3e}; "
                "conjugate symmetry violated")
        dy = solve(r.real)
        ms_sum += _velocity_ms(dae, dy)
        res_sq += float(np.linalg.norm(r.real) ** 2)
        norm = float(np.linalg.norm(dy))
        if norm > best_norm:
            best_norm, best_dy = norm, dy
        if fem is not None:
            delta_fields.append(fem.expand_state(dy)[0])
    nrmse = float(np.sqrt(ms_sum / n_phase) / INLET_VELOCITY_SCALE)
    vort_env = (fem.vorticity_rms_envelope(delta_fields)
                if fem is not None else None)
    return ErrorReport(re=re, rho=float(rho), nrmse_apriori=nrmse,
                       delta_field=best_dy,
                       residual_norm=float(np.sqrt(res_sq / n_phase)),
                       vorticity_env=vort_env)


def convergence_study(dae: QuadraticDae, modes: ModeSet, re0: float,
                      re_values: Sequence[float], orders: Sequence[int],
                      style: StyleChoice, threads: int = 1) -> list[dict]:
    """Amplitude and a priori NRMSE per (order, re), plus a verdict per re.

    A Reynolds number is judged "converged" when both the cycle amplitude
    and the NRMSE change by less than 5% between the two highest orders.
    """
    orders = list(orders)
    if orders != sorted(orders) or len(orders) < 2:
        raise ConfigError("orders must be an ascending list of length >= 2")

    def build(order):
        return build_rom(dae, modes, order, style, re0=re0, threads=1)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            roms = list(pool.map(build, orders))
    else:
        roms = [build(o) for o in orders]

    rows: list[dict] = []
    cells: dict[tuple[int, float], tuple[float, float]] = {}
    for order, rom in zip(orders, roms):
        polar = to_polar(rom)
        for re in re_values:
            lc = limit_cycle(polar, re)
            rho_inf = lc.rho if lc is not None else 0.0
            nrmse = a_priori_nrmse(rom, dae, re).nrmse_apriori
            cells[(order, re)] = (rho_inf, nrmse)

    def rel_change(a, b):
        return abs(b - a) / max(abs(a), abs(b), 1e-300)

    o_lo, o_hi = orders[-2], orders[-1]
    for order in orders:
        for re in re_values:
            rho_inf, nrmse = cells[(order, re)]
            d_rho = rel_change(cells[(o_lo, re)][0], cells[(o_hi, re)][0])
            d_err = rel_change(cells[(o_lo, re)][1], cells[(o_hi, re)][1])
            verdict = ("converged"
                       if d_rho < CONVERGENCE_REL_TOL
                       and d_err < CONVERGENCE_REL_TOL else "non-converged")
            rows.append({"order": order, "re": re, "rho_inf": rho_inf,
                         "nrmse": nrmse, "verdict": verdict})
    return rows


def convergence_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write("order,re,rho_inf,nrmse,verdict\n")
    for row in rows:
        buf.write(f"{row['order']},{row['re']:.17g},{row['rho_inf']:.17g},"
                  f"{row['nrmse']:.17g},{row['verdict']}\n")
    return buf.getvalue()
