"""Full-order reference runs: Crank–Nicolson in time with Newton per step,
eigenvalue sweeps over Reynolds number, limit-cycle detection from a wake
probe, and the a posteriori ROM error against those runs.

The integrator advances the perturbation DAE  B y' = A y + Q(y, y) + g(t)
assembled around the steady state at the run's own Reynolds number, so the
parameter coordinate stays 0 and full fields are steady + perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .dae import QuadraticDae
from .exceptions import ConfigError, CycleNotFoundError, NumericalError
from .fem.steady import SteadyState, assemble_dae, steady_solve
from .fem.taylor_hood import FemProblem
from .parametrisation import RomArtifact
from .reduced import (FieldSnapshot, limit_cycle, reconstruct, to_polar,
                      tke_of_samples)
from .spectral import solve_master_pair

DEFAULT_PROBE = (0.35, 0.2)
DEFAULT_STRIDE = 5
NEWTON_TOL = 1e-10
NEWTON_MAXIT = 12


@dataclass
class FomRun:
    """Time-tagged states of one full-order integration.

    ``states`` holds strided perturbation DAE states; the probe signal is
    recorded at every step.  Full fields are ``steady.u0 +`` the expanded
    velocity slot of a state.
    """
    dae: QuadraticDae
    re: float
    dt: float
    times: np.ndarray                    # strided snapshot times
    states: np.ndarray                   # (n_snap, n_dof)
    probe_times: np.ndarray              # every step
    probe_signal: np.ndarray             # (n_steps + 1, 2) velocity at probe
    newton_iters: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def fem(self) -> FemProblem:
        return self.dae.meta["fem"]

    @property
    def steady(self) -> SteadyState:
        return self.dae.meta["steady"]

    def snapshot(self, i: int) -> FieldSnapshot:
        du, dp = self.fem.expand_state(self.states[i])
        return FieldSnapshot(velocity=self.steady.u0 + du,
                             pressure=self.steady.p0 + dp,
                             re=self.re, time=float(self.times[i]))


def perturbed_initial(dae: QuadraticDae, eps: float = 1e-3,
                      seed: int | None = None) -> np.ndarray:
    """Steady state plus eps times the real part of the master mode.

    The seed only matters for the optional random fallback when no mode is
    cached; the default deterministic choice follows the run metadata.
    """
    fem: FemProblem = dae.meta["fem"]
    if "master_mode" in dae.meta:
        direction = np.real(dae.meta["master_mode"])
    else:
        rng = np.random.default_rng(0 if seed is None else seed)
        direction = np.zeros(dae.n_dof)
        direction[: fem.n_free] = rng.standard_normal(fem.n_free)
        direction /= np.linalg.norm(direction)
    y = eps * direction
    y[dae.partition.param] = 0.0
    return y


def _state_from_snapshot(dae: QuadraticDae, snap: FieldSnapshot) -> np.ndarray:
    fem: FemProblem = dae.meta["fem"]
    steady: SteadyState = dae.meta["steady"]
    du = np.asarray(snap.velocity) - steady.u0
    if np.max(np.abs(du[2 * fem.dirichlet_nodes])) > 1e-8 or \
       np.max(np.abs(du[2 * fem.dirichlet_nodes + 1])) > 1e-8:
        raise ConfigError("initial snapshot violates the Dirichlet data")
    y = np.zeros(dae.n_dof)
    y[: fem.n_free] = du[fem.free_vel_dofs]
    y[fem.n_free: fem.n_free + fem.n_p1] = np.asarray(snap.pressure) - steady.p0
    return y


def integrate_fom(fem: FemProblem, re: float, initial=None,
                  horizon: float = 10.0, dt: float | None = None, *,
                  dae: QuadraticDae | None = None, stride: int = DEFAULT_STRIDE,
                  probe_point=DEFAULT_PROBE, forcing=None,
                  linear_only: bool = False, eps: float = 1e-3,
                  seed: int | None = None) -> FomRun:
    """Crank–Nicolson integration with Newton sub-iterations per step.

    ``initial`` may be a FieldSnapshot, a raw DAE state vector, or None
    (steady state plus a small master-mode perturbation).  ``dt`` defaults
    to an estimated shedding period over 200.  ``linear_only`` drops the
    quadratic term (used for the Stokes energy check).
    """
    if dae is None:
        steady = steady_solve(fem, re)
        dae = assemble_dae(fem, steady)
    if dt is None:
        period = dae.meta.get("period_estimate", 2 * np.pi / 17.0)
        dt = period / 200.0
    if dt <= 0 or horizon <= 0:
        raise ConfigError("dt and horizon must be positive")

    if initial is None:
        y = perturbed_initial(dae, eps=eps, seed=seed)
        init_meta = {"kind": "steady+eps*Re(phi1)", "eps": eps}
    elif isinstance(initial, FieldSnapshot):
        y = _state_from_snapshot(dae, initial)
        init_meta = {"kind": "snapshot"}
    else:
        y = np.asarray(initial, dtype=float).copy()
        init_meta = {"kind": "state"}

    n_steps = int(round(horizon / dt))
    probe_op = fem.velocity_probe(probe_point)

    def probe_of(yv):
        du, _ = fem.expand_state(yv)
        return probe_op @ (dae.meta["steady"].u0 + du)

    def rhs_terms(yv, t):
        out = dae.A @ yv
        if not linear_only:
            out = out + dae.q_bilinear(yv, yv)
        if forcing is not None:
            out = out + forcing(t)
        return out

    B = dae.B.tocsr()
    half_A = 0.5 * dae.A

    states = [y.copy()]
    times = [0.0]
    probes = [probe_of(y)]
    probe_times = [0.0]
    newton_iters = []
    scale = max(1.0, np.linalg.norm(dae.meta["steady"].u0))

    t = 0.0
    for step in range(1, n_steps + 1):
        t1 = step * dt
        const = B @ y / dt + 0.5 * rhs_terms(y, t)
        y1 = y.copy()
        # exact Jacobian at the step's predictor, reused in sub-iterations
        jac = (B / dt - half_A
               - (0 if linear_only else dae.q_left_matrix(y1))).tocsc()
        lu = spla.splu(jac)
        converged = False
        for it in range(1, NEWTON_MAXIT + 1):
            res = B @ y1 / dt - 0.5 * rhs_terms(y1, t1) - const
            rnorm = np.linalg.norm(res)
            if not np.isfinite(rnorm):
                break
            if rnorm <= NEWTON_TOL * scale:
                converged = True
                newton_iters.append(it - 1)
                break
            if it == 6:
                # slow contraction: refresh the Jacobian at the iterate
                jac = (B / dt - half_A
                       - (0 if linear_only else dae.q_left_matrix(y1))).tocsc()
                lu = spla.splu(jac)
            y1 = y1 - lu.solve(res)
        if not converged:
            raise NumericalError(
                f"Crank-Nicolson Newton failed at step {step} (t = {t1:.4f}, "
                f"re = {re}); consider reducing dt")
        y, t = y1, t1
        probes.append(probe_of(y))
        probe_times.append(t)
        if step % stride == 0:
            states.append(y.copy())
            times.append(t)

    return FomRun(dae=dae, re=re, dt=dt, times=np.array(times),
                  states=np.array(states), probe_times=np.array(probe_times),
                  probe_signal=np.array(probes), newton_iters=newton_iters,
                  meta={"initial": init_meta, "probe_point": tuple(probe_point),
                        "stride": stride, "horizon": horizon,
                        "mesh_hash": dae.meta.get("mesh_hash")})


def _upward_crossings(times: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """Linear-interpolated times where the signal crosses 0 going up."""
    s = signal
    idx = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    frac = -s[idx] / (s[idx + 1] - s[idx])
    return times[idx] + frac * (times[idx + 1] - times[idx])


def detect_limit_cycle(run: FomRun, amp_tol: float = 1e-3,
                       n_check: int = 5) -> tuple[float, float, np.ndarray]:
    """Period, mean TKE and mean velocity field of the developed cycle.

    The period comes from upward zero crossings of the detrended cross-stream
    probe signal; the run must show amplitude variation below ``amp_tol``
    over the last ``n_check`` periods.
    """
    v = run.probe_signal[:, 1]
    tail = v[len(v) // 2:]
    sig = v - np.mean(tail)
    crossings = _upward_crossings(run.probe_times, sig)
    if len(crossings) < n_check + 2:
        raise CycleNotFoundError(
            f"only {len(crossings)} probe oscillations in the run; "
            "no developed limit cycle (pre-critical decay or short horizon)")
    periods = np.diff(crossings)[-(n_check + 1):]
    period = float(np.mean(periods))

    # amplitude stability over the last n_check periods
    amps = []
    for a, b in zip(crossings[-(n_check + 1):-1], crossings[-n_check:]):
        mask = (run.probe_times >= a) & (run.probe_times <= b)
        amps.append(0.5 * (np.max(sig[mask]) - np.min(sig[mask])))
    amps = np.array(amps)
    spread = (np.max(amps) - np.min(amps)) / np.max(np.abs(amps))
    if spread > amp_tol or np.max(np.abs(amps)) < 1e-12:
        raise CycleNotFoundError(
            f"probe amplitude varies by {spread:.2e} over the last "
            f"{n_check} periods (tolerance {amp_tol}); not yet periodic")

    fem = run.fem
    t_end = run.times[-1]
    mask = run.times >= t_end - period
    vels = np.array([run.steady.u0 + fem.expand_state(s)[0]
                     for s in run.states[mask]])
    tke = tke_of_samples(vels, fem.velocity_mass, fem.domain_area)
    mean_field = vels.mean(axis=0)
    return period, tke, mean_field


def fom_eig_sweep(fem: FemProblem, re_values, shift: complex = 17j,
                  initial: SteadyState | None = None) -> list[tuple[float, complex]]:
    """Steady solve + master eigensolve at each Reynolds number, continuing
    the steady state and the eigenvalue shift along the sweep."""
    out = []
    state = initial
    for re in re_values:
        state = steady_solve(fem, float(re), initial=state)
        dae = assemble_dae(fem, state)
        lam, _ = solve_master_pair(dae, shift)
        if lam.imag < 0:
            lam = np.conj(lam)
        shift = 1j * lam.imag
        out.append((float(re), complex(lam)))
    return out


def fom_critical_re(fem: FemProblem, re_lo: float, re_hi: float,
                    shift: complex = 17j, rel_tol: float = 1e-3) -> float:
    """Bisection on Re(lambda) between a bracketing pair of Reynolds numbers."""

    last_state: list[SteadyState | None] = [None]

    def growth(re):
        st = steady_solve(fem, re, initial=last_state[0])
        last_state[0] = st
        lam, _ = solve_master_pair(assemble_dae(fem, st), shift)
        return lam.real

    g_lo, g_hi = growth(re_lo), growth(re_hi)
    if g_lo * g_hi > 0:
        raise NumericalError(
            f"Re({re_lo}) and Re({re_hi}) do not bracket the bifurcation: "
            f"growth rates {g_lo:.4f}, {g_hi:.4f}")
    while (re_hi - re_lo) > rel_tol * re_hi:
        mid = 0.5 * (re_lo + re_hi)
        if growth(mid) < 0:
            re_lo = mid
        else:
            re_hi = mid
    return 0.5 * (re_lo + re_hi)


def a_posteriori_error(run: FomRun, rom: RomArtifact, re: float,
                       n_phase_grid: int = 64,
                       amp_tol: float = 1e-3) -> tuple[float, np.ndarray]:
    """Space-time NRMSE of ROM vs FOM velocities over one developed period,
    minimized over the ROM's free phase; also returns the period-RMS
    vorticity envelope of the velocity error field.

    Normalization is the maximum inlet velocity (1.5); the spatial mean
    square is mass-matrix weighted.  ``amp_tol`` is forwarded to the cycle
    detector; loosen it for short runs that are still settling.
    """
    period, _, _ = detect_limit_cycle(run, amp_tol=amp_tol)
    fem = run.fem
    t_end = run.times[-1]
    mask = run.times >= t_end - period
    t_fom = run.times[mask]
    u_fom = np.array([run.steady.u0 + fem.expand_state(s)[0]
                      for s in run.states[mask]])
    return a_posteriori_from_fields(t_fom, u_fom, rom, re, fem,
                                    n_phase_grid=n_phase_grid)


def a_posteriori_from_fields(t_fom: np.ndarray, u_fom: np.ndarray,
                             rom: RomArtifact, re: float, fem: FemProblem,
                             n_phase_grid: int = 64) -> tuple[float, np.ndarray]:
    """Phase-matched NRMSE against full velocity fields covering one period.

    Returns the NRMSE and the phase-free spatial error signature: the RMS
    over the period of the nodal vorticity of the velocity error field.
    """
    polar = to_polar(rom)
    lc = limit_cycle(polar, re)
    if lc is None:
        raise CycleNotFoundError(f"ROM has no limit cycle at Re = {re}")
    M = fem.velocity_mass
    area = fem.domain_area
    phases = lc.freq * (t_fom - t_fom[0])

    def nrmse_at(phi0):
        ms = 0.0
        for k, th in enumerate(phases):
            snap = reconstruct(rom, lc.rho, th + phi0, re)
            e = snap.velocity - u_fom[k]
            ms += np.real(np.vdot(e, M @ e)) / area
        return np.sqrt(ms / len(phases)) / 1.5

    grid = np.linspace(0.0, 2 * np.pi, n_phase_grid, endpoint=False)
    vals = np.array([nrmse_at(p) for p in grid])
    k = int(np.argmin(vals))
    # parabolic refinement around the grid minimum
    lo, hi = grid[k] - 2 * np.pi / n_phase_grid, grid[k] + 2 * np.pi / n_phase_grid
    from scipy.optimize import minimize_scalar
    opt = minimize_scalar(nrmse_at, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-4})
    phi_best = float(opt.x) if opt.fun <= vals[k] else float(grid[k])
    best = min(float(opt.fun), float(vals[k]))

    err_fields = [reconstruct(rom, lc.rho, th + phi_best, re).velocity
                  - u_fom[k] for k, th in enumerate(phases)]
    return best, fem.vorticity_rms_envelope(err_fields)


def write_snapshots(run: FomRun, path_prefix: str) -> None:
    """Binary snapshot dump (little-endian float64: node count, u_x, u_y, p
    per snapshot) plus a JSON sidecar index."""
    import json

    fem = run.fem
    n = fem.n_p2
    with open(path_prefix + ".bin", "wb") as fh:
        for s in run.states:
            du, dp = fem.expand_state(s)
            u = run.steady.u0 + du
            p = run.steady.p0 + dp
            np.array([n], dtype="<f8").tofile(fh)
            u[0::2].astype("<f8").tofile(fh)
            u[1::2].astype("<f8").tofile(fh)
            p.astype("<f8").tofile(fh)
    sidecar = {
        "format": "fomsnap v1",
        "times": [float(t) for t in run.times],
        "re": run.re, "dt": run.dt,
        "mesh_hash": run.meta.get("mesh_hash"),
        "node_count": n, "pressure_count": fem.n_p1,
        "initial": run.meta.get("initial"),
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_snapshots(path_prefix: str) -> dict:
    """Read a snapshot dump back into full velocity / pressure field arrays."""
    import json

    with open(path_prefix + ".json") as fh:
        sidecar = json.load(fh)
    if sidecar.get("format") != "fomsnap v1":
        raise ConfigError(f"{path_prefix}.json: not a 'fomsnap v1' sidecar")
    n = int(sidecar["node_count"])
    n_p = int(sidecar["pressure_count"])
    times = np.asarray(sidecar["times"], dtype=float)
    block = 1 + 2 * n + n_p
    raw = np.fromfile(path_prefix + ".bin", dtype="<f8")
    if raw.size != block * len(times):
        raise ConfigError(
            f"{path_prefix}.bin: expected {block * len(times)} values, "
            f"found {raw.size}")
    raw = raw.reshape(len(times), block)
    if not np.all(raw[:, 0] == n):
        raise ConfigError(f"{path_prefix}.bin: node-count markers corrupt")
    velocities = np.empty((len(times), 2 * n))
    velocities[:, 0::2] = raw[:, 1:1 + n]
    velocities[:, 1::2] = raw[:, 1 + n:1 + 2 * n]
    pressures = raw[:, 1 + 2 * n:]
    return {"times": times, "velocities": velocities, "pressures": pressures,
            "re": float(sidecar["re"]), "dt": float(sidecar["dt"]),
            "mesh_hash": sidecar.get("mesh_hash")}


def a_posteriori_from_snapshots(snapshots: dict, rom: RomArtifact,
                                fem: FemProblem,
                                probe_point=DEFAULT_PROBE,
                                n_phase_grid: int = 64) -> tuple[float, np.ndarray]:
    """A posteriori NRMSE from a reloaded snapshot store.

    The developed period is recovered from the probe signal sampled at the
    (strided) snapshot times, then the trailing period is compared
    phase-matched against the ROM cycle.
    """
    times = snapshots["times"]
    u = snapshots["velocities"]
    probe_op = fem.velocity_probe(np.asarray(probe_point, dtype=float))
    v = (probe_op @ u.T)[1]
    sig = v - np.mean(v[len(v) // 2:])
    crossings = _upward_crossings(times, sig)
    if len(crossings) < 3:
        raise CycleNotFoundError(
            "snapshot stream shows fewer than 3 probe oscillations; "
            "cannot identify a developed period")
    period = float(np.mean(np.diff(crossings)[-3:]))
    mask = times >= times[-1] - period
    return a_posteriori_from_fields(times[mask], u[mask], rom,
                                    snapshots["re"], fem,
                                    n_phase_grid=n_phase_grid)
