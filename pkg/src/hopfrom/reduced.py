"""Exploitation of a built ROM artifact: polar dynamics, eigenvalue and
critical-Reynolds prediction, limit cycles, reduced time integration, field
reconstruction, mean flow / shift field and kinetic-energy diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .exceptions import ConfigError, CycleNotFoundError, NumericalError
from .parametrisation import RomArtifact


@dataclass(frozen=True)
class PolarDynamics:
    """Real coefficients of the polar reduced dynamics.

    ``amp[a-1, c]`` multiplies rho^(2a-1) * eta'^c in d(rho)/dt;
    ``phase[a-1, c]`` multiplies rho^(2a-2) * eta'^c in d(theta)/dt.
    """
    amp: np.ndarray
    phase: np.ndarray
    re0: float

    def eta(self, re: float) -> float:
        if re <= 0:
            raise ConfigError(f"Reynolds number must be > 0, got {re}")
        return 1.0 / re - 1.0 / self.re0

    def amp_poly(self, eta: float) -> np.ndarray:
        """[c1, c3, c5, ...] evaluated at eta (coefficients of powers of rho^2)."""
        powers = eta ** np.arange(self.amp.shape[1])
        return self.amp @ powers

    def phase_poly(self, eta: float) -> np.ndarray:
        """[c0, c2, c4, ...] evaluated at eta."""
        powers = eta ** np.arange(self.phase.shape[1])
        return self.phase @ powers

    def rho_dot(self, rho: float, eta: float) -> float:
        x = rho * rho
        c = self.amp_poly(eta)
        return rho * float(np.polynomial.polynomial.polyval(x, c))

    def theta_dot(self, rho: float, eta: float) -> float:
        x = rho * rho
        c = self.phase_poly(eta)
        return float(np.polynomial.polynomial.polyval(x, c))


@dataclass(frozen=True)
class LimitCycle:
    rho: float
    freq: float
    stable: bool


@dataclass(frozen=True)
class ReducedTrajectory:
    times: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    re: float
    diverged: bool = False


@dataclass(frozen=True)
class FieldSnapshot:
    velocity: np.ndarray
    pressure: np.ndarray
    re: float
    time: float = 0.0


def to_polar(rom: RomArtifact, residue_tol: float = 1e-10) -> PolarDynamics:
    """Split the normal-form reduced dynamics into amplitude/phase equations.

    Only monomials of exponents (a, a-1, c) may carry nonzero coefficients in
    the first reduced equation; anything else marks an artifact inconsistent
    with the normal-form style.
    """
    if rom.style.kind != "normal_form":
        raise ConfigError("polar reduced dynamics requires a normal-form "
                          "artifact; integrate graph-style dynamics in "
                          "complex coordinates instead")
    o = rom.order
    n_amp = (o + 1) // 2
    amp = np.zeros((n_amp, o))
    phase = np.zeros((n_amp, o))
    scale = max(abs(rom.modes.lam), 1.0)
    for p in rom.f.orders():
        for k, alpha in enumerate(rom.table.monomials(p)):
            f1 = rom.f.coeffs[p][k][0]
            a, b, c = alpha
            if b == a - 1:
                f2 = rom.f.get((b, a, c))[1]
                if abs(f2 - np.conj(f1)) > residue_tol * scale:
                    raise NumericalError(
                        f"conjugate-symmetry residue {abs(f2 - np.conj(f1)):.3e} "
                        f"on monomial {alpha}")
                amp[a - 1, c] += f1.real
                phase[a - 1, c] += f1.imag
            elif abs(f1) > residue_tol * scale:
                raise NumericalError(
                    f"non-resonant monomial {alpha} carries reduced-dynamics "
                    f"coefficient {f1:.3e}; artifact inconsistent with the "
                    "normal-form style")
    return PolarDynamics(amp=amp, phase=phase, re0=rom.re0)


def eig_prediction(polar: PolarDynamics, re: float) -> complex:
    """Master eigenvalue as a function of Re: c1(eta') + i c0(eta')."""
    eta = polar.eta(re)
    c1 = float(np.polynomial.polynomial.polyval(
        eta, np.ascontiguousarray(polar.amp[0])))
    c0 = float(np.polynomial.polynomial.polyval(
        eta, np.ascontiguousarray(polar.phase[0])))
    return complex(c1, c0)


def find_critical_re(polar: PolarDynamics, re_lo: float | None = None,
                     re_hi: float | None = None) -> float:
    """Root of c1 over Re, located by bracketing plus Brent iteration."""
    re_lo = re_lo if re_lo is not None else polar.re0 / 3.0
    re_hi = re_hi if re_hi is not None else polar.re0 * 3.0

    def c1_of_re(re: float) -> float:
        return eig_prediction(polar, re).real

    res = np.linspace(re_lo, re_hi, 256)
    vals = np.array([c1_of_re(r) for r in res])
    sign_change = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    if len(sign_change) == 0:
        raise NumericalError(
            f"c1 does not change sign on Re in [{re_lo}, {re_hi}]")
    i = sign_change[0]
    return float(brentq(c1_of_re, res[i], res[i + 1], xtol=1e-12, rtol=1e-12))


def limit_cycle(polar: PolarDynamics, re: float) -> LimitCycle | None:
    """Smallest stable positive amplitude root of the odd polynomial, with
    its frequency; None when no stable cycle exists.

    Unstable roots are skipped: below the bifurcation the truncated
    amplitude polynomial routinely grows a spurious repelling root far
    outside the expansion's validity, which is not a limit cycle of the
    flow."""
    eta = polar.eta(re)
    c = polar.amp_poly(eta)
    c = np.trim_zeros(c, "b")
    if len(c) <= 1:
        return None
    roots = np.polynomial.polynomial.polyroots(c)
    pos = sorted(r.real for r in roots
                 if abs(r.imag) < 1e-10 * max(1.0, abs(r)) and r.real > 0)
    dc = np.polynomial.polynomial.polyder(c)
    for x in pos:
        dh = np.polynomial.polynomial.polyval(x, dc)
        if 2.0 * x * dh < 0:
            rho = float(np.sqrt(x))
            freq = float(np.polynomial.polynomial.polyval(
                x, polar.phase_poly(eta)))
            return LimitCycle(rho=rho, freq=freq, stable=True)
    return None


def integrate_reduced(polar: PolarDynamics, rho0: float, theta0: float,
                      re: float, horizon: float, rho_max: float = 1e3,
                      rtol: float = 1e-10, n_samples: int = 2000) -> ReducedTrajectory:
    """Adaptive explicit Runge-Kutta integration of the two scalar ODEs."""
    if rho0 < 0:
        raise ConfigError("initial amplitude must be >= 0")
    eta = polar.eta(re)

    def rhs(t, state):
        rho, theta = state
        return [polar.rho_dot(rho, eta), polar.theta_dot(rho, eta)]

    def blow_up(t, state):
        return state[0] - rho_max
    blow_up.terminal = True
    blow_up.direction = 1

    t_eval = np.linspace(0.0, horizon, n_samples)
    sol = solve_ivp(rhs, (0.0, horizon), [rho0, theta0], rtol=rtol,
                    atol=1e-14, t_eval=t_eval, events=blow_up, method="RK45")
    diverged = len(sol.t_events[0]) > 0
    return ReducedTrajectory(times=sol.t, rho=sol.y[0], theta=sol.y[1],
                             re=re, diverged=diverged)


# -- reconstruction ---------------------------------------------------------

def manifold_coords(rho: float, theta: float, re: float, re0: float) -> tuple:
    return (rho * np.exp(1j * theta), rho * np.exp(-1j * theta),
            1.0 / re - 1.0 / re0)


def reconstruct_state(rom: RomArtifact, rho: float, theta: float,
                      re: float) -> np.ndarray:
    """Perturbation state vector on the manifold; strictly real output."""
    z = manifold_coords(rho, theta, re, rom.re0)
    y = rom.W.eval(z)
    norm = np.linalg.norm(y)
    if norm > 0 and np.linalg.norm(y.imag) > 1e-10 * norm:
        raise NumericalError(
            f"imaginary residue {np.linalg.norm(y.imag) / norm:.3e} in "
            "reconstructed state; conjugate symmetry violated")
    return y.real


def _fem_context(rom: RomArtifact):
    if rom.dae is None or "fem" not in rom.dae.meta:
        raise ConfigError("artifact has no attached finite-element problem")
    return rom.dae.meta["fem"], rom.steady


def reconstruct(rom: RomArtifact, rho: float, theta: float, re: float,
                time: float = 0.0) -> FieldSnapshot:
    """Physical fields u0 + w_u(z), p0 + w_p(z) for a fem-backed artifact."""
    fem, steady = _fem_context(rom)
    y = reconstruct_state(rom, rho, theta, re)
    du, dp = fem.expand_state(y)
    return FieldSnapshot(velocity=steady.u0 + du, pressure=steady.p0 + dp,
                         re=re, time=time)


def _require_cycle(rom: RomArtifact, re: float) -> LimitCycle:
    lc = limit_cycle(to_polar(rom), re)
    if lc is None:
        raise CycleNotFoundError(f"no limit cycle at Re = {re}")
    return lc


def cycle_snapshots(rom: RomArtifact, re: float,
                    n_phase: int = 128) -> tuple[list[FieldSnapshot], float]:
    """Snapshots over one period at the limit cycle, plus the period."""
    lc = _require_cycle(rom, re)
    period = 2.0 * np.pi / abs(lc.freq)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_phase, endpoint=False)
    snaps = [reconstruct(rom, lc.rho, th, re, time=th / abs(lc.freq))
             for th in thetas]
    return snaps, period

def mean_flow_and_shift(rom: RomArtifact, re: float,
                        n_phase: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Period-averaged velocity field and its offset from the steady field."""
    snaps, _ = cycle_snapshots(rom, re, n_phase)
    mean = np.mean([s.velocity for s in snaps], axis=0)
    steady = reconstruct(rom, 0.0, 0.0, re).velocity
    return mean, mean - steady


def tke_of_samples(velocities: np.ndarray, mass: "object", area: float) -> float:
    """Space-time mean of 0.5 ||u - u_mean||^2 with mass-matrix quadrature.

    ``velocities`` is (n_samples, n_vel_dofs), uniformly spaced over one
    period (periodic trapezoid = plain mean)."""
    u = np.asarray(velocities)
    fluct = u - u.mean(axis=0)
    energies = 0.5 * np.einsum("ki,ki->k", fluct, (mass @ fluct.T).T)
    return float(energies.mean() / area)


def mean_tke(rom: RomArtifact, re: float, n_phase: int = 128) -> float:
    """<TKE> of the ROM limit cycle at the given Reynolds number."""
    fem, steady = _fem_context(rom)
    lc = _require_cycle(rom, re)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_phase, endpoint=False)
    zs = [manifold_coords(lc.rho, th, re, rom.re0) for th in thetas]
    y = rom.W.eval_many(zs)
    scale = float(np.max(np.abs(y)))
    if scale > 0 and float(np.max(np.abs(y.imag))) > 1e-10 * scale:
        raise NumericalError(
            "imaginary residue in reconstructed cycle states; conjugate "
            "symmetry violated")
    u = np.array([steady.u0 + fem.expand_state(v)[0] for v in y.real])
    return tke_of_samples(u, fem.velocity_mass, fem.domain_area)


# -- graph-style exploitation ----------------------------------------------

def integrate_complex(rom: RomArtifact, z1_0: complex, re: float,
                      horizon: float, rtol: float = 1e-10,
                      z_max: float = 1e3):
    """Integrate the first reduced equation in complex coordinates with the
    conjugacy constraint z2 = conj(z1); used for graph-style artifacts."""
    eta = 1.0 / re - 1.0 / rom.re0

    def rhs(t, s):
        z1 = complex(s[0], s[1])
        dz1 = rom.f.eval((z1, np.conj(z1), eta))[0]
        return [dz1.real, dz1.imag]

    def blow_up(t, s):
        return np.hypot(s[0], s[1]) - z_max
    blow_up.terminal = True
    blow_up.direction = 1

    sol = solve_ivp(rhs, (0.0, horizon), [z1_0.real, z1_0.imag], rtol=rtol,
                    atol=1e-14, events=blow_up, dense_output=True,
                    method="RK45")
    diverged = len(sol.t_events[0]) > 0
    return sol, diverged


def graph_limit_cycle(rom: RomArtifact, re: float, z1_seed: float | None = None,
                      settle_tol: float = 1e-8, max_time: float = 4000.0):
    """Locate the limit cycle of a graph-style artifact by time marching the
    2-state complex reduced ODE to its attractor.

    Returns (z1 samples over one period, period) or raises when no cycle is
    reached within the horizon."""
    eta = 1.0 / re - 1.0 / rom.re0
    if z1_seed is None:
        z1_seed = 1e-3
    z1 = complex(z1_seed, 0.0)
    # linearized frequency: evaluating at amplitude 1 would let large
    # high-order coefficients distort the period guess by orders of magnitude
    eps = 1e-6
    omega = abs(rom.f.eval((eps, 0.0, eta))[0].imag) / eps
    period_guess = 2.0 * np.pi / max(omega, 1e-6)
    chunk = 20.0 * period_guess

    def crossing_amplitude(sol):
        """|z1| at the last upward zero crossing of Im z1 in the chunk.

        The cycle is generally non-circular in z1, so raw endpoint
        amplitudes oscillate with the sampling phase forever; amplitudes
        taken at a fixed phase converge to a well-defined limit."""
        ts = np.linspace(sol.t[0], sol.t[-1],
                         max(int(40 * (sol.t[-1] - sol.t[0]) / period_guess),
                             16))
        im = np.array([sol.sol(t)[1] for t in ts])
        idx = np.nonzero((im[:-1] < 0) & (im[1:] >= 0))[0]
        if len(idx) == 0:
            return None
        i = idx[-1]
        t_c = brentq(lambda t: sol.sol(t)[1], ts[i], ts[i + 1],
                     xtol=1e-12 * max(1.0, ts[i + 1]))
        return float(np.hypot(*sol.sol(t_c)))

    def poincare(x: float) -> tuple[float, float]:
        """First return to the section {Im z1 = 0, Re z1 > 0} from (x, 0)."""
        sol, diverged = integrate_complex(rom, complex(x, 0.0), re,
                                          1.7 * period_guess)
        if diverged:
            raise CycleNotFoundError(
                f"graph-style reduced dynamics diverged at Re = {re}")
        ts = np.linspace(0.5 * period_guess, sol.t[-1], 96)
        im = np.array([sol.sol(t)[1] for t in ts])
        idx = np.nonzero((im[:-1] < 0) & (im[1:] >= 0))[0]
        if len(idx) == 0:
            raise CycleNotFoundError(
                f"no section return at Re = {re}; not an oscillation")
        i = idx[0]
        t_c = brentq(lambda t: sol.sol(t)[1], ts[i], ts[i + 1],
                     xtol=1e-13 * period_guess)
        return float(sol.sol(t_c)[0]), float(t_c)

    # coarse march to the attractor's neighbourhood (percent-level)
    march_tol = max(settle_tol, 1e-3)
    prev_amp = None
    t_total = 0.0
    while t_total < max_time:
        sol, diverged = integrate_complex(rom, z1, re, chunk)
        if diverged:
            raise CycleNotFoundError(
                f"graph-style reduced dynamics diverged at Re = {re}")
        z1 = complex(sol.y[0, -1], sol.y[1, -1])
        t_total += chunk
        if abs(z1) < 1e-12:
            return None
        amp = crossing_amplitude(sol)
        if amp is None:
            continue
        if prev_amp is not None and abs(amp - prev_amp) <= march_tol * amp:
            break
        prev_amp = amp
    else:
        raise CycleNotFoundError(
            f"no settled cycle within horizon {max_time} at Re = {re}")

    # secant polish of the section fixed point: near the bifurcation the
    # Floquet contraction exp(-2 Re(lambda) T) approaches 1 and plain
    # marching would need O(1/Re(lambda)) time to settle, while the return
    # map is nearly linear in the amplitude and converges in a few returns
    x0 = amp
    g0 = poincare(x0)[0] - x0
    x1 = x0 + max(0.02 * x0, 1e-12) * (1.0 if g0 > 0 else -1.0)
    period = None
    for _ in range(40):
        p1, t1 = poincare(x1)
        g1 = p1 - x1
        period = t1
        if abs(x1 - x0) <= 1e-11 * abs(x1) or g1 == g0:
            break
        x0, g0, x1 = x1, g1, x1 - g1 * (x1 - x0) / (g1 - g0)
        if not (0.0 < x1 < 1e6):
            raise CycleNotFoundError(
                f"section iteration left the basin at Re = {re}")
    if x1 <= 1e-10 * max(1.0, abs(z1_seed)):
        return None

    sol, _ = integrate_complex(rom, complex(x1, 0.0), re, period)
    ts = period * np.arange(128) / 128.0
    z1s = np.array([complex(*sol.sol(t)) for t in ts])
    return z1s, float(period)


def graph_mean_tke(rom: RomArtifact, re: float,
                   settle_tol: float = 1e-8) -> float:
    """<TKE> of a graph-style artifact's limit cycle.

    ``settle_tol`` is forwarded to the cycle search; near the bifurcation
    the attractor is approached at rate 2 Re(lambda), so percent-level
    comparisons can loosen it to cut the marching time."""
    fem, steady = _fem_context(rom)
    out = graph_limit_cycle(rom, re, settle_tol=settle_tol)
    if out is None:
        raise CycleNotFoundError(f"no limit cycle at Re = {re}")
    z1s, _ = out
    eta = 1.0 / re - 1.0 / rom.re0
    vels = []
    for z1 in z1s:
        y = rom.W.eval((z1, np.conj(z1), eta)).real
        du, _ = fem.expand_state(y)
        vels.append(steady.u0 + du)
    return tke_of_samples(np.array(vels), fem.velocity_mass, fem.domain_area)
