"""Command-line front end.

Every command emits machine-readable output (romart artifacts, CSV tables,
JSON summaries) with a provenance header, so downstream plotting never
depends on this implementation.  Exit codes: 0 success, 2 invalid
configuration, 3 numerical failure.
"""

from __future__ import annotations

import functools
import json
import os
import sys
import time

import click
import numpy as np

from . import __version__
from .exceptions import ConfigError, HopfRomError, NumericalError
from .io import artifact_hash, load_artifact, save_artifact

DEFAULT_SHIFT_IMAG = 16.0


def _fail(exc: HopfRomError) -> None:
    kind = "config" if isinstance(exc, ConfigError) else "numerical"
    click.echo(f"error ({kind}): {exc}", err=True)
    sys.exit(2 if isinstance(exc, ConfigError) else 3)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HopfRomError as exc:
            _fail(exc)
    return wrapper


def _get_mesh(mesh_path: str | None, resolution: float | None):
    from .fem.mesh import build_mesh, load_mesh
    if (mesh_path is None) == (resolution is None):
        raise ConfigError("provide exactly one of --mesh / --resolution")
    if mesh_path is not None:
        return load_mesh(mesh_path)
    return build_mesh(resolution)


def _style_choice(style: str, tol_resonance: float):
    from .parametrisation import StyleChoice
    return StyleChoice(kind=style.replace("-", "_"),
                       resonance_tol=tol_resonance)


def _provenance(config: dict, **extra) -> dict:
    prov = {"tool_version": __version__, "config": config}
    prov.update(extra)
    return prov


def _csv_header(prov: dict) -> str:
    return "# provenance: " + json.dumps(prov, sort_keys=True) + "\n"


def _sweep(re_min: float, re_max: float, re_step: float) -> np.ndarray:
    if re_min <= 0 or re_max < re_min or re_step <= 0:
        raise ConfigError("need 0 < --re-min <= --re-max and --re-step > 0")
    n = int(round((re_max - re_min) / re_step))
    return re_min + re_step * np.arange(n + 1)


def _lambda_of_re(rom, re: float) -> complex:
    """Master-eigenvalue prediction from the linear reduced terms; valid
    for either parametrisation style."""
    eta = 1.0 / re - 1.0 / rom.re0
    return complex(rom.f.eval((1.0, 0.0, eta))[0])


mesh_opts = [
    click.option("--mesh", "mesh_path", type=click.Path(exists=True),
                 default=None, help="msh2d mesh file"),
    click.option("--resolution", type=float, default=None,
                 help="generate a mesh at this target element size"),
]


def add_options(opts):
    def deco(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return deco


@click.group()
@click.version_option(__version__)
def main():
    """Parametric reduced-order models of Hopf-bifurcating flows."""


@main.command("mesh-gen")
@click.option("--resolution", type=float, required=True)
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def cmd_mesh_gen(resolution, out):
    """Generate a cylinder-in-channel mesh and write it as msh2d text."""
    from .fem.mesh import build_mesh, save_mesh
    mesh = build_mesh(resolution)
    save_mesh(mesh, out)
    click.echo(f"mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} "
               f"triangles, min angle {mesh.min_angle_deg():.1f} deg, "
               f"hash {mesh.hash()}")


@main.command("build-rom")
@add_options(mesh_opts)
@click.option("--re0", type=float, required=True)
@click.option("--order", type=int, default=3, show_default=True)
@click.option("--style", type=click.Choice(["graph", "normal-form"]),
              default="normal-form", show_default=True)
@click.option("--tol-resonance", type=float, default=0.1, show_default=True)
@click.option("--shift-imag", type=float, default=DEFAULT_SHIFT_IMAG,
              show_default=True,
              help="imaginary shift for the master eigensolve")
@click.option("--threads", type=int, default=os.cpu_count() or 1)
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def cmd_build_rom(mesh_path, resolution, re0, order, style, tol_resonance,
                  shift_imag, threads, out):
    """Build a reduced-order model artifact at one expansion point."""
    from .fem.steady import assemble_dae, steady_solve
    from .fem.taylor_hood import build_fem
    from .parametrisation import build_rom
    from .spectral import build_mode_set
    if re0 <= 0:
        raise ConfigError(f"--re0 must be > 0, got {re0}")
    t0 = time.perf_counter()
    mesh = _get_mesh(mesh_path, resolution)
    fem = build_fem(mesh)
    steady = steady_solve(fem, re0)
    dae = assemble_dae(fem, steady)
    modes = build_mode_set(dae, shift=complex(0.0, shift_imag))
    style_c = _style_choice(style, tol_resonance)
    config = {"mesh": mesh_path, "resolution": resolution, "re0": re0,
              "order": order, "style": style, "tol_resonance": tol_resonance,
              "shift_imag": shift_imag}
    rom = build_rom(dae, modes, order, style_c, re0=re0, steady=steady,
                    threads=threads,
                    provenance=_provenance(config, mesh_hash=mesh.hash()))
    wall = time.perf_counter() - t0
    h = save_artifact(rom, out)
    click.echo(f"artifact: {out} (hash {h})")
    click.echo(f"master eigenvalue: {modes.lam:.6f}")
    click.echo(f"homological solves: {rom.solve_count}")
    click.echo(f"wall time: {wall:.2f} s")


@main.command("bifurcation")
@click.argument("artifact", type=click.Path(exists=True))
@click.option("--re-min", type=float, required=True)
@click.option("--re-max", type=float, required=True)
@click.option("--re-step", type=float, required=True)
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def cmd_bifurcation(artifact, re_min, re_max, re_step, out):
    """Sweep Re through a ROM artifact: eigenvalue, cycle, mean TKE."""
    from .reduced import (graph_limit_cycle, graph_mean_tke, limit_cycle,
                          mean_tke, to_polar)
    rom = load_artifact(artifact)
    res = _sweep(re_min, re_max, re_step)
    is_graph = rom.style.kind == "graph"
    has_fem = rom.dae is not None and "fem" in rom.dae.meta
    rows = []
    for re in res:
        lam = _lambda_of_re(rom, float(re))
        rho = freq = tke = None
        marker = ""
        try:
            if is_graph:
                cyc = graph_limit_cycle(rom, float(re))
                if cyc is not None:
                    z1s, period = cyc
                    rho = float(np.mean(np.abs(z1s)))
                    freq = 2.0 * np.pi / period
                    if has_fem:
                        tke = graph_mean_tke(rom, float(re))
            else:
                lc = limit_cycle(to_polar(rom), float(re))
                if lc is not None:
                    rho, freq = lc.rho, lc.freq
                    if has_fem:
                        tke = mean_tke(rom, float(re))
        except NumericalError:
            marker = "divergent"
        rows.append((float(re), rho, freq, tke, lam, marker))

    prov = _provenance({"artifact": artifact, "re_min": re_min,
                        "re_max": re_max, "re_step": re_step},
                       artifact_hash=artifact_hash(
                           open(artifact).read().rstrip("\n")))
    with open(out, "w") as fh:
        fh.write(_csv_header(prov))
        fh.write("re,rho_lc,frequency,mean_tke,re_lambda,im_lambda\n")
        for re, rho, freq, tke, lam, marker in rows:
            def fmt(v):
                return "" if v is None else f"{v:.17g}"
            tail = f",{marker}" if marker else ""
            fh.write(f"{re:.17g},{fmt(rho)},{fmt(freq)},{fmt(tke)},"
                     f"{lam.real:.17g},{lam.imag:.17g}{tail}\n")
    click.echo(f"bifurcation table: {out} ({len(rows)} rows)")


@main.command("rom-integrate")
@click.argument("artifact", type=click.Path(exists=True))
@click.option("--re", type=float, required=True)
@click.option("--rho0", type=float, default=1e-3, show_default=True)
@click.option("--theta0", type=float, default=0.0, show_default=True)
@click.option("--horizon", type=float, default=100.0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def cmd_rom_integrate(artifact, re, rho0, theta0, horizon, out):
    """Integrate the reduced dynamics from a given initial condition."""
    from .reduced import integrate_complex, integrate_reduced, to_polar
    rom = load_artifact(artifact, with_dae=False)
    prov = _provenance({"artifact": artifact, "re": re, "rho0": rho0,
                        "theta0": theta0, "horizon": horizon})
    with open(out, "w") as fh:
        fh.write(_csv_header(prov))
        if rom.style.kind == "graph":
            z0 = rho0 * np.exp(1j * theta0)
            sol, diverged = integrate_complex(rom, z0, re, horizon)
            fh.write("t,re_z1,im_z1\n")
            for t, zr, zi in zip(sol.t, sol.y[0], sol.y[1]):
                fh.write(f"{t:.17g},{zr:.17g},{zi:.17g}\n")
        else:
            traj = integrate_reduced(to_polar(rom), rho0, theta0, re, horizon)
            diverged = traj.diverged
            fh.write("t,rho,theta\n")
            for t, rho, th in zip(traj.times, traj.rho, traj.theta):
                fh.write(f"{t:.17g},{rho:.17g},{th:.17g}\n")
    click.echo(f"trajectory: {out}" + (" (diverged)" if diverged else ""))


@main.command("fom-run")
@add_options(mesh_opts)
@click.option("--re", type=float, required=True)
@click.option("--horizon", type=float, default=10.0, show_default=True)
@click.option("--dt", type=float, default=None)
@click.option("--seed", type=int, default=None,
              help="seed for the random fallback perturbation")
@click.option("--out", type=click.Path(), required=True,
              help="output prefix for the snapshot store")
@handle_errors
def cmd_fom_run(mesh_path, resolution, re, horizon, dt, seed, out):
    """Integrate the full-order model and dump snapshots + a summary."""
    from .exceptions import CycleNotFoundError
    from .fem.taylor_hood import build_fem
    from .fom import detect_limit_cycle, integrate_fom, write_snapshots
    mesh = _get_mesh(mesh_path, resolution)
    fem = build_fem(mesh)
    t0 = time.perf_counter()
    run = integrate_fom(fem, re, horizon=horizon, dt=dt, seed=seed)
    wall = time.perf_counter() - t0
    write_snapshots(run, out)
    summary = {"re": re, "dt": run.dt, "horizon": horizon,
               "steps": len(run.probe_times) - 1, "wall_time_s": wall,
               "mean_newton_iters": float(np.mean(run.newton_iters)),
               "provenance": _provenance(
                   {"mesh": mesh_path, "resolution": resolution, "re": re,
                    "horizon": horizon, "dt": dt, "seed": seed},
                   mesh_hash=mesh.hash())}
    try:
        period, tke, _ = detect_limit_cycle(run)
        summary.update({"state": "periodic", "period": period,
                        "mean_tke": tke})
    except CycleNotFoundError:
        tail = np.linalg.norm(run.states[-1][: fem.n_free])
        head = np.linalg.norm(run.states[0][: fem.n_free])
        decayed = tail < 0.5 * max(head, 1e-300)
        summary["state"] = "decayed to steady" if decayed else "transient"
    with open(out + ".summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    click.echo(f"fom run: {summary['state']}, {summary['steps']} steps, "
               f"{wall:.1f} s; snapshots at {out}.bin")


@main.command("fom-eigs")
@add_options(mesh_opts)
@click.option("--re-min", type=float, required=True)
@click.option("--re-max", type=float, required=True)
@click.option("--re-step", type=float, required=True)
@click.option("--shift-imag", type=float, default=DEFAULT_SHIFT_IMAG,
              show_default=True)
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def cmd_fom_eigs(mesh_path, resolution, re_min, re_max, re_step, shift_imag,
                 out):
    """Master eigenvalue of the full model along a Reynolds sweep."""
    from .fem.taylor_hood import build_fem
    from .fom import fom_eig_sweep
    mesh = _get_mesh(mesh_path, resolution)
    fem = build_fem(mesh)
    res = _sweep(re_min, re_max, re_step)
    sweep = fom_eig_sweep(fem, res, shift=complex(0.0, shift_imag))
    prov = _provenance({"mesh": mesh_path, "resolution": resolution,
                        "re_min": re_min, "re_max": re_max,
                        "re_step": re_step, "shift_imag": shift_imag},
                       mesh_hash=mesh.hash())
    with open(out, "w") as fh:
        fh.write(_csv_header(prov))
        fh.write("re,re_lambda,im_lambda\n")
        for re, lam in sweep:
            fh.write(f"{re:.17g},{lam.real:.17g},{lam.imag:.17g}\n")
    click.echo(f"eigenvalue sweep: {out} ({len(sweep)} rows)")


@main.command("error")
@click.argument("artifact", type=click.Path(exists=True))
@click.option("--re-min", type=float, required=True)
@click.option("--re-max", type=float, required=True)
@click.option("--re-step", type=float, required=True)
@click.option("--fom", "fom_prefixes", multiple=True,
              help="snapshot-store prefix for an a posteriori column; "
                   "repeatable, matched to sweep points by Re")
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def cmd_error(artifact, re_min, re_max, re_step, fom_prefixes, out):
    """A priori error reports along a sweep; a posteriori where FOM
    snapshot stores are supplied."""
    from .estimation import a_priori_nrmse
    from .fom import a_posteriori_from_snapshots, load_snapshots
    rom = load_artifact(artifact)
    if rom.dae is None:
        raise ConfigError("artifact carries no assembled system; "
                          "error estimation needs one")
    posteriori = {}
    for prefix in fom_prefixes:
        snaps = load_snapshots(prefix)
        fem = rom.dae.meta["fem"]
        nrmse, _ = a_posteriori_from_snapshots(snaps, rom, fem)
        posteriori[round(snaps["re"], 8)] = nrmse
    res = _sweep(re_min, re_max, re_step)
    prov = _provenance({"artifact": artifact, "re_min": re_min,
                        "re_max": re_max, "re_step": re_step,
                        "fom": list(fom_prefixes)})
    with open(out, "w") as fh:
        fh.write(_csv_header(prov))
        fh.write("re,rho,nrmse_apriori,nrmse_aposteriori,residual_norm\n")
        for re in res:
            rep = a_priori_nrmse(rom, rom.dae, float(re))
            post = posteriori.get(round(float(re), 8))
            post_s = "" if post is None else f"{post:.17g}"
            fh.write(f"{re:.17g},{rep.rho:.17g},{rep.nrmse_apriori:.17g},"
                     f"{post_s},{rep.residual_norm:.17g}\n")
    click.echo(f"error table: {out} ({len(res)} rows)")


@main.command("convergence")
@add_options(mesh_opts)
@click.option("--re0", type=float, required=True)
@click.option("--orders", default="3,5,7", show_default=True,
              help="comma-separated ascending expansion orders")
@click.option("--style", type=click.Choice(["graph", "normal-form"]),
              default="normal-form", show_default=True)
@click.option("--tol-resonance", type=float, default=0.1, show_default=True)
@click.option("--re-min", type=float, required=True)
@click.option("--re-max", type=float, required=True)
@click.option("--re-step", type=float, required=True)
@click.option("--shift-imag", type=float, default=DEFAULT_SHIFT_IMAG,
              show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@handle_errors
def cmd_convergence(mesh_path, resolution, re0, orders, style, tol_resonance,
                    re_min, re_max, re_step, shift_imag, threads, out):
    """Order-convergence study: amplitude and a priori NRMSE per order."""
    from .estimation import convergence_csv, convergence_study
    from .fem.steady import assemble_dae, steady_solve
    from .fem.taylor_hood import build_fem
    from .spectral import build_mode_set
    try:
        order_list = [int(tok) for tok in orders.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--orders must be comma-separated ints: {orders}") \
            from exc
    mesh = _get_mesh(mesh_path, resolution)
    fem = build_fem(mesh)
    steady = steady_solve(fem, re0)
    dae = assemble_dae(fem, steady)
    modes = build_mode_set(dae, shift=complex(0.0, shift_imag))
    rows = convergence_study(dae, modes, re0, _sweep(re_min, re_max, re_step),
                             order_list, _style_choice(style, tol_resonance),
                             threads=threads)
    prov = _provenance({"mesh": mesh_path, "resolution": resolution,
                        "re0": re0, "orders": order_list, "style": style,
                        "tol_resonance": tol_resonance, "re_min": re_min,
                        "re_max": re_max, "re_step": re_step},
                       mesh_hash=mesh.hash())
    with open(out, "w") as fh:
        fh.write(_csv_header(prov))
        fh.write(convergence_csv(rows))
    click.echo(f"convergence study: {out} ({len(rows)} rows)")


if __name__ == "__main__":
    main()
