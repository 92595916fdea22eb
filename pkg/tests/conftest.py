"""Shared fixtures.

Two tiers: a synthetic analytically solvable system (fast, exact oracles)
and a cheap cylinder mesh (~2k DOFs) for cross-module checks.  The larger
acceptance mesh lives in test_acceptance.py only.
"""

import numpy as np
import pytest

from hopfrom.fem import assemble_dae, build_fem, build_mesh, steady_solve
from hopfrom.parametrisation import StyleChoice, build_rom
from hopfrom.spectral import build_mode_set
from hopfrom.synthetic import make_hopf_dae

CHEAP_RESOLUTION = 0.08
CHEAP_RE0 = 52.0
CHEAP_SHIFT = 16j

NORMAL_FORM = StyleChoice("normal_form")
GRAPH = StyleChoice("graph")

# one line per acceptance criterion, echoed in the terminal summary so the
# verdicts are visible even when pytest captures per-test output
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth():
    dae, oracle = make_hopf_dae()
    modes = build_mode_set(dae, shift=complex(oracle.a0, oracle.omega))
    return dae, oracle, modes


@pytest.fixture(scope="session")
def synth_rom3(synth):
    dae, _, modes = synth
    return build_rom(dae, modes, 3, NORMAL_FORM, re0=50.0)


@pytest.fixture(scope="session")
def synth_tail():
    """Synthetic variant whose manifold expansion does not terminate."""
    dae, oracle = make_hopf_dae(delta=0.35)
    modes = build_mode_set(dae, shift=complex(oracle.a0, oracle.omega))
    return dae, modes


@pytest.fixture(scope="session")
def cheap_mesh():
    return build_mesh(CHEAP_RESOLUTION)


@pytest.fixture(scope="session")
def cheap_fem(cheap_mesh):
    return build_fem(cheap_mesh)


@pytest.fixture(scope="session")
def cheap_steady(cheap_fem):
    return steady_solve(cheap_fem, CHEAP_RE0)


@pytest.fixture(scope="session")
def cheap_dae(cheap_fem, cheap_steady):
    return assemble_dae(cheap_fem, cheap_steady)


@pytest.fixture(scope="session")
def cheap_modes(cheap_dae):
    return build_mode_set(cheap_dae, shift=CHEAP_SHIFT)


@pytest.fixture(scope="session")
def cheap_rom5(cheap_dae, cheap_modes, cheap_steady):
    return build_rom(cheap_dae, cheap_modes, 5, NORMAL_FORM,
                     re0=CHEAP_RE0, steady=cheap_steady)


@pytest.fixture(scope="session")
def cheap_rom5_graph(cheap_dae, cheap_modes, cheap_steady):
    return build_rom(cheap_dae, cheap_modes, 5, GRAPH,
                     re0=CHEAP_RE0, steady=cheap_steady)


CHEAP_FOM_RE = 53.0


@pytest.fixture(scope="session")
def cheap_fom_run(cheap_fem, cheap_rom5):
    """Short full-order run at Re = 53, started on the ROM's limit cycle so
    it reaches the developed periodic state within the horizon."""
    from hopfrom.fom import integrate_fom
    from hopfrom.reduced import limit_cycle, reconstruct, to_polar
    lc = limit_cycle(to_polar(cheap_rom5), CHEAP_FOM_RE)
    assert lc is not None
    snap0 = reconstruct(cheap_rom5, lc.rho, 0.0, CHEAP_FOM_RE)
    return integrate_fom(cheap_fem, CHEAP_FOM_RE, initial=snap0, horizon=5.0)
