"""Artifact serialization and the command-line front end."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from hopfrom.cli import main
from hopfrom.io import (artifact_document, artifact_hash, load_artifact,
                        save_artifact)
from hopfrom.parametrisation import build_rom
from tests.conftest import CHEAP_RE0, NORMAL_FORM


class TestArtifact:
    def test_round_trip_synthetic(self, synth_rom3, tmp_path):
        path = str(tmp_path / "rom.json")
        save_artifact(synth_rom3, path)
        again = load_artifact(path, with_dae=False)
        assert again.re0 == synth_rom3.re0
        assert again.order == synth_rom3.order
        assert again.style == synth_rom3.style
        for p in synth_rom3.W.coeffs:
            assert np.array_equal(again.W.coeffs[p], synth_rom3.W.coeffs[p])
            assert np.array_equal(again.f.coeffs[p], synth_rom3.f.coeffs[p])
        assert np.array_equal(again.modes.phi, synth_rom3.modes.phi)

    def test_document_deterministic(self, synth):
        dae, _, modes = synth
        a = build_rom(dae, modes, 3, NORMAL_FORM, re0=50.0)
        b = build_rom(dae, modes, 3, NORMAL_FORM, re0=50.0, threads=3)
        assert artifact_document(a) == artifact_document(b)
        assert artifact_hash(artifact_document(a)) == artifact_hash(
            artifact_document(b))

    def test_lower_order_is_prefix(self, synth, synth_rom3):
        """Order-by-order construction: the order-5 artifact contains the
        order-3 coefficients exactly."""
        dae, _, modes = synth
        rom5 = build_rom(dae, modes, 5, NORMAL_FORM, re0=50.0)
        for p in (1, 2, 3):
            assert np.array_equal(rom5.W.coeffs[p], synth_rom3.W.coeffs[p])
            assert np.array_equal(rom5.f.coeffs[p], synth_rom3.f.coeffs[p])

    def test_fem_artifact_round_trip(self, cheap_rom5, tmp_path):
        from hopfrom.reduced import mean_tke
        path = str(tmp_path / "rom5.json")
        h = save_artifact(cheap_rom5, path)
        again = load_artifact(path)
        assert again.dae is not None and "fem" in again.dae.meta
        assert mean_tke(again, 53.0) == mean_tke(cheap_rom5, 53.0)
        assert artifact_hash(open(path).read().rstrip("\n")) == h

    def test_garbage_rejected(self, tmp_path):
        from hopfrom.exceptions import ConfigError
        p = tmp_path / "x.json"
        p.write_text(json.dumps({"format": "something"}))
        with pytest.raises(ConfigError):
            load_artifact(str(p))


@pytest.fixture(scope="module")
def cli_ws(tmp_path_factory):
    """Mesh file + order-3 artifact built through the CLI itself."""
    ws = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    r = runner.invoke(main, ["mesh-gen", "--resolution", "0.08",
                             "--out", str(ws / "mesh.msh2d")])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["build-rom", "--mesh", str(ws / "mesh.msh2d"),
                             "--re0", str(CHEAP_RE0), "--order", "3",
                             "--out", str(ws / "rom.json")])
    assert r.exit_code == 0, r.output
    return ws


class TestCli:
    def test_mesh_gen_output(self, cli_ws):
        text = (cli_ws / "mesh.msh2d").read_text()
        assert text.startswith("msh2d v1")

    def test_build_rom_reports_solves(self, cli_ws):
        runner = CliRunner()
        r = runner.invoke(main, ["build-rom", "--mesh",
                                 str(cli_ws / "mesh.msh2d"),
                                 "--re0", str(CHEAP_RE0), "--order", "2",
                                 "--out", str(cli_ws / "rom2.json")])
        assert r.exit_code == 0, r.output
        assert "homological solves: 4" in r.output

    def test_bifurcation_table(self, cli_ws):
        runner = CliRunner()
        out = cli_ws / "bif.csv"
        r = runner.invoke(main, ["bifurcation", str(cli_ws / "rom.json"),
                                 "--re-min", "45", "--re-max", "55",
                                 "--re-step", "5", "--out", str(out)])
        assert r.exit_code == 0, r.output
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("# provenance: ")
        assert lines[1] == "re,rho_lc,frequency,mean_tke,re_lambda,im_lambda"
        rows = [ln.split(",") for ln in lines[2:]]
        assert len(rows) == 3
        # growth rate changes sign across the sweep exactly once
        signs = [np.sign(float(r_[4])) for r_ in rows]
        assert signs[0] < 0 < signs[-1]
        # pre-critical rows have an empty amplitude cell
        assert rows[0][1] == ""
        assert float(rows[-1][1]) > 0

    def test_rom_integrate(self, cli_ws):
        runner = CliRunner()
        out = cli_ws / "traj.csv"
        r = runner.invoke(main, ["rom-integrate", str(cli_ws / "rom.json"),
                                 "--re", "53", "--rho0", "1e-3",
                                 "--horizon", "10", "--out", str(out)])
        assert r.exit_code == 0, r.output
        lines = out.read_text().strip().split("\n")
        assert lines[1] == "t,rho,theta"
        assert len(lines) > 100

    def test_error_table(self, cli_ws):
        runner = CliRunner()
        out = cli_ws / "err.csv"
        r = runner.invoke(main, ["error", str(cli_ws / "rom.json"),
                                 "--re-min", "52", "--re-max", "53",
                                 "--re-step", "1", "--out", str(out)])
        assert r.exit_code == 0, r.output
        lines = out.read_text().strip().split("\n")
        assert lines[1] == "re,rho,nrmse_apriori,nrmse_aposteriori,residual_norm"
        assert len(lines) == 4
        # no FOM stores supplied: a posteriori column is empty
        assert lines[2].split(",")[3] == ""

    def test_provenance_header_is_json(self, cli_ws):
        first = (cli_ws / "bif.csv").read_text().split("\n")[0]
        prov = json.loads(first[len("# provenance: "):])
        assert "tool_version" in prov and "config" in prov

    def test_config_error_exit_2(self, cli_ws):
        runner = CliRunner()
        r = runner.invoke(main, ["build-rom", "--mesh",
                                 str(cli_ws / "mesh.msh2d"),
                                 "--resolution", "0.08", "--re0", "52",
                                 "--out", str(cli_ws / "zz.json")])
        assert r.exit_code == 2

    def test_bad_sweep_exit_2(self, cli_ws):
        runner = CliRunner()
        r = runner.invoke(main, ["bifurcation", str(cli_ws / "rom.json"),
                                 "--re-min", "55", "--re-max", "45",
                                 "--re-step", "5",
                                 "--out", str(cli_ws / "zz.csv")])
        assert r.exit_code == 2

    def test_numerical_error_exit_3(self, cli_ws):
        # a zero eigensolve shift sits exactly on the neutral parameter
        # mode, which makes the shifted operator singular
        runner = CliRunner()
        r = runner.invoke(main, ["build-rom", "--mesh",
                                 str(cli_ws / "mesh.msh2d"),
                                 "--re0", "52", "--shift-imag", "0",
                                 "--out", str(cli_ws / "zz.json")])
        assert r.exit_code == 3

    def test_fom_run_and_eigs(self, cli_ws):
        runner = CliRunner()
        prefix = cli_ws / "fom45"
        r = runner.invoke(main, ["fom-run", "--mesh",
                                 str(cli_ws / "mesh.msh2d"), "--re", "45",
                                 "--horizon", "0.5", "--dt", "0.01",
                                 "--out", str(prefix)])
        assert r.exit_code == 0, r.output
        summary = json.loads((cli_ws / "fom45.summary.json").read_text())
        assert summary["state"] in ("transient", "decayed to steady")
        assert (cli_ws / "fom45.bin").exists()

        out = cli_ws / "eigs.csv"
        r = runner.invoke(main, ["fom-eigs", "--mesh",
                                 str(cli_ws / "mesh.msh2d"),
                                 "--re-min", "52", "--re-max", "52",
                                 "--re-step", "1", "--out", str(out)])
        assert r.exit_code == 0, r.output
        lines = out.read_text().strip().split("\n")
        re_, lam_re, lam_im = (float(x) for x in lines[2].split(","))
        assert re_ == 52.0
        assert lam_re > 0 and 10 < abs(lam_im) < 25
