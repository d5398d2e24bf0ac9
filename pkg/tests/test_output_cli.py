"""Field/profile/report writers and the command-line driver."""

import numpy as np
import pytest

from vmsflow.output import sample_field, write_outputs
from vmsflow.problems import lid_cavity
from vmsflow.cli import run_cli
from vmsflow.solve import SolverConfig, newton_solve


@pytest.fixture(scope="module")
def solved_lid():
    prob = lid_cavity(8, re=100)
    state, report = newton_solve(prob, SolverConfig(tol=1e-10, max_iter=20))
    assert report.converged
    return prob, state, report


class TestSampling:
    def test_nodal_values_reproduced(self, solved_lid):
        prob, state, _ = solved_lid
        vel, prs, inside = sample_field(prob.mesh, state, prob.mesh.node_coords[:10])
        assert inside.all()
        np.testing.assert_allclose(vel, state.vbar[:10], atol=1e-12)
        np.testing.assert_allclose(prs, state.p[:10], atol=1e-12)

    def test_outside_points_flagged(self, solved_lid):
        prob, state, _ = solved_lid
        vel, prs, inside = sample_field(prob.mesh, state, [[2.0, 2.0]])
        assert not inside[0]
        assert np.isnan(vel[0]).all()


class TestOutputs:
    def test_files_and_counts(self, solved_lid, tmp_path):
        prob, state, report = solved_lid
        written = write_outputs(state, prob.mesh, report, tmp_path,
                                {"strategy": "newton"})
        names = {p.name for p in written}
        assert names == {"field.vtk", "profile_u_x05.csv", "profile_p_y05.csv",
                         "residuals.csv", "summary.txt"}
        vtk = (tmp_path / "field.vtk").read_text().splitlines()
        assert f"POINTS {prob.mesh.n_nodes} double" in vtk
        assert f"CELLS {prob.mesh.n_triangles} {4 * prob.mesh.n_triangles}" in vtk
        assert "VECTORS velocity double" in vtk
        assert "SCALARS pressure double" in vtk

    def test_residual_rows_match_iterations(self, solved_lid, tmp_path):
        prob, state, report = solved_lid
        write_outputs(state, prob.mesh, report, tmp_path)
        rows = (tmp_path / "residuals.csv").read_text().strip().splitlines()
        assert rows[0] == "iteration,residual"
        assert len(rows) - 1 == report.iterations

    def test_profile_endpoints_carry_boundary_values(self, solved_lid, tmp_path):
        prob, state, report = solved_lid
        write_outputs(state, prob.mesh, report, tmp_path)
        rows = (tmp_path / "profile_u_x05.csv").read_text().strip().splitlines()[1:]
        data = np.array([[float(t) for t in row.split(",")] for row in rows])
        assert data[0, 0] == pytest.approx(0.0)
        assert data[0, 1] == pytest.approx(0.0, abs=1e-12)   # no-slip bottom
        assert data[-1, 0] == pytest.approx(1.0)
        assert data[-1, 1] == pytest.approx(1.0, abs=1e-12)  # lid value

    def test_summary_content(self, solved_lid, tmp_path):
        prob, state, report = solved_lid
        write_outputs(state, prob.mesh, report, tmp_path, {"strategy": "newton"})
        text = (tmp_path / "summary.txt").read_text()
        assert "strategy: newton" in text
        assert f"iterations: {report.iterations}" in text
        assert "converged: True" in text


class TestCli:
    def test_solve_roundtrip(self, tmp_path):
        code = run_cli([
            "solve", "--problem", "lid_cavity", "--re", "100", "--n", "8",
            "--strategy", "newton", "--tol", "1e-9", "--out", str(tmp_path),
        ])
        assert code == 0
        assert (tmp_path / "field.vtk").exists()
        assert (tmp_path / "summary.txt").exists()

    def test_march_subcommand(self, tmp_path):
        code = run_cli([
            "march", "--problem", "body_force_cavity", "--nu", "1.0", "--n", "8",
            "--dt", "0.5", "--steps", "2", "--tol", "1e-8", "--out", str(tmp_path),
        ])
        assert code == 0
        rows = (tmp_path / "march.csv").read_text().strip().splitlines()
        assert len(rows) == 3

    def test_study_subcommand(self, tmp_path):
        code = run_cli([
            "study", "--problem", "body_force_cavity", "--nu", "1.0",
            "--levels", "8,12,16", "--strategy", "newton", "--tol", "1e-10",
            "--out", str(tmp_path),
        ])
        assert code == 0
        text = (tmp_path / "study_newton.csv").read_text()
        assert text.startswith("h,l2_velocity")
        assert "# rate_l2_velocity" in text

    def test_nonconvergence_exit_code(self, tmp_path):
        code = run_cli([
            "solve", "--problem", "body_force_cavity", "--re", "5000", "--n", "16",
            "--strategy", "fixed_point", "--max-iter", "25", "--out", str(tmp_path),
        ])
        assert code == 2
        assert (tmp_path / "summary.txt").exists()

    def test_bad_flags(self):
        assert run_cli(["solve", "--problem", "no_such_problem"]) == 1
        assert run_cli(["solve", "--problem", "lid_cavity", "--n", "8"]) == 1

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("problem = lid_cavity\nre = 100\nn = 8\ntol = 1e-9\n")
        out = tmp_path / "out"
        code = run_cli(["solve", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        assert (out / "summary.txt").exists()

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VMSFLOW_OUTDIR", str(tmp_path / "envout"))
        code = run_cli([
            "solve", "--problem", "lid_cavity", "--re", "100", "--n", "8",
        ])
        assert code == 0
        assert (tmp_path / "envout" / "summary.txt").exists()
