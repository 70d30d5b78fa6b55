import csv

import numpy as np
import pytest

from esfem import analysis, mesh, problems, stepper
from esfem.errors import EmptyTrajectory, MissingExactSolution


def make_states(spec, mesh0, times, du=0.0, dx=0.0, dv=0.0):
    """Trajectory whose fields deviate from the exact nodal data by fixed
    multiples of simple patterns (zero deviation = exact trajectory)."""
    labels = mesh0.coords / spec.exact.r0
    states = []
    n = mesh0.num_nodes
    rng = np.random.Generator(np.random.Philox(12))
    pat_u = rng.standard_normal(n)
    pat_x = rng.standard_normal(3 * n)
    pat_v = rng.standard_normal(3 * n)
    for step, t in enumerate(times):
        # the real scheme starts from exact nodal data, so the first state
        # is unperturbed (its coordinates define the node labels)
        on = 0.0 if step == 0 else 1.0
        x_star, u_star, v_star = analysis.interpolated_exact(spec, labels, t)
        x = x_star + on * dx * pat_x
        states.append(stepper.SystemState(
            t=t, x=x, u=u_star + on * du * pat_u, v=v_star + on * dv * pat_v,
            mesh=mesh0.with_coords(x.reshape(-1, 3))))
    return states


class TestInterpolatedExact:
    spec = problems.example1_problem()

    def test_time_zero_matches_initial_nodes(self):
        m0 = mesh.generate_icosphere(1, 1.0)
        x, u, v = analysis.interpolated_exact(self.spec, m0.coords, 0.0)
        assert np.allclose(x, m0.node_vector, rtol=1e-14)

    def test_positions_on_the_exact_sphere(self):
        m0 = mesh.generate_icosphere(1, 1.0)
        for t in (0.2, 0.9):
            x, _, _ = analysis.interpolated_exact(self.spec, m0.coords, t)
            radii = np.linalg.norm(x.reshape(-1, 3), axis=1)
            assert np.allclose(radii, float(self.spec.exact.radius(t)), rtol=1e-13)

    def test_field_values_formula(self):
        m0 = mesh.generate_icosphere(1, 1.0)
        t = 0.4
        x, u, _ = analysis.interpolated_exact(self.spec, m0.coords, t)
        pts = x.reshape(-1, 3)
        assert np.allclose(u, pts[:, 0] * pts[:, 1] * np.exp(-6 * t), rtol=1e-13)

    def test_missing_exact_solution(self):
        bare = problems.ProblemSpec(law=problems.velocity_law(1.0))
        with pytest.raises(MissingExactSolution):
            analysis.interpolated_exact(bare, np.zeros((4, 3)), 0.0)


class TestErrorNorms:
    spec = problems.example1_problem()

    def test_exact_trajectory_has_zero_errors(self):
        m0 = mesh.generate_icosphere(1, 1.0)
        states = make_states(self.spec, m0, [0.0, 0.1, 0.2])
        norms = analysis.error_norms(states, self.spec)
        assert norms.u_linf_l2 == 0.0
        assert norms.u_l2_h1 == 0.0
        assert norms.v_linf_l2 == 0.0
        assert norms.v_linf_h1 == 0.0
        assert norms.x_linf_h1 == 0.0

    def test_homogeneity_under_error_doubling(self):
        m0 = mesh.generate_icosphere(1, 1.0)
        one = analysis.error_norms(
            make_states(self.spec, m0, [0.0, 0.1, 0.2], du=1e-3, dx=1e-3, dv=1e-3),
            self.spec)
        two = analysis.error_norms(
            make_states(self.spec, m0, [0.0, 0.1, 0.2], du=2e-3, dx=2e-3, dv=2e-3),
            self.spec)
        assert two.u_linf_l2 == pytest.approx(2 * one.u_linf_l2, rel=1e-9)
        assert two.u_l2_h1 == pytest.approx(2 * one.u_l2_h1, rel=1e-9)
        assert two.v_linf_h1 == pytest.approx(2 * one.v_linf_h1, rel=1e-9)
        assert two.x_linf_h1 == pytest.approx(2 * one.x_linf_h1, rel=1e-9)

    def test_thinning_never_increases_sup_norms(self):
        m0 = mesh.generate_icosphere(1, 1.0)
        times = [0.05 * i for i in range(9)]
        full = analysis.error_norms(
            make_states(self.spec, m0, times, du=1e-3, dx=1e-3, dv=1e-3), self.spec)
        thin = analysis.error_norms(
            make_states(self.spec, m0, times[::2], du=1e-3, dx=1e-3, dv=1e-3), self.spec)
        assert thin.u_linf_l2 <= full.u_linf_l2 + 1e-15
        assert thin.v_linf_h1 <= full.v_linf_h1 + 1e-15
        assert thin.x_linf_h1 <= full.x_linf_h1 + 1e-15

    def test_empty_trajectory(self):
        with pytest.raises(EmptyTrajectory):
            analysis.error_norms([], self.spec)


class TestComputeEoc:
    def test_exact_second_order_pair(self):
        assert analysis.compute_eoc([0.1, 0.025], [0.2, 0.1]) == [pytest.approx(2.0, abs=1e-13)]

    def test_reference_table_pair(self):
        # published benchmark row: errors (0.0896624, 0.0222349) at mesh
        # sizes (0.4088, 0.1799) give an observed order of 1.70
        (eoc,) = analysis.compute_eoc([0.0896624, 0.0222349], [0.4088, 0.1799])
        assert eoc == pytest.approx(1.70, abs=0.005)

    def test_constant_errors_give_zero(self):
        eocs = analysis.compute_eoc([0.5, 0.5, 0.5], [0.4, 0.2, 0.1])
        assert np.allclose(eocs, 0.0, atol=1e-14)

    def test_exact_power_sequence(self):
        for p in (0.5, 1.0, 2.0, 3.0):
            h = np.array([0.4, 0.19, 0.11, 0.05])
            e = 2.7 * h**p
            eocs = analysis.compute_eoc(e, h)
            assert np.allclose(eocs, p, atol=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            analysis.compute_eoc([0.1], [0.2])
        with pytest.raises(ValueError):
            analysis.compute_eoc([0.1, -0.1], [0.2, 0.1])
        with pytest.raises(ValueError):
            analysis.compute_eoc([0.1, 0.1], [0.2, 0.0])


class TestEmitTable:
    def make_report(self):
        report = analysis.ErrorReport()
        for level, h, scale in [(1, 0.4, 1.0), (2, 0.2, 0.25), (3, 0.1, 0.0625)]:
            norms = analysis.ErrorNorms(
                u_linf_l2=0.1 * scale, u_l2_h1=0.2 * scale, v_linf_l2=0.3 * scale,
                v_linf_h1=0.4 * scale, x_linf_h1=0.5 * scale)
            report.add(analysis.LevelResult(level=level, dof=10 * 4**level,
                                            h_final=h, norms=norms))
        return report

    def test_csv_schema(self, tmp_path):
        path = tmp_path / "table.csv"
        analysis.emit_table(self.make_report(), path)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == analysis.CSV_HEADER
        assert len(rows) == 4
        # first level has empty EOC cells
        header_index = {name: i for i, name in enumerate(rows[0])}
        assert rows[1][header_index["eoc_u_LinfL2"]] == ""
        assert rows[2][header_index["eoc_u_LinfL2"]] == "2"
        assert float(rows[1][header_index["err_u_LinfL2"]]) == pytest.approx(0.1)

    def test_seven_significant_digits(self, tmp_path):
        report = analysis.ErrorReport()
        norms = analysis.ErrorNorms(*(np.pi * 1e-3,) * 5)
        report.add(analysis.LevelResult(level=1, dof=12, h_final=np.pi, norms=norms))
        path = tmp_path / "t.csv"
        analysis.emit_table(report, path)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[1][2] == "%.7g" % np.pi
        assert rows[1][3] == "%.7g" % (np.pi * 1e-3)

    def test_eocs_of_report(self):
        report = self.make_report()
        eocs = report.eocs("u_linf_l2")
        assert eocs[0] is None
        assert eocs[1] == pytest.approx(2.0, abs=1e-12)
        assert eocs[2] == pytest.approx(2.0, abs=1e-12)


class TestReferenceTables:
    def test_known_entries(self):
        table = analysis.load_reference_table("coupled_u")
        dof, h, value = table["err_u_LinfL2"][3]
        assert (dof, h, value) == (2070, 0.1799, 0.0222349)
        (eoc,) = analysis.compute_eoc(
            [table["err_u_LinfL2"][2][2], value],
            [table["err_u_LinfL2"][2][1], h])
        assert eoc == pytest.approx(1.70, abs=0.005)

    def test_comparison_tables_ordering(self):
        # the elliptic regularization's reference velocity errors sit below
        # the mean-curvature arm's at every level
        alpha = analysis.load_reference_table("comparison_alpha")["err_v_LinfL2"]
        beta = analysis.load_reference_table("comparison_beta")["err_v_LinfL2"]
        for level in range(1, 6):
            assert alpha[level][2] < beta[level][2]

    def test_unknown_table(self):
        with pytest.raises(KeyError):
            analysis.load_reference_table("nope")
