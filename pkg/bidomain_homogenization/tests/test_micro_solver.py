# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import unittest
from fractions import Fraction

import numpy as np
from numpy.testing import assert_allclose

from ..exceptions import DataError, UnstableTimeStep, ValidationError
from ..models.cell_problems import Coefficients, InterfaceParams
from ..models.expressions import Expression
from ..models.geometry import INT, CellSpec, Inclusion, build_unit_cell, tile_domain
from ..models.ionics import ionic_model_factory
from ..models.micro_solver import (
    MicroProblem,
    ProblemData,
    check_time_step,
    init_micro,
    local_cell_average,
    run_micro,
    step_micro,
    time_index,
)

XY = ("x1", "x2", "y1", "y2")


class MicroCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cell = build_unit_cell(
            CellSpec(2, 4, "disconnected", Inclusion.parse("box 1/4 1/4 3/4 3/4", 2))
        )
        cls.domain = tile_domain(cls.cell, Fraction(1, 4))
        cls.coeffs = Coefficients.build(
            cls.cell, sigma_int=1.0, sigma_out=1.0, sigma_dis=2.0
        )
        cls.ionic = ionic_model_factory("affine_hh")

    def _data(self, **overrides):
        overrides.setdefault("horizon", 0.1)
        return ProblemData.zero(2, self.ionic, **overrides)


class TestTimeGrid(unittest.TestCase):
    def test_time_index(self):
        self.assertEqual(time_index(1.0, 0.01), 100)
        self.assertEqual(time_index(0, 0.1), 0)
        with self.assertRaises(ValidationError):
            time_index(0.105, 0.01)

    def test_stability_bound(self):
        ionic = ionic_model_factory("affine_hh")
        check_time_step(ionic, 0.25)
        with self.assertRaisesRegex(UnstableTimeStep, r"1/\(2 C_I\)"):
            check_time_step(ionic, 0.3)

    def test_problem_data_validation(self):
        ionic = ionic_model_factory("affine_hh")
        with self.assertRaises(DataError):
            ProblemData.zero(2, ionic, w_in=1.5)
        with self.assertRaises(DataError):
            ProblemData.zero(2, ionic, horizon=1.0, sample_times=(2.0,))
        self.assertEqual(ProblemData.zero(2, ionic, horizon=0.5).samples, (0.5,))


class TestMicroRun(MicroCase):
    def test_zero_data_stays_at_rest(self):
        trajectory, report = run_micro(
            self.domain, self.coeffs, InterfaceParams(ell=1), self._data(), 0.05
        )
        self.assertEqual(len(trajectory.states), 1)
        state = trajectory.states[-1]
        self.assertAlmostEqual(state.time, 0.1)
        for values in (state.v, state.u, state.jump):
            assert_allclose(values, 0.0, atol=1e-14)
        assert_allclose(state.w, 0.5, atol=1e-14)
        self.assertEqual(report.lhs, 0.0)
        self.assertEqual(report.constant, 0.0)

    def test_passive_decay(self):
        data = self._data(
            v0=Expression("sin(pi*x1)*sin(pi*x2)", ("x1", "x2")),
            horizon=0.2,
            sample_times=(0.0, 0.2),
        )
        trajectory, report = run_micro(
            self.domain, self.coeffs, InterfaceParams(ell=0), data, 0.05
        )
        problem = trajectory.problem
        first, last = trajectory.states
        norm = lambda v: float(v @ (problem.M @ v))  # noqa: E731
        self.assertLess(norm(last.v), norm(first.v))
        self.assertAlmostEqual(report.sup_v, norm(first.v))
        self.assertGreater(report.grad_sum, 0.0)
        self.assertLess(report.constant, 100.0)

    def test_interface_jump_relaxes(self):
        data = self._data(s0=Expression("1", XY), horizon=0.2)
        iface = InterfaceParams(alpha=1.0, beta=1.0, ell=0)
        state = init_micro(self.domain, self.coeffs, iface, data)
        self.assertTrue(np.all(state.jump > 0))
        scale = state.problem.scale
        before = scale * state.problem.jump.norm2(state.jump)
        for _n in range(4):
            state = step_micro(state, 0.05)
        after = scale * state.problem.jump.norm2(state.jump)
        self.assertLess(after, before)
        assert_allclose(state.problem.jump(state.u), state.jump)

    def test_flux_free_keeps_relaxation_law(self):
        data = self._data(s0=Expression("1", XY))
        iface = InterfaceParams(alpha=2.0, beta=1.0, ell=-1)
        problem = MicroProblem(self.domain, self.coeffs, iface, data, flux_free=True)
        state = problem.initial_state()
        jump0 = state.jump.copy()
        state = problem.step(state, 0.05)
        assert_allclose(state.jump, jump0 * 2.0 / 2.05, rtol=1e-12)
        assert_allclose(problem.jump(state.u), state.jump, atol=1e-12)

    def test_initial_jump_bound(self):
        data = self._data(s0=Expression("1", XY), s0_bound=1e-6)
        with self.assertRaises(DataError):
            init_micro(self.domain, self.coeffs, InterfaceParams(ell=0), data)

    def test_unstable_step_rejected(self):
        with self.assertRaises(UnstableTimeStep):
            run_micro(self.domain, self.coeffs, InterfaceParams(), self._data(), 0.5)

    def test_observer_sees_every_step(self):
        seen = []
        run_micro(
            self.domain,
            self.coeffs,
            InterfaceParams(),
            self._data(),
            0.025,
            observer=lambda state, n: seen.append(n),
        )
        self.assertEqual(seen, [0, 1, 2, 3, 4])


class TestLocalAverages(MicroCase):
    def _problem(self):
        return MicroProblem(self.domain, self.coeffs, InterfaceParams(), self._data())

    def test_constant_field(self):
        problem = self._problem()
        ones = np.ones(problem.v_map.size)
        averages = local_cell_average(ones, self.domain, problem.v_map)
        self.assertEqual(averages.shape, (16,))
        # elements touching the Dirichlet boundary see zero vertices
        interior = averages[[5, 6, 9, 10]]
        assert_allclose(interior, 1.0)

    def test_inclusion_phase_is_nan_outside_inclusion_cells(self):
        problem = self._problem()
        u = np.ones(problem.u_map.size)
        averages = local_cell_average(
            u, self.domain, problem.u_map, field_index=1, phases=(INT,)
        )
        carriers = np.zeros(16, dtype=bool)
        carriers[self.domain.inclusion_cells] = True
        self.assertTrue(np.all(np.isnan(averages[~carriers])))
        assert_allclose(averages[carriers], 1.0)

    def test_resolution_must_match(self):
        problem = self._problem()
        with self.assertRaises(ValidationError):
            ones = np.ones(problem.v_map.size)
            local_cell_average(ones, self.domain, problem.v_map, k=3)
