# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import unittest

import numpy as np
from numpy.testing import assert_allclose

from ..exceptions import RegimeError, ValidationError
from ..models.cell_problems import EffectiveTensors
from ..models.expressions import Expression
from ..models.geometry import box_mesh
from ..models.ionics import ionic_model_factory
from ..models.macro_solver import (
    BidomainScheme,
    KernelConvolution,
    MacroState,
    TridomainScheme,
    relabel_potentials,
    run_macro,
    run_macro_ell1,
    run_macro_mid,
)
from ..models.micro_solver import ProblemData

XT = ("x1", "x2", "t")
X = ("x1", "x2")
XY = ("x1", "x2", "y1", "y2")
PHI = "sin(pi*x1)*sin(pi*x2)"
EYE = np.eye(2)


def passive_ionic():
    return ionic_model_factory("affine_hh", h1="0", h2="0")


def synthetic(regime, **values):
    values.setdefault("A1", EYE)
    values.setdefault("gamma_points", np.array([[0.5, 0.5]]))
    values.setdefault("gamma_weights", np.array([1.0]))
    return EffectiveTensors(regime=regime, **values)


def standard_tensors():
    return synthetic("standard", A2_B=EYE, A2_D=np.zeros((2, 2)))


def memory_tensors(B, dt_kernel=0.1):
    return synthetic("memory", A2=EYE, B=B, dt_kernel=dt_kernel)


def exponential_data(horizon):
    # v = u = exp(-t) phi with A1 = A2 = I
    return ProblemData.zero(
        2,
        passive_ionic(),
        f1=Expression("(4*pi**2 - 1)*exp(-t)*%s" % PHI, XT),
        f2=Expression("(-1 - 2*pi**2)*exp(-t)*%s" % PHI, XT),
        v0=Expression(PHI, X),
        horizon=horizon,
    )


def linear_data(horizon):
    # v = u = t phi with A1 = A2 = I
    return ProblemData.zero(
        2,
        passive_ionic(),
        f1=Expression("(1 + 4*pi**2*t)*%s" % PHI, XT),
        f2=Expression("(1 - 2*pi**2*t)*%s" % PHI, XT),
        horizon=horizon,
    )


class TestKernelConvolution(unittest.TestCase):
    def setUp(self):
        times = np.array([0.0, 1.0, 2.0])
        self.kernel = KernelConvolution(times, (1 + times)[:, None, None] * EYE)

    def test_interpolation(self):
        assert_allclose(self.kernel.at(0.5), 1.5 * EYE)
        assert_allclose(self.kernel.at(2.0), 3.0 * EYE)
        self.assertEqual(self.kernel.dim, 2)

    def test_trapezoid_weights(self):
        assert_allclose(KernelConvolution.weights(2, 1.0), [0.5, 1.0, 0.5])
        assert_allclose(KernelConvolution.weights(0, 1.0), [0.0])

    def test_linear_integrand_is_exact(self):
        history = np.tile([1.0, 0.0], (5, 1))
        assert_allclose(self.kernel.convolve(history, 2.0, 0.5), [4.0, 0.0])

    def test_short_history(self):
        with self.assertRaises(ValidationError):
            self.kernel.convolve(np.zeros((2, 2)), 2.0, 0.5)

    def test_truncated_past_horizon(self):
        with self.assertLogs("bidomain_homogenization.models.macro_solver", "WARNING"):
            assert_allclose(self.kernel.at(3.0), 0.0)
        self.assertAlmostEqual(self.kernel.tail, 3.0)

    def test_mismatched_lengths(self):
        with self.assertRaises(ValidationError):
            KernelConvolution([0.0, 1.0], np.zeros((3, 2, 2)))


class TestRelabel(unittest.TestCase):
    def test_bidomain_fields(self):
        state = MacroState(0.0, {"v": np.array([1.0]), "u": np.array([2.0])}, None)
        potentials = relabel_potentials(state)
        assert_allclose(potentials["u_B"], [3.0])
        assert_allclose(potentials["u_D"], [2.0])

    def test_tridomain_fields(self):
        fields = {"v": np.array([1.0]), "u_B": np.array([2.0]), "u_D": np.array([0.5])}
        potentials = relabel_potentials(MacroState(0.0, fields, None))
        self.assertEqual(sorted(potentials), ["u_B1", "u_B2", "u_D"])
        assert_allclose(potentials["u_B1"], [3.0])


class TestManufactured(unittest.TestCase):
    def _final_v(self, tensors, data, m, dt):
        trajectory = run_macro(
            tensors, data, box_mesh(2, m), dt, method="direct", tol=1e-12
        )
        return trajectory.scheme, trajectory.states[-1]

    def test_first_order_in_time(self):
        data = exponential_data(0.5)
        finals = [
            self._final_v(standard_tensors(), data, 8, dt)[1].fields["v"]
            for dt in (0.1, 0.05, 0.025)
        ]
        coarse = float(np.abs(finals[0] - finals[1]).max())
        fine = float(np.abs(finals[1] - finals[2]).max())
        self.assertTrue(1.7 <= coarse / fine <= 2.3, coarse / fine)

    def test_second_order_in_space(self):
        data = linear_data(1.0)
        errors = []
        for m in (8, 16, 32):
            scheme, state = self._final_v(standard_tensors(), data, m, 0.02)
            x, y = scheme.coords.T
            exact = np.sin(np.pi * x) * np.sin(np.pi * y)
            errors.append(
                max(
                    float(np.abs(state.fields["v"] - exact).max()),
                    float(np.abs(state.fields["u"] - exact).max()),
                )
            )
        for coarse, fine in zip(errors, errors[1:]):
            self.assertTrue(3.0 <= coarse / fine <= 5.0, coarse / fine)

    def _relative_errors(self, runner, tensors, m, dt):
        data = exponential_data(0.5)
        trajectory = runner(tensors, data, box_mesh(2, m), dt, method="direct")
        scheme, state = trajectory.scheme, trajectory.states[-1]
        x, y = scheme.coords.T
        exact = np.exp(-0.5) * np.sin(np.pi * x) * np.sin(np.pi * y)
        scale = float(np.abs(exact).max())
        return [
            float(np.abs(state.fields[name] - exact).max()) / scale
            for name in ("v", "u")
        ]

    def test_simultaneous_refinement_halves_error(self):
        # h^2 = 1/25, 1/49, 1/100 and dt = h^2 / 4
        levels = ((5, 1 / 100), (7, 1 / 196), (10, 1 / 400))
        cases = (
            (run_macro_mid, standard_tensors()),
            (run_macro_ell1, memory_tensors(np.zeros((11, 2, 2)))),
        )
        for runner, tensors in cases:
            errors = [
                self._relative_errors(runner, tensors, m, dt) for m, dt in levels
            ]
            for coarse, fine in zip(errors, errors[1:]):
                for field, before, after in zip("vu", coarse, fine):
                    ratio = before / after
                    label = (runner.__name__, field, ratio)
                    self.assertTrue(1.6 <= ratio <= 2.4, label)

    def test_memory_with_vanishing_kernel_matches_standard(self):
        data = exponential_data(0.2)
        _scheme, mid = self._final_v(standard_tensors(), data, 8, 0.05)
        vanishing = memory_tensors(np.zeros((11, 2, 2)))
        _scheme, memory = self._final_v(vanishing, data, 8, 0.05)
        for name in ("v", "u"):
            assert_allclose(memory.fields[name], mid.fields[name], atol=1e-10)


class TestMemoryScheme(unittest.TestCase):
    def test_potential_form_residual(self):
        times = 0.1 * np.arange(21)
        tensors = memory_tensors(0.3 * np.exp(-times)[:, None, None] * EYE)
        data = exponential_data(0.3)
        kernel = KernelConvolution.from_tensors(tensors)
        scheme = BidomainScheme(
            tensors,
            data,
            box_mesh(2, 8),
            0.05,
            tensors.A2,
            kernel=kernel,
            method="direct",
        )
        state = scheme.initial_state()
        with self.assertRaises(ValidationError):
            scheme.potential_residual(state, state)
        for n in range(1, 4):
            previous, state = state, scheme.step(state, n)
        for residual in scheme.potential_residual(previous, state):
            self.assertLessEqual(residual, 1e-8)
        self.assertEqual(len(scheme.history), 4)


class TestTridomain(unittest.TestCase):
    def test_connected_energy_decays(self):
        tensors = synthetic(
            "tridomain",
            A2_B=EYE,
            A2_D=0.5 * EYE,
            interface_area=2.0,
            volume_out=0.75,
        )
        data = ProblemData.zero(
            2, passive_ionic(), v0=Expression(PHI, X), s0=Expression("1", XY)
        )
        scheme = TridomainScheme(tensors, data, box_mesh(2, 8), 0.05, method="direct")
        state = scheme.initial_state()
        assert_allclose(state.fields["jump"], 1.0)
        energies = [scheme.energy(state)]
        for n in range(1, 11):
            previous, state = state, scheme.step(state, n)
            energies.append(scheme.energy(state))
        for before, after in zip(energies, energies[1:]):
            self.assertLessEqual(after, before * (1 + 1e-12))
        self.assertLess(energies[-1], energies[0])
        for residual in scheme.potential_residual(previous, state):
            self.assertLessEqual(residual, 1e-8)
        assert_allclose(
            state.fields["u_B"] - state.fields["u_D"], state.fields["jump"], atol=1e-12
        )

    def test_disconnected_jump_follows_closed_form(self):
        tensors = synthetic("tridomain", A2_B=EYE, A2_D=np.zeros((2, 2)), alpha=2.0)
        data = ProblemData.zero(
            2,
            passive_ionic(),
            s0=Expression("1", XY),
            horizon=4.0,
            sample_times=tuple(np.linspace(0.0, 4.0, 17)),
        )
        dt = 1 / 200
        mesh = box_mesh(2, 4)
        trajectory = run_macro(tensors, data, mesh, dt, topology="disconnected")
        self.assertEqual(len(trajectory.states), 17)
        errors = []
        for state in trajectory.states:
            fields = state.fields
            assert_allclose(fields["u_B"] - fields["u_D"], fields["jump"], atol=1e-12)
            closed_form = np.exp(-state.time / 2.0)
            errors.append(float(np.abs(fields["jump"] - closed_form).max()))
        self.assertLessEqual(max(errors), 5 * dt)


class TestDispatch(unittest.TestCase):
    def setUp(self):
        self.data = ProblemData.zero(2, passive_ionic(), horizon=0.1)
        self.mesh = box_mesh(2, 4)

    def _run(self, tensors, **options):
        return run_macro(tensors, self.data, self.mesh, 0.05, **options)

    def test_missing_tensors(self):
        with self.assertRaisesRegex(RegimeError, "A2_B"):
            self._run(synthetic("standard", A2=EYE))
        with self.assertRaisesRegex(RegimeError, "kernel"):
            self._run(synthetic("memory", A2=EYE))

    def test_unknown_regime(self):
        with self.assertRaises(RegimeError):
            self._run(synthetic("anomalous", A2=EYE))

    def test_tridomain_topology_checks(self):
        attached = synthetic("tridomain", A2_B=EYE, A2_D=EYE, interface_area=1.0)
        with self.assertRaisesRegex(RegimeError, "A2_D"):
            self._run(attached, topology="disconnected")
        with self.assertRaisesRegex(RegimeError, "interface"):
            self._run(
                synthetic("tridomain", A2_B=EYE, A2_D=EYE), topology="connected"
            )
        with self.assertRaises(RegimeError):
            self._run(attached, topology="lattice")

    def test_x_dependent_memory_datum(self):
        data = ProblemData.zero(
            2, passive_ionic(), horizon=0.1, s0=Expression("x1*y1", XY)
        )
        tensors = memory_tensors(np.zeros((3, 2, 2)))
        with self.assertRaisesRegex(RegimeError, "x-dependent"):
            run_macro(tensors, data, self.mesh, 0.05)

    def test_perfect_regime_runs(self):
        trajectory = self._run(synthetic("perfect", A2=EYE))
        self.assertEqual(len(trajectory.states), 1)
        self.assertEqual(sorted(trajectory.states[0].fields), ["u", "v"])
        assert_allclose(trajectory.states[0].fields["v"], 0.0, atol=1e-14)
