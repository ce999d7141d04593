# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import unittest

import numpy as np
from numpy.testing import assert_allclose

from ..exceptions import IonicModelError
from ..models.ionics import (
    AffineHodgkinHuxley,
    MitchellSchaeffer,
    available_models,
    g_rate,
    ionic_current,
    ionic_model_factory,
    step_gating,
)

MS_PARAMS = dict(
    tau_in=0.3,
    tau_out=6.0,
    tau_open=120.0,
    tau_close=150.0,
    p_th=0.5,
    p_gate=0.05,
    r_max=10.0,
)


class TestAffineHodgkinHuxley(unittest.TestCase):
    def setUp(self):
        self.model = ionic_model_factory("affine_hh")

    def test_defaults_validate(self):
        self.assertIsInstance(self.model, AffineHodgkinHuxley)
        self.assertLessEqual(self.model.measured_lipschitz(), self.model.lipschitz)
        self.assertAlmostEqual(self.model.stable_dt, 0.25)

    def test_affine_structure(self):
        p = np.linspace(-2, 2, 7)
        a = 1 / (1 + np.exp(-p))
        b = 1 / (1 + np.exp(p))
        q = 0.3
        assert_allclose(g_rate(self.model, p, q), a * (q - 1) + b * q)
        assert_allclose(ionic_current(self.model, p, q), p + np.tanh(p) / 10 * q)

    def test_exact_gating_composes(self):
        model = ionic_model_factory("affine_hh", a="1", b="1", h2="0")
        w0 = np.array([0.0, 0.2, 1.0])
        p = np.zeros(3)
        once = model.step_gating(w0, p, 0.2)
        twice = model.step_gating(model.step_gating(w0, p, 0.1), p, 0.1)
        assert_allclose(once, twice, rtol=1e-13)
        assert_allclose(once, 0.5 + (w0 - 0.5) * np.exp(-0.4), rtol=1e-13)

    def test_zero_step_is_identity(self):
        w = np.array([0.1, 0.9])
        out = step_gating(self.model, w, np.zeros(2), 0.0)
        assert_allclose(out, w)
        self.assertIsNot(out, w)

    def test_declared_lipschitz_too_small(self):
        with self.assertRaisesRegex(IonicModelError, "exceeds declared"):
            ionic_model_factory("affine_hh", h1="5*p")

    def test_negative_rate_rejected(self):
        with self.assertRaises(IonicModelError):
            ionic_model_factory("affine_hh", a="p")


class TestMitchellSchaeffer(unittest.TestCase):
    def setUp(self):
        self.model = ionic_model_factory("mitchell_schaeffer", **MS_PARAMS)

    def test_regularized_at_zero(self):
        self.assertIsInstance(self.model, MitchellSchaeffer)
        self.assertEqual(float(self.model.q_inf(0.0)), 1.0)
        assert_allclose(self.model.ionic_current(0.0, np.array([0.0, 0.5, 1.0])), 0.0)

    def test_gate_relaxes_to_q_inf(self):
        p = np.array([-0.1, 0.02, 0.5, 1.0])
        lam, mu = self.model.rates(p)
        assert_allclose(mu / lam, self.model.q_inf(p))
        assert_allclose(g_rate(self.model, p, self.model.q_inf(p)), 0.0, atol=1e-15)

    def test_parameter_constraints(self):
        for override in (
            {"tau_open": 200.0},
            {"p_th": 0.1},
            {"r_max": 5.0},
            {"tau_in": -1.0},
        ):
            params = dict(MS_PARAMS, **override)
            with self.assertRaises(IonicModelError):
                ionic_model_factory("mitchell_schaeffer", **params)

    def test_missing_parameter(self):
        params = dict(MS_PARAMS)
        params.pop("r_max")
        with self.assertRaises(TypeError):
            ionic_model_factory("mitchell_schaeffer", **params)


class TestGatingBox(unittest.TestCase):
    def test_random_steps_stay_in_unit_interval(self):
        rng = np.random.default_rng(7)
        count = 10 ** 4
        for name, params in (("affine_hh", {}), ("mitchell_schaeffer", MS_PARAMS)):
            model = ionic_model_factory(name, **params)
            low, high = model.p_range
            p = rng.uniform(low - 1.0, high + 1.0, count)
            w = rng.uniform(0.0, 1.0, count)
            dt = rng.uniform(0.0, 5.0, count)
            out = np.array(
                [
                    model.step_gating(w[i : i + 1], p[i : i + 1], dt[i])[0]
                    for i in range(count)
                ]
            )
            self.assertTrue(np.all(out >= 0.0) and np.all(out <= 1.0), name)
            if name == "mitchell_schaeffer":
                self.assertTrue(np.all(out > 0.0))

    def test_unknown_variant(self):
        with self.assertRaisesRegex(IonicModelError, "available"):
            ionic_model_factory("fitzhugh")
        self.assertEqual(sorted(available_models), ["affine_hh", "mitchell_schaeffer"])
