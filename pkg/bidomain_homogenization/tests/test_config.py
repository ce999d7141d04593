# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import os
import tempfile
import textwrap
import unittest
from fractions import Fraction

import numpy as np
from numpy.testing import assert_allclose

from ..controllers.config import (
    TensorSpec,
    dump_config,
    load_config,
    parse_config,
)
from ..exceptions import CoefficientError, ConfigError
from ..models.geometry import CellSpec, build_unit_cell
from ..models.ionics import AffineHodgkinHuxley, MitchellSchaeffer

MITCHELL_SCHAEFFER = """
[ionic]
variant = mitchell_schaeffer
tau_in = 0.3
tau_out = 6
tau_open = 120
tau_close = 150
p_th = 0.5
p_gate = 0.05
r_max = 10
"""


def ini(text):
    return textwrap.dedent(text).lstrip()


class TestDefaults(unittest.TestCase):
    def test_empty_file(self):
        config = parse_config("")
        self.assertEqual(config.dim, 2)
        self.assertEqual(config.regime, "memory")
        self.assertEqual(config.eps, (Fraction(1, 4), Fraction(1, 8), Fraction(1, 16)))
        self.assertEqual(str(config.cell.inclusion), "box 1/4 1/4 3/4 3/4")
        self.assertEqual(config.dt, Fraction(1, 100))
        self.assertAlmostEqual(config.kernel_dt, 0.1)
        self.assertEqual(config.solver_options(), {"tol": 1e-10, "method": "auto"})
        self.assertIsInstance(config.build_ionic(), AffineHodgkinHuxley)

    def test_connected_default_inclusion(self):
        config = parse_config(
            ini(
                """
                [geometry]
                dim = 3
                topology = connected
                resolution = 4
                """
            )
        )
        self.assertEqual(config.cell.topology, "connected")
        self.assertEqual(config.cell.inclusion.kind, "tube")

    def test_problem_data(self):
        config = parse_config(
            ini(
                """
                [data]
                v0 = x1*x2
                horizon = 1/2
                [output]
                sample_times = 0, 1/4; 1/2
                """
            )
        )
        data = config.problem_data()
        self.assertEqual(data.samples, (0.0, 0.25, 0.5))
        self.assertAlmostEqual(float(data.v0(x1=2.0, x2=3.0)), 6.0)


class TestValidation(unittest.TestCase):
    def assertConfigErrors(self, text, *fragments):
        with self.assertRaises(ConfigError) as caught:
            parse_config(ini(text))
        joined = "\n".join(caught.exception.errors)
        for fragment in fragments:
            self.assertIn(fragment, joined)
        return caught.exception.errors

    def test_ell_below_minus_one(self):
        self.assertConfigErrors(
            """
            [interface]
            ell = -2
            """,
            "ℓ ≥ −1 required",
        )

    def test_every_error_is_reported(self):
        errors = self.assertConfigErrors(
            """
            [geometry]
            resolution = 6
            eps = 1/4, 2/5
            [numerics]
            dt = 0
            solver = lu
            [extra]
            key = 1
            """,
            "[geometry]",
            "2/5 is not 1/k",
            "[numerics] dt: must be positive",
            "'lu' not in auto, direct, cg",
            "unknown section [extra]",
        )
        self.assertGreaterEqual(len(errors), 5)

    def test_unknown_key(self):
        self.assertConfigErrors(
            """
            [data]
            v1 = 0
            """,
            "[data] unknown key 'v1'",
        )

    def test_bad_expression(self):
        self.assertConfigErrors(
            """
            [data]
            f1 = z + 1
            """,
            "[data] f1:",
        )

    def test_syntax_error(self):
        with self.assertRaisesRegex(ConfigError, "syntax error"):
            parse_config("no section header\n")

    def test_mitchell_schaeffer_requires_parameters(self):
        text = MITCHELL_SCHAEFFER.replace("r_max = 10\n", "")
        self.assertConfigErrors(
            text, "[ionic] r_max is required for mitchell_schaeffer"
        )

    def test_parameter_of_other_variant(self):
        self.assertConfigErrors(MITCHELL_SCHAEFFER + "h1 = p\n", "h1 does not apply")

    def test_mitchell_schaeffer(self):
        config = parse_config(MITCHELL_SCHAEFFER)
        self.assertIsInstance(config.build_ionic(), MitchellSchaeffer)

    def test_sample_time_beyond_horizon(self):
        self.assertConfigErrors(
            """
            [output]
            sample_times = 2
            """,
            "outside [0, horizon]",
        )


class TestDump(unittest.TestCase):
    def test_round_trip(self):
        text = ini(
            """
            [geometry]
            eps = 1/2, 1/4
            [coefficients]
            sigma_int = diag 1 2
            sigma_out = matrix 2 1/2; 1/2 1
            [interface]
            alpha = 2
            ell = 0
            [data]
            s0 = sin(pi*y1)
            s0_bound = 3
            [numerics]
            dt_kernel = 1/20
            [output]
            sample_times = 1/2, 1
            """
        )
        config = parse_config(text)
        self.assertEqual(parse_config(dump_config(config)), config)
        text = dump_config(config)
        self.assertEqual(dump_config(parse_config(text)), text)

    def test_load_keeps_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "case.ini")
            with open(path, "w", encoding="utf-8") as handle:
                handle.write("[interface]\nell = 2\n")
            config = load_config(path)
            self.assertEqual(config.regime, "perfect")
            self.assertEqual(config.base_dir, tmp)


class TestTensorSpec(unittest.TestCase):
    def setUp(self):
        self.cell = build_unit_cell(CellSpec(2, 4))

    def test_forms(self):
        self.assertEqual(TensorSpec.parse("3/2").resolve(self.cell), 1.5)
        diag = TensorSpec.parse("diag 1 2").resolve(self.cell)
        assert_allclose(diag, np.diag([1.0, 2.0]))
        matrix = TensorSpec.parse("matrix 2 1; 1 3")
        self.assertEqual(str(matrix), "matrix 2 1; 1 3")
        assert_allclose(matrix.resolve(self.cell), [[2.0, 1.0], [1.0, 3.0]])

    def test_not_square(self):
        with self.assertRaises(CoefficientError):
            TensorSpec.parse("matrix 1 2; 3")
        with self.assertRaises(CoefficientError):
            TensorSpec.parse("diag 1 2 3").resolve(self.cell)

    def test_file_relative_to_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            table = np.tile([1.0, 0.0, 0.0, 2.0], (self.cell.n_elements, 1))
            np.savetxt(os.path.join(tmp, "sigma.txt"), table)
            spec = TensorSpec.parse("file:sigma.txt")
            values = spec.resolve(self.cell, tmp)
            self.assertEqual(values.shape, (self.cell.n_elements, 2, 2))
            assert_allclose(values[0], np.diag([1.0, 2.0]))
            np.savetxt(os.path.join(tmp, "short.txt"), table[:3])
            with self.assertRaises(CoefficientError):
                TensorSpec.parse("file:short.txt").resolve(self.cell, tmp)
