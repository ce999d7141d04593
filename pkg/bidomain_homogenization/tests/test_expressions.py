# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import unittest

import numpy as np
from numpy.testing import assert_allclose

from ..exceptions import DataError
from ..models.expressions import Expression, constant, spatial_variables


class TestExpression(unittest.TestCase):
    def test_spatial_variables(self):
        self.assertEqual(spatial_variables(3), ("x1", "x2", "x3"))
        self.assertEqual(spatial_variables(2, "y"), ("y1", "y2"))

    def test_vectorized_evaluation(self):
        expr = Expression("sin(pi*x1)*exp(-t)", ("x1", "t"))
        x = np.linspace(0, 1, 5)
        assert_allclose(expr(x1=x, t=0.5), np.sin(np.pi * x) * np.exp(-0.5))

    def test_constant_broadcasts(self):
        expr = Expression("3", ("x1", "x2"))
        assert_allclose(expr(x1=np.zeros(4), x2=0.0), np.full(4, 3.0))
        self.assertTrue(constant(0, ("x1",)).is_zero)

    def test_unicode_operators(self):
        expr = Expression("2 × x1 − 1 ÷ 2", ("x1",))
        self.assertAlmostEqual(float(expr(x1=1.0)), 1.5)

    def test_caret_is_power(self):
        self.assertAlmostEqual(float(Expression("x1^2", ("x1",))(x1=3.0)), 9.0)

    def test_at_points_fills_columns_in_order(self):
        expr = Expression("x1 + 10*x2 + 100*t", ("x1", "x2", "t"))
        coords = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert_allclose(expr.at_points(coords, t=1.0), [121.0, 143.0])

    def test_depends_on(self):
        expr = Expression("y1 + 0*x1", ("x1", "x2", "y1", "y2"))
        self.assertFalse(expr.depends_on("x1", "x2"))
        self.assertTrue(expr.depends_on("y1"))

    def test_equality_by_value(self):
        first = Expression("x1 + 1", ("x1",))
        self.assertEqual(first, Expression("1 + x1", ("x1",)))
        self.assertEqual(Expression(first.text, ("x1",)), first)
        self.assertNotEqual(first, Expression("x1 + 1", ("x1", "t")))

    def test_rejects_unknown_names(self):
        with self.assertRaisesRegex(DataError, "unknown variables"):
            Expression("x3 + 1", ("x1", "x2"))
        with self.assertRaisesRegex(DataError, "unknown functions"):
            Expression("erf(x1)", ("x1",))

    def test_rejects_code(self):
        for text in ("__import__('os')", "x1.real", "lambda: 1", ""):
            with self.assertRaises(DataError):
                Expression(text, ("x1",))

    def test_missing_value(self):
        with self.assertRaises(DataError):
            Expression("x1 + t", ("x1", "t"))(x1=1.0)
