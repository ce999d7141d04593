# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import unittest

import numpy as np
from numpy.testing import assert_allclose

from ..exceptions import CoefficientError, RegimeError
from ..models.cell_problems import (
    CellProblems,
    Coefficients,
    InterfaceParams,
    cell_interface_datum,
    effective_tensors,
    solve_chi0_neumann,
    solve_zeta,
)
from ..models.expressions import Expression
from ..models.fem import region_mean
from ..models.geometry import CellSpec, Inclusion, build_unit_cell


def box_cell(resolution=8, dim=2):
    text = "box " + " ".join(["1/4"] * dim + ["3/4"] * dim)
    return build_unit_cell(
        CellSpec(dim, resolution, "disconnected", Inclusion.parse(text, dim))
    )


def random_spd(rng, count, dim, floor=0.5):
    R = rng.standard_normal((count, dim, dim))
    return np.einsum("eij,ekj->eik", R, R) / dim + floor * np.eye(dim)


class TestInterfaceParams(unittest.TestCase):
    def test_regimes(self):
        self.assertEqual(InterfaceParams(ell=-1).regime, "tridomain")
        self.assertEqual(InterfaceParams(ell=0).regime, "standard")
        self.assertEqual(InterfaceParams(ell=0.5).regime, "standard")
        self.assertEqual(InterfaceParams(ell=1).regime, "memory")
        self.assertEqual(InterfaceParams(ell=3).regime, "perfect")

    def test_ell_below_minus_one(self):
        with self.assertRaisesRegex(RegimeError, "ℓ ≥ −1 required"):
            InterfaceParams(ell=-2)

    def test_positive_alpha_beta(self):
        with self.assertRaises(CoefficientError):
            InterfaceParams(alpha=0.0)
        with self.assertRaises(CoefficientError):
            InterfaceParams(beta=-1.0)

    def test_scales(self):
        iface = InterfaceParams(alpha=2.0, beta=4.0, ell=1)
        self.assertAlmostEqual(iface.default_dt_kernel, 0.05)
        self.assertAlmostEqual(iface.interface_scale(0.25), 4.0)


class TestCoefficients(unittest.TestCase):
    def setUp(self):
        self.cell = box_cell()

    def test_rejects_indefinite(self):
        coeffs = Coefficients.build(self.cell, sigma_out=np.diag([1.0, -1.0]))
        with self.assertRaises(CoefficientError):
            coeffs.validate(self.cell)

    def test_inactive_cells_ignored(self):
        sigma_dis = np.tile(np.eye(2), (self.cell.n_elements, 1, 1))
        sigma_dis[self.cell.labels == 0] = -np.eye(2)
        coeffs = Coefficients.build(self.cell, sigma_dis=sigma_dis)
        coeffs.validate(self.cell)
        self.assertEqual(coeffs.ellipticity_bounds(self.cell), (1.0, 1.0))

    def test_digest_tracks_values(self):
        first = Coefficients.build(self.cell, sigma_dis=1.0)
        second = Coefficients.build(self.cell, sigma_dis=2.0)
        self.assertNotEqual(first.digest, second.digest)
        self.assertEqual(first.digest, Coefficients.build(self.cell).digest)


class TestTrivialMedia(unittest.TestCase):
    def test_empty_inclusion_A1(self):
        cell = build_unit_cell(CellSpec(2, 8))
        coeffs = Coefficients.build(cell, sigma_int=2.0)
        tensors = effective_tensors(cell, coeffs, InterfaceParams(ell=0))
        assert_allclose(tensors.A1, 2 * np.eye(2), atol=1e-10)
        assert_allclose(tensors.A2_D, 0.0, atol=1e-12)
        self.assertEqual(len(tensors.gamma_weights), 0)

    def test_homogeneous_A2_scaled_by_out_volume(self):
        cell = box_cell()
        coeffs = Coefficients.build(cell, sigma_out=3.0, sigma_dis=3.0)
        tensors = effective_tensors(cell, coeffs, InterfaceParams(ell=2))
        self.assertEqual(tensors.regime, "perfect")
        assert_allclose(tensors.A2, 4 * np.eye(2), atol=1e-10)

    def test_zeta_zero_mean(self):
        cell = box_cell()
        coeffs = Coefficients.build(cell, sigma_int=np.diag([1.0, 2.0]))
        zeta = solve_zeta(cell, coeffs)
        problems = CellProblems(cell, coeffs)
        for j in range(2):
            self.assertAlmostEqual(
                region_mean(zeta[j], cell, problems.out_map, "Y_out"), 0.0, places=12
            )


class TestTensorStructure(unittest.TestCase):
    def test_random_coefficients(self):
        rng = np.random.default_rng(2026)
        cell = box_cell(resolution=16)
        ne = cell.n_elements
        for _trial in range(10):
            coeffs = Coefficients.build(
                cell,
                sigma_int=random_spd(rng, ne, 2),
                sigma_out=random_spd(rng, ne, 2),
                sigma_dis=random_spd(rng, ne, 2),
            )
            c0, _c1 = coeffs.ellipticity_bounds(cell)
            standard = effective_tensors(cell, coeffs, InterfaceParams(ell=0))
            perfect = effective_tensors(cell, coeffs, InterfaceParams(ell=2))
            for A in (standard.A1, standard.A2_B, perfect.A2):
                scale = float(np.abs(A).max())
                self.assertLessEqual(float(np.abs(A - A.T).max()), 1e-10 * scale)
                self.assertGreaterEqual(float(np.linalg.eigvalsh(A).min()), 1e-3 * c0)
            for tensors in (standard, perfect):
                for value in tensors.metadata["discrepancy"].values():
                    self.assertLessEqual(value, 1e-9)

    def test_disconnected_A2_D_vanishes(self):
        rng = np.random.default_rng(5)
        cell = box_cell()
        coeffs = Coefficients.build(
            cell, sigma_dis=random_spd(rng, cell.n_elements, 2)
        )
        chi_B, chi_D = solve_chi0_neumann(cell, coeffs)
        self.assertEqual(chi_B.shape[0], 2)
        tensors = effective_tensors(cell, coeffs, InterfaceParams(ell=-1))
        self.assertEqual(tensors.regime, "tridomain")
        self.assertLessEqual(float(np.abs(tensors.A2_D).max()), 1e-8)


class TestMemoryKernel(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cell = box_cell(resolution=16)
        cls.coeffs = Coefficients.build(cls.cell, sigma_out=1.0, sigma_dis=5.0)
        cls.iface = InterfaceParams(alpha=1.0, beta=1.0, ell=1)
        cls.tensors = effective_tensors(
            cls.cell, cls.coeffs, cls.iface, kernel_steps=80
        )

    def test_kernel_shape(self):
        tensors = self.tensors
        self.assertEqual(tensors.B.shape, (81, 2, 2))
        self.assertAlmostEqual(tensors.dt_kernel, 0.1)
        self.assertEqual(tensors.kernel_steps, 80)
        assert_allclose(tensors.kernel_times[-1], 8.0)

    def test_kernel_symmetry(self):
        self.assertLessEqual(self.tensors.metadata["kernel_asymmetry"], 1e-6)
        self.assertLessEqual(self.tensors.metadata["kernel_reciprocity"], 1e-6)

    def test_kernel_decays(self):
        t_K = self.tensors.kernel_times[-1]
        bound = np.exp(-self.iface.beta * t_K / self.iface.alpha) * 10.0
        self.assertLessEqual(self.tensors.metadata["kernel_tail"], bound)

    def test_zero_steps(self):
        tensors = effective_tensors(self.cell, self.coeffs, self.iface, kernel_steps=0)
        self.assertEqual(tensors.B.shape, (1, 2, 2))
        scale = float(np.abs(self.tensors.B[0]).max())
        assert_allclose(tensors.B[0], self.tensors.B[0], rtol=1e-10, atol=1e-12 * scale)

    def test_constant_s1_has_no_cell_flux(self):
        tensors = effective_tensors(
            self.cell,
            self.coeffs,
            self.iface,
            kernel_steps=5,
            s1_profile=Expression("1", ("x1", "x2", "y1", "y2")),
        )
        self.assertEqual(tensors.F_cellflux.shape, (6, 2))
        assert_allclose(tensors.F_cellflux, 0.0, atol=1e-10)

    def test_interface_average(self):
        profile = Expression("2 + 0*y1", ("x1", "x2", "y1", "y2"))
        x = np.array([[0.1, 0.2], [0.5, 0.5]])
        assert_allclose(self.tensors.interface_average(profile, x), [2.0, 2.0])
        varying = Expression("x1 + y1", ("x1", "x2", "y1", "y2"))
        assert_allclose(
            self.tensors.interface_average(varying, x), x[:, 0] + 0.5, atol=1e-12
        )

    def test_x_dependent_profile_warns(self):
        problems = CellProblems(self.cell, self.coeffs, self.iface)
        profile = Expression("x1 * y1", ("x1", "x2", "y1", "y2"))
        with self.assertLogs("bidomain_homogenization.models.cell_problems", "WARNING"):
            self.assertIsNone(cell_interface_datum(problems, profile))
        self.assertIsNone(cell_interface_datum(problems, Expression("0", ("y1",))))
