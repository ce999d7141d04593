# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

from . import (
    test_cache,
    test_cell_problems,
    test_cli,
    test_config,
    test_convergence,
    test_expressions,
    test_fem,
    test_geometry,
    test_ionics,
    test_macro_solver,
    test_micro_solver,
    test_reports,
)
