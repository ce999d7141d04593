# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

{
    "name": "Bidomain Homogenization",
    "summary": """
        Cell problems, effective tensors and micro/macro solvers for a
        bidomain model with imperfect interface transmission.""",
    "version": "1.0.0",
    "license": "LGPL-3",
    "author": "Bidomain Homogenization contributors",
    "depends": [],
    "external_dependencies": {
        "python": ["numpy", "scipy", "sympy", "matplotlib"],
    },
    "demo": [
        "demo/memory_2d.ini",
        "demo/standard_2d.ini",
        "demo/tridomain_3d.ini",
    ],
}
