# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import ast
import os


def _read_manifest():
    path = os.path.join(os.path.dirname(__file__), "__manifest__.py")
    with open(path, encoding="utf-8") as handle:
        return ast.literal_eval(handle.read())


__version__ = _read_manifest()["version"]

from . import models  # noqa: E402
from . import controllers  # noqa: E402
