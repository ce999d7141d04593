# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Closed-form data expressions (sources, initial data, ionic functions).

Expressions are parsed by sympy against a fixed vocabulary, so a config
file can never reach Python builtins or attributes.
"""

import logging
import re

import numpy as np
import sympy
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

from ..exceptions import DataError

_logger = logging.getLogger(__name__)

_ALIASES = {"×": "*", "÷": "/", "−": "-", "⋅": "*"}
_ALLOWED_CHARS = re.compile(r"^[0-9A-Za-z_+\-*/^(). ,\t]*$")
_ATTRIBUTE = re.compile(r"\.\s*[A-Za-z_]|__")
_TRANSFORMATIONS = standard_transformations + (convert_xor,)
_FUNCTIONS = {
    "sin": sympy.sin,
    "cos": sympy.cos,
    "exp": sympy.exp,
    "tanh": sympy.tanh,
    "sqrt": sympy.sqrt,
    "pi": sympy.pi,
}


def spatial_variables(dim, prefix="x"):
    return tuple("%s%d" % (prefix, i + 1) for i in range(dim))


def _global_dict():
    gd = {
        "Integer": sympy.Integer,
        "Float": sympy.Float,
        "Rational": sympy.Rational,
        "Symbol": sympy.Symbol,
        "Function": sympy.Function,
    }
    gd.update(_FUNCTIONS)
    return gd


class Expression:
    """A scalar expression of named variables, vectorized over numpy arrays."""

    def __init__(self, text, variables):
        self.variables = tuple(variables)
        source = str(text)
        for alias, ascii_op in _ALIASES.items():
            source = source.replace(alias, ascii_op)
        source = source.strip()
        if not source:
            raise DataError("empty expression")
        if not _ALLOWED_CHARS.match(source) or _ATTRIBUTE.search(source):
            raise DataError("expression %r contains forbidden characters" % text)
        symbols = {name: sympy.Symbol(name, real=True) for name in self.variables}
        try:
            expr = parse_expr(
                source,
                local_dict=dict(symbols),
                global_dict=_global_dict(),
                transformations=_TRANSFORMATIONS,
            )
        except Exception as e:  # sympy raises a zoo of types on bad input
            raise DataError("cannot parse expression %r: %s" % (text, e))
        if not isinstance(expr, sympy.Expr):
            raise DataError("expression %r is not a scalar formula" % text)
        undefined = sorted(str(f.func) for f in expr.atoms(AppliedUndef))
        if undefined:
            raise DataError(
                "expression %r uses unknown functions: %s"
                % (text, ", ".join(undefined))
            )
        unknown = sorted(
            str(s) for s in expr.free_symbols if str(s) not in self.variables
        )
        if unknown:
            raise DataError(
                "expression %r uses unknown variables %s (allowed: %s)"
                % (text, ", ".join(unknown), ", ".join(self.variables))
            )
        self.expr = expr
        self.text = str(expr)
        self._symbols = [symbols[name] for name in self.variables]
        self._func = sympy.lambdify(self._symbols, expr, modules="numpy")

    def __repr__(self):
        return "Expression(%r)" % self.text

    def __str__(self):
        return self.text

    def __eq__(self, other):
        if not isinstance(other, Expression):
            return NotImplemented
        return self.variables == other.variables and self.expr == other.expr

    def __hash__(self):
        return hash((self.variables, self.text))

    def depends_on(self, *names):
        used = {str(s) for s in self.expr.free_symbols}
        return any(name in used for name in names)

    @property
    def is_zero(self):
        return self.expr == 0

    def __call__(self, **values):
        missing = [name for name in self.variables if name not in values]
        if missing:
            raise DataError(
                "expression %r needs values for %s" % (self.text, ", ".join(missing))
            )
        args = [np.asarray(values[name], dtype=float) for name in self.variables]
        shape = np.broadcast(*args).shape if args else ()
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            result = self._func(*args)
        result = np.broadcast_to(np.asarray(result, dtype=float), shape)
        return np.array(result, dtype=float)

    def at_points(self, coords, **scalars):
        """Evaluate with spatial variables taken from the columns of ``coords``."""
        coords = np.atleast_2d(coords)
        values = dict(scalars)
        names = [n for n in self.variables if n not in values]
        for axis, name in enumerate(names[: coords.shape[1]]):
            values[name] = coords[:, axis]
        return self(**values)


def constant(value, variables):
    return Expression(repr(float(value)), variables)
