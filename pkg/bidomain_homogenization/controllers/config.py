# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""INI configuration: parsing, validation, defaults and canonical dump.

Every problem found in a file is collected and raised together in one
ConfigError.
"""

import configparser
import io
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..exceptions import (
    CoefficientError,
    ConfigError,
    HomogenizationError,
    ValidationError,
)
from ..models.cell_problems import Coefficients, InterfaceParams
from ..models.expressions import Expression, spatial_variables
from ..models.fem import SOLVER_METHODS
from ..models.geometry import CellSpec, Inclusion, build_unit_cell
from ..models.ionics import AffineHodgkinHuxley, MitchellSchaeffer, ionic_model_factory
from ..models.micro_solver import ProblemData

_logger = logging.getLogger(__name__)

AFFINE_KEYS = ("a", "b", "h1", "h2", "lipschitz_a", "lipschitz_b")
COMMON_IONIC_KEYS = ("variant", "lipschitz", "p_min", "p_max")

SCHEMA = {
    "geometry": ("dim", "resolution", "topology", "inclusion", "eps"),
    "coefficients": ("sigma_int", "sigma_out", "sigma_dis"),
    "interface": ("alpha", "beta", "ell"),
    "ionic": COMMON_IONIC_KEYS + AFFINE_KEYS + MitchellSchaeffer.PARAMETERS,
    "data": ("f1", "f2", "v0", "w_in", "s0", "s0_bound", "horizon"),
    "numerics": (
        "macro_resolution",
        "dt",
        "dt_kernel",
        "kernel_steps",
        "tolerance",
        "solver",
        "threads",
    ),
    "output": ("directory", "sample_times"),
}

DEFAULTS = {
    "geometry": {
        "dim": "2",
        "resolution": "8",
        "topology": "disconnected",
        "eps": "1/4, 1/8, 1/16",
    },
    "coefficients": {"sigma_int": "1", "sigma_out": "1", "sigma_dis": "1"},
    "interface": {"alpha": "1", "beta": "1", "ell": "1"},
    "data": {
        "f1": "0",
        "f2": "0",
        "v0": "0",
        "w_in": "1/2",
        "s0": "0",
        "horizon": "1",
    },
    "numerics": {
        "macro_resolution": "16",
        "dt": "1/100",
        "kernel_steps": "80",
        "tolerance": "1e-10",
        "solver": "auto",
        "threads": "1",
    },
    "output": {"directory": "out"},
}


def default_inclusion(dim, topology):
    if topology == "connected":
        return "tube 1/4 3/4"
    return "box " + " ".join(["1/4"] * dim + ["3/4"] * dim)


def _number(text):
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError):
        raise ValidationError("%r is not a number" % (text,))


def _integer(text):
    value = _number(text)
    if value.denominator != 1:
        raise ValidationError("%r is not an integer" % (text,))
    return int(value)


def _number_list(text):
    items = [item for item in str(text).replace(";", ",").split(",") if item.strip()]
    return tuple(_number(item) for item in items)


def _fraction_text(value):
    return str(Fraction(value))


@dataclass(frozen=True)
class TensorSpec:
    """A conductivity: scalar, ``diag a b``, ``matrix a b; c d`` or ``file:PATH``.

    Files hold one row per unit-cell element with the dim x dim entries
    in row-major order.
    """

    kind: str = "scalar"
    values: tuple = (Fraction(1),)
    path: str = None

    @classmethod
    def parse(cls, text):
        text = str(text).strip()
        if text.startswith("file:"):
            path = text[len("file:") :].strip()
            if not path:
                raise CoefficientError("empty tensor file path")
            return cls("file", (), path)
        words = text.split(None, 1)
        head = words[0].lower() if words else ""
        if head == "diag":
            entries = words[1].replace(" ", ",") if len(words) > 1 else ""
            return cls("diag", _number_list(entries) if entries else ())
        if head == "matrix":
            rows = [r for r in (words[1] if len(words) > 1 else "").split(";")]
            values = tuple(tuple(_number(v) for v in row.split()) for row in rows)
            width = {len(row) for row in values}
            if len(width) != 1 or width.pop() != len(values):
                raise CoefficientError("matrix %r is not square" % text)
            return cls("matrix", values)
        return cls("scalar", (_number(text),))

    def __str__(self):
        if self.kind == "file":
            return "file:%s" % self.path
        if self.kind == "scalar":
            return _fraction_text(self.values[0])
        if self.kind == "diag":
            return "diag " + " ".join(_fraction_text(v) for v in self.values)
        return "matrix " + "; ".join(
            " ".join(_fraction_text(v) for v in row) for row in self.values
        )

    def resolve(self, cell, base_dir=None):
        """The value passed to Coefficients.build for this cell."""
        dim = cell.dim
        if self.kind == "scalar":
            return float(self.values[0])
        if self.kind == "diag":
            if len(self.values) != dim:
                raise CoefficientError("diag tensor needs %d entries" % dim)
            return np.diag([float(v) for v in self.values])
        if self.kind == "matrix":
            if len(self.values) != dim:
                raise CoefficientError("matrix tensor must be %dx%d" % (dim, dim))
            return np.array([[float(v) for v in row] for row in self.values])
        path = self.path
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        table = np.loadtxt(path, ndmin=2)
        if table.shape != (cell.n_elements, dim * dim):
            raise CoefficientError(
                "%s: expected %d rows of %d entries, got shape %s"
                % (self.path, cell.n_elements, dim * dim, table.shape)
            )
        return table.reshape(cell.n_elements, dim, dim)


@dataclass(frozen=True)
class IonicSpec:
    variant: str = "affine_hh"
    params: tuple = ()

    def build(self, dim=None):
        params = dict(self.params)
        kwargs = {}
        p_range = None
        if "p_min" in params or "p_max" in params:
            if self.variant == "affine_hh":
                default = (-2, 2)
            else:
                default = (Fraction(-1, 5), Fraction(6, 5))
            p_range = (
                float(params.pop("p_min", default[0])),
                float(params.pop("p_max", default[1])),
            )
        for key, value in params.items():
            if isinstance(value, Expression):
                kwargs[key] = value
            else:
                kwargs[key] = float(value)
        if p_range:
            kwargs["p_range"] = p_range
        return ionic_model_factory(self.variant, **kwargs)


@dataclass(frozen=True)
class SimConfig:
    cell: CellSpec
    eps: tuple
    sigma_int: TensorSpec
    sigma_out: TensorSpec
    sigma_dis: TensorSpec
    interface: InterfaceParams
    ionic: IonicSpec
    f1: Expression
    f2: Expression
    v0: Expression
    s0: Expression
    w_in: Fraction = Fraction(1, 2)
    s0_bound: Fraction = None
    horizon: Fraction = Fraction(1)
    macro_resolution: int = 16
    dt: Fraction = Fraction(1, 100)
    dt_kernel: Fraction = None
    kernel_steps: int = 80
    tolerance: float = 1e-10
    solver: str = "auto"
    threads: int = 1
    directory: str = "out"
    sample_times: tuple = ()
    path: str = field(default=None, compare=False)

    @property
    def dim(self):
        return self.cell.dim

    @property
    def regime(self):
        return self.interface.regime

    @property
    def base_dir(self):
        return os.path.dirname(os.path.abspath(self.path)) if self.path else None

    @property
    def kernel_dt(self):
        if self.dt_kernel is not None:
            return float(self.dt_kernel)
        return self.interface.default_dt_kernel

    def build_cell(self):
        return build_unit_cell(self.cell)

    def build_coefficients(self, cell):
        return Coefficients.build(
            cell,
            self.sigma_int.resolve(cell, self.base_dir),
            self.sigma_out.resolve(cell, self.base_dir),
            self.sigma_dis.resolve(cell, self.base_dir),
        )

    def build_ionic(self):
        return self.ionic.build()

    def problem_data(self, ionic=None):
        return ProblemData(
            ionic=ionic or self.build_ionic(),
            f1=self.f1,
            f2=self.f2,
            v0=self.v0,
            w_in=float(self.w_in),
            s0=self.s0,
            s0_bound=None if self.s0_bound is None else float(self.s0_bound),
            horizon=float(self.horizon),
            sample_times=tuple(float(t) for t in self.sample_times),
        )

    def solver_options(self):
        return {"tol": float(self.tolerance), "method": self.solver}

    def tensor_key(self):
        """Canonical description of everything the effective tensors depend on."""
        return {
            "cell": {
                "dim": self.cell.dim,
                "resolution": self.cell.resolution,
                "topology": self.cell.topology,
                "inclusion": str(self.cell.inclusion),
            },
            "coefficients": {
                "sigma_int": str(self.sigma_int),
                "sigma_out": str(self.sigma_out),
                "sigma_dis": str(self.sigma_dis),
            },
            "alpha": str(self.interface.alpha),
            "beta": str(self.interface.beta),
            "regime": self.regime,
            "dt_kernel": repr(self.kernel_dt) if self.regime == "memory" else None,
            "kernel_steps": self.kernel_steps if self.regime == "memory" else None,
            "s1": self.s0.text if self.regime == "memory" else None,
            "tolerance": repr(float(self.tolerance)),
        }


class _Reader:
    """Typed access to one section that records errors instead of raising."""

    def __init__(self, parser, section, errors):
        self.section = section
        self.errors = errors
        values = dict(DEFAULTS.get(section, {}))
        if parser.has_section(section):
            values.update(parser[section])
        self.values = values

    def get(self, key, convert, default=None):
        if key not in self.values:
            return default
        try:
            return convert(self.values[key])
        except HomogenizationError as e:
            self.errors.append("[%s] %s: %s" % (self.section, key, e))
        except (ValueError, TypeError) as e:
            self.errors.append("[%s] %s: %s" % (self.section, key, e))
        return default


def _expression(variables):
    return lambda text: Expression(text, variables)


def _read_ionic(parser, errors, dim):
    reader = _Reader(parser, "ionic", errors)
    variant = str(reader.values.get("variant", "affine_hh")).strip().lower()
    params = {}
    if variant == "affine_hh":
        allowed = COMMON_IONIC_KEYS + AFFINE_KEYS
        for key in ("a", "b", "h1", "h2"):
            default = Expression(AffineHodgkinHuxley.DEFAULTS[key], ("p",))
            params[key] = reader.get(key, _expression(("p",)), default)
        for key in ("lipschitz_a", "lipschitz_b", "lipschitz"):
            params[key] = reader.get(
                key, _number, _number(AffineHodgkinHuxley.DEFAULTS[key])
            )
    elif variant == "mitchell_schaeffer":
        allowed = COMMON_IONIC_KEYS + MitchellSchaeffer.PARAMETERS
        for key in MitchellSchaeffer.PARAMETERS:
            if key not in reader.values:
                errors.append("[ionic] %s is required for mitchell_schaeffer" % key)
            else:
                params[key] = reader.get(key, _number)
        params["lipschitz"] = reader.get("lipschitz", _number, Fraction(10))
    else:
        errors.append("[ionic] variant: unknown ionic model %r" % variant)
        return IonicSpec(variant, ())
    for key in reader.values:
        if key not in allowed:
            errors.append("[ionic] %s does not apply to %s" % (key, variant))
    for key in ("p_min", "p_max"):
        if key in reader.values:
            params[key] = reader.get(key, _number)
    params = {k: v for k, v in params.items() if v is not None}
    spec = IonicSpec(variant, tuple(sorted(params.items())))
    if not any(e.startswith("[ionic]") for e in errors):
        try:
            spec.build(dim)
        except HomogenizationError as e:
            errors.append("[ionic] %s" % e)
    return spec


def _check_unknown(parser, errors):
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append("unknown section [%s]" % section)
            continue
        for key in parser[section]:
            if key not in SCHEMA[section]:
                errors.append("[%s] unknown key %r" % (section, key))


def parse_config(text, path=None):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_file(io.StringIO(text), source=path or "<config>")
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        where = " (line %s)" % line if line else ""
        raise ConfigError(["syntax error%s: %s" % (where, e.message)], path)
    errors = []
    _check_unknown(parser, errors)

    geo = _Reader(parser, "geometry", errors)
    dim = geo.get("dim", _integer, 2)
    if dim not in (2, 3):
        errors.append("[geometry] dim: must be 2 or 3, got %s" % dim)
        dim = 2
    topology = str(geo.values["topology"]).strip()
    inclusion = geo.get(
        "inclusion",
        lambda t: Inclusion.parse(t, dim),
        Inclusion.parse(default_inclusion(dim, topology), dim),
    )
    cell = CellSpec(
        dim=dim,
        resolution=geo.get("resolution", _integer, 8),
        topology=topology,
        inclusion=inclusion,
    )
    try:
        cell.validate()
    except HomogenizationError as e:
        errors.append("[geometry] %s" % e)
    eps = geo.get("eps", _number_list, ())
    for value in eps:
        if value <= 0 or value.numerator != 1:
            errors.append("[geometry] eps: %s is not 1/k" % value)
    if not eps:
        errors.append("[geometry] eps: at least one value is required")

    coef = _Reader(parser, "coefficients", errors)
    tensors = {
        key: coef.get(key, TensorSpec.parse, TensorSpec())
        for key in SCHEMA["coefficients"]
    }

    iface_reader = _Reader(parser, "interface", errors)
    alpha = iface_reader.get("alpha", _number, Fraction(1))
    beta = iface_reader.get("beta", _number, Fraction(1))
    ell = iface_reader.get("ell", _number, Fraction(1))
    try:
        interface = InterfaceParams(alpha, beta, ell)
    except HomogenizationError as e:
        errors.append("[interface] %s" % e)
        interface = InterfaceParams()

    ionic = _read_ionic(parser, errors, dim)

    x = spatial_variables(dim)
    y = spatial_variables(dim, "y")
    data = _Reader(parser, "data", errors)
    zero_xt = Expression("0", x + ("t",))
    f1 = data.get("f1", _expression(x + ("t",)), zero_xt)
    f2 = data.get("f2", _expression(x + ("t",)), zero_xt)
    v0 = data.get("v0", _expression(x), Expression("0", x))
    s0 = data.get("s0", _expression(x + y), Expression("0", x + y))
    w_in = data.get("w_in", _number, Fraction(1, 2))
    if not 0 <= w_in <= 1:
        errors.append("[data] w_in: must lie in [0, 1], got %s" % w_in)
    s0_bound = data.get("s0_bound", _number)
    horizon = data.get("horizon", _number, Fraction(1))
    if horizon <= 0:
        errors.append("[data] horizon: must be positive")

    num = _Reader(parser, "numerics", errors)
    dt = num.get("dt", _number, Fraction(1, 100))
    if dt <= 0:
        errors.append("[numerics] dt: must be positive")
    dt_kernel = num.get("dt_kernel", _number)
    if dt_kernel is not None and dt_kernel <= 0:
        errors.append("[numerics] dt_kernel: must be positive")
    kernel_steps = num.get("kernel_steps", _integer, 80)
    if kernel_steps < 0:
        errors.append("[numerics] kernel_steps: must be >= 0")
    macro_resolution = num.get("macro_resolution", _integer, 16)
    if macro_resolution < 1:
        errors.append("[numerics] macro_resolution: must be positive")
    solver = str(num.values["solver"]).strip()
    if solver not in SOLVER_METHODS:
        errors.append(
            "[numerics] solver: %r not in %s" % (solver, ", ".join(SOLVER_METHODS))
        )
    threads = num.get("threads", _integer, 1)
    if threads < 1:
        errors.append("[numerics] threads: must be >= 1")

    out = _Reader(parser, "output", errors)
    sample_times = out.get("sample_times", _number_list, ())
    for t in sample_times:
        if not 0 <= t <= horizon:
            errors.append("[output] sample_times: %s outside [0, horizon]" % t)

    if errors:
        for message in errors:
            _logger.debug("config error: %s", message)
        raise ConfigError(errors, path)
    return SimConfig(
        cell=cell,
        eps=eps,
        sigma_int=tensors["sigma_int"],
        sigma_out=tensors["sigma_out"],
        sigma_dis=tensors["sigma_dis"],
        interface=interface,
        ionic=ionic,
        f1=f1,
        f2=f2,
        v0=v0,
        s0=s0,
        w_in=w_in,
        s0_bound=s0_bound,
        horizon=horizon,
        macro_resolution=macro_resolution,
        dt=dt,
        dt_kernel=dt_kernel,
        kernel_steps=kernel_steps,
        tolerance=float(num.get("tolerance", _number, Fraction(1, 10 ** 10))),
        solver=solver,
        threads=threads,
        directory=str(out.values["directory"]).strip(),
        sample_times=sample_times,
        path=path,
    )


def load_config(path):
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    config = parse_config(text, path)
    _logger.debug("loaded %s (regime %s)", path, config.regime)
    return config


def dump_config(config):
    """Canonical INI text; parse_config(dump_config(c)) == c."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["geometry"] = {
        "dim": str(config.cell.dim),
        "resolution": str(config.cell.resolution),
        "topology": config.cell.topology,
        "inclusion": str(config.cell.inclusion),
        "eps": ", ".join(_fraction_text(e) for e in config.eps),
    }
    parser["coefficients"] = {
        "sigma_int": str(config.sigma_int),
        "sigma_out": str(config.sigma_out),
        "sigma_dis": str(config.sigma_dis),
    }
    parser["interface"] = {
        "alpha": _fraction_text(config.interface.alpha),
        "beta": _fraction_text(config.interface.beta),
        "ell": _fraction_text(config.interface.ell),
    }
    ionic = {"variant": config.ionic.variant}
    for key, value in config.ionic.params:
        if isinstance(value, Expression):
            ionic[key] = value.text
        else:
            ionic[key] = _fraction_text(value)
    parser["ionic"] = ionic
    data = {
        "f1": config.f1.text,
        "f2": config.f2.text,
        "v0": config.v0.text,
        "s0": config.s0.text,
        "w_in": _fraction_text(config.w_in),
        "horizon": _fraction_text(config.horizon),
    }
    if config.s0_bound is not None:
        data["s0_bound"] = _fraction_text(config.s0_bound)
    parser["data"] = data
    numerics = {
        "macro_resolution": str(config.macro_resolution),
        "dt": _fraction_text(config.dt),
        "kernel_steps": str(config.kernel_steps),
        "tolerance": repr(float(config.tolerance)),
        "solver": config.solver,
        "threads": str(config.threads),
    }
    if config.dt_kernel is not None:
        numerics["dt_kernel"] = _fraction_text(config.dt_kernel)
    parser["numerics"] = numerics
    output = {"directory": config.directory}
    if config.sample_times:
        times = config.sample_times
        output["sample_times"] = ", ".join(_fraction_text(t) for t in times)
    parser["output"] = output
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()
