# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Ionic current and gating dynamics.

Both models have a gating rate affine in q, g(p, q) = lam(p) q - mu(p),
and a current affine in q, I(p, q) = h1(p) + h2(p) q.
"""

import logging
from abc import ABC, abstractmethod

import numpy as np

from ..exceptions import IonicModelError
from .expressions import Expression

_logger = logging.getLogger(__name__)

RATE_FLOOR = 1e-12
LIPSCHITZ_SAMPLES = 401


class IonicModel(ABC):
    variant = None

    def __init__(self, lipschitz, p_range=(-2.0, 2.0)):
        self.lipschitz = float(lipschitz)
        self.p_range = (float(p_range[0]), float(p_range[1]))
        if not self.lipschitz > 0:
            raise IonicModelError("declared Lipschitz constant C_I must be positive")
        if not self.p_range[0] < self.p_range[1]:
            raise IonicModelError("p_min must be smaller than p_max")

    @abstractmethod
    def rates(self, p):
        """Return (lam, mu) with g(p, q) = lam q - mu."""

    @abstractmethod
    def currents(self, p):
        """Return (h1, h2) with I(p, q) = h1 + h2 q."""

    def g_rate(self, p, q):
        lam, mu = self.rates(p)
        return lam * np.asarray(q, dtype=float) - mu

    def ionic_current(self, p, q):
        h1, h2 = self.currents(p)
        return h1 + h2 * np.asarray(q, dtype=float)

    def step_gating(self, w, p, dt):
        """Exact-in-q update of dw/dt + g(p, w) = 0 with p frozen over dt."""
        w = np.asarray(w, dtype=float)
        if dt == 0:
            return w.copy()
        lam, mu = self.rates(p)
        lam = np.broadcast_to(lam, w.shape)
        mu = np.broadcast_to(mu, w.shape)
        stiff = lam > RATE_FLOOR
        out = np.empty_like(w)
        safe = np.where(stiff, lam, 1.0)
        target = mu / safe
        out[stiff] = (target + (w - target) * np.exp(-lam * dt))[stiff]
        explicit = w - dt * (lam * w - mu)
        out[~stiff] = explicit[~stiff]
        return np.clip(out, 0.0, 1.0)

    def sample_points(self, count=LIPSCHITZ_SAMPLES):
        return np.linspace(self.p_range[0], self.p_range[1], count)

    def measured_lipschitz(self, count=LIPSCHITZ_SAMPLES):
        """Largest difference quotient of I(., q) on the sampled range, q in {0, 1}."""
        p = self.sample_points(count)
        worst = 0.0
        for q in (0.0, 1.0):
            current = self.ionic_current(p, q)
            slopes = np.abs(np.diff(current)) / np.diff(p)
            worst = max(worst, float(slopes.max()))
        return worst

    def validate(self):
        measured = self.measured_lipschitz()
        if measured > self.lipschitz * (1.0 + 1e-9):
            raise IonicModelError(
                "%s: sampled Lipschitz constant %.4g exceeds declared C_I = %.4g"
                % (self.variant, measured, self.lipschitz)
            )
        _logger.debug(
            "%s: sampled Lipschitz %.4g <= declared %.4g",
            self.variant,
            measured,
            self.lipschitz,
        )
        return self

    @property
    def stable_dt(self):
        return 1.0 / (2.0 * self.lipschitz)


class AffineHodgkinHuxley(IonicModel):
    """g = a(p)(q - 1) + b(p) q and I = h1(p) + h2(p) q."""

    variant = "affine_hh"
    DEFAULTS = {
        "a": "1/(1 + exp(-p))",
        "b": "1/(1 + exp(p))",
        "h1": "p",
        "h2": "tanh(p)/10",
        "lipschitz_a": 0.25,
        "lipschitz_b": 0.25,
        "lipschitz": 2.0,
    }

    def __init__(
        self,
        a=DEFAULTS["a"],
        b=DEFAULTS["b"],
        h1=DEFAULTS["h1"],
        h2=DEFAULTS["h2"],
        lipschitz_a=DEFAULTS["lipschitz_a"],
        lipschitz_b=DEFAULTS["lipschitz_b"],
        lipschitz=DEFAULTS["lipschitz"],
        p_range=(-2.0, 2.0),
    ):
        super().__init__(lipschitz, p_range)
        self.a = a if isinstance(a, Expression) else Expression(a, ("p",))
        self.b = b if isinstance(b, Expression) else Expression(b, ("p",))
        self.h1 = h1 if isinstance(h1, Expression) else Expression(h1, ("p",))
        self.h2 = h2 if isinstance(h2, Expression) else Expression(h2, ("p",))
        self.lipschitz_a = float(lipschitz_a)
        self.lipschitz_b = float(lipschitz_b)

    def rates(self, p):
        a = self.a(p=p)
        return a + self.b(p=p), a

    def currents(self, p):
        return self.h1(p=p), self.h2(p=p)

    def validate(self):
        p = self.sample_points()
        for name, func, declared in (
            ("a", self.a, self.lipschitz_a),
            ("b", self.b, self.lipschitz_b),
        ):
            values = func(p=p)
            if not np.all(np.isfinite(values)) or values.min() < 0:
                raise IonicModelError("%s(p) must be finite and non-negative" % name)
            slope = float(np.max(np.abs(np.diff(values)) / np.diff(p)))
            if slope > declared * (1.0 + 1e-9):
                raise IonicModelError(
                    "%s(p): sampled Lipschitz constant %.4g exceeds declared %.4g"
                    % (name, slope, declared)
                )
        if not np.all(np.isfinite(self.h2(p=p))):
            raise IonicModelError("h2(p) must be bounded on the sampled range")
        return super().validate()


class MitchellSchaeffer(IonicModel):
    """Regularized Mitchell-Schaeffer model.

    exp(-(p_gate/p)^2) and exp(-(p_th/p)^2) are extended by 0 at p = 0,
    so q_inf(0) = 1 and I(0, q) = 0.
    """

    variant = "mitchell_schaeffer"
    PARAMETERS = (
        "tau_in",
        "tau_out",
        "tau_open",
        "tau_close",
        "p_th",
        "p_gate",
        "r_max",
    )

    def __init__(
        self,
        tau_in,
        tau_out,
        tau_open,
        tau_close,
        p_th,
        p_gate,
        r_max,
        lipschitz=10.0,
        p_range=(-0.2, 1.2),
    ):
        super().__init__(lipschitz, p_range)
        self.tau_in = float(tau_in)
        self.tau_out = float(tau_out)
        self.tau_open = float(tau_open)
        self.tau_close = float(tau_close)
        self.p_th = float(p_th)
        self.p_gate = float(p_gate)
        self.r_max = float(r_max)
        errors = []
        for name in self.PARAMETERS:
            if not getattr(self, name) > 0:
                errors.append("%s must be positive" % name)
        if not self.tau_open < self.tau_close:
            errors.append("tau_open < tau_close required")
        if not self.p_th >= 10 * self.p_gate:
            errors.append("p_th >= 10 p_gate required")
        if not self.r_max >= 10:
            errors.append("r_max >= 10 required")
        if errors:
            raise IonicModelError("mitchell_schaeffer: " + "; ".join(errors))

    @staticmethod
    def _gaussian_tail(scale, p):
        """exp(-(scale/p)^2), continuously extended by 0 at p = 0."""
        p = np.asarray(p, dtype=float)
        nonzero = p != 0
        safe = np.where(nonzero, p, 1.0)
        return np.where(nonzero, np.exp(-((scale / safe) ** 2)), 0.0)

    def q_inf(self, p):
        p = np.asarray(p, dtype=float)
        nonzero = p != 0
        safe = np.where(nonzero, p, 1.0)
        return np.where(nonzero, -np.expm1(-((self.p_gate / safe) ** 2)), 1.0)

    def rates(self, p):
        q_inf = self.q_inf(p)
        lam = 1.0 / self.tau_close + (self.tau_close - self.tau_open) / (
            self.tau_close * self.tau_open
        ) * q_inf
        return lam, lam * q_inf

    def currents(self, p):
        p = np.asarray(p, dtype=float)
        h2 = p * p * (p - 1.0) * np.exp(-((p / self.p_th) ** 2)) / self.tau_in
        h1 = -p * (1.0 + self.r_max * self._gaussian_tail(self.p_th, p)) / self.tau_out
        return h1, h2


available_models = {
    "affine_hh": AffineHodgkinHuxley,
    "mitchell_schaeffer": MitchellSchaeffer,
}


def ionic_model_factory(variant, **params):
    try:
        cls = available_models[variant.lower()]
    except KeyError:
        raise IonicModelError(
            "unknown ionic model %r (available: %s)"
            % (variant, ", ".join(sorted(available_models)))
        )
    return cls(**params).validate()


def g_rate(model, p, q):
    return model.g_rate(p, q)


def ionic_current(model, p, q):
    return model.ionic_current(p, q)


def step_gating(model, w, p, dt):
    return model.step_gating(w, p, dt)
