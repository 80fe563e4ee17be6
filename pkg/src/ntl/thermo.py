"""Forces along the river coordinate of a river-valley landscape.

The fast coordinate is replaced by its equilibrium second moment σ(y)², so the
slow coordinate feels F(y) = -c'(y) - ½ a'(y) σ(y)².
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import analytic
from .analytic import FlatLimitWarning
from .landscape import InputError, RiverValleyLandscape
from .optimizer import Family


@dataclass(frozen=True)
class ThermoContext:
    landscape: RiverValleyLandscape
    family: Family
    eta: float
    sigma_g: float
    exact_width: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if self.family is Family.SGD_ATTRACT:
            raise InputError("thermo forces are defined for sgd and signgd")
        if not (self.eta > 0 and self.sigma_g > 0):
            raise InputError("eta and sigma_g must be > 0")

    @property
    def d_squared(self) -> float:
        """Flat-limit width coefficient: σ(y)² = d² / a(y)."""
        return analytic.width_coefficient_sq(self.family, self.eta, self.sigma_g)

    def with_eta(self, eta: float) -> "ThermoContext":
        return ThermoContext(self.landscape, self.family, eta, self.sigma_g, self.exact_width)

    def sigma_sq(self, y):
        a = self.landscape.sharpness_profile.value(y)
        if np.any(a <= 0):
            raise InputError("sharpness must be positive")
        if not self.exact_width:
            return self.d_squared / a
        fn = analytic.steady_sigma_sgd if self.family is Family.SGD else analytic.steady_sigma_signgd
        out = np.array([fn(float(ai), self.eta, self.sigma_g).sigma ** 2 for ai in np.ravel(a)])
        return out.reshape(np.shape(a))


def _ret(v):
    return float(v) if np.ndim(v) == 0 else v


def entropic_force(ctx: ThermoContext, y):
    """-½ a'(y) σ(y)²; equals -(d²/2) a'/a in the flat limit."""
    y = np.asarray(y, dtype=float)
    ap = ctx.landscape.sharpness_profile.derivative(y)
    return _ret(-0.5 * ap * ctx.sigma_sq(y))


def entropy(ctx: ThermoContext, y):
    """S(y) = -(d²/2) log a(y), zero where a = 1. Only differences are meaningful."""
    a = ctx.landscape.sharpness_profile.value(np.asarray(y, dtype=float))
    if np.any(a <= 0):
        raise InputError("sharpness must be positive")
    return _ret(-0.5 * ctx.d_squared * np.log(a))


@dataclass(frozen=True)
class ForceBreakdown:
    F_ent: float
    F_btm: float
    F: float
    trapped: bool


def total_force(ctx: ThermoContext, y):
    """Entropic, riverbed and total force; trapped where F_btm * F <= 0."""
    y = np.asarray(y, dtype=float)
    f_ent = np.asarray(entropic_force(ctx, y))
    f_btm = -ctx.landscape.bottom_profile.derivative(y)
    f = f_ent + f_btm
    trapped = f_btm * f <= 0
    if y.ndim == 0:
        return ForceBreakdown(float(f_ent), float(f_btm), float(f), bool(trapped))
    return ForceBreakdown(f_ent, f_btm, f, trapped)


@dataclass(frozen=True)
class TrapPoints:
    x_minus: float
    x_plus: float
    y_minus: float  # positions where a(y) equals x_minus / x_plus
    y_plus: float

    def terminal(self, start: float) -> float:
        """Predicted end point (in sharpness units) for a start given in sharpness units."""
        return 0.0 if start < self.x_minus else self.x_plus


def trapping_fixed_points(a0: float, b: float, c: float, eta: float, sigma_g: float) -> Optional[TrapPoints]:
    """Zeros of the averaged force for a(y) = a0 + b|y|, c(y) = -c y under SGD.

    x_± = 1/η ± sqrt(1/η² - b σ_g²/(2c)), returned as is. They solve
    a(2/η - a) = b σ_g²/(2c), i.e. they are the sharpness values at which the
    exact-width force vanishes; ``y_±`` convert them to river positions.
    Returns None when the discriminant is negative (drift toward y = 0 everywhere).
    """
    if not (eta > 0 and b > 0 and c > 0 and sigma_g >= 0):
        raise InputError("need eta, b, c > 0 and sigma_g >= 0")
    disc = 1.0 / eta ** 2 - b * sigma_g ** 2 / (2.0 * c)
    if disc < 0:
        return None
    r = math.sqrt(disc)
    xm, xp = 1.0 / eta - r, 1.0 / eta + r
    return TrapPoints(xm, xp, (xm - a0) / b, (xp - a0) / b)


def terminal_prediction(points: Optional[TrapPoints], start: float) -> float:
    return 0.0 if points is None else points.terminal(start)


def force_roots(ctx: ThermoContext, lo: float, hi: float, n: int = 2001) -> list[float]:
    """All sign changes of the total force on [lo, hi], refined with brentq."""
    ys = np.linspace(lo, hi, n)
    fs = np.asarray(total_force(ctx, ys).F)
    roots = []
    for i in range(n - 1):
        if fs[i] == 0:
            roots.append(float(ys[i]))
        elif fs[i] * fs[i + 1] < 0:
            roots.append(brentq(lambda v: total_force(ctx, v).F, ys[i], ys[i + 1], xtol=1e-14, rtol=1e-14))
    return roots


@dataclass(frozen=True)
class DriftResult:
    y: np.ndarray
    stalled: bool
    y_final: float


def averaged_force_trajectory(ctx: ThermoContext, y0: float, steps: int, dt: Optional[float] = None,
                              tol: float = 1e-10, floor_at_zero: bool = True) -> DriftResult:
    """Euler steps y += dt F(y) with dt = eta by default, stopping once |Δy| < tol.

    With ``floor_at_zero`` the walk stops at y = 0 if it crosses it (the cusp of a
    |y| profile is an attractor from both sides).
    """
    dt = ctx.eta if dt is None else dt
    ys = [float(y0)]
    y = float(y0)
    stalled = False
    for _ in range(steps):
        dy = dt * total_force(ctx, y).F
        y_new = y + dy
        if floor_at_zero and y > 0 >= y_new:
            y_new = 0.0
            ys.append(y_new)
            y = y_new
            stalled = True
            break
        ys.append(y_new)
        y = y_new
        if abs(dy) < tol:
            stalled = True
            break
    return DriftResult(np.asarray(ys), stalled, y)


def critical_eta(alpha: float, c: float, sigma_g: float, family="sgd") -> float:
    """Learning rate at which the net force on a(y) = exp(αy), c(y) = -c y changes sign."""
    family = Family.parse(family)
    if not (alpha > 0 and c > 0 and sigma_g > 0):
        raise InputError("alpha, c and sigma_g must be > 0")
    if family is Family.SGD:
        return 4.0 * c / (alpha * sigma_g ** 2)
    if family is Family.SIGNGD:
        return math.sqrt(32.0 / math.pi) * c / (alpha * sigma_g)
    raise InputError("critical eta is defined for sgd and signgd")


def drift_along_schedule(landscape: RiverValleyLandscape, family, sigma_g: float, etas, y0: float,
                         exact_width: bool = False) -> np.ndarray:
    """Quasi-static slow-coordinate path y_{t+1} = y_t + η_t F(y_t; η_t)."""
    family = Family.parse(family)
    ys = np.empty(len(etas) + 1)
    ys[0] = y = float(y0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        for t, e in enumerate(etas):
            ctx = ThermoContext(landscape, family, float(e), sigma_g, exact_width)
            y = y + float(e) * total_force(ctx, y).F
            ys[t + 1] = y
    return ys
