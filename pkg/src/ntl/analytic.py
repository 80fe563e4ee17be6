"""Closed-form steady states of noisy optimizers on a quadratic valley ½ a x².

Widths are standard deviations of the stationary distribution of the fast
coordinate under a fixed learning rate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .landscape import InputError
from .optimizer import Family

SQRT_PI = math.sqrt(math.pi)
SQRT_2PI = math.sqrt(2.0 * math.pi)

# aη (SGD) or aη/σ_g (SignGD) above which flat-limit values visibly degrade
FLAT_LIMIT_WARN = 0.2


class EdgeOfStabilityError(ValueError):
    """a >= 2/eta: noiseless SGD on ½ a x² no longer contracts."""


class StabilityError(ValueError):
    """Parameters outside the region where a stationary width exists."""


class OutOfRegimeError(ValueError):
    pass


class SingularFitError(ValueError):
    pass


class FlatLimitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SteadyState:
    sigma: float
    thermal_loss: float
    regime: str  # "exact" | "flat_limit"


def _positive(name, value):
    if not value > 0 or not math.isfinite(value):
        raise InputError(f"{name} must be a finite positive number, got {value!r}")


def _nonneg(name, value):
    if not value >= 0 or not math.isfinite(value):
        raise InputError(f"{name} must be >= 0, got {value!r}")


def steady_sigma_sgd(a: float, eta: float, sigma_g: float, flat: bool = False) -> SteadyState:
    """σ = σ_g / sqrt(a (2/η - a)); flat limit sqrt(η / 2a) σ_g."""
    _positive("a", a)
    _positive("eta", eta)
    _nonneg("sigma_g", sigma_g)
    if a * eta >= 2.0:
        raise EdgeOfStabilityError(f"a={a} >= 2/eta={2.0 / eta}: beyond the edge of stability")
    if flat:
        if a * eta > FLAT_LIMIT_WARN:
            warnings.warn(f"a*eta={a * eta:g} is outside the flat limit", FlatLimitWarning, stacklevel=2)
        sigma = math.sqrt(eta / (2.0 * a)) * sigma_g
    else:
        sigma = sigma_g / math.sqrt(a * (2.0 / eta - a))
    return SteadyState(sigma, 0.5 * a * sigma * sigma, "flat_limit" if flat else "exact")


def steady_sigma_signgd(a: float, eta: float, sigma_g: float, flat: bool = False) -> SteadyState:
    """Gaussian-closure width of SignGD.

    σ = (√π/4) η sqrt(1 + sqrt(1 + (32/π)(σ_g/(aη))²)); flat limit
    (π/8)^(1/4) sqrt(σ_g η / a). At σ_g = 0 the closure gives the lattice
    floor √(2π) η / 4.
    """
    _positive("a", a)
    _positive("eta", eta)
    _nonneg("sigma_g", sigma_g)
    if flat:
        if sigma_g == 0 or a * eta / sigma_g > FLAT_LIMIT_WARN:
            warnings.warn("SignGD flat limit needs a*eta << sigma_g", FlatLimitWarning, stacklevel=2)
        sigma = (math.pi / 8.0) ** 0.25 * math.sqrt(sigma_g * eta / a)
    else:
        ratio = sigma_g / (a * eta)
        sigma = SQRT_PI / 4.0 * eta * math.sqrt(1.0 + math.sqrt(1.0 + 32.0 / math.pi * ratio * ratio))
    return SteadyState(sigma, 0.5 * a * sigma * sigma, "flat_limit" if flat else "exact")


def _attract_factors(a, eta, beta, gamma):
    num = eta * (1 - beta ** 2 + a * beta * (1 + beta) * eta - 2 * beta ** 3 * gamma * eta)
    d1 = a + gamma * (1 - 2 * beta)
    d2 = 2 * (1 + beta) - eta * ((a + gamma) * (1 + beta) - 2 * beta ** 2 * gamma)
    d3 = 1 + beta * (-1 + a * eta + 2 * (1 - beta) * gamma * eta)
    return num, d1, d2, d3


def steady_sigma_attract(a: float, eta: float, sigma_g: float, beta: float, gamma: float) -> SteadyState:
    """Closed-form width for SGD with a linear attraction toward an EMA of the iterate.

    Reduces to the SGD width at gamma = 0, and to SGD with sharpness a + gamma at
    beta = 0. Away from beta = 1/2 it does not coincide with the stationary width
    of the explicit update in ``optimizer``; see ``attract_sigma_exact``.
    """
    _positive("a", a)
    _positive("eta", eta)
    _nonneg("sigma_g", sigma_g)
    num, d1, d2, d3 = _attract_factors(a, eta, beta, gamma)
    if d1 <= 0 or d2 <= 0 or d3 <= 0 or num <= 0:
        raise StabilityError(f"attraction parameters outside the stability region (beta={beta}, gamma={gamma})")
    sigma = math.sqrt(num / (d1 * d2 * d3)) * sigma_g
    return SteadyState(sigma, 0.5 * a * sigma * sigma, "exact")


def attract_transition(a, eta, beta, gamma):
    """Linear map of (x, ema) for one noiseless SGD-attract step, and the noise column."""
    A = np.array([[1 - eta * a - eta * gamma * beta, eta * gamma * beta],
                  [1 - beta, beta]])
    B = np.array([[-eta], [0.0]])
    return A, B


def attract_sigma_exact(a: float, eta: float, sigma_g: float, beta: float, gamma: float) -> float:
    """Stationary width of the explicit SGD-attract update, from the discrete Lyapunov equation."""
    A, B = attract_transition(a, eta, beta, gamma)
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
        raise StabilityError("SGD-attract iteration is not contracting")
    cov = solve_discrete_lyapunov(A, (B @ B.T) * sigma_g ** 2)
    return math.sqrt(cov[0, 0])


def steady_sigma(family, a, eta, sigma_g, beta=None, gamma=None, flat=False) -> SteadyState:
    family = Family.parse(family)
    if family is Family.SGD:
        return steady_sigma_sgd(a, eta, sigma_g, flat)
    if family is Family.SIGNGD:
        return steady_sigma_signgd(a, eta, sigma_g, flat)
    return steady_sigma_attract(a, eta, sigma_g, beta or 0.0, gamma or 0.0)


def thermal_loss(family, eta: float, sigma_g: float) -> float:
    """Flat-limit mean fast loss per valley direction; independent of the sharpness."""
    family = Family.parse(family)
    _positive("eta", eta)
    _nonneg("sigma_g", sigma_g)
    if family is Family.SIGNGD:
        return math.sqrt(math.pi / 32.0) * sigma_g * eta
    if family is Family.SGD:
        return 0.25 * sigma_g ** 2 * eta
    raise InputError("thermal_loss is defined for sgd and signgd")


def heat_capacity(family, sigma_g: float) -> float:
    """C = d(thermal loss)/d(eta) per direction."""
    return thermal_loss(family, 1.0, sigma_g)


def width_coefficient_sq(family, eta: float, sigma_g: float) -> float:
    """d² such that the flat-limit width is σ² = d² / a."""
    family = Family.parse(family)
    if family is Family.SGD:
        return 0.5 * eta * sigma_g ** 2
    if family is Family.SIGNGD:
        return math.sqrt(math.pi / 8.0) * sigma_g * eta
    raise InputError("width coefficient is defined for sgd and signgd")


@dataclass(frozen=True)
class Timescale:
    exact: float
    flat: float


def convergence_timescale(a: float, eta: float) -> Timescale:
    """SGD relaxation time t_c = -1/log(1 - ηa), flat limit 1/(aη)."""
    _positive("a", a)
    _positive("eta", eta)
    if a * eta >= 1.0:
        raise OutOfRegimeError(f"a*eta={a * eta:g} >= 1: no monotone exponential relaxation")
    return Timescale(-1.0 / math.log1p(-a * eta), 1.0 / (a * eta))


def relaxation_time(family, a: float, eta: float, sigma_g: float) -> float:
    """Steps for the width to relax by a factor e, used to size burn-in.

    SGD: ``convergence_timescale``. SignGD: from the slope of the Gaussian-closure
    variance map at its fixed point. SGD-attract: spectral radius of its map.
    """
    family = Family.parse(family)
    if family is Family.SGD:
        return convergence_timescale(a, eta).exact
    if family is Family.SIGNGD:
        s = steady_sigma_signgd(a, eta, sigma_g).sigma ** 2
        q = a * a * s + sigma_g ** 2
        slope = 1.0 - 4.0 * eta * a / SQRT_2PI * (0.5 * a * a * s + sigma_g ** 2) / q ** 1.5
        slope = abs(slope)
        return 1.0 if slope < math.exp(-2.0) else -2.0 / math.log(slope)
    raise InputError("use attract_relaxation_time for sgd_attract")


def attract_relaxation_time(a, eta, beta, gamma) -> float:
    A, _ = attract_transition(a, eta, beta, gamma)
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    return -1.0 / math.log(rho)


def transient_moments_sgd(x0: float, a: float, eta: float, sigma_g: float, t) -> tuple:
    """Mean and width of SGD started from a point mass at x0, after t steps."""
    sigma = steady_sigma_sgd(a, eta, sigma_g).sigma
    t = np.asarray(t, dtype=float)
    r = 1.0 - eta * a
    mu = r ** t * x0
    var = (1.0 - r ** (2.0 * t)) * sigma * sigma
    if mu.ndim == 0:
        return float(mu), math.sqrt(float(var))
    return mu, np.sqrt(var)


@dataclass(frozen=True)
class HeatCapacityFit:
    intercept: float
    slope: float
    residual: float


def fit_heat_capacity(points: Sequence[tuple[float, float]]) -> HeatCapacityFit:
    """Unweighted least-squares line loss = intercept + slope * eta_min.

    The slope is the total heat capacity (number of valley directions times C).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise InputError("need at least two (eta_min, final_loss) points")
    x, y = pts[:, 0], pts[:, 1]
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0 or np.unique(x).size < 2:
        raise SingularFitError("all eta values are equal")
    slope = float(np.dot(dx, y - ym)) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    return HeatCapacityFit(intercept, slope, float(np.sqrt(np.mean(resid * resid))))


def estimate_valley_count(slope: float, sigma_g: float) -> float:
    """Number of valley directions N from a measured loss-vs-eta slope, SignGD thermal loss."""
    _positive("slope", slope)
    _positive("sigma_g", sigma_g)
    return slope * math.sqrt(32.0 / math.pi) / sigma_g
