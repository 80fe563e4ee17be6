"""Learning-rate schedules: baselines, greedy optimal decay and related timescales."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import analytic
from .analytic import FLAT_LIMIT_WARN, SQRT_2PI, FlatLimitWarning
from .landscape import InputError
from .optimizer import Family


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    WSD = "wsd"
    INVERSE_TIME_OPTIMAL = "inverse_time_optimal"
    COSINE = "cosine"
    LINEAR = "linear"
    ONE_SQRT = "one_sqrt"


DECAY_SHAPES = ("cosine", "linear", "one_sqrt", "inverse_time_optimal")


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind
    params: dict
    etas: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        etas = np.array(self.etas, dtype=float).reshape(-1)
        etas.setflags(write=False)
        object.__setattr__(self, "etas", etas)

    def __len__(self):
        return self.etas.size

    def __getitem__(self, t):
        return self.etas[t]

    @property
    def lr_sum(self) -> float:
        """D = sum of eta_t over the whole schedule."""
        return math.fsum(self.etas)

    def cumulative_lr(self) -> np.ndarray:
        return np.cumsum(self.etas)


def _decay_shape(shape: str, eta: float, eta_min: float, n: int, b=0.5, t_h=None):
    """Decay values for decay-phase steps t = 0..n-1, endpoints inclusive at t = n-1."""
    if n <= 0:
        return np.empty(0)
    t = np.arange(n, dtype=float)
    td = max(n - 1, 1)
    if shape == "cosine":
        out = eta_min + 0.5 * (eta - eta_min) * (1.0 + np.cos(np.pi * t / td))
    elif shape == "linear":
        out = eta + (eta_min - eta) * t / td
    elif shape == "one_sqrt":
        out = eta_min + (eta - eta_min) * (1.0 - np.sqrt(t / td))
    elif shape == "inverse_time_optimal":
        if t_h is None or not t_h > 0:
            raise InputError("inverse_time_optimal needs t_h > 0 (or a sharpness to derive it)")
        out = b * eta / (1.0 + t / t_h)
    else:
        raise InputError(f"unknown decay shape {shape!r}")
    if n == 1 and shape != "inverse_time_optimal":
        out[:] = eta_min
    return out


def generate(kind, params: dict, T: Optional[int] = None) -> Schedule:
    """Build a schedule of length T from kind-specific parameters.

    Common keys: eta, eta_min. wsd also takes warmup_steps, stable_steps,
    decay_steps and decay_shape. inverse_time_optimal takes b and t_h, or
    derives t_h = 2/(a eta) from a sharpness ``a``.
    """
    kind = ScheduleKind(kind)
    p = dict(params)
    eta = float(p.get("eta", 0.1))
    eta_min = float(p.get("eta_min", 0.0))
    if not eta > 0:
        raise InputError("schedule.eta must be > 0")
    if eta_min < 0 or eta_min > eta:
        raise InputError("schedule.eta_min must lie in [0, eta]")

    if kind is ScheduleKind.INVERSE_TIME_OPTIMAL:
        b = float(p.get("b", 0.5))
        if not b > 0:
            raise InputError("schedule.b must be > 0")
        t_h = p.get("t_h")
        if t_h is None and "a" in p:
            t_h = 2.0 / (float(p["a"]) * eta)
        p.update(b=b, t_h=t_h)
    if kind is ScheduleKind.WSD:
        w = int(p.get("warmup_steps", 0))
        s = int(p.get("stable_steps", 0))
        d = int(p.get("decay_steps", 0))
        if min(w, s, d) < 0:
            raise InputError("wsd phase lengths must be >= 0")
        if T is None:
            T = w + s + d
        if T != w + s + d:
            raise InputError(f"wsd phases sum to {w + s + d}, schedule length is {T}")
        shape = p.get("decay_shape", "cosine")
        warm = eta * np.arange(1, w + 1) / max(w, 1)
        decay = _decay_shape(shape, eta, eta_min, d, float(p.get("b", 0.5)), p.get("t_h"))
        etas = np.concatenate([warm, np.full(s, eta), decay])
    else:
        if T is None:
            T = int(p.get("decay_steps", p.get("steps", 0)))
        if T < 1:
            raise InputError("schedule length must be >= 1")
        if kind is ScheduleKind.CONSTANT:
            etas = np.full(T, eta)
        elif kind is ScheduleKind.INVERSE_TIME_OPTIMAL:
            etas = _decay_shape("inverse_time_optimal", eta, eta_min, T, p["b"], p["t_h"])
        else:
            etas = _decay_shape(kind.value, eta, eta_min, T)
    if etas.size == 0:
        raise InputError("schedule is empty")
    return Schedule(kind, p, etas)


# ---------------------------------------------------------------------------
# variance maps


def sgd_variance_step(s, eta_t, a, sigma_g):
    """Exact one-step map of the SGD variance on ½ a x²."""
    return (1.0 - eta_t * a) ** 2 * s + eta_t * eta_t * sigma_g * sigma_g


def signgd_variance_step(s, eta_t, a, sigma_g):
    """Gaussian-closure one-step map of the SignGD variance."""
    q = a * a * s + sigma_g * sigma_g
    if q == 0:
        return s + eta_t * eta_t
    return s - 4.0 * eta_t * a * s / (SQRT_2PI * math.sqrt(q)) + eta_t * eta_t


def predict_variance(etas, a: float, sigma_g: float, sigma0_sq: float, family="sgd") -> np.ndarray:
    """σ_t² before each step t and after the last one (length len(etas) + 1)."""
    family = Family.parse(family)
    fn = sgd_variance_step if family is Family.SGD else signgd_variance_step
    out = np.empty(len(etas) + 1)
    s = float(sigma0_sq)
    out[0] = s
    for t, e in enumerate(etas):
        s = fn(s, float(e), a, sigma_g)
        out[t + 1] = s
    return out


def equilibrium_variance(family, a, eta, sigma_g, exact: bool = False) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        st = analytic.steady_sigma(family, a, eta, sigma_g, flat=not exact)
    return st.sigma ** 2


# ---------------------------------------------------------------------------
# optimal decay


@dataclass(frozen=True)
class OptimalDecay:
    """Greedy optimal schedule from the exact recursion plus its 1/t closed form."""

    family: Family
    a: float
    eta: float
    sigma_g: float
    etas: np.ndarray = field(repr=False)
    sigma_sq: np.ndarray = field(repr=False)  # length steps + 1
    t_h: float
    closed_form: Schedule = field(repr=False)

    @property
    def eta0(self) -> float:
        return float(self.etas[0])

    def schedule(self) -> Schedule:
        return Schedule(ScheduleKind.INVERSE_TIME_OPTIMAL,
                        {"eta": self.eta, "source": "recursion", "a": self.a, "sigma_g": self.sigma_g},
                        self.etas)


def optimal_decay_sgd(a: float, eta: float, sigma_g: float, steps: int, exact_init: bool = False) -> OptimalDecay:
    """η_t = aσ_t²/(a²σ_t² + σ_g²), which makes 1/σ_t² grow by a²/σ_g² per step.

    σ₀ is the equilibrium width at eta (flat limit unless ``exact_init``).
    """
    if not sigma_g > 0:
        raise InputError("optimal decay needs sigma_g > 0")
    if steps < 1:
        raise InputError("steps must be >= 1")
    s = equilibrium_variance(Family.SGD, a, eta, sigma_g, exact_init)
    if a * eta > FLAT_LIMIT_WARN:
        warnings.warn(f"a*eta={a * eta:g}: 1/t closed form is a flat-limit approximation", FlatLimitWarning,
                      stacklevel=2)
    g2 = sigma_g * sigma_g
    etas = np.empty(steps)
    sig = np.empty(steps + 1)
    sig[0] = s
    for t in range(steps):
        e = a * s / (a * a * s + g2)
        etas[t] = e
        s = sgd_variance_step(s, e, a, sigma_g)
        sig[t + 1] = s
    t_h = 2.0 / (a * eta)
    closed = generate(ScheduleKind.INVERSE_TIME_OPTIMAL, {"eta": eta, "b": 0.5, "t_h": t_h}, steps)
    etas.setflags(write=False)
    sig.setflags(write=False)
    return OptimalDecay(Family.SGD, a, eta, sigma_g, etas, sig, t_h, closed)


def optimal_decay_signgd(a: float, eta: float, sigma_g: float, steps: int, exact_init: bool = False) -> OptimalDecay:
    """η_t = 2σ_t / (√(2π) sqrt(1 + (σ_g/(aσ_t))²)) on the Gaussian-closure variance map."""
    if not sigma_g > 0:
        raise InputError("optimal decay needs sigma_g > 0")
    if steps < 1:
        raise InputError("steps must be >= 1")
    if a * eta / sigma_g > FLAT_LIMIT_WARN:
        warnings.warn("SignGD optimal decay assumes sigma_g >> a*eta", FlatLimitWarning, stacklevel=2)
    s = equilibrium_variance(Family.SIGNGD, a, eta, sigma_g, exact_init)
    etas = np.empty(steps)
    sig = np.empty(steps + 1)
    sig[0] = s
    for t in range(steps):
        r2 = sigma_g * sigma_g / (a * a * s)
        e = 2.0 * math.sqrt(s) / (SQRT_2PI * math.sqrt(1.0 + r2))
        etas[t] = e
        s = s - (2.0 / math.pi) * s / (1.0 + r2)
        sig[t + 1] = s
    t_h = SQRT_2PI * sigma_g / (a * eta)
    closed = generate(ScheduleKind.INVERSE_TIME_OPTIMAL, {"eta": eta, "b": 0.5, "t_h": t_h}, steps)
    etas.setflags(write=False)
    sig.setflags(write=False)
    return OptimalDecay(Family.SIGNGD, a, eta, sigma_g, etas, sig, t_h, closed)


def optimal_decay(family, a, eta, sigma_g, steps, exact_init=False) -> OptimalDecay:
    family = Family.parse(family)
    if family is Family.SGD:
        return optimal_decay_sgd(a, eta, sigma_g, steps, exact_init)
    if family is Family.SIGNGD:
        return optimal_decay_signgd(a, eta, sigma_g, steps, exact_init)
    raise InputError("optimal decay is defined for sgd and signgd")


# ---------------------------------------------------------------------------
# timescales


@dataclass(frozen=True)
class DecayTime:
    sigma_based: float  # canonical
    eta_crossing: float
    bound: float  # supremum over eta


def decay_time(a: float, eta: float, eta_min: float, family="sgd", sigma_g: Optional[float] = None) -> DecayTime:
    """Steps of optimal decay for the flat-limit variance to fall from eq(eta) to eq(eta_min).

    SGD: T_d = (2/(a η_min))(1 - η_min/η). Under the 1/t closed form this is also
    the step at which η_t reaches η_min/2. SignGD: T_d = √(2π)σ_g/(a η_min)·(1 - η_min/η).
    """
    family = Family.parse(family)
    if not (a > 0 and eta > 0 and eta_min > 0):
        raise InputError("a, eta and eta_min must be > 0")
    if eta_min > eta:
        raise InputError("eta_min must not exceed eta")
    if family is Family.SGD:
        bound = 2.0 / (a * eta_min)
        t_h = 2.0 / (a * eta)
    elif family is Family.SIGNGD:
        if sigma_g is None or not sigma_g > 0:
            raise InputError("SignGD decay time needs sigma_g > 0")
        bound = SQRT_2PI * sigma_g / (a * eta_min)
        t_h = SQRT_2PI * sigma_g / (a * eta)
    else:
        raise InputError("decay time is defined for sgd and signgd")
    td = bound * (1.0 - eta_min / eta)
    crossing = t_h * (eta / eta_min - 1.0)
    return DecayTime(td, crossing, bound)


def decay_steps_sgd(a: float, eta: float, eta_min: float, rtol: float = 1e-12) -> int:
    """First integer t at which the exact SGD recursion (flat-limit start) reaches eq(eta_min)."""
    if eta_min >= eta:
        return 0
    g = 1.0  # the count is independent of sigma_g
    inv = 2.0 * a / (eta * g * g)
    target = 2.0 * a / (eta_min * g * g)
    step = a * a / (g * g)
    t = (target - inv) / step
    n = math.ceil(t * (1.0 - rtol))
    return max(n, 0)


def two_temperature_relaxation(a: float, eta_A: float, eta_B: float, sigma_g: float, t):
    """Thermal loss after a switch from eta_A to eta_B (flat limit).

    ℓ_t = ℓ(η_B) + (ℓ(η_A) - ℓ(η_B)) exp(-2 a η_B t).
    """
    if not (a > 0 and eta_A > 0 and eta_B > 0):
        raise InputError("a, eta_A and eta_B must be > 0")
    if eta_B > eta_A:
        raise InputError("eta_B must not exceed eta_A")
    lA = analytic.thermal_loss(Family.SGD, eta_A, sigma_g)
    lB = analytic.thermal_loss(Family.SGD, eta_B, sigma_g)
    out = lB + (lA - lB) * np.exp(-2.0 * a * eta_B * np.asarray(t, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def continuous_optimal_schedule(a: float, heat_capacity_C: float, loss0: float, t):
    """(loss(t), eta(t)) solving dℓ/dt = -(a/2C)ℓ² with η* = ℓ/(2C)."""
    if not (a > 0 and heat_capacity_C > 0 and loss0 > 0):
        raise InputError("a, C and loss0 must be > 0")
    t = np.asarray(t, dtype=float)
    C = heat_capacity_C
    loss = 1.0 / (1.0 / loss0 + a * t / (2.0 * C))
    eta = 1.0 / (2.0 * C / loss0 + a * t)
    if t.ndim == 0:
        return float(loss), float(eta)
    return loss, eta


def schedule_to_dict(s: Schedule) -> dict:
    d = {"kind": s.kind.value}
    d.update({k: v for k, v in s.params.items() if v is not None})
    d["steps"] = len(s)
    return d
