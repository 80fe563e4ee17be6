"""Toy loss landscapes: diagonal quadratics and the 2D river valley.

Points are numpy arrays whose last axis is the parameter dimension, so a whole
ensemble of shape ``(particles, dim)`` can be evaluated in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class InputError(ValueError):
    """Invalid argument or dimension mismatch."""


class SharpnessKind(str, Enum):
    CONSTANT = "constant"
    LINEAR_ABS = "linear_abs"
    EXP = "exp"


class BottomKind(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"


@dataclass(frozen=True)
class SharpnessProfile:
    """Valley curvature a(y) along the river.

    constant:   a(y) = a0
    linear_abs: a(y) = a0 + b|y|   (a'(0) taken as 0)
    exp:        a(y) = exp(alpha y)
    """

    kind: SharpnessKind = SharpnessKind.CONSTANT
    a0: float = 1.0
    b: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SharpnessKind(self.kind))
        if self.kind is SharpnessKind.CONSTANT and self.a0 <= 0:
            raise InputError("sharpness a0 must be positive")
        if self.kind is SharpnessKind.LINEAR_ABS and (self.a0 <= 0 or self.b < 0):
            raise InputError("linear_abs profile needs a0 > 0 and b >= 0")

    def value(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is SharpnessKind.CONSTANT:
            return np.full_like(y, self.a0)
        if self.kind is SharpnessKind.LINEAR_ABS:
            return self.a0 + self.b * np.abs(y)
        return np.exp(self.alpha * y)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is SharpnessKind.CONSTANT:
            return np.zeros_like(y)
        if self.kind is SharpnessKind.LINEAR_ABS:
            return self.b * np.sign(y)
        return self.alpha * np.exp(self.alpha * y)


@dataclass(frozen=True)
class BottomProfile:
    """Riverbed height c(y): constant ``level`` or linear ``level - c*y``."""

    kind: BottomKind = BottomKind.LINEAR
    c: float = 0.0
    level: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BottomKind(self.kind))

    def value(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is BottomKind.CONSTANT:
            return np.full_like(y, self.level)
        return self.level - self.c * y

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is BottomKind.CONSTANT:
            return np.zeros_like(y)
        return np.full_like(y, -self.c)


def _check_dim(point, dim):
    point = np.asarray(point, dtype=float)
    if point.ndim == 0 or point.shape[-1] != dim:
        raise InputError(f"point has trailing dimension {point.shape[-1:] or '()'}, landscape expects {dim}")
    return point


@dataclass(frozen=True)
class DiagonalQuadraticLandscape:
    """loss(theta) = sum_i a_i theta_i^2 / 2."""

    sharpness: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.sharpness, dtype=float).reshape(-1)
        if a.size == 0 or not np.all(a > 0) or not np.all(np.isfinite(a)):
            raise InputError("every sharpness a_i must be finite and > 0")
        a.setflags(write=False)
        object.__setattr__(self, "sharpness", a)

    @classmethod
    def isotropic(cls, a: float, n: int) -> "DiagonalQuadraticLandscape":
        return cls(np.full(int(n), float(a)))

    @classmethod
    def log_spectrum(cls, n: int, lo: float = -2.0, hi: float = 2.0) -> "DiagonalQuadraticLandscape":
        """a_i = 10**(lo + (hi - lo) i / n) for i = 1..n (the anisotropic toy)."""
        i = np.arange(1, int(n) + 1)
        return cls(10.0 ** (lo + (hi - lo) * i / n))

    @property
    def n(self) -> int:
        return self.sharpness.size

    dim = n

    def loss(self, theta):
        theta = _check_dim(theta, self.n)
        return 0.5 * np.sum(self.sharpness * theta * theta, axis=-1)

    def fast_loss(self, theta):
        return self.loss(theta)

    def slow_loss(self, theta):
        theta = _check_dim(theta, self.n)
        return np.zeros(theta.shape[:-1])

    def gradient(self, theta):
        theta = _check_dim(theta, self.n)
        return self.sharpness * theta

    def curvature(self, theta=None):
        """Per-coordinate curvature of the fast directions."""
        return self.sharpness


@dataclass(frozen=True)
class RiverValleyLandscape:
    """loss(x, y) = c(y) + a(y) x^2 / 2 with fast coordinate x (index 0) and slow y (index 1)."""

    sharpness_profile: SharpnessProfile = field(default_factory=SharpnessProfile)
    bottom_profile: BottomProfile = field(default_factory=BottomProfile)

    dim = 2

    def split(self, point):
        p = _check_dim(point, 2)
        return p[..., 0], p[..., 1]

    def fast_loss(self, point):
        x, y = self.split(point)
        return 0.5 * self.sharpness_profile.value(y) * x * x

    def slow_loss(self, point):
        _, y = self.split(point)
        return self.bottom_profile.value(y)

    def loss(self, point):
        return self.fast_loss(point) + self.slow_loss(point)

    def loss_parts(self, point):
        """(total, fast, slow) loss."""
        lf = self.fast_loss(point)
        ls = self.slow_loss(point)
        return lf + ls, lf, ls

    def gradient(self, point):
        x, y = self.split(point)
        g = np.empty(np.broadcast(x, y).shape + (2,))
        g[..., 0] = self.sharpness_profile.value(y) * x
        g[..., 1] = self.bottom_profile.derivative(y) + 0.5 * self.sharpness_profile.derivative(y) * x * x
        return g

    def curvature(self, point):
        _, y = self.split(point)
        return self.sharpness_profile.value(y)


Landscape = DiagonalQuadraticLandscape | RiverValleyLandscape


def landscape_to_dict(land) -> dict:
    if isinstance(land, DiagonalQuadraticLandscape):
        a = land.sharpness
        if np.all(a == a[0]):
            return {"kind": "quadratic", "n": land.n, "sharpness_spectrum": "isotropic", "a0": float(a[0])}
        return {"kind": "quadratic", "n": land.n, "sharpness_spectrum": "explicit",
                "sharpness": [float(v) for v in a]}
    sp, bp = land.sharpness_profile, land.bottom_profile
    return {"kind": "river_valley", "sharpness_profile": sp.kind.value, "a0": sp.a0, "b": sp.b,
            "alpha": sp.alpha, "bottom_profile": bp.kind.value, "c": bp.c, "level": bp.level}


def landscape_from_dict(d: dict):
    kind = d.get("kind", "quadratic")
    if kind == "quadratic":
        n = int(d.get("n", 1))
        spectrum = d.get("sharpness_spectrum", "isotropic")
        if spectrum == "isotropic":
            return DiagonalQuadraticLandscape.isotropic(float(d.get("a0", 1.0)), n)
        if spectrum == "log":
            return DiagonalQuadraticLandscape.log_spectrum(n, float(d.get("spectrum_lo", -2.0)),
                                                           float(d.get("spectrum_hi", 2.0)))
        if spectrum == "explicit":
            return DiagonalQuadraticLandscape(np.asarray(d["sharpness"], dtype=float))
        raise InputError(f"unknown sharpness_spectrum {spectrum!r}")
    if kind == "river_valley":
        sp = SharpnessProfile(d.get("sharpness_profile", "constant"), float(d.get("a0", 1.0)),
                              float(d.get("b", 0.0)), float(d.get("alpha", 1.0)))
        bp = BottomProfile(d.get("bottom_profile", "linear"), float(d.get("c", 0.0)), float(d.get("level", 0.0)))
        return RiverValleyLandscape(sp, bp)
    raise InputError(f"unknown landscape kind {kind!r}")
