"""Single-step noisy update rules: SGD, SignGD and SGD with a linear attraction force."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import rng
from .landscape import InputError

DIVERGENCE_THRESHOLD = 1e12


class Family(str, Enum):
    SGD = "sgd"
    SIGNGD = "signgd"
    SGD_ATTRACT = "sgd_attract"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"sgdattract": "sgd_attract", "attract": "sgd_attract", "sign": "signgd"}
        return cls(aliases.get(key, key))


class DivergenceError(RuntimeError):
    """Position left the finite region; carries the step index and the last finite state."""

    def __init__(self, step: int, last_state=None, message: str = ""):
        self.step = step
        self.last_state = last_state
        super().__init__(message or f"iterate diverged at step {step}")


@dataclass(frozen=True)
class OptimizerSpec:
    family: Family = Family.SGD
    eta: float = 0.1
    sigma_g: float = 0.0
    beta: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not self.eta > 0:
            raise InputError("optimizer.eta must be > 0")
        if not self.sigma_g >= 0:
            raise InputError("optimizer.sigma_g must be >= 0")
        if self.family is Family.SGD_ATTRACT:
            beta = 0.0 if self.beta is None else float(self.beta)
            gamma = 0.0 if self.gamma is None else float(self.gamma)
            if not 0 <= beta < 1:
                raise InputError("optimizer.beta must lie in [0, 1)")
            if gamma < 0:
                raise InputError("optimizer.gamma must be >= 0")
            object.__setattr__(self, "beta", beta)
            object.__setattr__(self, "gamma", gamma)
        elif self.beta is not None or self.gamma is not None:
            raise InputError("optimizer.beta/gamma only apply to sgd_attract")

    def with_eta(self, eta: float) -> "OptimizerSpec":
        return replace(self, eta=eta)

    def to_dict(self) -> dict:
        d = {"family": self.family.value, "eta": self.eta, "sigma_g": self.sigma_g}
        if self.family is Family.SGD_ATTRACT:
            d.update(beta=self.beta, gamma=self.gamma)
        return d


@dataclass(frozen=True)
class OptimizerState:
    position: np.ndarray
    ema: Optional[np.ndarray] = None
    step_count: int = 0

    @classmethod
    def initial(cls, spec: OptimizerSpec, position) -> "OptimizerState":
        pos = np.array(position, dtype=float)
        ema = pos.copy() if spec.family is Family.SGD_ATTRACT else None
        return cls(pos, ema, 0)


def apply_update(family: Family, position, ema, grad, eta_t, sigma_g, noise, beta=0.0, gamma=0.0):
    """Array-level update shared by ``step`` and the ensemble engine.

    Returns ``(new_position, new_ema)``; inputs are not modified.
    """
    if family is Family.SGD:
        return position - eta_t * (grad + sigma_g * noise), ema
    if family is Family.SIGNGD:
        return position - eta_t * np.sign(grad + sigma_g * noise), ema
    new_ema = beta * ema + (1.0 - beta) * position
    return position - eta_t * (grad + gamma * (position - new_ema) + sigma_g * noise), new_ema


def step(spec: OptimizerSpec, state: OptimizerState, landscape, eta_t: float, noise) -> OptimizerState:
    """One update with learning rate ``eta_t`` and standard-normal ``noise`` (one per coordinate)."""
    if not eta_t >= 0:
        raise InputError("eta_t must be >= 0")
    noise = np.asarray(noise, dtype=float)
    if noise.shape != state.position.shape:
        raise InputError(f"noise shape {noise.shape} != position shape {state.position.shape}")
    grad = landscape.gradient(state.position)
    pos, ema = apply_update(spec.family, state.position, state.ema, grad, eta_t, spec.sigma_g, noise,
                            spec.beta or 0.0, spec.gamma or 0.0)
    if not np.all(np.abs(pos) <= DIVERGENCE_THRESHOLD):
        raise DivergenceError(state.step_count, state)
    return OptimizerState(pos, ema, state.step_count + 1)


def run(spec: OptimizerSpec, state0: OptimizerState, landscape, schedule, steps: int, seed: int,
        particle: int = 0) -> list[OptimizerState]:
    """Iterate ``step`` for ``steps`` steps; returns states 0..steps.

    ``schedule`` is anything indexable by step (a ``Schedule`` or a sequence of
    learning rates). Noise for step t comes from the counter stream
    ``(seed, t, particle)``, so reruns are identical.
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    etas = getattr(schedule, "etas", schedule)
    if len(etas) < steps:
        raise InputError(f"schedule has {len(etas)} entries, need {steps}")
    dim = state0.position.size
    traj = [state0]
    state = state0
    for t in range(steps):
        w = rng.normals(seed, state.step_count, particle * dim, dim).reshape(state.position.shape)
        try:
            state = step(spec, state, landscape, float(etas[t]), w)
        except DivergenceError as err:
            raise DivergenceError(err.step, state) from None
        traj.append(state)
    return traj
