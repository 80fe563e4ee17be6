"""Experiment harness: (b, t_h) phase diagram, anisotropic decay, scaling fits,
schedule shoot-outs and final-loss decomposition."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import analytic, schedule as sched_mod, thermo
from .analytic import FlatLimitWarning
from .landscape import DiagonalQuadraticLandscape, InputError, RiverValleyLandscape
from .optimizer import DivergenceError, Family, OptimizerSpec
from .sim import EnsembleConfig, EnsembleStats, InitKind, measure_steady_width, run_ensemble


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    n: int
    spacing: str = "linear"

    def __post_init__(self):
        if self.n < 2:
            raise InputError(f"axis {self.name}: n must be >= 2")
        if self.spacing not in ("linear", "log"):
            raise InputError(f"axis {self.name}: spacing must be linear or log")
        if self.spacing == "log" and not (self.lo > 0 and self.hi > 0):
            raise InputError(f"axis {self.name}: log spacing needs positive bounds")

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.logspace(math.log10(self.lo), math.log10(self.hi), self.n)
        return np.linspace(self.lo, self.hi, self.n)


@dataclass(frozen=True)
class SweepGrid:
    axes: tuple
    fixed: dict = field(default_factory=dict)
    seeds: tuple = (0, 1, 2)

    def shape(self):
        return tuple(ax.n for ax in self.axes)


DEFAULT_B_AXIS = Axis("b", 0.1, 1.0, 19, "linear")
DEFAULT_TH_AXIS = Axis("t_h", 1.0, 1000.0, 25, "log")


@dataclass(frozen=True)
class IsotropicSetup:
    """Loss Σ ½ a θ_i² in n dimensions, θ_i ~ N(0, init_sigma²), equilibrated at a constant eta."""

    a: float = 2.0
    n: int = 10_000
    eta: float = 0.1
    sigma_g: float = 0.1
    equilibration_steps: int = 10_000
    decay_steps: int = 100
    init_sigma: float = 1.0
    particles: int = 1

    def landscape(self) -> DiagonalQuadraticLandscape:
        return DiagonalQuadraticLandscape.isotropic(self.a, self.n)

    def spec(self) -> OptimizerSpec:
        return OptimizerSpec(Family.SGD, self.eta, self.sigma_g)


def equilibrate(setup: IsotropicSetup, seed: int, landscape=None) -> np.ndarray:
    """State after the constant-eta phase, shape (particles, n)."""
    land = setup.landscape() if landscape is None else landscape
    cfg = EnsembleConfig(n_particles=setup.particles, steps=setup.equilibration_steps, seed=seed,
                         init=InitKind.GAUSSIAN, mu=0.0, sigma=setup.init_sigma,
                         record_every=setup.equilibration_steps, keep_final=True)
    st = run_ensemble(land, setup.spec(), np.full(setup.equilibration_steps, setup.eta), cfg)
    return st.final_positions


def decay_from(state: np.ndarray, etas, setup: IsotropicSetup, seed: int, landscape=None,
               keep_final: bool = False) -> EnsembleStats:
    """Continue from an equilibrated state with common random numbers (same seed, shifted steps)."""
    land = setup.landscape() if landscape is None else landscape
    steps = len(etas)
    cfg = EnsembleConfig(n_particles=state.shape[0], steps=steps, seed=seed, init=InitKind.STATE,
                         init_state=state, record_every=steps, step_offset=setup.equilibration_steps,
                         keep_final=keep_final)
    return run_ensemble(land, setup.spec(), etas, cfg)


def _phase_cell(job):
    state, setup, seed, b, th = job
    etas = sched_mod.generate("inverse_time_optimal", {"eta": setup.eta, "b": b, "t_h": th}, setup.decay_steps).etas
    try:
        st = decay_from(state, etas, setup, seed)
    except DivergenceError:
        return float("nan")
    return float(st.total_loss[-1])


@dataclass
class PhaseDiagram:
    b: np.ndarray
    t_h: np.ndarray
    seeds: tuple
    loss: np.ndarray  # (seeds, nb, nth), NaN marks a diverged cell
    argmin: list  # per seed (b, t_h)
    argmin_index: list

    def mean_loss(self) -> np.ndarray:
        return np.nanmean(self.loss, axis=0)

    def slice_b(self, t_h: float = 10.0) -> np.ndarray:
        """Loss along b at the t_h grid value nearest to ``t_h`` (seed-averaged)."""
        j = int(np.argmin(np.abs(np.log(self.t_h / t_h))))
        return self.mean_loss()[:, j]

    def slice_th(self, b: float = 0.5) -> np.ndarray:
        i = int(np.argmin(np.abs(self.b - b)))
        return self.mean_loss()[i, :]

    @staticmethod
    def normalized_range(v: np.ndarray) -> float:
        v = v[np.isfinite(v)]
        return float((v.max() - v.min()) / v.min())


def phase_diagram(b_grid: Sequence[float] = None, th_grid: Sequence[float] = None,
                  setup: IsotropicSetup = IsotropicSetup(), seeds: Sequence[int] = (0, 1, 2),
                  workers: int = 1) -> PhaseDiagram:
    """Final loss of η_t = b η/(1 + t/t_h) after ``setup.decay_steps`` steps, for every (b, t_h)."""
    b = np.asarray(DEFAULT_B_AXIS.values() if b_grid is None else b_grid, dtype=float)
    th = np.asarray(DEFAULT_TH_AXIS.values() if th_grid is None else th_grid, dtype=float)
    loss = np.empty((len(seeds), b.size, th.size))
    for k, seed in enumerate(seeds):
        state = equilibrate(setup, seed)
        jobs = [(state, setup, seed, bi, tj) for bi in b for tj in th]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                vals = list(ex.map(_phase_cell, jobs, chunksize=8))
        else:
            vals = [_phase_cell(j) for j in jobs]
        loss[k] = np.asarray(vals).reshape(b.size, th.size)
    idx, arg = [], []
    for k in range(len(seeds)):
        i, j = np.unravel_index(np.nanargmin(loss[k]), loss[k].shape)
        idx.append((int(i), int(j)))
        arg.append((float(b[i]), float(th[j])))
    return PhaseDiagram(b, th, tuple(seeds), loss, arg, idx)


def predicted_decay_loss(setup: IsotropicSetup, etas, exact_init: bool = True) -> float:
    """Deterministic total loss from the exact SGD variance recursion."""
    s0 = sched_mod.equilibrium_variance(Family.SGD, setup.a, setup.eta, setup.sigma_g, exact=exact_init)
    s = sched_mod.predict_variance(etas, setup.a, setup.sigma_g, s0)[-1]
    return 0.5 * setup.a * s * setup.n


# ---------------------------------------------------------------------------
# anisotropic spectrum


@dataclass
class AnisotropicResult:
    t_h: np.ndarray
    bin_edges: np.ndarray  # sharpness decade edges
    bin_loss: np.ndarray  # (n_th, n_bins) mean per-direction final loss
    bin_predicted: np.ndarray  # same, from the exact variance recursion
    equipartition_spread: np.ndarray  # per t_h: max/min - 1 over the large-a bins
    small_exceeds_large: np.ndarray
    small_decreasing: bool


def anisotropic_decay(landscape: Optional[DiagonalQuadraticLandscape] = None, b: float = 0.5,
                      th_list: Sequence[float] = (10, 100, 1000), eta: float = 0.01, sigma_g: float = 0.1,
                      equilibration_steps: int = 10_000, decay_steps: int = 1000, particles: int = 4,
                      seed: int = 0, large_a: float = 1.0) -> AnisotropicResult:
    """Per-direction final loss of the 1/t decay on a log-uniform sharpness spectrum, binned by decade."""
    land = DiagonalQuadraticLandscape.log_spectrum(10_000) if landscape is None else landscape
    a = land.sharpness
    if np.any(a * eta >= 2):
        raise InputError(f"eta={eta} is beyond the edge of stability for a_max={a.max():g}")
    lo, hi = math.floor(math.log10(a.min())), math.ceil(math.log10(a.max()))
    edges = 10.0 ** np.arange(lo, hi + 1)
    which = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, edges.size - 2)
    setup = IsotropicSetup(a=1.0, n=a.size, eta=eta, sigma_g=sigma_g, equilibration_steps=equilibration_steps,
                           decay_steps=decay_steps, particles=particles)
    state = equilibrate(setup, seed, land)
    th = np.asarray(th_list, dtype=float)
    nb = edges.size - 1
    meas = np.empty((th.size, nb))
    pred = np.empty((th.size, nb))
    # variance after equilibration from N(0,1), per direction
    r = (1.0 - eta * a) ** 2
    eq = sigma_g ** 2 / (a * (2.0 / eta - a))
    v0 = eq + (1.0 - eq) * r ** equilibration_steps
    for k, tk in enumerate(th):
        etas = sched_mod.generate("inverse_time_optimal", {"eta": eta, "b": b, "t_h": tk}, decay_steps).etas
        st = decay_from(state, etas, setup, seed, land, keep_final=True)
        per_dir = 0.5 * a * np.mean(st.final_positions ** 2, axis=0)
        v = v0.copy()
        for e in etas:
            v = (1.0 - e * a) ** 2 * v + e * e * sigma_g ** 2
        per_pred = 0.5 * a * v
        for j in range(nb):
            meas[k, j] = per_dir[which == j].mean()
            pred[k, j] = per_pred[which == j].mean()
    large = edges[:-1] >= large_a
    spread = meas[:, large].max(axis=1) / meas[:, large].min(axis=1) - 1.0
    exceeds = meas[:, 0] > meas[:, -1]
    decreasing = bool(np.all(np.diff(meas[:, 0]) < 0))
    return AnisotropicResult(th, edges, meas, pred, spread, exceeds, decreasing)


# ---------------------------------------------------------------------------
# scaling laws


@dataclass
class ScalingFit:
    family: str
    axis: str
    values: np.ndarray
    sigma: np.ndarray
    sigma_se: np.ndarray
    slope: float
    slope_se: float


def loglog_slope(x, y, y_se=None) -> tuple[float, float]:
    """OLS slope of log y on log x and its standard error."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    X = np.vstack([np.ones_like(lx), lx]).T
    coef, res, *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    dof = max(lx.size - 2, 1)
    s2 = float(resid @ resid) / dof
    if y_se is not None:
        # propagate per-point sampling error as a floor on the residual variance
        rel = np.asarray(y_se, float) / np.asarray(y, float)
        s2 = max(s2, float(np.mean(rel ** 2)))
    cov = s2 * np.linalg.inv(X.T @ X)
    return float(coef[1]), float(math.sqrt(cov[1, 1]))


def scaling_regression(family, axis: str, grid: Sequence[float], a: float = 1.0, eta: float = 0.01,
                       sigma_g: float = 1.0, n_particles: int = 2000, seed: int = 0, burn_in_tc: float = 10.0,
                       sample_tc: float = 40.0, workers: int = 1) -> ScalingFit:
    """Measured stationary width against one parameter, with a log-log slope fit."""
    family = Family.parse(family)
    if axis not in ("eta", "a", "sigma_g"):
        raise InputError("axis must be eta, a or sigma_g")
    grid = np.asarray(grid, dtype=float)
    if grid.max() / grid.min() < 99.9:
        warnings.warn("scaling grid spans less than two decades", FlatLimitWarning, stacklevel=2)
    sig, se = np.empty(grid.size), np.empty(grid.size)
    for i, v in enumerate(grid):
        p = {"a": a, "eta": eta, "sigma_g": sigma_g}
        p[axis] = float(v)
        flat = p["a"] * p["eta"] if family is Family.SGD else p["a"] * p["eta"] / p["sigma_g"]
        if flat > analytic.FLAT_LIMIT_WARN:
            warnings.warn(f"{axis}={v:g} is outside the flat regime", FlatLimitWarning, stacklevel=2)
        spec = OptimizerSpec(family, p["eta"], p["sigma_g"])
        t_c = analytic.relaxation_time(family, p["a"], p["eta"], p["sigma_g"])
        burn = int(math.ceil(burn_in_tc * t_c))
        samples = int(math.ceil(sample_tc * t_c))
        w = measure_steady_width(DiagonalQuadraticLandscape.isotropic(p["a"], 1), spec, burn, samples,
                                 seed + i, n_particles=n_particles, workers=workers, init=InitKind.EQUILIBRIUM)
        sig[i], se[i] = w.sigma, w.se
    slope, slope_se = loglog_slope(grid, sig, se)
    return ScalingFit(family.value, axis, grid, sig, se, slope, slope_se)


# ---------------------------------------------------------------------------
# schedule shoot-out


@dataclass
class ShootoutRow:
    name: str
    final_loss: float
    se: float
    lr_sum: float
    eta_last: float


def default_shootout_schedules(setup: IsotropicSetup, steps: Optional[int] = None) -> dict:
    """Optimal 1/t decay plus cosine/linear/1-sqrt baselines sharing eta, eta_min and length."""
    T = setup.decay_steps if steps is None else steps
    th = 2.0 / (setup.a * setup.eta)
    opt = sched_mod.generate("inverse_time_optimal", {"eta": setup.eta, "b": 0.5, "t_h": th}, T)
    eta_min = float(opt.etas[-1])
    out = {"optimal_1_over_t": opt}
    for kind in ("cosine", "linear", "one_sqrt"):
        out[kind] = sched_mod.generate(kind, {"eta": setup.eta, "eta_min": eta_min}, T)
    out["linear_to_zero"] = sched_mod.generate("linear", {"eta": setup.eta, "eta_min": 0.0}, T)
    return out


def schedule_shootout(schedules: dict, setup: IsotropicSetup, seed: int = 0) -> list[ShootoutRow]:
    """Final loss of each schedule from one shared equilibrated state, common random numbers."""
    state = equilibrate(setup, seed)
    rows = []
    for name, s in schedules.items():
        st = decay_from(state, s.etas, setup, seed, keep_final=True)
        per_particle = setup.landscape().loss(st.final_positions)
        se = float(per_particle.std(ddof=1) / math.sqrt(per_particle.size)) if per_particle.size > 1 else float("nan")
        rows.append(ShootoutRow(name, float(per_particle.mean()), se, s.lr_sum, float(s.etas[-1])))
    return rows


# ---------------------------------------------------------------------------
# final-loss decomposition


@dataclass(frozen=True)
class DecompositionReport:
    D: float
    eta_min: float
    measured_fast_loss: float
    predicted_fast_loss: float
    delta_anneal: float
    measured_slow_loss: float
    drift_slow_loss: float
    delta_entropic: float
    quasi_static_slow_loss: Optional[float] = None
    anneal_flag: bool = False
    entropic_flag: bool = False


def _gradient_flow_slow_loss(land: RiverValleyLandscape, etas, y0: float) -> float:
    y = float(y0)
    for e in etas:
        y = y - float(e) * float(land.bottom_profile.derivative(y))
    return float(land.bottom_profile.value(y))


def decomposition_report(landscape, spec: OptimizerSpec, etas, stats: EnsembleStats, y0: float = 0.0,
                         eta_min: Optional[float] = None, flag_fraction: float = 0.05) -> DecompositionReport:
    """Split a finished run's final loss into ℓ(D, η_min) and the two residuals.

    The fast part is compared with the equilibrium thermal loss at ``eta_min``
    (default: the last learning rate) summed over valley directions. The slow
    part is compared with plain gradient descent on the riverbed c(y) with the
    same learning rates, so the slow residual isolates the entropic drift. A
    greedy-optimal schedule leaves the fast part at the equilibrium of twice its
    last rate; pass ``eta_min`` explicitly in that case.
    """
    etas = np.asarray(getattr(etas, "etas", etas), dtype=float)
    D = float(math.fsum(etas))
    e_min = float(etas[-1]) if eta_min is None else float(eta_min)
    fam = spec.family
    if isinstance(landscape, RiverValleyLandscape):
        n_fast = 1
        a_end = float(landscape.sharpness_profile.value(stats.mean[-1, 1]))
    else:
        n_fast = landscape.n
        a_end = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        pred_fast = n_fast * analytic.thermal_loss(fam, e_min, spec.sigma_g)
    meas_fast = float(stats.thermal_loss[-1])
    meas_slow = float(stats.slow_loss[-1])
    if isinstance(landscape, RiverValleyLandscape):
        flow_slow = _gradient_flow_slow_loss(landscape, etas, y0)
        ys = thermo.drift_along_schedule(landscape, fam, spec.sigma_g, etas, y0)
        qs = float(landscape.bottom_profile.value(ys[-1]))
    else:
        flow_slow, qs = 0.0, None
    d_anneal = meas_fast - pred_fast
    d_ent = meas_slow - flow_slow
    anneal_flag = abs(d_anneal) > flag_fraction * abs(pred_fast)
    ent_flag = abs(d_ent) > flag_fraction * max(abs(flow_slow), 1e-300)
    return DecompositionReport(D, e_min, meas_fast, pred_fast, d_anneal, meas_slow, flow_slow, d_ent, qs,
                               bool(anneal_flag), bool(ent_flag))


# ---------------------------------------------------------------------------
# output helpers


def provenance(params: dict) -> tuple[str, list[str]]:
    """SHA-256 of the canonical JSON of ``params`` and comment lines listing them."""
    blob = json.dumps(params, sort_keys=True, default=_jsonable)
    digest = hashlib.sha256(blob.encode()).hexdigest()
    lines = [f"# config_sha256 = {digest}"] + [f"# {k} = {json.dumps(v, default=_jsonable)}"
                                               for k, v in sorted(params.items())]
    return digest, lines


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
