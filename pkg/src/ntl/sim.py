"""Seeded ensemble Monte Carlo over (landscape, optimizer, schedule).

Particles are simulated in fixed-size blocks. The noise for particle ``i`` at
step ``t`` comes from the counter stream ``(seed, step_offset + t, i)``, so a
block's trajectory does not depend on which worker runs it, and block results
are merged in block order. Output is identical for any worker count.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import analytic, rng
from .analytic import FlatLimitWarning
from .landscape import DiagonalQuadraticLandscape, InputError, RiverValleyLandscape
from .optimizer import DIVERGENCE_THRESHOLD, DivergenceError, Family, OptimizerSpec, apply_update
from .schedule import Schedule, generate
from .stats import MomentAccumulator, reduce_in_order

# report divergence when at least this fraction of particles is lost
DIVERGENCE_REPORT_FRACTION = 1e-3


class InitKind(str, Enum):
    DELTA = "delta"
    GAUSSIAN = "gaussian"
    EQUILIBRIUM = "equilibrium"
    STATE = "state"


@dataclass(frozen=True)
class EnsembleConfig:
    n_particles: int = 1000
    steps: int = 1000
    seed: int = 0
    init: InitKind = InitKind.EQUILIBRIUM
    x0: float = 0.0  # delta position (all coordinates), or river-valley x for delta init
    y0: float = 0.0  # river-valley slow coordinate for delta and equilibrium init
    mu: float = 0.0
    sigma: float = 1.0
    init_eta: Optional[float] = None  # equilibrium temperature; defaults to the optimizer eta
    init_exact: bool = True  # exact-width equilibrium rather than flat limit
    record_every: int = 10
    block_size: Optional[int] = None
    group_size: Optional[int] = None  # moments also kept per group of this many particles
    workers: int = 1
    step_offset: int = 0
    noise_scale: Optional[tuple] = None  # per-coordinate multiplier on sigma_g
    init_state: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    keep_final: bool = False

    def __post_init__(self):
        object.__setattr__(self, "init", InitKind(self.init))
        if int(self.n_particles) < 1:
            raise InputError("ensemble.n_particles must be >= 1")
        if int(self.steps) < 1:
            raise InputError("ensemble.steps must be >= 1")
        if int(self.record_every) < 1:
            raise InputError("ensemble.record_every must be >= 1")
        if self.block_size is not None and int(self.block_size) < 1:
            raise InputError("ensemble.block_size must be >= 1")
        if self.group_size is not None and int(self.group_size) < 1:
            raise InputError("ensemble.group_size must be >= 1")
        if int(self.workers) < 1:
            raise InputError("ensemble.workers must be >= 1")
        if self.init is InitKind.STATE and self.init_state is None:
            raise InputError("init=state needs init_state")
        if self.init is InitKind.GAUSSIAN and self.sigma < 0:
            raise InputError("ensemble.sigma must be >= 0")
        if self.noise_scale is not None:
            object.__setattr__(self, "noise_scale", tuple(float(v) for v in self.noise_scale))

    def to_dict(self) -> dict:
        d = {"n_particles": self.n_particles, "steps": self.steps, "seed": self.seed, "init": self.init.value,
             "record_every": self.record_every, "workers": self.workers}
        if self.init is InitKind.DELTA:
            d.update(x0=self.x0, y0=self.y0)
        elif self.init is InitKind.GAUSSIAN:
            d.update(mu=self.mu, sigma=self.sigma)
        elif self.init is InitKind.EQUILIBRIUM:
            d.update(y0=self.y0, init_exact=self.init_exact)
            if self.init_eta is not None:
                d["init_eta"] = self.init_eta
        if self.block_size is not None:
            d["block_size"] = self.block_size
        if self.group_size is not None:
            d["group_size"] = self.group_size
        if self.step_offset:
            d["step_offset"] = self.step_offset
        if self.noise_scale is not None:
            d["noise_scale"] = list(self.noise_scale)
        return d


@dataclass(frozen=True)
class DivergenceReport:
    count: int
    fraction: float
    histogram: dict  # step -> particles lost at that step


@dataclass
class EnsembleStats:
    """Moment trajectories; row r is the state after ``t[r]`` steps.

    ``eta[r]`` is the learning rate of the last applied step (eta_0 at t = 0)
    and ``lr_sum[r]`` the sum of all rates applied so far.
    """

    t: np.ndarray
    eta: np.ndarray
    mean: np.ndarray  # (R, dim)
    var: np.ndarray  # (R, dim), population variance over surviving particles
    excess_kurtosis: np.ndarray
    thermal_loss: np.ndarray
    thermal_loss_se: np.ndarray
    slow_loss: np.ndarray
    total_loss: np.ndarray
    lr_sum: np.ndarray
    n_alive: np.ndarray
    block_var: np.ndarray = field(repr=False)  # (groups, R, dim); one group per block unless group_size is set
    block_count: np.ndarray = field(repr=False)  # (groups, R)
    fast_dims: np.ndarray = field(repr=False)
    divergence: Optional[DivergenceReport] = None
    final_positions: Optional[np.ndarray] = field(default=None, repr=False)

    def fast_mean(self) -> np.ndarray:
        return self.mean[:, self.fast_dims].mean(axis=1)

    def fast_var(self) -> np.ndarray:
        return self.var[:, self.fast_dims].mean(axis=1)


def _resolve_block_size(cfg: EnsembleConfig, dim: int) -> int:
    if cfg.block_size is not None:
        bs = int(cfg.block_size)
    else:
        bs = max(1, min(int(cfg.n_particles), (1 << 17) // max(dim, 1)))
    if cfg.group_size is not None:
        g = int(cfg.group_size)
        bs = -(-bs // g) * g  # groups never straddle blocks
    return bs


def record_steps(steps: int, every: int) -> np.ndarray:
    r = list(range(0, steps + 1, every))
    if r[-1] != steps:
        r.append(steps)
    return np.asarray(r)


def _equilibrium_sigma(family, a, eta, sigma_g, exact, beta=None, gamma=None):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.empty_like(a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        for i, ai in enumerate(a):
            if family is Family.SGD_ATTRACT:
                out[i] = analytic.attract_sigma_exact(ai, eta, sigma_g, beta, gamma)
            else:
                out[i] = analytic.steady_sigma(family, ai, eta, sigma_g, flat=not exact).sigma
    return out


def initial_block(landscape, spec: OptimizerSpec, cfg: EnsembleConfig, first: int, count: int):
    """Initial (position, ema) for particles first..first+count-1."""
    dim = landscape.dim
    ema = None
    if cfg.init is InitKind.STATE:
        state = np.asarray(cfg.init_state, dtype=float)
        if state.shape != (cfg.n_particles, dim):
            raise InputError(f"init_state shape {state.shape} != ({cfg.n_particles}, {dim})")
        pos = state[first:first + count].copy()
    elif cfg.init is InitKind.DELTA:
        pos = np.full((count, dim), float(cfg.x0))
        if isinstance(landscape, RiverValleyLandscape):
            pos[:, 1] = cfg.y0
    elif cfg.init is InitKind.GAUSSIAN:
        pos = cfg.mu + cfg.sigma * rng.normal_block(cfg.seed, rng.INIT_STEP, first, count, dim)
    else:
        eta = spec.eta if cfg.init_eta is None else float(cfg.init_eta)
        w = rng.normal_block(cfg.seed, rng.INIT_STEP, first, count, dim)
        if isinstance(landscape, RiverValleyLandscape):
            a = landscape.sharpness_profile.value(cfg.y0)
            sig = _equilibrium_sigma(spec.family, a, eta, spec.sigma_g, cfg.init_exact, spec.beta, spec.gamma)
            pos = np.empty((count, 2))
            pos[:, 0] = sig[0] * w[:, 0]
            pos[:, 1] = cfg.y0
        else:
            a = landscape.sharpness
            if spec.family is Family.SGD_ATTRACT:
                pos, ema = _attract_equilibrium(a, eta, spec, cfg, w, first, count)
            else:
                sig = _equilibrium_sigma(spec.family, a, eta, spec.sigma_g, cfg.init_exact)
                pos = w * sig
    if spec.family is Family.SGD_ATTRACT and ema is None:
        ema = pos.copy()
    return pos, ema


def _attract_equilibrium(a, eta, spec, cfg, w, first, count):
    from scipy.linalg import solve_discrete_lyapunov

    w2 = rng.normal_block(cfg.seed, rng.INIT_STEP - 1, first, count, a.size)
    pos = np.empty_like(w)
    ema = np.empty_like(w)
    for j, aj in enumerate(a):
        A, B = analytic.attract_transition(aj, eta, spec.beta, spec.gamma)
        cov = solve_discrete_lyapunov(A, B @ B.T * spec.sigma_g ** 2)
        L = np.linalg.cholesky(cov + 1e-300 * np.eye(2))
        pos[:, j] = L[0, 0] * w[:, j]
        ema[:, j] = L[1, 0] * w[:, j] + L[1, 1] * w2[:, j]
    return pos, ema


@dataclass
class _BlockResult:
    pos_acc: list
    loss_acc: list
    diverged: dict
    final: Optional[np.ndarray]


def _simulate_block(job) -> _BlockResult:
    landscape, spec, etas, cfg, first, count, recs = job
    pos, ema = initial_block(landscape, spec, cfg, first, count)
    dim = landscape.dim
    sigma = spec.sigma_g
    if cfg.noise_scale is not None:
        scale = np.asarray(cfg.noise_scale, dtype=float)
        if scale.size != dim:
            raise InputError(f"noise_scale needs {dim} entries")
        sigma = spec.sigma_g * scale
    beta, gamma = spec.beta or 0.0, spec.gamma or 0.0
    alive = np.ones(count, dtype=bool)
    diverged: dict = {}
    pos_acc, loss_acc = [], []
    rec_set = set(int(r) for r in recs)
    g = count if cfg.group_size is None else int(cfg.group_size)
    groups = [slice(i, min(i + g, count)) for i in range(0, count, g)]

    def record():
        all_alive = alive.all()
        live = pos if all_alive else pos[alive]
        if len(groups) == 1:
            pos_acc.append([MomentAccumulator.from_batch(live)])
        else:
            pos_acc.append([MomentAccumulator.from_batch(pos[sl] if all_alive else pos[sl][alive[sl]])
                            for sl in groups])
        if isinstance(landscape, RiverValleyLandscape):
            _, lf, ls = landscape.loss_parts(live)
        else:
            lf = landscape.fast_loss(live)
            ls = np.zeros_like(lf)
        loss_acc.append(MomentAccumulator.from_batch(np.stack([lf, ls, lf + ls], axis=1)))

    if 0 in rec_set:
        record()
    steps = int(recs[-1])
    for t in range(steps):
        w = rng.normal_block(cfg.seed, cfg.step_offset + t, first, count, dim)
        grad = landscape.gradient(pos)
        pos, ema = apply_update(spec.family, pos, ema, grad, etas[t], sigma, w, beta, gamma)
        m = np.max(np.abs(pos))
        if not m <= DIVERGENCE_THRESHOLD:
            bad = ~np.all(np.abs(pos) <= DIVERGENCE_THRESHOLD, axis=1) & alive
            n_bad = int(bad.sum())
            if n_bad:
                diverged[t] = diverged.get(t, 0) + n_bad
            alive &= ~bad
            dead = ~alive
            pos[dead] = 0.0
            if ema is not None:
                ema[dead] = 0.0
        if t + 1 in rec_set:
            record()
    final = pos.copy() if cfg.keep_final else None
    return _BlockResult(pos_acc, loss_acc, diverged, final)


def run_ensemble(landscape, spec: OptimizerSpec, schedule, cfg: EnsembleConfig) -> EnsembleStats:
    """Evolve ``cfg.n_particles`` independent particles for ``cfg.steps`` steps."""
    etas = np.asarray(getattr(schedule, "etas", schedule), dtype=float)
    steps = int(cfg.steps)
    if etas.size < steps:
        raise InputError(f"schedule has {etas.size} entries, need {steps}")
    if not np.all(etas[:steps] >= 0):
        raise InputError("learning rates must be >= 0")
    etas = etas[:steps]
    dim = landscape.dim
    n = int(cfg.n_particles)
    bs = _resolve_block_size(cfg, dim)
    recs = record_steps(steps, int(cfg.record_every))
    jobs = [(landscape, spec, etas, cfg, s, min(bs, n - s), recs) for s in range(0, n, bs)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(int(cfg.workers), len(jobs))) as ex:
            results = list(ex.map(_simulate_block, jobs))
    else:
        results = [_simulate_block(j) for j in jobs]

    R = recs.size
    pos_tot = [reduce_in_order([a for r in results for a in r.pos_acc[k]]) for k in range(R)]
    loss_tot = [reduce_in_order([r.loss_acc[k] for r in results]) for k in range(R)]
    hist: dict = {}
    for r in results:
        for k, v in r.diverged.items():
            hist[k] = hist.get(k, 0) + v
    n_div = sum(hist.values())
    if n_div >= n:
        raise DivergenceError(min(hist), None, f"all {n} particles diverged (first at step {min(hist)})")
    report = None
    if n_div and n_div >= DIVERGENCE_REPORT_FRACTION * n:
        report = DivergenceReport(n_div, n_div / n, dict(sorted(hist.items())))

    cum = np.concatenate([[0.0], np.cumsum(etas)])
    eta_col = np.array([etas[max(int(t) - 1, 0)] for t in recs])
    counts = np.array([p.count for p in pos_tot])
    loss_var = np.array([l.variance for l in loss_tot])
    fast_dims = np.array([0]) if isinstance(landscape, RiverValleyLandscape) else np.arange(dim)
    return EnsembleStats(
        t=recs,
        eta=eta_col,
        mean=np.array([p.mean for p in pos_tot]),
        var=np.array([p.variance for p in pos_tot]),
        excess_kurtosis=np.array([p.excess_kurtosis for p in pos_tot]),
        thermal_loss=np.array([l.mean[0] for l in loss_tot]),
        thermal_loss_se=np.sqrt(loss_var[:, 0] / np.maximum(counts, 1)),
        slow_loss=np.array([l.mean[1] for l in loss_tot]),
        total_loss=np.array([l.mean[2] for l in loss_tot]),
        lr_sum=cum[recs],
        n_alive=counts,
        block_var=np.array([[rec[j].variance for rec in r.pos_acc] for r in results
                            for j in range(len(r.pos_acc[0]))]),
        block_count=np.array([[rec[j].count for rec in r.pos_acc] for r in results
                              for j in range(len(r.pos_acc[0]))]),
        fast_dims=fast_dims,
        divergence=report,
        final_positions=np.concatenate([r.final for r in results]) if cfg.keep_final else None,
    )


CSV_HEADER = ["t", "eta", "mean", "var", "thermal_loss", "slow_loss", "total_loss", "lr_sum"]


def fmt(x: float) -> str:
    """9 significant digits; rejects NaN/Inf so they never reach an output row."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("refusing to write a non-finite value")
    return f"{x + 0.0:.9g}"


def stats_rows(stats: EnsembleStats):
    fm, fv = stats.fast_mean(), stats.fast_var()
    for r in range(stats.t.size):
        yield [str(int(stats.t[r])), fmt(stats.eta[r]), fmt(fm[r]), fmt(fv[r]), fmt(stats.thermal_loss[r]),
               fmt(stats.slow_loss[r]), fmt(stats.total_loss[r]), fmt(stats.lr_sum[r])]


def write_stats_csv(stats: EnsembleStats, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(stats_rows(stats))


# ---------------------------------------------------------------------------
# oracles built on the engine


@dataclass(frozen=True)
class WidthEstimate:
    sigma: float
    se: float
    burn_in: int
    t_c: Optional[float]
    warning: Optional[str] = None


def _jackknife_sqrt(values: np.ndarray) -> tuple[float, float]:
    """sqrt(mean(values)) and its leave-one-out jackknife standard error."""
    g = values.size
    full = math.sqrt(values.mean())
    if g < 2:
        return full, float("nan")
    loo = np.sqrt((values.sum() - values) / (g - 1))
    se = math.sqrt((g - 1) / g * float(np.sum((loo - loo.mean()) ** 2)))
    return full, se


def measure_steady_width(landscape: DiagonalQuadraticLandscape, spec: OptimizerSpec, burn_in: int, samples: int,
                         seed: int, n_particles: int = 10_000, stride: Optional[int] = None, groups: int = 20,
                         workers: int = 1, init: InitKind = InitKind.DELTA) -> WidthEstimate:
    """Time-and-ensemble averaged stationary width of an isotropic quadratic.

    Starts from ``init`` (a point mass at 0 by default), discards ``burn_in``
    steps, then averages the ensemble variance over ``samples`` further steps
    recorded every ``stride``. The standard error is a jackknife over
    ``groups`` disjoint particle groups (moment bookkeeping only; the
    simulation itself runs in large blocks).
    """
    if not isinstance(landscape, DiagonalQuadraticLandscape) or np.ptp(landscape.sharpness) != 0:
        raise InputError("measure_steady_width needs an isotropic quadratic landscape")
    a = float(landscape.sharpness[0])
    try:
        if spec.family is Family.SGD_ATTRACT:
            t_c = analytic.attract_relaxation_time(a, spec.eta, spec.beta, spec.gamma)
        else:
            t_c = analytic.relaxation_time(spec.family, a, spec.eta, spec.sigma_g)
    except (ValueError, ZeroDivisionError):
        t_c = None
    note = None
    if t_c is not None and burn_in < t_c:
        note = f"burn-in {burn_in} is shorter than the relaxation time {t_c:.3g}"
    elif t_c is not None and burn_in < 10 * t_c:
        note = f"burn-in {burn_in} is under 10 relaxation times ({10 * t_c:.3g})"
    groups = max(1, min(groups, n_particles))
    if stride is None:
        stride = max(1, int(round(t_c))) if t_c else 10
    steps = burn_in + samples
    cfg = EnsembleConfig(n_particles=n_particles, steps=steps, seed=seed, init=init,
                         record_every=stride, group_size=-(-n_particles // groups), workers=workers)
    sched = np.full(steps, spec.eta)
    st = run_ensemble(landscape, spec, sched, cfg)
    keep = st.t > burn_in
    if not keep.any():
        raise InputError("samples window contains no recorded step")
    # per-group time average of the pooled per-dimension variance
    per_group = st.block_var[:, keep, :].mean(axis=(1, 2))
    sigma, se = _jackknife_sqrt(per_group)
    return WidthEstimate(sigma, se, burn_in, t_c, note)


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class RelaxationFit:
    rate: float
    asymptote: float
    asymptote_se: float
    predicted_rate: float  # flat-limit 2 a eta_B
    predicted_asymptote: float  # flat-limit sigma_g² eta_B / 4
    exact_rate: float  # -2 log(1 - a eta_B) of the discrete map
    exact_asymptote: float  # exact discrete equilibrium thermal loss
    fit_points: int
    min_margin_se: float  # min over t of (measured - predicted floor) / SE
    stationary: bool
    t: np.ndarray = field(repr=False)
    thermal_loss: np.ndarray = field(repr=False)
    thermal_loss_se: np.ndarray = field(repr=False)


def relaxation_experiment(a: float, eta_A: float, eta_B: float, sigma_g: float, steps: int,
                          cfg: EnsembleConfig) -> RelaxationFit:
    """Switch an equilibrated SGD ensemble from eta_A to eta_B and fit the cooling curve.

    The rate is the least-squares slope of log(ℓ_t - ℓ(η_B)) over t within three
    predicted e-folding times, keeping only positive gaps. ℓ(η_B) is the exact
    equilibrium of the discrete map; subtracting the flat-limit value instead
    leaves a constant offset in the gap and biases the rate low. The asymptote
    is the mean thermal loss over the last quarter of the run.
    """
    if eta_B > eta_A:
        raise InputError("eta_B must not exceed eta_A")
    land = DiagonalQuadraticLandscape.isotropic(a, 1)
    spec = OptimizerSpec(Family.SGD, eta_B, sigma_g)
    cfg = replace(cfg, steps=steps, init=InitKind.EQUILIBRIUM, init_eta=eta_A, record_every=1)
    st = run_ensemble(land, spec, np.full(steps, eta_B), cfg)
    flat_floor = analytic.thermal_loss(Family.SGD, eta_B, sigma_g)
    floor = analytic.steady_sigma_sgd(a, eta_B, sigma_g).thermal_loss
    pred_rate = 2.0 * a * eta_B
    exact_rate = -2.0 * math.log(1.0 - a * eta_B)
    tail = st.t >= 0.75 * steps
    asym = float(st.thermal_loss[tail].mean())
    asym_se = float(st.thermal_loss[tail].std(ddof=1) / math.sqrt(tail.sum())) if tail.sum() > 1 else float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        margin = float(np.min((st.thermal_loss - floor) / st.thermal_loss_se))
    if eta_A == eta_B:
        return RelaxationFit(float("nan"), asym, asym_se, pred_rate, flat_floor, exact_rate, floor, 0, margin, True,
                             st.t, st.thermal_loss, st.thermal_loss_se)
    gap = st.thermal_loss - floor
    window = (st.t <= 3.0 / pred_rate) & (gap > 0)
    if window.sum() < 10:
        raise FitError(f"only {int(window.sum())} usable points for the exponential fit")
    slope = np.polyfit(st.t[window].astype(float), np.log(gap[window]), 1)[0]
    return RelaxationFit(float(-slope), asym, asym_se, pred_rate, flat_floor, exact_rate, floor, int(window.sum()),
                         margin, False,
                         st.t, st.thermal_loss, st.thermal_loss_se)


def mean_drift(landscape: RiverValleyLandscape, spec: OptimizerSpec, y0: float, steps: int, cfg: EnsembleConfig,
               slow_noise: bool = False) -> float:
    """Ensemble mean displacement of the river coordinate after ``steps`` constant-eta steps.

    The fast coordinate starts in equilibrium at y0. Unless ``slow_noise`` is set,
    gradient noise is injected only into the fast coordinate.
    """
    cfg = replace(cfg, steps=steps, init=InitKind.EQUILIBRIUM, y0=y0, record_every=steps,
                  noise_scale=None if slow_noise else (1.0, 0.0))
    st = run_ensemble(landscape, spec, np.full(steps, spec.eta), cfg)
    return float(st.mean[-1, 1] - y0)


def constant_schedule(eta: float, steps: int) -> Schedule:
    return generate("constant", {"eta": eta}, steps)
