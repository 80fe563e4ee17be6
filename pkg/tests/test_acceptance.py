"""Acceptance gate: one recorded pass/fail line per criterion (see the terminal summary)."""
import math
import time
import warnings

import numpy as np
import pytest
from conftest import record_criterion
from oracles import rk4

from ntl import analytic as A
from ntl import schedule as S
from ntl import thermo
from ntl.analytic import FlatLimitWarning
from ntl.cli import main as cli_main
from ntl.landscape import BottomProfile, DiagonalQuadraticLandscape, RiverValleyLandscape, SharpnessProfile
from ntl.optimizer import OptimizerSpec
from ntl.sim import EnsembleConfig, InitKind, mean_drift, measure_steady_width, relaxation_experiment, run_ensemble
from ntl.sweep import IsotropicSetup, phase_diagram, scaling_regression

pytestmark = pytest.mark.acceptance


def check(n, title, ok, detail):
    record_criterion(n, title, ok, detail)
    assert ok, detail


def width_for(family, a, eta, sg, beta=None, gamma=None):
    if family == "sgd_attract":
        return A.steady_sigma_attract(a, eta, sg, beta, gamma).sigma
    return A.steady_sigma(family, a, eta, sg).sigma


# 1 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c01_steady_width_grid():
    t0 = time.perf_counter()
    worst = {"sgd": 0.0, "signgd": 0.0}
    cells = 0
    for family, tol in (("sgd", 0.02), ("signgd", 0.03)):
        for a in (0.01, 0.1, 1.0):
            for eta in (0.01, 0.1):
                for sg in (0.1, 1.0):
                    if family == "signgd" and a * eta / sg > 0.1 + 1e-12:
                        continue
                    t_c = A.relaxation_time(family, a, eta, sg)
                    w = measure_steady_width(DiagonalQuadraticLandscape.isotropic(a, 1),
                                             OptimizerSpec(family, eta, sg), math.ceil(10 * t_c),
                                             math.ceil(2 * t_c), seed=cells, n_particles=100_000, groups=5)
                    err = abs(w.sigma / width_for(family, a, eta, sg) - 1)
                    worst[family] = max(worst[family], err)
                    cells += 1
    elapsed = time.perf_counter() - t0
    acc = worst["sgd"] < 0.02 and worst["signgd"] < 0.03
    check(1, "steady-width oracle grid", acc and elapsed <= 120,
          f"{cells} cells, max rel err sgd {worst['sgd']:.4f} (<0.02), signgd {worst['signgd']:.4f} (<0.03); "
          f"runtime {elapsed:.0f}s (limit 120s)")


# 2 -------------------------------------------------------------------------

def test_c02_equipartition():
    t0 = time.perf_counter()
    eta, sg = 0.02, 1.0
    spreads = {}
    for family in ("sgd", "signgd"):
        losses = []
        for k, a in enumerate((0.01, 0.1, 1.0)):
            t_c = A.relaxation_time(family, a, eta, sg)
            w = measure_steady_width(DiagonalQuadraticLandscape.isotropic(a, 1), OptimizerSpec(family, eta, sg),
                                     math.ceil(2 * t_c), math.ceil(2 * t_c), seed=100 + k, n_particles=20_000,
                                     init=InitKind.EQUILIBRIUM)
            losses.append(0.5 * a * w.sigma ** 2)
        spreads[family] = max(losses) / min(losses) - 1
    elapsed = time.perf_counter() - t0
    ok = max(spreads.values()) < 0.05 and elapsed <= 60
    check(2, "equipartition across two decades of a", ok,
          f"max/min-1 sgd {spreads['sgd']:.4f}, signgd {spreads['signgd']:.4f} (<0.05); runtime {elapsed:.0f}s (<=60s)")


# 3 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c03_phase_diagram():
    t0 = time.perf_counter()
    pd = phase_diagram(setup=IsotropicSetup(), seeds=(0, 1, 2))
    elapsed = time.perf_counter() - t0
    i0 = int(np.argmin(np.abs(pd.b - 0.5)))
    j0 = int(np.argmin(np.abs(np.log(pd.t_h / 10.0))))
    near = all(abs(i - i0) <= 1 and abs(j - j0) <= 1 for i, j in pd.argmin_index)
    r_th, r_b = pd.normalized_range(pd.slice_th(0.5)), pd.normalized_range(pd.slice_b(10.0))
    ok = near and r_th > r_b and elapsed <= 600
    check(3, "phase diagram argmin near (0.5, 10)", ok,
          f"argmins {pd.argmin}; t_h-slice range {r_th:.2f} vs b-slice {r_b:.2f}; n=10000, runtime {elapsed:.0f}s")


# 4 -------------------------------------------------------------------------

def test_c04_arithmetic_sequence():
    a, eta, sg = 2.0, 0.1, 0.1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        od = S.optimal_decay_sgd(a, eta, sg, 1000)
    inc = np.diff(1.0 / od.sigma_sq)
    rec_err = float(np.max(np.abs(inc / (a * a / sg ** 2) - 1)))
    cfg = EnsembleConfig(n_particles=100_000, steps=1000, seed=4, init=InitKind.EQUILIBRIUM, init_exact=False,
                         record_every=10)
    st = run_ensemble(DiagonalQuadraticLandscape.isotropic(a, 1), OptimizerSpec("sgd", eta, sg), od.etas, cfg)
    mc_err = float(np.max(np.abs(st.var[:, 0] / od.sigma_sq[st.t] - 1)))
    ok = rec_err <= 1e-12 and mc_err < 0.05
    check(4, "arithmetic-sequence invariant", ok,
          f"recursion max rel err {rec_err:.2e} (<=1e-12); ensemble vs predicted max rel err {mc_err:.4f} (<0.05)")


# 5 -------------------------------------------------------------------------

def test_c05_discontinuity_and_asymptotics():
    ratios = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        for a, eta in ((1.0, 0.001), (1.0, 0.01), (2.0, 0.05), (1.0, 0.2), (4.0, 0.05)):
            ratios.append(S.optimal_decay_sgd(a, eta, 1.0, 1).eta0 / eta)
        a, eta = 2.0, 0.1
        t_h = 2.0 / (a * eta)
        T = int(1000 * t_h)
        od = S.optimal_decay_sgd(a, eta, 0.1, T + 1)
    t = np.arange(int(10 * t_h), T + 1)
    slope = float(np.polyfit(np.log(t), np.log(od.etas[t]), 1)[0])
    ok = all(0.45 <= r <= 0.5 for r in ratios) and abs(slope + 1) <= 0.02
    check(5, "discontinuity and 1/t asymptotics", ok,
          f"eta0/eta in [{min(ratios):.4f}, {max(ratios):.4f}] (want [0.45, 0.5]); slope {slope:.4f} (-1 +/- 0.02)")


# 6 -------------------------------------------------------------------------

def test_c06_decay_time():
    rng = np.random.default_rng(2024)
    worst, below = 0.0, True
    for _ in range(10):
        a = 10 ** rng.uniform(-1, 1)
        eta = 10 ** rng.uniform(-3, math.log10(0.2 / a))
        eta_min = eta * 10 ** rng.uniform(-2, -0.3)
        sg = 10 ** rng.uniform(-1, 1)
        # count optimal-decay steps on the exact recursion
        target = S.equilibrium_variance("sgd", a, eta_min, sg)
        s = S.equilibrium_variance("sgd", a, eta, sg)
        n = 0
        while s > target * (1 + 1e-12):
            s = S.sgd_variance_step(s, a * s / (a * a * s + sg * sg), a, sg)
            n += 1
        dt = S.decay_time(a, eta, eta_min)
        worst = max(worst, abs(n - dt.sigma_based))
        below &= n < dt.bound and dt.sigma_based < dt.bound
    ok = worst <= 1 and below
    check(6, "decay-time closed form", ok, f"max |T_d(iterated) - closed form| = {worst:.3f} steps (<=1); "
                                           f"T_d < 2/(a eta_min): {below}")


# 7 -------------------------------------------------------------------------

def test_c07_relaxation():
    t0 = time.perf_counter()
    a, eA, eB, sg = 1.0, 0.2, 0.1, 1.0
    fit = relaxation_experiment(a, eA, eB, sg, 200, EnsembleConfig(n_particles=100_000, seed=7))
    elapsed = time.perf_counter() - t0
    rate_err = abs(fit.rate / (2 * a * eB) - 1)
    asym_err = abs(fit.asymptote / (sg ** 2 * eB / 4) - 1)
    second_law = fit.min_margin_se >= -3
    ok = rate_err <= 0.05 and asym_err <= 0.03 and second_law and elapsed <= 60
    check(7, "two-temperature relaxation", ok,
          f"rate {fit.rate:.4f} vs 2a eta_B {2 * a * eB:.4f} (err {rate_err:.3f}, tol 0.05; discrete map "
          f"{fit.exact_rate:.4f}); asymptote {fit.asymptote:.5f} vs {sg ** 2 * eB / 4:.5f} (err {asym_err:.3f}, "
          f"tol 0.03; discrete map {fit.exact_asymptote:.5f}); second law {second_law} "
          f"(min margin {fit.min_margin_se:.1f} SE); runtime {elapsed:.0f}s")


# 8 -------------------------------------------------------------------------

def test_c08_continuous_vs_discrete():
    sg = 1.0
    worst = 0.0
    for a, eta in ((1.0, 0.01), (2.0, 0.01), (0.5, 0.1), (1.0, 0.05)):
        od = S.optimal_decay_sgd(a, eta, sg, 2000)
        t = np.arange(10, 2000)
        _, e_cont = S.continuous_optimal_schedule(a, sg ** 2 / 4, sg ** 2 * eta / 4, t)
        worst = max(worst, float(np.max(np.abs(od.etas[t] / e_cont - 1))))
    a, C, l0 = 1.0, 0.25, 0.0125
    y = float(np.ravel(rk4(lambda t, l: -(a / (2 * C)) * l * l, l0, 0.0, 200.0, 20_000))[-1])
    rk_err = abs(y / S.continuous_optimal_schedule(a, C, l0, 200.0)[0] - 1)
    # the flat-start gap a eta/(2 + a eta t) equals 2% exactly at a eta = 0.05, t = 10; allow rounding
    ok = worst <= 0.02 * (1 + 1e-9) and rk_err <= 1e-6
    check(8, "continuous vs discrete optimal schedule", ok,
          f"max rel gap for t>=10 {worst:.6f} (<=0.02); RK4 vs closed form {rk_err:.2e} (<=1e-6)")


# 9 -------------------------------------------------------------------------

def _drift_sign(land, eta, sg):
    d = mean_drift(land, OptimizerSpec("sgd", eta, sg), 0.0, 20, EnsembleConfig(n_particles=20_000, seed=9))
    return d


def test_c09_entropic_force_and_trapping():
    # finite-difference gradient of the entropy
    fd_err = 0.0
    for prof in (SharpnessProfile("exp", alpha=0.7), SharpnessProfile("linear_abs", a0=1.0, b=2.0)):
        ctx = thermo.ThermoContext(RiverValleyLandscape(prof, BottomProfile("linear", c=0.0)), "sgd", 0.01, 1.0)
        for y in np.linspace(0.2, 2.0, 10):
            h = 1e-5
            fd = (thermo.entropy(ctx, y + h) - thermo.entropy(ctx, y - h)) / (2 * h)
            fd_err = max(fd_err, abs(fd / thermo.entropic_force(ctx, y) - 1))

    # example 2: exponential sharpness, linear riverbed, fast-only gradient noise
    c, alpha, sg = 0.01, 1.0, 1.0
    land = RiverValleyLandscape(SharpnessProfile("exp", alpha=alpha), BottomProfile("linear", c=c))
    e_star = thermo.critical_eta(alpha, c, sg)
    lo, hi = 0.9 * e_star, 1.1 * e_star
    flips = _drift_sign(land, lo, sg) > 0 > _drift_sign(land, hi, sg)
    for _ in range(4):
        mid = 0.5 * (lo + hi)
        if _drift_sign(land, mid, sg) > 0:
            lo = mid
        else:
            hi = mid
    bracket_ok = flips and 0.9 * e_star <= lo < hi <= 1.1 * e_star

    # example 1: a(y) = a0 + b|y|, c(y) = -c y
    a0, b, c1, eta = 1.0, 1.0, 0.1, 0.1
    stall = {}
    for s in (0.5, 1.0, 1.5):
        land1 = RiverValleyLandscape(SharpnessProfile("linear_abs", a0=a0, b=b), BottomProfile("linear", c=c1))
        ctx = thermo.ThermoContext(land1, "sgd", eta, s, exact_width=True)
        r = thermo.averaged_force_trajectory(ctx, 5.0, 500_000)
        stall[s] = (a0 + b * r.y_final, thermo.trapping_fixed_points(a0, b, c1, eta, s).x_plus, r.stalled)
    a_stall, x_plus, stalled = stall[1.0]
    stall_err = abs(a_stall / x_plus - 1)
    monotone = stall[0.5][0] > stall[1.0][0] > stall[1.5][0]
    y_plus = (x_plus - a0) / b
    ok = fd_err <= 1e-6 and bracket_ok and stalled and stall_err <= 0.05 and monotone
    check(9, "entropic force and trapping", ok,
          f"FD grad S err {fd_err:.1e}; drift flips in [{lo / e_star:.3f}, {hi / e_star:.3f}] eta* ({bracket_ok}); "
          f"stall a={a_stall:.4f} vs x_+={x_plus:.4f} (err {stall_err:.1e}, position y={a_stall - a0:.3f} vs "
          f"x_+ read as a position {x_plus:.3f}); stall moves left with sigma_g: {monotone}")


# 10 ------------------------------------------------------------------------

def test_c10_attraction():
    ident = 0.0
    for a, eta, sg, beta, gamma in ((1.0, 0.1, 1.0, 0.9, 1.0), (0.3, 0.05, 2.0, 0.5, 3.0), (2.0, 0.2, 0.5, 0.7, 0.5)):
        g0 = A.steady_sigma_attract(a, eta, sg, beta, 0.0).sigma / A.steady_sigma_sgd(a, eta, sg).sigma
        b0 = A.steady_sigma_attract(a, eta, sg, 0.0, gamma).sigma / A.steady_sigma_sgd(a + gamma, eta, sg).sigma
        ident = max(ident, abs(g0 - 1), abs(b0 - 1))
    errs = []
    for k, (beta, gamma) in enumerate(((0.5, 0.5), (0.5, 2.0))):
        a, eta, sg = 1.0, 0.1, 1.0
        t_c = A.attract_relaxation_time(a, eta, beta, gamma)
        w = measure_steady_width(DiagonalQuadraticLandscape.isotropic(a, 1),
                                 OptimizerSpec("sgd_attract", eta, sg, beta=beta, gamma=gamma),
                                 math.ceil(10 * t_c), math.ceil(20 * t_c), seed=10 + k, n_particles=100_000)
        errs.append(abs(w.sigma / A.steady_sigma_attract(a, eta, sg, beta, gamma).sigma - 1))
    ok = ident <= 1e-12 and max(errs) < 0.03
    check(10, "attraction-force width", ok,
          f"identity err {ident:.1e} (<=1e-12); MC rel err {', '.join(f'{e:.4f}' for e in errs)} (<0.03)")


# 11 ------------------------------------------------------------------------

SCALING = [
    ("sgd", "eta", dict(a=1.0, sigma_g=1.0), (2e-4, 2e-2), 0.5),
    ("sgd", "a", dict(eta=2e-4, sigma_g=1.0), (1.0, 100.0), -0.5),
    ("sgd", "sigma_g", dict(a=1.0, eta=0.01), (0.1, 10.0), 1.0),
    ("signgd", "eta", dict(a=1.0, sigma_g=1.0), (1e-4, 1e-2), 0.5),
    ("signgd", "a", dict(eta=1e-4, sigma_g=1.0), (1.0, 100.0), -0.5),
    ("signgd", "sigma_g", dict(a=1.0, eta=1e-3), (0.1, 10.0), 0.5),
]


@pytest.mark.slow
def test_c11_scaling_slopes():
    out, ok = [], True
    for k, (family, axis, fixed, (lo, hi), expected) in enumerate(SCALING):
        grid = np.logspace(math.log10(lo), math.log10(hi), 5)
        fit = scaling_regression(family, axis, grid, seed=1000 * k, n_particles=2000, burn_in_tc=10,
                                 sample_tc=10, **fixed)
        good = abs(fit.slope - expected) <= 0.02
        ok &= good
        out.append(f"{family}/{axis} {fit.slope:+.3f}+/-{fit.slope_se:.3f}")
    check(11, "flat-limit scaling slopes", ok, "; ".join(out) + " (each within 0.02)")


# 12 ------------------------------------------------------------------------

def test_c12_fixture_arithmetic():
    x = np.array([0.0, 0.002, 0.005, 0.01, 0.02])
    fit = A.fit_heat_capacity(list(zip(x, 3.145 + 110 * x)))
    n = A.estimate_valley_count(110, 7e-5)
    exact = abs(fit.intercept - 3.145) <= 4 * np.finfo(float).eps * 3.145 and \
        abs(fit.slope - 110) <= 1e-12 * 110
    ok = exact and 4.9e6 <= n <= 5.1e6
    check(12, "heat-capacity fixture arithmetic", ok,
          f"intercept {fit.intercept!r}, slope {fit.slope!r}; N = {n:.6g} (in [4.9e6, 5.1e6])")


# 13 ------------------------------------------------------------------------

def test_c13_determinism(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("optimizer.family = signgd\noptimizer.eta = 0.05\noptimizer.sigma_g = 1.0\nlandscape.n = 4\n"
                   "ensemble.n_particles = 6000\nensemble.steps = 50\nensemble.block_size = 1000\n"
                   "schedule.kind = cosine\nschedule.eta_min = 0.001\n")
    codes = [cli_main(["simulate", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "s1")])]
    resolved = tmp_path / "s1" / "resolved.cfg"
    codes.append(cli_main(["simulate", "--config", str(resolved), "--workers", "3", "--out", str(tmp_path / "s2")]))
    sim_same = (tmp_path / "s1" / "simulate.csv").read_bytes() == (tmp_path / "s2" / "simulate.csv").read_bytes()

    sw = tmp_path / "sweep.cfg"
    sw.write_text("run.experiment = phase_diagram\nsweep.n = 300\nsweep.equilibration_steps = 200\n"
                  "sweep.decay_steps = 30\nsweep.b_n = 3\nsweep.th_n = 3\nsweep.seeds = 0, 1\n")
    codes.append(cli_main(["sweep", "--config", str(sw), "--out", str(tmp_path / "p1")]))
    codes.append(cli_main(["sweep", "--config", str(tmp_path / "p1" / "resolved.cfg"), "--workers", "2",
                           "--out", str(tmp_path / "p2")]))
    sweep_same = (tmp_path / "p1" / "phase_diagram.csv").read_bytes() == \
        (tmp_path / "p2" / "phase_diagram.csv").read_bytes()
    capsys.readouterr()
    ok = codes == [0, 0, 0, 0] and sim_same and sweep_same
    check(13, "byte-identical reruns across worker counts", ok,
          f"simulate identical: {sim_same}; phase-diagram sweep identical: {sweep_same}; exit codes {codes}")
