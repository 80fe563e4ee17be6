"""``ntl`` command-line entry point.

Every command resolves its flags on top of an optional ``--config`` file and,
when ``--out`` is given, writes its CSV together with the resolved config so the
run can be repeated with ``ntl <command> --config <out>/resolved.cfg``.

Exit codes: 0 ok, 1 invalid input, 2 divergence, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, analytic, schedule as sched_mod, sweep, thermo
from .analytic import FlatLimitWarning
from .config import ConfigError, RunConfig, dump_config, fill_defaults, load_config, parse_grid
from .landscape import BottomProfile, InputError, RiverValleyLandscape, SharpnessProfile
from .optimizer import DivergenceError, Family
from .sim import EnsembleConfig, fmt, relaxation_experiment, run_ensemble, stats_rows, CSV_HEADER

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _opt(v) -> str:
    """Formatted number, or an empty field when the quantity does not exist."""
    return "" if v is None else fmt(v)


class Runner:
    def __init__(self, args, cfg: RunConfig):
        self.args = args
        self.cfg = cfg

    @property
    def out_dir(self):
        return self.cfg.out

    def emit(self, name: str, text: str, extra: dict | None = None) -> None:
        """Write ``<out>/<name>`` plus the resolved config, or print to stdout."""
        if self.out_dir:
            d = Path(self.out_dir)
            d.mkdir(parents=True, exist_ok=True)
            (d / name).write_text(text)
            for fname, content in (extra or {}).items():
                (d / fname).write_text(content)
            (d / "resolved.cfg").write_text(dump_config(self.cfg))
        else:
            sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_steady(r: Runner) -> int:
    cfg = r.cfg
    spec = cfg.optimizer_spec()
    a = float(cfg.landscape.get("a0", 1.0))
    fam = spec.family
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        if fam is Family.SGD_ATTRACT:
            st = analytic.steady_sigma_attract(a, spec.eta, spec.sigma_g, spec.beta, spec.gamma)
            flat = None
            t_c = analytic.attract_relaxation_time(a, spec.eta, spec.beta, spec.gamma)
        else:
            st = analytic.steady_sigma(fam, a, spec.eta, spec.sigma_g)
            flat = None
            if fam is Family.SGD or spec.sigma_g > 0:
                flat = analytic.steady_sigma(fam, a, spec.eta, spec.sigma_g, flat=True).sigma
            try:
                t_c = analytic.relaxation_time(fam, a, spec.eta, spec.sigma_g)
            except analytic.OutOfRegimeError:
                t_c = None
    row = [fam.value, fmt(a), fmt(spec.eta), fmt(spec.sigma_g), fmt(st.sigma), _opt(flat),
           fmt(st.thermal_loss), _opt(t_c)]
    header = ["family", "a", "eta", "sigma_g", "sigma_exact", "sigma_flat", "thermal_loss", "t_c"]
    r.emit("steady.csv", _csv_text(header, [row]))
    return EXIT_OK


def cmd_schedule(r: Runner) -> int:
    cfg = r.cfg
    spec = cfg.optimizer_spec()
    fam = spec.family if spec.family is not Family.SGD_ATTRACT else Family.SGD
    a = float(cfg.landscape.get("a0", 1.0))
    steps = int(cfg.schedule.get("steps", 100))
    p = cfg.schedule_params()
    eta = float(p["eta"])
    exact = bool(p.get("exact_init", False))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatLimitWarning)
        if p["kind"] == "greedy":
            od = sched_mod.optimal_decay(fam, a, eta, spec.sigma_g, steps, exact_init=exact)
            etas, sig = od.etas, od.sigma_sq
        else:
            etas = cfg.build_schedule(steps).etas
            s0 = sched_mod.equilibrium_variance(fam, a, eta, spec.sigma_g, exact=exact)
            sig = sched_mod.predict_variance(etas, a, spec.sigma_g, s0, fam)
    rows = [[str(t), fmt(etas[t]), fmt(sig[t]), fmt(0.5 * a * sig[t])] for t in range(len(etas))]
    r.emit("schedule.csv", _csv_text(["t", "eta_t", "predicted_sigma_sq", "predicted_thermal_loss"], rows))
    return EXIT_OK


def cmd_simulate(r: Runner) -> int:
    cfg = r.cfg
    land = cfg.build_landscape()
    spec = cfg.optimizer_spec()
    ens = cfg.ensemble_config(workers=int(cfg.run.get("workers", 1)))
    sched = cfg.build_schedule(ens.steps)
    stats = run_ensemble(land, spec, sched, ens)
    text = _csv_text(CSV_HEADER, stats_rows(stats))
    r.emit("simulate.csv", text)
    if stats.divergence is not None:
        rep = stats.divergence
        sys.stderr.write(json.dumps({"error": "divergence", "count": rep.count, "fraction": rep.fraction,
                                     "histogram": {str(k): v for k, v in rep.histogram.items()}}) + "\n")
        return EXIT_RUNTIME
    return EXIT_OK


def _river_landscape(cfg: RunConfig) -> RiverValleyLandscape:
    l = cfg.landscape
    sp = SharpnessProfile(l.get("sharpness_profile", "exp"), float(l.get("a0", 1.0)), float(l.get("b", 0.0)),
                          float(l.get("alpha", 1.0)))
    bp = BottomProfile(l.get("bottom_profile", "linear"), float(l.get("c", 0.0)), float(l.get("level", 0.0)))
    return RiverValleyLandscape(sp, bp)


def cmd_trap(r: Runner) -> int:
    cfg = r.cfg
    l, o = cfg.landscape, cfg.optimizer
    a0 = float(l.get("a0", 1.0))
    pts = thermo.trapping_fixed_points(a0, float(l.get("b", 1.0)), float(l.get("c", 0.1)), o["eta"], o["sigma_g"])
    start = float(cfg.trap.get("start", a0))
    term = thermo.terminal_prediction(pts, start)
    row = ["", "", fmt(term)] if pts is None else [fmt(pts.x_minus), fmt(pts.x_plus), fmt(term)]
    r.emit("trap.csv", _csv_text(["x_minus", "x_plus", "terminal_prediction"], [row]))
    return EXIT_OK


def cmd_force(r: Runner) -> int:
    cfg = r.cfg
    land = _river_landscape(cfg)
    spec = cfg.optimizer_spec()
    ctx = thermo.ThermoContext(land, spec.family, spec.eta, spec.sigma_g)
    lo, hi, n = parse_grid(cfg.force.get("y_grid", "-5:5:11"))
    ys = np.linspace(lo, hi, n)
    fb = thermo.total_force(ctx, ys)
    S = thermo.entropy(ctx, ys)
    rows = [[fmt(ys[i]), fmt(fb.F_ent[i]), fmt(fb.F_btm[i]), fmt(fb.F[i]), fmt(S[i])] for i in range(n)]
    r.emit("force.csv", _csv_text(["y", "F_ent", "F_btm", "F", "S"], rows))
    return EXIT_OK


def cmd_relax(r: Runner) -> int:
    cfg = r.cfg
    a = float(cfg.landscape.get("a0", 1.0))
    ens = cfg.ensemble_config(workers=int(cfg.run.get("workers", 1)))
    fit = relaxation_experiment(a, cfg.relax["eta_a"], cfg.relax["eta_b"], cfg.optimizer["sigma_g"], ens.steps, ens)
    pred = sched_mod.two_temperature_relaxation(a, cfg.relax["eta_a"], cfg.relax["eta_b"],
                                                cfg.optimizer["sigma_g"], fit.t)
    rows = [[str(int(t)), fmt(fit.thermal_loss[i]), fmt(fit.thermal_loss_se[i]), fmt(pred[i])]
            for i, t in enumerate(fit.t)]
    traj = _csv_text(["t", "thermal_loss", "thermal_loss_se", "predicted_thermal_loss"], rows)
    summary = _csv_text(["rate", "predicted_rate", "exact_rate", "asymptote", "predicted_asymptote",
                         "exact_asymptote", "min_margin_se"],
                        [[_opt(None if fit.stationary else fit.rate), fmt(fit.predicted_rate), fmt(fit.exact_rate),
                          fmt(fit.asymptote), fmt(fit.predicted_asymptote), fmt(fit.exact_asymptote),
                          fmt(fit.min_margin_se)]])
    r.emit("relax.csv", summary, {"relax_trajectory.csv": traj})
    return EXIT_OK


def cmd_fit(r: Runner) -> int:
    cfg = r.cfg
    pts = cfg.fit.get("points")
    if not pts or len(pts) % 2:
        raise ConfigError("fit.points", "need an even list eta_1, loss_1, eta_2, loss_2, ...")
    pairs = list(zip(pts[0::2], pts[1::2]))
    hc = analytic.fit_heat_capacity(pairs)
    header = ["intercept", "slope", "residual"]
    row = [fmt(hc.intercept), fmt(hc.slope), fmt(hc.residual)]
    if "sigma_g" in cfg.fit:
        header.append("valley_count")
        row.append(fmt(analytic.estimate_valley_count(hc.slope, cfg.fit["sigma_g"])))
    r.emit("fit.csv", _csv_text(header, [row]))
    return EXIT_OK


def cmd_sweep(r: Runner) -> int:
    cfg = r.cfg
    exp = cfg.experiment or "phase_diagram"
    out = Path(cfg.out or "sweep_out")
    out.mkdir(parents=True, exist_ok=True)
    s = cfg.sweep
    workers = int(cfg.run.get("workers", 1))
    params = {"experiment": exp, **{f"sweep.{k}": v for k, v in sorted(s.items())}, "run.seed": cfg.seed}
    digest, header_lines = sweep.provenance(params)
    summary: dict = {"experiment": exp, "config_sha256": digest, "params": params}
    plots = []
    if exp == "phase_diagram":
        setup = sweep.IsotropicSetup(a=s.get("a", 2.0), n=s.get("n", 1000), eta=s.get("eta", 0.1),
                                     sigma_g=s.get("sigma_g", 0.1),
                                     equilibration_steps=s.get("equilibration_steps", 10_000),
                                     decay_steps=s.get("decay_steps", 100))
        b = sweep.Axis("b", s.get("b_lo", 0.1), s.get("b_hi", 1.0), s.get("b_n", 10), "linear").values()
        th = sweep.Axis("t_h", s.get("th_lo", 1.0), s.get("th_hi", 1000.0), s.get("th_n", 13), "log").values()
        seeds = tuple(s.get("seeds", [cfg.seed]))
        pd = sweep.phase_diagram(b, th, setup, seeds, workers)
        rows = []
        for k, seed in enumerate(seeds):
            for i, bi in enumerate(b):
                for j, tj in enumerate(th):
                    v = pd.loss[k, i, j]
                    rows.append([str(seed), fmt(bi), fmt(tj), fmt(v) if np.isfinite(v) else "",
                                 "0" if np.isfinite(v) else "1"])
        table = ["seed", "b", "t_h", "final_loss", "diverged"], rows
        summary.update(argmin=pd.argmin, slice_th_range=pd.normalized_range(pd.slice_th()),
                       slice_b_range=pd.normalized_range(pd.slice_b()))
        plots.append(("phase_diagram.svg", lambda p: _plot_phase(pd, p)))
    elif exp == "anisotropic":
        res = sweep.anisotropic_decay(th_list=s.get("th_list", [10, 100, 1000]), eta=s.get("eta", 0.01),
                                      sigma_g=s.get("sigma_g", 0.1),
                                      equilibration_steps=s.get("equilibration_steps", 10_000),
                                      decay_steps=s.get("decay_steps", 1000), particles=s.get("particles", 4),
                                      seed=cfg.seed)
        rows = []
        for k, tk in enumerate(res.t_h):
            for j in range(res.bin_loss.shape[1]):
                rows.append([fmt(tk), fmt(res.bin_edges[j]), fmt(res.bin_edges[j + 1]), fmt(res.bin_loss[k, j]),
                             fmt(res.bin_predicted[k, j])])
        table = ["t_h", "a_lo", "a_hi", "loss_per_direction", "predicted_loss_per_direction"], rows
        summary.update(equipartition_spread=res.equipartition_spread.tolist(),
                       small_exceeds_large=res.small_exceeds_large.tolist(), small_decreasing=res.small_decreasing)
        plots.append(("anisotropic.svg", lambda p: _plot_aniso(res, p)))
    elif exp == "scaling":
        grid = s.get("grid", [0.01, 0.03, 0.1, 0.3, 1.0])
        fitres = sweep.scaling_regression(s.get("family", "sgd"), s.get("axis", "sigma_g"), grid,
                                          a=s.get("a", 1.0), eta=s.get("eta", 0.001), sigma_g=s.get("sigma_g", 1.0),
                                          n_particles=s.get("n_particles", 2000), seed=cfg.seed, workers=workers)
        rows = [[fmt(v), fmt(fitres.sigma[i]), fmt(fitres.sigma_se[i])] for i, v in enumerate(fitres.values)]
        table = [fitres.axis, "sigma", "sigma_se"], rows
        summary.update(slope=fitres.slope, slope_se=fitres.slope_se)
    elif exp == "shootout":
        setup = sweep.IsotropicSetup(a=s.get("a", 2.0), n=s.get("n", 1000), eta=s.get("eta", 0.1),
                                     sigma_g=s.get("sigma_g", 0.1),
                                     equilibration_steps=s.get("equilibration_steps", 10_000),
                                     decay_steps=s.get("decay_steps", 100), particles=s.get("particles", 8))
        res_rows = sweep.schedule_shootout(sweep.default_shootout_schedules(setup), setup, cfg.seed)
        rows = [[x.name, fmt(x.final_loss), fmt(x.se), fmt(x.lr_sum), fmt(x.eta_last)] for x in res_rows]
        table = ["schedule", "final_loss", "se", "lr_sum", "eta_last"], rows
        summary.update(best=min(res_rows, key=lambda x: x.final_loss).name)
    else:
        raise ConfigError("run.experiment", f"unknown experiment {exp!r}")
    text = "\n".join(header_lines) + "\n" + _csv_text(*table)
    (out / f"{exp}.csv").write_text(text)
    sweep.write_summary(out / "summary.json", summary)
    (out / "resolved.cfg").write_text(dump_config(cfg))
    if r.args.plot:
        for name, fn in plots:
            fn(out / name)
    return EXIT_OK


def _plot_phase(pd, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    m = ax.pcolormesh(pd.t_h, pd.b, np.log10(pd.mean_loss()), shading="nearest")
    ax.set_xscale("log")
    ax.set_xlabel("t_h")
    ax.set_ylabel("b")
    i, j = pd.argmin_index[0]
    ax.plot(pd.t_h[j], pd.b[i], "r*", ms=12)
    fig.colorbar(m, label="log10 final loss")
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_aniso(res, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    centers = np.sqrt(res.bin_edges[:-1] * res.bin_edges[1:])
    for k, th in enumerate(res.t_h):
        ax.loglog(centers, res.bin_loss[k], "o-", label=f"t_h={th:g}")
        ax.loglog(centers, res.bin_predicted[k], "k:", lw=0.8)
    ax.set_xlabel("sharpness a")
    ax.set_ylabel("final loss per direction")
    ax.legend()
    fig.savefig(path, format="svg")
    plt.close(fig)


COMMANDS = {
    "steady": cmd_steady,
    "schedule": cmd_schedule,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "trap": cmd_trap,
    "force": cmd_force,
    "relax": cmd_relax,
    "fit": cmd_fit,
}

# flag dest -> config key
FLAG_KEYS = {
    "optimizer": "optimizer.family", "eta": "optimizer.eta", "sigma_g": "optimizer.sigma_g",
    "beta": "optimizer.beta", "gamma": "optimizer.gamma", "a": "landscape.a0", "b": None, "c": "landscape.c",
    "alpha": "landscape.alpha", "level": "landscape.level", "sharpness_profile": "landscape.sharpness_profile",
    "kind": "schedule.kind", "eta_min": "schedule.eta_min", "t_h": "schedule.t_h", "steps": None,
    "warmup_steps": "schedule.warmup_steps", "stable_steps": "schedule.stable_steps",
    "decay_steps": "schedule.decay_steps", "decay_shape": "schedule.decay_shape", "exact_init": "schedule.exact_init",
    "start": "trap.start", "y_grid": "force.y_grid", "eta_a": "relax.eta_a", "eta_b": "relax.eta_b",
    "particles": "ensemble.n_particles", "points": "fit.points", "experiment": "run.experiment", "out": "run.out",
    "workers": "run.workers",
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ntl", description="Noisy optimizers on quadratic valleys and river landscapes.")
    p.add_argument("--version", action="version", version=f"ntl {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (section.key = value)")
    common.add_argument("--seed", type=int, help="random seed (fallback: $NTL_SEED, then config)")
    common.add_argument("--out", help="output directory; prints to stdout when omitted")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    opt = argparse.ArgumentParser(add_help=False)
    opt.add_argument("--optimizer", "--family", dest="optimizer", choices=[f.value for f in Family])
    opt.add_argument("--eta", type=float)
    opt.add_argument("--sigma-g", dest="sigma_g", type=float)
    opt.add_argument("--a", type=float, help="sharpness (a0 for river profiles)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("steady", parents=[common, opt], help="closed-form steady state")
    s.add_argument("--beta", type=float)
    s.add_argument("--gamma", type=float)

    s = sub.add_parser("schedule", parents=[common, opt], help="learning-rate schedule with predicted widths")
    s.add_argument("--kind", choices=[k.value for k in sched_mod.ScheduleKind] + ["greedy"])
    s.add_argument("--steps", type=int)
    s.add_argument("--eta-min", dest="eta_min", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--t-h", dest="t_h", type=float)
    s.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    s.add_argument("--stable-steps", dest="stable_steps", type=int)
    s.add_argument("--decay-steps", dest="decay_steps", type=int)
    s.add_argument("--decay-shape", dest="decay_shape")
    s.add_argument("--exact-init", dest="exact_init", action="store_const", const=True)

    sub.add_parser("simulate", parents=[common], help="ensemble Monte Carlo from a config file")

    s = sub.add_parser("sweep", parents=[common], help="experiment sweeps")
    s.add_argument("--experiment", choices=["phase_diagram", "anisotropic", "scaling", "shootout"])
    s.add_argument("--plot", action="store_true", help="also write SVG plots")

    s = sub.add_parser("trap", parents=[common, opt], help="entropic trapping fixed points")
    s.add_argument("--b", type=float)
    s.add_argument("--c", type=float)
    s.add_argument("--start", type=float, help="starting sharpness a0 + b|y|")

    s = sub.add_parser("force", parents=[common, opt], help="forces along a river valley")
    s.add_argument("--sharpness-profile", dest="sharpness_profile", choices=["constant", "linear_abs", "exp"])
    s.add_argument("--b", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--c", type=float)
    s.add_argument("--level", type=float)
    s.add_argument("--y-grid", dest="y_grid", help="lo:hi:n (write --y-grid=-5:5:11 for a negative lo)")

    s = sub.add_parser("relax", parents=[common, opt], help="two-temperature relaxation experiment")
    s.add_argument("--eta-a", dest="eta_a", type=float)
    s.add_argument("--eta-b", dest="eta_b", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--particles", type=int)

    s = sub.add_parser("fit", parents=[common], help="heat-capacity line fit")
    s.add_argument("--points", help="eta:loss pairs separated by commas")
    s.add_argument("--sigma-g", dest="sigma_g", type=float, help="gradient noise, for a valley count")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else fill_defaults(RunConfig())
    values: dict = {"run.command": args.command}
    for dest, key in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is None:
            continue
        if dest == "b":
            key = "schedule.b" if args.command == "schedule" else "landscape.b"
        elif dest == "steps":
            key = "schedule.steps" if args.command == "schedule" else "ensemble.steps"
        elif dest == "points":
            v = [x for pair in v.split(",") for x in pair.split(":")]
        values[key] = v
    if args.command == "fit" and args.sigma_g is not None:
        values.pop("optimizer.sigma_g", None)
        values["fit.sigma_g"] = args.sigma_g
    if args.command == "force":
        cfg = cfg.with_values({"landscape.kind": "river_valley"})
    if args.seed is not None:
        values["run.seed"] = args.seed
    elif "seed" not in (cfg.run if args.config else {}) and os.environ.get("NTL_SEED"):
        values["run.seed"] = os.environ["NTL_SEED"]
    return cfg.with_values(values)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](Runner(args, cfg))
    except DivergenceError as err:
        sys.stderr.write(json.dumps({"error": "divergence", "step": err.step, "message": str(err)}) + "\n")
        return EXIT_RUNTIME
    except OSError as err:
        sys.stderr.write(f"ntl: I/O error: {err}\n")
        return EXIT_IO
    except (InputError, ValueError) as err:
        sys.stderr.write(f"ntl: {err}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
