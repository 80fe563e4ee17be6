"""Run configuration: a flat ``section.key = value`` text format.

Grammar::

    file    := line*
    line    := blank | comment | entry
    comment := '#' any*
    entry   := section '.' key '=' value [comment]
    value   := number | word | list
    list    := value (',' value)*

Sections and keys are fixed (see ``SCHEMA``); unknown keys are rejected with the
key and line number. Booleans are ``true``/``false``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Optional

from .landscape import InputError, landscape_from_dict
from .optimizer import Family, OptimizerSpec
from .schedule import ScheduleKind, generate
from .sim import EnsembleConfig, InitKind


class ConfigError(InputError):
    def __init__(self, key: str, message: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{key}: {message}")


@dataclass(frozen=True)
class Key:
    kind: str  # float | int | str | bool | choice | floats | ints | grid
    default: Any = None
    check: Optional[str] = None  # pos | nonneg | unit
    choices: tuple = ()


def _choice(values, default=None):
    return Key("choice", default, choices=tuple(values))


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "command": _choice(("steady", "schedule", "simulate", "sweep", "trap", "force", "relax", "fit")),
        "experiment": _choice(("phase_diagram", "anisotropic", "scaling", "shootout")),
        "out": Key("str"),
        "seed": Key("int"),
        "workers": Key("int", check="pos"),
    },
    "landscape": {
        "kind": _choice(("quadratic", "river_valley"), "quadratic"),
        "n": Key("int", check="pos"),
        "sharpness_spectrum": _choice(("isotropic", "log", "explicit")),
        "sharpness": Key("floats"),
        "spectrum_lo": Key("float"),
        "spectrum_hi": Key("float"),
        "a0": Key("float", check="pos"),
        "sharpness_profile": _choice(("constant", "linear_abs", "exp")),
        "b": Key("float", check="nonneg"),
        "alpha": Key("float"),
        "bottom_profile": _choice(("constant", "linear")),
        "c": Key("float"),
        "level": Key("float"),
    },
    "optimizer": {
        "family": _choice(("sgd", "signgd", "sgd_attract"), "sgd"),
        "eta": Key("float", 0.1, "pos"),
        "sigma_g": Key("float", 0.1, "nonneg"),
        "beta": Key("float", check="unit"),
        "gamma": Key("float", check="nonneg"),
    },
    "schedule": {
        "kind": _choice([k.value for k in ScheduleKind] + ["greedy"], "constant"),
        "eta": Key("float", check="pos"),
        "eta_min": Key("float", check="nonneg"),
        "b": Key("float", check="pos"),
        "t_h": Key("float", check="pos"),
        "steps": Key("int", check="pos"),
        "warmup_steps": Key("int", check="nonneg"),
        "stable_steps": Key("int", check="nonneg"),
        "decay_steps": Key("int", check="nonneg"),
        "decay_shape": _choice(("cosine", "linear", "one_sqrt", "inverse_time_optimal")),
        "exact_init": Key("bool"),
    },
    "ensemble": {
        "n_particles": Key("int", 1000, "pos"),
        "steps": Key("int", 1000, "pos"),
        "init": _choice([k.value for k in InitKind if k is not InitKind.STATE], "equilibrium"),
        "x0": Key("float"),
        "y0": Key("float"),
        "mu": Key("float"),
        "sigma": Key("float", check="nonneg"),
        "init_eta": Key("float", check="pos"),
        "init_exact": Key("bool"),
        "record_every": Key("int", 10, "pos"),
        "block_size": Key("int", check="pos"),
        "group_size": Key("int", check="pos"),
        "noise_scale": Key("floats"),
    },
    "sweep": {
        "b_lo": Key("float", check="pos"),
        "b_hi": Key("float", check="pos"),
        "b_n": Key("int"),
        "th_lo": Key("float", check="pos"),
        "th_hi": Key("float", check="pos"),
        "th_n": Key("int"),
        "n": Key("int", check="pos"),
        "a": Key("float", check="pos"),
        "eta": Key("float", check="pos"),
        "sigma_g": Key("float", check="pos"),
        "equilibration_steps": Key("int", check="pos"),
        "decay_steps": Key("int", check="pos"),
        "particles": Key("int", check="pos"),
        "seeds": Key("ints"),
        "th_list": Key("floats"),
        "family": _choice(("sgd", "signgd")),
        "axis": _choice(("eta", "a", "sigma_g")),
        "grid": Key("floats"),
        "n_particles": Key("int", check="pos"),
    },
    "trap": {"start": Key("float")},
    "force": {"y_grid": Key("grid", "-5:5:11")},
    "relax": {
        "eta_a": Key("float", 0.2, "pos"),
        "eta_b": Key("float", 0.1, "pos"),
    },
    "fit": {
        "points": Key("floats"),
        "sigma_g": Key("float", check="pos"),
    },
}

SECTIONS = tuple(SCHEMA)


def _parse_scalar(raw: str, kind: str):
    if kind == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == "int":
        f = float(raw)
        if f != int(f):
            raise ValueError("must be an integer")
        return int(f)
    if kind == "bool":
        low = raw.lower()
        if low not in ("true", "false"):
            raise ValueError("must be true or false")
        return low == "true"
    return raw


def parse_grid(raw: str) -> tuple[float, float, int]:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ValueError("grid must look like lo:hi:n")
    lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    if n < 1 or hi < lo:
        raise ValueError("grid needs n >= 1 and hi >= lo")
    return lo, hi, n


def coerce(section: str, key: str, raw, line: Optional[int] = None):
    """Convert and check one value against the schema."""
    spec = SCHEMA[section][key]
    name = f"{section}.{key}"
    try:
        if spec.kind in ("floats", "ints"):
            items = raw if isinstance(raw, (list, tuple)) else [s for s in str(raw).split(",") if s.strip()]
            base = "float" if spec.kind == "floats" else "int"
            value = [_parse_scalar(str(s).strip(), base) for s in items]
            if not value:
                raise ValueError("empty list")
        elif spec.kind == "choice":
            value = str(raw).strip()
            if value not in spec.choices:
                raise ValueError(f"must be one of {', '.join(spec.choices)}")
        elif spec.kind == "grid":
            value = str(raw).strip()
            parse_grid(value)
        elif spec.kind == "bool" and isinstance(raw, bool):
            value = raw
        else:
            value = _parse_scalar(str(raw).strip(), spec.kind)
    except ValueError as err:
        raise ConfigError(name, f"invalid value {raw!r} ({err})", line) from None
    vals = value if isinstance(value, list) else [value]
    for v in vals:
        if spec.check == "pos" and not v > 0:
            raise ConfigError(name, f"must be > 0, got {v}", line)
        if spec.check == "nonneg" and not v >= 0:
            raise ConfigError(name, f"must be >= 0, got {v}", line)
        if spec.check == "unit" and not 0 <= v < 1:
            raise ConfigError(name, f"must lie in [0, 1), got {v}", line)
    return value


@dataclass(frozen=True)
class RunConfig:
    """All inputs of one run, grouped by section; only set or defaulted keys appear."""

    run: dict = field(default_factory=dict)
    landscape: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    trap: dict = field(default_factory=dict)
    force: dict = field(default_factory=dict)
    relax: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.run.get("seed", 0))

    @property
    def experiment(self) -> Optional[str]:
        return self.run.get("experiment")

    @property
    def out(self) -> Optional[str]:
        return self.run.get("out")

    def with_values(self, values: dict) -> "RunConfig":
        """Copy with ``{"section.key": value}`` overrides applied (None values skipped)."""
        data = {s: dict(getattr(self, s)) for s in SECTIONS}
        for name, v in values.items():
            if v is None:
                continue
            section, key = _split(name)
            data[section][key] = coerce(section, key, v)
        return fill_defaults(RunConfig(**data))

    def optimizer_spec(self) -> OptimizerSpec:
        o = self.optimizer
        try:
            return OptimizerSpec(Family(o["family"]), o["eta"], o["sigma_g"], o.get("beta"), o.get("gamma"))
        except InputError as err:
            raise ConfigError("optimizer", str(err)) from None

    def build_landscape(self):
        d = dict(self.landscape)
        if d.get("kind") == "river_valley" and "a0" not in d:
            d["a0"] = 1.0
        try:
            return landscape_from_dict(d)
        except (InputError, KeyError) as err:
            raise ConfigError("landscape", str(err)) from None

    def schedule_params(self) -> dict:
        s = dict(self.schedule)
        s.setdefault("eta", self.optimizer["eta"])
        if s.get("kind") == "inverse_time_optimal" and "t_h" not in s:
            s["a"] = self.landscape.get("a0", 1.0)
        return s

    def build_schedule(self, steps: int):
        p = self.schedule_params()
        kind = p.pop("kind")
        if kind == "wsd":
            return generate(kind, p)
        return generate(kind, p, steps)

    def ensemble_config(self, workers: int = 1) -> EnsembleConfig:
        e = dict(self.ensemble)
        noise = e.pop("noise_scale", None)
        try:
            return EnsembleConfig(seed=self.seed, workers=workers,
                                  noise_scale=tuple(noise) if noise is not None else None, **e)
        except InputError as err:
            raise ConfigError("ensemble", str(err)) from None


def _split(name: str) -> tuple[str, str]:
    section, _, key = name.partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(name, "unknown key")
    return section, key


def fill_defaults(cfg: RunConfig) -> RunConfig:
    data = {s: dict(getattr(cfg, s)) for s in SECTIONS}
    for section in ("optimizer", "landscape", "ensemble", "schedule"):
        for key, spec in SCHEMA[section].items():
            if spec.default is not None:
                data[section].setdefault(key, spec.default)
    data["run"].setdefault("seed", 0)
    if data["landscape"].get("kind") == "quadratic":
        data["landscape"].setdefault("n", 1)
        data["landscape"].setdefault("sharpness_spectrum", "isotropic")
        if data["landscape"]["sharpness_spectrum"] == "isotropic":
            data["landscape"].setdefault("a0", 2.0)
    return RunConfig(**data)


def parse_config(text: str) -> RunConfig:
    """Parse config text; fills defaults and validates every key."""
    data: dict[str, dict] = {s: {} for s in SECTIONS}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected 'section.key = value'", lineno)
        name, _, value = line.partition("=")
        name = name.strip()
        section, dot, key = name.partition(".")
        if not dot or section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(name, "unknown key", lineno)
        if name in seen:
            raise ConfigError(name, f"duplicate key (first set on line {seen[name]})", lineno)
        seen[name] = lineno
        data[section][key] = coerce(section, key, value.strip(), lineno)
    cfg = fill_defaults(RunConfig(**data))
    validate(cfg, seen)
    return cfg


def validate(cfg: RunConfig, lines: Optional[dict] = None) -> None:
    """Cross-key checks that a single value cannot express."""
    lines = lines or {}
    o = cfg.optimizer
    if o["family"] != "sgd_attract":
        for k in ("beta", "gamma"):
            if k in o:
                raise ConfigError(f"optimizer.{k}", "only applies to family sgd_attract",
                                  lines.get(f"optimizer.{k}"))
    cfg.optimizer_spec()
    s = cfg.schedule
    if "eta_min" in s and s["eta_min"] > s.get("eta", o["eta"]):
        raise ConfigError("schedule.eta_min", "must not exceed the schedule eta", lines.get("schedule.eta_min"))


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt_value(x) for x in v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(dump_config(c)) == c``."""
    out = []
    for section in SECTIONS:
        values = getattr(cfg, section)
        keys = [k for k in SCHEMA[section] if k in values]
        if not keys:
            continue
        out.extend(f"{section}.{k} = {_fmt_value(values[k])}" for k in keys)
        out.append("")
    return "\n".join(out)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
