"""Plain-text run configuration: ``[section]`` headers and ``key = value`` lines.

Example::

    [system]
    preset = S2          # or give h1, h2, h3, v12, v23 explicitly
    v23 = 1.7,0          # complex values as "re,im"

    [observable]
    lambda = 1           # O = |1><1| - lambda |2><2|

    [initial]
    index = 3

    [grape]
    l = 3.7
    eps = 0.2
    K_stop = 1000
    I_err = 1e-5
    T = 10
    D = 200
    shift = 0
    seed = 0

    [batch]
    L = 100

    [certify]
    n_dirs = 100

Comments start with ``#`` or ``;``.  Every problem is reported as a
:class:`ConfigError` naming the line (or ``--set`` override) and field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .grape import GrapeConfig
from .model import S1, S2, InitialState, Observable, ThreeLevelSystem

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "SCHEMA"]

PRESETS = {"S1": S1, "S2": S2}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None,
                 source: str = "<config>"):
        self.line, self.field, self.source = line, field, source
        where = source
        if line is not None:
            where += f":{line}"
        if field:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}")


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s):
    f = float(s)
    if not math.isfinite(f) or f != int(f):
        raise ValueError("must be an integer")
    return int(f)


def _complex(s):
    parts = [p.strip() for p in s.split(",")]
    if len(parts) == 1:
        return complex(_float(parts[0]), 0.0)
    if len(parts) != 2:
        raise ValueError('complex values are written "re,im"')
    return complex(_float(parts[0]), _float(parts[1]))


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _grid(s):
    """``a:b:step`` (inclusive) or a comma list; must be finite and ascending."""
    s = s.strip()
    if ":" in s:
        a, b, h = (_float(x) for x in s.split(":"))
        if h <= 0:
            raise ValueError("grid step must be positive")
        n = int(math.floor((b - a) / h + 1e-9)) + 1
        vals = [round(a + i * h, 12) for i in range(n)]
    else:
        vals = [_float(x) for x in s.split(",") if x.strip()]
    if not vals:
        raise ValueError("empty grid")
    if any(y <= x for x, y in zip(vals, vals[1:])):
        raise ValueError("grid must be strictly ascending")
    return vals


def _intlist(s):
    vals = [_int(x) for x in s.split(",") if x.strip()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _systems(s):
    vals = [x.strip() for x in s.split(",") if x.strip()]
    bad = [x for x in vals if x not in PRESETS]
    if bad or not vals:
        raise ValueError(f"systems must be a list drawn from {sorted(PRESETS)}")
    return vals


def _str(s):
    return s.strip()


SCHEMA = {
    "system": {"preset": _str, "h1": _float, "h2": _float, "h3": _float, "v12": _complex, "v23": _complex},
    "observable": {"lambda": _float, "lambda1": _float, "lambda2": _float, "lambda3": _float},
    "initial": {"index": _int},
    "grape": {"l": _float, "eps": _float, "K_stop": _int, "I_err": _float, "T": _float, "D": _int,
              "shift": _float, "seed": _int, "exact_gradient": _bool, "step_halving": _bool,
              "record_history": _bool},
    "batch": {"L": _int, "threads": _int},
    "certify": {"n_dirs": _int, "seed": _int, "T": _float, "tol": _float},
    "experiment": {"L": _int, "l_grid": _grid, "l_grid_S1": _grid, "l_grid_S2": _grid, "M": _float,
                   "seeds": _intlist, "systems": _systems},
}


@dataclass
class RunConfig:
    system: ThreeLevelSystem = S2
    observable: Observable = field(default_factory=Observable)
    initial: InitialState = field(default_factory=InitialState)
    grape: GrapeConfig = field(default_factory=GrapeConfig)
    L: int = 100
    threads: int | None = None
    n_dirs: int = 100
    cert_seed: int = 0
    cert_T: float | None = None
    cert_tol: float = 1e-9
    experiment: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    explicit: set = field(default_factory=set)

    def to_dict(self) -> dict:
        s = self.system
        return {
            "system": {"h": [s.h1, s.h2, s.h3], "v12": [s.v12.real, s.v12.imag],
                       "v23": [s.v23.real, s.v23.imag], "name": s.name},
            "observable": [self.observable.lambda1, self.observable.lambda2, self.observable.lambda3],
            "initial": self.initial.basis_index,
            "grape": {k: getattr(self.grape, k) for k in self.grape.__dataclass_fields__},
            "L": self.L,
            "n_dirs": self.n_dirs,
            "cert_seed": self.cert_seed,
            "cert_T": self.cert_T,
            "experiment": self.experiment,
        }


def _parse_lines(text: str, source: str, entries: dict):
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", lineno, source=source)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, source=source)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno, source=source)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno, source=source)
        key, value = (x.strip() for x in line.split("=", 1))
        _store(entries, section, key, value, lineno, source)


def _store(entries, section, key, value, lineno, source):
    name = f"{section}.{key}"
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key '{key}'", lineno, name, source)
    try:
        parsed = SCHEMA[section][key](value)
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r}: {exc}", lineno, name, source) from None
    entries[name] = (parsed, lineno, source)


def parse_config(text: str = "", overrides=(), source: str = "<config>") -> RunConfig:
    """Parse config text plus ``section.key=value`` overrides into a :class:`RunConfig`."""
    entries: dict = {}
    _parse_lines(text, source, entries)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", source="--set")
        key, value = (x.strip() for x in item.split("=", 1))
        if "." not in key:
            raise ConfigError(f"override key {key!r} must be section.key", source="--set")
        section, k = key.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", field=key, source="--set")
        _store(entries, section, k, value, None, "--set")
    return _resolve(entries)


def load_config(path: str | None, overrides=()) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", source=str(path)) from None
    return parse_config(text, overrides, source=str(path) if path else "<config>")


def _resolve(entries: dict) -> RunConfig:
    def get(name, default=None):
        return entries[name][0] if name in entries else default

    def fail(msg, name):
        _, line, source = entries.get(name, (None, None, "<config>"))
        raise ConfigError(msg, line, name, source)

    cfg = RunConfig()
    cfg.values = {k: v[0] for k, v in entries.items()}
    cfg.explicit = set(entries)

    # system
    preset = get("system.preset")
    if preset is not None and preset not in PRESETS:
        fail(f"unknown preset {preset!r} (choose from {sorted(PRESETS)})", "system.preset")
    base = PRESETS.get(preset, S2)
    kw = {k: get(f"system.{k}", getattr(base, k)) for k in ("h1", "h2", "h3", "v12", "v23")}
    try:
        name = base.name if all(f"system.{k}" not in entries for k in kw) else ""
        cfg.system = ThreeLevelSystem(**kw, name=name)
    except ValueError as exc:
        bad = next((f"system.{k}" for k in ("v12", "v23") if kw[k] == 0), "system")
        fail(str(exc), bad)

    # observable
    try:
        if "observable.lambda" in entries:
            if any(f"observable.lambda{i}" in entries for i in (1, 2, 3)):
                fail("give either lambda or lambda1..3, not both", "observable.lambda")
            cfg.observable = Observable.population_contrast(get("observable.lambda"))
        elif any(f"observable.lambda{i}" in entries for i in (1, 2, 3)):
            cfg.observable = Observable(get("observable.lambda1", 1.0), get("observable.lambda2", -1.0),
                                        get("observable.lambda3", 0.0))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        fail(str(exc), next(k for k in entries if k.startswith("observable.")))

    if "initial.index" in entries:
        try:
            cfg.initial = InitialState(get("initial.index"))
        except ValueError as exc:
            fail(str(exc), "initial.index")

    gkw = {k.split(".", 1)[1]: v[0] for k, v in entries.items() if k.startswith("grape.")}
    try:
        cfg.grape = GrapeConfig(**gkw)
    except ValueError as exc:
        msg = str(exc)
        key = next((f"grape.{k}" for k in gkw if msg.startswith(k)), "grape")
        fail(msg, key)

    cfg.L = get("batch.L", cfg.L)
    if cfg.L < 1:
        fail("L must be >= 1", "batch.L")
    cfg.threads = get("batch.threads", None)
    if cfg.threads is not None and cfg.threads < 1:
        fail("threads must be >= 1", "batch.threads")
    cfg.n_dirs = get("certify.n_dirs", cfg.n_dirs)
    if cfg.n_dirs < 1:
        fail("n_dirs must be >= 1", "certify.n_dirs")
    cfg.cert_seed = get("certify.seed", cfg.cert_seed)
    cfg.cert_T = get("certify.T", None)
    if cfg.cert_T is not None and cfg.cert_T <= 0:
        fail("T must be positive", "certify.T")
    cfg.cert_tol = get("certify.tol", cfg.cert_tol)
    cfg.experiment = {k.split(".", 1)[1]: v[0] for k, v in entries.items() if k.startswith("experiment.")}
    if cfg.experiment.get("L", 1) < 1:
        fail("L must be >= 1", "experiment.L")
    return cfg
