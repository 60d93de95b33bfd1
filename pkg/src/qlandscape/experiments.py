"""Experiment recipes: GRAPE statistics, trap certificates and the closed-form table.

Every recipe writes CSV files whose first line is a versioned comment
(``# qlandscape <version>``) followed by a mandatory header row, plus a
``<name>.manifest.json`` with the resolved configuration, the seeds and a
SHA-256 of every CSV body (the part after the version line).  Nothing time-
or host-dependent is written, so equal configs give byte-identical files.

Per-recipe defaults (``l``, ``eps``, grids, ``L``) apply unless the config
sets the corresponding key explicitly.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .closed_forms import (
    F4_PARAMETERS,
    a2_f1,
    a2_f2,
    a2_f3,
    k3_special,
    k4_f4,
    k4_special,
    k4_special_as_printed,
)
from .config import PRESETS, ConfigError, RunConfig
from .dyson import AnalyticControl, form_A, forms_K3_R3, forms_K4_R4
from .grape import GrapeConfig, fmt, grape_batch
from .landscape import certify_trap_order
from .model import S2, ThreeLevelSystem

__all__ = ["EXPERIMENTS", "ExperimentSpec", "ExperimentResult", "run_experiment", "forms_table",
           "header_line", "strip_header", "csv_text"]

# step size used for each system in the l sweeps
FAIL_EPS = {"S1": 0.1, "S2": 0.2}
L_GRID = {"S1": [round(0.1 * i, 12) for i in range(1, 11)],
          "S2": [round(0.1 * i, 12) for i in range(1, 41)]}


def header_line() -> str:
    return f"# qlandscape {__version__}\n"


def strip_header(text: str) -> str:
    """CSV body without the versioned first line."""
    return text.split("\n", 1)[1] if text.startswith("# qlandscape") else text


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return header_line() + buf.getvalue()


@dataclass
class ExperimentSpec:
    name: str
    config: RunConfig
    out_dir: Path
    threads: int | None = None


@dataclass
class ExperimentResult:
    name: str
    files: dict = field(default_factory=dict)   # file name -> text
    summary: dict = field(default_factory=dict)
    ok: bool = True

    def write(self, out_dir: Path, manifest: dict) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for fname, text in self.files.items():
            p = out_dir / fname
            with open(p, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            paths.append(p)
        manifest = dict(manifest)
        manifest["files"] = {
            k: hashlib.sha256(strip_header(v).encode()).hexdigest() for k, v in sorted(self.files.items())
        }
        manifest["summary"] = self.summary
        p = out_dir / f"{self.name}.manifest.json"
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        paths.append(p)
        return paths


def _grape_cfg(cfg: RunConfig, **recipe) -> GrapeConfig:
    """Recipe values fill in every grape field the user did not set explicitly."""
    kw = {k: v for k, v in recipe.items() if f"grape.{k}" not in cfg.explicit}
    return replace(cfg.grape, **kw)


def _exp(cfg: RunConfig, key, default):
    return cfg.experiment.get(key, default)


def _seeds(cfg: RunConfig) -> list[int]:
    return list(_exp(cfg, "seeds", [cfg.grape.seed]))


def _systems(cfg: RunConfig, default) -> list[str]:
    return list(_exp(cfg, "systems", default))


def _grid(cfg: RunConfig, name: str) -> list[float]:
    return list(_exp(cfg, f"l_grid_{name}", _exp(cfg, "l_grid", L_GRID[name])))


# ---------------------------------------------------------------------------
# recipes


def _grad_trace(spec: ExperimentSpec) -> ExperimentResult:
    cfg = spec.config
    cases = [("S1", 1.0, 0.1), ("S2", 4.0, 0.2), ("S2", 4.0, 0.1)]
    rows, summary = [], {}
    for name, l, eps in cases:
        g = replace(_grape_cfg(cfg, l=l, eps=eps, D=200, I_err=1e-5), record_history=True)
        rec = grape_batch(PRESETS[name], cfg.observable, cfg.initial, g, 1, threads=1).records[0]
        tag = f"{name}_eps{g.eps:g}"
        summary[tag] = {"iterations": rec.iterations, "final_J": rec.final_objective,
                        "succeeded": rec.succeeded, "l": g.l, "eps": g.eps, "seed": rec.seed}
        if rec.iterations == 0:
            continue
        for k, (J, gn) in enumerate(zip(rec.objective_history, rec.gradient_norm_history)):
            rows.append([name, float(g.l), float(g.eps), k, float(gn), float(J)])
    text = csv_text(["system", "l", "eps", "iteration", "gradient_norm", "objective"], rows)
    return ExperimentResult("grad_trace", {"grad_trace.csv": text}, summary)


def _fail_vs_l(spec: ExperimentSpec, name="fail_vs_l", I_err: float | None = None) -> ExperimentResult:
    cfg = spec.config
    L = int(_exp(cfg, "L", 100))
    rows, summary = [], {}
    for sname in _systems(cfg, ["S1", "S2"]):
        eps = FAIL_EPS[sname]
        for seed in _seeds(cfg):
            for l in _grid(cfg, sname):
                kw = {"l": l, "eps": eps, "seed": seed, "shift": 0.0}
                if I_err is not None:
                    kw["I_err"] = I_err
                g = _grape_cfg(cfg, **kw)
                g = replace(g, l=l, seed=seed)
                b = grape_batch(PRESETS[sname], cfg.observable, cfg.initial, g, L, threads=spec.threads)
                rows.append([sname, float(l), seed, L, b.n_fail])
                summary.setdefault(sname, {}).setdefault(str(seed), []).append(b.n_fail)
    text = csv_text(["system", "l", "seed", "L", "N_fail"], rows)
    return ExperimentResult(name, {f"{name}.csv": text}, summary)


def _fail_vs_l_shifted(spec: ExperimentSpec) -> ExperimentResult:
    cfg = spec.config
    L = int(_exp(cfg, "L", 100))
    M = float(_exp(cfg, "M", 3.0))
    rows, summary = [], {}
    for sname in _systems(cfg, ["S2"]):
        eps = FAIL_EPS[sname]
        for seed in _seeds(cfg):
            for l in _grid(cfg, sname):
                counts = []
                for shift in (0.0, M):
                    g = replace(_grape_cfg(cfg, eps=eps), l=l, seed=seed, shift=shift)
                    b = grape_batch(PRESETS[sname], cfg.observable, cfg.initial, g, L, threads=spec.threads)
                    counts.append(b.n_fail)
                rows.append([sname, float(l), M, seed, L, counts[0], counts[1]])
                summary.setdefault(sname, {}).setdefault(str(seed), []).append(counts)
    text = csv_text(["system", "l", "M", "seed", "L", "N_fail_centered", "N_fail_shifted"], rows)
    return ExperimentResult("fail_vs_l_shifted", {"fail_vs_l_shifted.csv": text}, summary)


def _histograms(spec: ExperimentSpec, name="histograms", l_S2: float = 3.0,
                I_err: float | None = None) -> ExperimentResult:
    cfg = spec.config
    L = int(_exp(cfg, "L", 1000))
    it_rows, j_rows, summary = [], [], {}
    for sname, l, eps in (("S1", 1.0, 0.1), ("S2", l_S2, 0.2)):
        kw = {"l": l, "eps": eps, "shift": 0.0}
        if I_err is not None:
            kw["I_err"] = I_err
        g = _grape_cfg(cfg, **kw)
        b = grape_batch(PRESETS[sname], cfg.observable, cfg.initial, g, L, threads=spec.threads)
        edges, counts = b.iteration_histogram()
        for i, c in enumerate(counts):
            it_rows.append([sname, float(edges[i]), float(edges[i + 1]), int(c)])
        edges, counts = b.initial_objective_histogram()
        for i, c in enumerate(counts):
            j_rows.append([sname, float(edges[i]), float(edges[i + 1]), int(c)])
        summary[sname] = {"L": L, "l": g.l, "eps": g.eps, "n_fail": b.n_fail}
    head = ["system", "bin_left", "bin_right", "count"]
    files = {f"{name}_iterations.csv": csv_text(head, it_rows), f"{name}_initial_J.csv": csv_text(head, j_rows)}
    return ExperimentResult(name, files, summary)


def _stop_scatter(spec: ExperimentSpec) -> ExperimentResult:
    cfg = spec.config
    L = int(_exp(cfg, "L", 100))
    M = float(_exp(cfg, "M", 3.0))
    panels = [("a", "S1", 0.1, 0.0), ("b", "S1", 0.1, M), ("c", "S1", 0.5, 0.0), ("d", "S1", 0.5, M),
              ("e", "S2", 0.6, 0.0), ("f", "S2", 0.6, M), ("g", "S2", 3.7, 0.0), ("h", "S2", 3.7, M)]
    rows, summary = [], {}
    for panel, sname, l, shift in panels:
        g = replace(_grape_cfg(cfg, eps=FAIL_EPS[sname]), l=l, shift=shift)
        b = grape_batch(PRESETS[sname], cfg.observable, cfg.initial, g, L, threads=spec.threads)
        for r in b.records:
            rows.append([panel, sname, float(l), float(shift), r.run_index, r.final_objective, int(r.succeeded)])
        summary[panel] = {"system": sname, "l": l, "M": shift, "n_fail": b.n_fail}
    text = csv_text(["panel", "system", "l", "M", "run_index", "final_J", "succeeded"], rows)
    return ExperimentResult("stop_scatter", {"stop_scatter.csv": text}, summary)


def _trap_cert(spec: ExperimentSpec) -> ExperimentResult:
    cfg = spec.config
    systems = [PRESETS[n] for n in _systems(cfg, ["S1", "S2"])]
    certs = [certify_trap_order(s, cfg.observable, n_dirs=cfg.n_dirs, seed=cfg.cert_seed, T=cfg.cert_T,
                                tol=cfg.cert_tol, threads=spec.threads or 1) for s in systems]
    rows = []
    for s, c in zip(systems, certs):
        for e in c.evidence:
            rows.append([s.name, e.direction_id, e.kind] + [float("nan") if v is None else float(v)
                                                            for v in (e.J2, e.J4, e.J6, e.J8)])
    files = {
        "trap_cert.csv": csv_text(["system", "direction_id", "kind", "J2", "J4", "J6", "J8"], rows),
        "trap_cert.json": json.dumps({s.name: c.to_dict() for s, c in zip(systems, certs)}, indent=2) + "\n",
        "trap_cert.txt": "".join(f"== {s.name}\n{c.to_text()}" for s, c in zip(systems, certs)),
    }
    summary = {s.name: {"verdict": c.verdict, "witness": c.witness_name, "value": c.witness_value}
               for s, c in zip(systems, certs)}
    ok = all(c.certified for c in certs)
    return ExperimentResult("trap_cert", files, summary, ok)


def forms_table() -> list[dict]:
    """Exact-engine values next to the closed forms they must reproduce."""
    v12, v23 = 1.0 + 0.0j, 1.7 + 0.0j
    rows = []

    def add(name, computed, closed, rel=True):
        diff = abs(computed - closed)
        rows.append({"name": name, "computed": complex(computed), "closed": complex(closed),
                     "abs_diff": diff, "rel_diff": diff / abs(closed) if rel and closed != 0 else diff})

    def lam(w1, w2):
        return ThreeLevelSystem(0.0, w1, w1 + w2, v12, v23)

    T1 = 10.0
    w1 = 1.3
    add("A2_13_f1", form_A(lam(w1, 0.0), 1, 3, 2, AnalyticControl.constant(1.0, T1)), a2_f1(v12, v23, w1, T1))
    f2 = AnalyticControl.constant(1.0, 2 * math.pi)
    add("A1_23_f2", form_A(lam(0.37, 1.0), 2, 3, 1, f2), 0j, rel=False)
    add("A2_13_f2_omega1_0.37", form_A(lam(0.37, 1.0), 1, 3, 2, f2), a2_f2(v12, v23, 0.37))
    add("A2_13_f2_omega1_0", form_A(lam(0.0, 1.0), 1, 3, 2, f2), a2_f2(v12, v23, 0.0))
    add("A2_13_f2_omega1_-1", form_A(lam(-1.0, 1.0), 1, 3, 2, f2), a2_f2(v12, v23, -1.0))
    for n, A, B in ((2, 1.0, 0.5), (3, 0.7, -1.1), (-2, 1.0, 0.25)):
        f3 = AnalyticControl.trig_polynomial(0.0, cos={abs(n): A}, sin={abs(n): B if n > 0 else -B},
                                             freq=1.0, support=2 * math.pi, T=2 * math.pi)
        add(f"A2_13_f3_n{n}", form_A(lam(float(n), 1.0), 1, 3, 2, f3), a2_f3(v12, v23, n, A, B))
    for A, B, C in ((1.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.3, -0.8, 1.7)):
        f = AnalyticControl.special_family(A, B, C)
        K3, R3 = forms_K3_R3(f)
        K4, R4 = forms_K4_R4(f)
        tag = f"{A:g}_{B:g}_{C:g}"
        add(f"K3_{tag}", K3, k3_special(A, B, C))
        add(f"R3_plus_2K3_{tag}", R3 + 2 * K3, 0j, rel=False)
        add(f"K4_{tag}", K4, k4_special(A, B, C))
        add(f"K4_as_printed_{tag}", K4, k4_special_as_printed(A, B, C))
        add(f"R4_plus_K4_{tag}", R4 + K4, 0j, rel=False)
    f4 = AnalyticControl.special_family(*F4_PARAMETERS)
    K3, R3 = forms_K3_R3(f4)
    K4, R4 = forms_K4_R4(f4)
    add("K3_f4", K3, 0j, rel=False)
    add("R3_f4", R3, 0j, rel=False)
    add("K4_f4", K4, k4_f4())
    add("R4_f4", R4, -k4_f4())
    zero = AnalyticControl.zero(2 * math.pi)
    add("A1_23_zero", form_A(S2, 2, 3, 1, zero), 0j, rel=False)
    add("A2_13_zero", form_A(S2, 1, 3, 2, zero), 0j, rel=False)
    add("K3_zero", forms_K3_R3(zero)[0], 0j, rel=False)
    add("K4_zero", forms_K4_R4(zero)[0], 0j, rel=False)
    return rows


def _forms_table(spec: ExperimentSpec) -> ExperimentResult:
    rows = forms_table()
    out = [[r["name"], r["computed"].real, r["computed"].imag, r["closed"].real, r["closed"].imag,
            float(r["abs_diff"]), float(r["rel_diff"])] for r in rows]
    text = csv_text(["name", "computed_re", "computed_im", "closed_re", "closed_im", "abs_diff", "rel_diff"], out)
    bad = [r["name"] for r in rows if r["rel_diff"] > 1e-9 and "as_printed" not in r["name"]]
    return ExperimentResult("forms_table", {"forms_table.csv": text}, {"mismatches": bad}, not bad)


EXPERIMENTS = {
    "grad_trace": _grad_trace,
    "fail_vs_l": _fail_vs_l,
    "fail_vs_l_loose": lambda s: _fail_vs_l(s, "fail_vs_l_loose", I_err=0.1),
    "fail_vs_l_shifted": _fail_vs_l_shifted,
    "histograms": _histograms,
    "histograms_l4": lambda s: _histograms(s, "histograms_l4", l_S2=4.0),
    "stop_scatter": _stop_scatter,
    "trap_cert": _trap_cert,
    "forms_table": _forms_table,
}


def run_experiment(spec: ExperimentSpec) -> tuple[ExperimentResult, list[Path]]:
    """Run a named recipe and write its files plus manifest into ``spec.out_dir``."""
    if spec.name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {spec.name!r} (choose from {sorted(EXPERIMENTS)})",
                          field="experiment")
    out = Path(spec.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}", field="--out") from None
    result = EXPERIMENTS[spec.name](spec)
    manifest = {"experiment": spec.name, "version": __version__, "seed": spec.config.grape.seed,
                "config": spec.config.to_dict()}
    return result, result.write(out, manifest)
