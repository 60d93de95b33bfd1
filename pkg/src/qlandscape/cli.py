"""Command-line entry point: ``qlandscape <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 a numerical check failed
(uncertified trap, closed-form mismatch).  The default thread count comes
from ``QLANDSCAPE_THREADS``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .experiments import EXPERIMENTS, ExperimentSpec, csv_text, header_line, run_experiment, strip_header
from .grape import fmt, grape_batch, grape_run, histogram_csv
from .landscape import TrapClass, classify_trap, certify_trap_order
from .model import classify_controllability

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="config file ([section] key = value)")
    p.add_argument("--seed", type=int, help="base seed (grape.seed and certify.seed)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: $QLANDSCAPE_THREADS or 1)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one field, e.g. --set grape.eps=0.2 (repeatable)")
    p.add_argument("--system", choices=["S1", "S2"], help="shorthand for --set system.preset=NAME")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qlandscape", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"qlandscape {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="certify the trap order of zero control")
    _common(p)
    p = sub.add_parser("grape", help="one GRAPE run")
    _common(p)
    p.add_argument("--run-index", type=int, default=0)
    p = sub.add_parser("batch", help="L GRAPE runs with failure statistics")
    _common(p)
    p = sub.add_parser("experiment", help="run a named experiment recipe")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    _common(p)
    p = sub.add_parser("forms", help="closed-form table of the exact form engine")
    _common(p)
    p = sub.add_parser("classify", help="controllability and trap class of a system")
    _common(p)
    return ap


def _load(args):
    overrides = list(args.overrides)
    if args.system:
        overrides.insert(0, f"system.preset={args.system}")
    if args.seed is not None:
        overrides[:0] = [f"grape.seed={args.seed}", f"certify.seed={args.seed}"]
    if args.threads is not None:
        overrides.insert(0, f"batch.threads={args.threads}")
    return load_config(args.config, overrides)


def _write(out: Path | None, name: str, text: str):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _cmd_certify(cfg, out) -> int:
    cert = certify_trap_order(cfg.system, cfg.observable, n_dirs=cfg.n_dirs, seed=cfg.cert_seed,
                              T=cfg.cert_T, tol=cfg.cert_tol, threads=cfg.threads or 1)
    print(cert.to_text(), end="")
    _write(out, "certificate.json", cert.to_json() + "\n")
    _write(out, "certificate.txt", cert.to_text())
    return EXIT_OK if cert.open_case or cert.certified else EXIT_NUMERIC


def _cmd_grape(cfg, out, run_index) -> int:
    rec = grape_run(cfg.system, cfg.observable, cfg.initial, cfg.grape, run_index=run_index)
    d = {"run_index": rec.run_index, "seed": rec.seed, "initial_J": rec.initial_objective,
         "final_J": rec.final_objective, "iterations": rec.iterations, "succeeded": rec.succeeded,
         "j_stop": cfg.grape.j_stop(cfg.observable)}
    print(json.dumps(d, indent=2))
    if out is not None:
        _write(out, "run.json", json.dumps(d, indent=2) + "\n")
        _write(out, "control.csv", csv_text(["k", "c_k"], [[k, float(c)] for k, c in enumerate(rec.final_control)]))
    return EXIT_OK


def _cmd_batch(cfg, out) -> int:
    b = grape_batch(cfg.system, cfg.observable, cfg.initial, cfg.grape, cfg.L, threads=cfg.threads)
    print(f"L={b.L} N_fail={b.n_fail} j_stop={fmt(b.j_stop)}")
    if out is not None:
        files = {
            "runs.csv": header_line() + b.runs_csv(),
            "summary.json": b.to_json() + "\n",
            "hist_iterations.csv": header_line() + histogram_csv(*b.iteration_histogram()),
            "hist_initial_J.csv": header_line() + histogram_csv(*b.initial_objective_histogram()),
        }
        for name, text in files.items():
            _write(out, name, text)
        manifest = {"command": "batch", "version": __version__, "seed": cfg.grape.seed,
                    "config": cfg.to_dict(),
                    "files": {k: hashlib.sha256(strip_header(v).encode()).hexdigest() for k, v in sorted(files.items())}}
        _write(out, "batch.manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_experiment(cfg, out, name) -> int:
    spec = ExperimentSpec(name, cfg, out or Path("results") / name, threads=cfg.threads)
    result, paths = run_experiment(spec)
    for p in paths:
        print(p)
    print(json.dumps(result.summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK if result.ok else EXIT_NUMERIC


def _cmd_forms(cfg, out) -> int:
    spec = ExperimentSpec("forms_table", cfg, out or Path("."), threads=cfg.threads)
    result = EXPERIMENTS["forms_table"](spec)
    text = result.files["forms_table.csv"]
    print(text, end="")
    if out is not None:
        _write(out, "forms_table.csv", text)
    return EXIT_OK if result.ok else EXIT_NUMERIC


def _cmd_classify(cfg, out) -> int:
    s = cfg.system
    ver = classify_controllability(s, with_rank=True)
    trap, note = classify_trap(s, 1e-9)
    order = {TrapClass.ANHARMONIC: 3, TrapClass.SYMMETRIC_UNCONTROLLABLE: 3,
             TrapClass.HARMONIC_CONTROLLABLE: 7}.get(trap)
    d = {"h": [s.h1, s.h2, s.h3], "omega": [s.omega1, s.omega2],
         "controllability": ver.cls.value, "controllable": ver.controllable, "lie_rank": ver.lie_rank,
         "trap_class": trap.value, "expected_order": order, "note": ver.note or note}
    print(json.dumps(d, indent=2))
    _write(out, "classify.json", json.dumps(d, indent=2) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = _load(args)
        if args.command == "certify":
            return _cmd_certify(cfg, out)
        if args.command == "grape":
            return _cmd_grape(cfg, out, args.run_index)
        if args.command == "batch":
            return _cmd_batch(cfg, out)
        if args.command == "experiment":
            return _cmd_experiment(cfg, out, args.name)
        if args.command == "forms":
            return _cmd_forms(cfg, out)
        return _cmd_classify(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
