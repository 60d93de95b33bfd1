"""GRAPE: fixed-step gradient ascent over piecewise-constant amplitudes.

A batch of ``L`` runs is advanced together through :class:`Propagator`;
finished runs drop out of the active set.  Run ``i`` of a batch draws its
initial control from ``Generator(Philox(sub_seed(seed, i)))`` where
``sub_seed(seed, i)`` is the first 64-bit word of
``SeedSequence(seed, spawn_key=(i,))``.  Results therefore depend only on
``(seed, i)`` and not on batch size, chunking or thread count.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dynamics import Propagator
from .model import InitialState, Observable, ThreeLevelSystem

__all__ = [
    "GrapeConfig",
    "GrapeRunRecord",
    "BatchSummary",
    "sub_seed",
    "initial_controls",
    "grape_run",
    "grape_batch",
    "grape_from_controls",
    "histogram",
    "default_threads",
]

logger = logging.getLogger(__name__)

HIST_BINS = 25
THREADS_ENV = "QLANDSCAPE_THREADS"


@dataclass(frozen=True)
class GrapeConfig:
    """Hyperparameters of one GRAPE run (or of every run in a batch).

    ``l`` is the half-width of the uniform initial distribution and ``shift``
    the offset ``M``: amplitudes are drawn from ``[-M - l, -M + l]``.
    """

    l: float = 1.0
    eps: float = 0.1
    K_stop: int = 1000
    I_err: float = 1e-5
    T: float = 10.0
    D: int = 200
    shift: float = 0.0
    seed: int = 0
    exact_gradient: bool = False
    step_halving: bool = False
    record_history: bool = False

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError("l must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if int(self.K_stop) != self.K_stop or self.K_stop < 0:
            raise ValueError("K_stop must be a non-negative integer")
        if not 0 < self.I_err < 1:
            raise ValueError("I_err must lie in (0, 1)")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.D) != self.D or self.D < 1:
            raise ValueError("D must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def j_stop(self, obs: Observable) -> float:
        return obs.max_value - self.I_err


@dataclass
class GrapeRunRecord:
    run_index: int
    seed: int
    initial_objective: float
    final_objective: float
    iterations: int
    succeeded: bool
    objective_history: np.ndarray | None = field(default=None, repr=False)
    gradient_norm_history: np.ndarray | None = field(default=None, repr=False)
    final_control: np.ndarray | None = field(default=None, repr=False)


def sub_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def initial_controls(cfg: GrapeConfig, indices) -> tuple[np.ndarray, list[int]]:
    seeds = [sub_seed(cfg.seed, i) for i in indices]
    C = np.empty((len(seeds), cfg.D))
    for row, s in enumerate(seeds):
        rng = np.random.Generator(np.random.Philox(s))
        C[row] = rng.uniform(-cfg.shift - cfg.l, -cfg.shift + cfg.l, size=cfg.D)
    return C, seeds


def _ascend(prop: Propagator, C: np.ndarray, cfg: GrapeConfig, j_stop: float):
    """Run the ascent loop on every row of ``C`` in place."""
    n = C.shape[0]
    J, g = prop.value_and_gradient(C, exact=cfg.exact_gradient)
    J0 = J.copy()
    iters = np.zeros(n, dtype=int)
    eps = np.full(n, float(cfg.eps))
    active = J < j_stop
    hist_J = [[float(x)] for x in J] if cfg.record_history else None
    hist_g = [[float(x)] for x in np.linalg.norm(g, axis=1)] if cfg.record_history else None

    for _ in range(int(cfg.K_stop)):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        C_old = C[idx]
        C_new = C_old + eps[idx, None] * g[idx]
        J_new, g_new = prop.value_and_gradient(C_new, exact=cfg.exact_gradient)
        iters[idx] += 1
        if cfg.step_halving:
            worse = J_new < J[idx]
            if np.any(worse):
                eps[idx[worse]] *= 0.5
                # rejected steps still consume an iteration
                C_new[worse] = C_old[worse]
                J_new[worse] = J[idx][worse]
                g_new[worse] = g[idx][worse]
        elif np.any(J_new < J[idx] - 1e-12):
            logger.debug("objective decreased on %d run(s); step may exceed stability threshold",
                         int(np.sum(J_new < J[idx] - 1e-12)))
        C[idx] = C_new
        J[idx] = J_new
        g[idx] = g_new
        active[idx] = J_new < j_stop
        if hist_J is not None:
            norms = np.linalg.norm(g_new, axis=1)
            for pos, r in enumerate(idx):
                hist_J[r].append(float(J_new[pos]))
                hist_g[r].append(float(norms[pos]))
    return J0, J, iters, hist_J, hist_g


def _run_chunk(sys, obs, init, cfg, indices, keep_controls):
    prop = Propagator(sys, obs, init, cfg.T, cfg.D)
    C, seeds = initial_controls(cfg, indices)
    j_stop = cfg.j_stop(obs)
    J0, J, iters, hist_J, hist_g = _ascend(prop, C, cfg, j_stop)
    out = []
    for row, i in enumerate(indices):
        out.append(
            GrapeRunRecord(
                run_index=int(i),
                seed=seeds[row],
                initial_objective=float(J0[row]),
                final_objective=float(J[row]),
                iterations=int(iters[row]),
                succeeded=bool(J[row] >= j_stop),
                objective_history=None if hist_J is None else np.array(hist_J[row]),
                gradient_norm_history=None if hist_g is None else np.array(hist_g[row]),
                final_control=C[row].copy() if keep_controls else None,
            )
        )
    return out


def grape_from_controls(sys: ThreeLevelSystem, obs: Observable, init: InitialState, cfg: GrapeConfig,
                        C0, keep_controls: bool = True) -> list[GrapeRunRecord]:
    """Run the ascent from caller-supplied initial controls (rows of ``C0``).

    Records carry ``seed = -1`` since no random draw was made.
    """
    C = np.array(C0, dtype=float, copy=True)
    if C.ndim != 2 or C.shape[1] != cfg.D:
        raise ValueError(f"initial controls must have shape (n, {cfg.D})")
    prop = Propagator(sys, obs, init, cfg.T, cfg.D)
    j_stop = cfg.j_stop(obs)
    J0, J, iters, hist_J, hist_g = _ascend(prop, C, cfg, j_stop)
    return [
        GrapeRunRecord(
            run_index=row, seed=-1,
            initial_objective=float(J0[row]), final_objective=float(J[row]),
            iterations=int(iters[row]), succeeded=bool(J[row] >= j_stop),
            objective_history=None if hist_J is None else np.array(hist_J[row]),
            gradient_norm_history=None if hist_g is None else np.array(hist_g[row]),
            final_control=C[row].copy() if keep_controls else None,
        )
        for row in range(C.shape[0])
    ]


def grape_run(sys: ThreeLevelSystem, obs: Observable, init: InitialState, cfg: GrapeConfig,
              run_index: int = 0, keep_control: bool = True) -> GrapeRunRecord:
    """One GRAPE run, seeded with ``sub_seed(cfg.seed, run_index)``.

    Failure to reach ``J_stop = lambda1 - I_err`` within ``K_stop``
    iterations is reported in the record, not raised.
    """
    return _run_chunk(sys, obs, init, cfg, [run_index], keep_control)[0]


def histogram(values, bins: int = HIST_BINS):
    """Equal-width histogram; returns ``(edges, counts)``.  Empty input gives empty arrays."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.array([]), np.array([], dtype=int)
    counts, edges = np.histogram(values, bins=bins)
    return edges, counts


@dataclass
class BatchSummary:
    config: GrapeConfig
    records: list[GrapeRunRecord]
    j_stop: float

    @property
    def L(self) -> int:
        return len(self.records)

    @property
    def n_fail(self) -> int:
        return sum(not r.succeeded for r in self.records)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iterations for r in self.records])

    @property
    def initial_objectives(self) -> np.ndarray:
        return np.array([r.initial_objective for r in self.records])

    @property
    def final_objectives(self) -> np.ndarray:
        return np.array([r.final_objective for r in self.records])

    def iteration_histogram(self, bins: int = HIST_BINS):
        """Histogram of iterations needed by the successful runs."""
        return histogram([r.iterations for r in self.records if r.succeeded], bins)

    def initial_objective_histogram(self, bins: int = HIST_BINS):
        return histogram(self.initial_objectives, bins)

    def runs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run_index", "seed", "initial_J", "final_J", "iterations", "succeeded"])
        for r in self.records:
            w.writerow([r.run_index, r.seed, fmt(r.initial_objective), fmt(r.final_objective),
                        r.iterations, int(r.succeeded)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "j_stop": self.j_stop,
            "L": self.L,
            "n_fail": self.n_fail,
            "runs": [
                {
                    "run_index": r.run_index,
                    "seed": r.seed,
                    "initial_J": r.initial_objective,
                    "final_J": r.final_objective,
                    "iterations": r.iterations,
                    "succeeded": r.succeeded,
                }
                for r in self.records
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fmt(x: float) -> str:
    """Float formatting used in every CSV: 17 significant digits."""
    return format(float(x), ".17g")


def histogram_csv(edges, counts) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "count"])
    for i, c in enumerate(counts):
        w.writerow([fmt(edges[i]), fmt(edges[i + 1]), int(c)])
    return buf.getvalue()


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def grape_batch(sys: ThreeLevelSystem, obs: Observable, init: InitialState, cfg: GrapeConfig,
                L: int, threads: int | None = None, keep_controls: bool = False) -> BatchSummary:
    """``L`` independent GRAPE runs; run ``i`` uses ``sub_seed(cfg.seed, i)``.

    With ``threads > 1`` the runs are split into contiguous chunks on a
    thread pool; the summary is assembled by run index.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    threads = default_threads() if threads is None else max(1, int(threads))
    indices = list(range(L))
    if threads == 1 or L == 1:
        records = _run_chunk(sys, obs, init, cfg, indices, keep_controls)
    else:
        chunks = [c.tolist() for c in np.array_split(indices, min(threads, L)) if len(c)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ix: _run_chunk(sys, obs, init, cfg, ix, keep_controls), chunks))
        records = [r for part in parts for r in part]
        records.sort(key=lambda r: r.run_index)
    return BatchSummary(cfg, records, cfg.j_stop(obs))


def with_overrides(cfg: GrapeConfig, **kw) -> GrapeConfig:
    return replace(cfg, **kw)
