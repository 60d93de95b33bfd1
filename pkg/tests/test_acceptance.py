"""Acceptance suite.  Each criterion records a PASS/FAIL line (shown in the
terminal summary) and then asserts, so a red criterion is also a red test."""
import json
import math
import time
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlandscape import closed_forms as cf
from qlandscape.cli import main
from qlandscape.dynamics import Propagator, gradient
from qlandscape.dyson import AnalyticControl, expand_paths, form_A, forms_K3_R3, forms_K4_R4, forms_to
from qlandscape.experiments import strip_header
from qlandscape.grape import GrapeConfig, grape_batch
from qlandscape.landscape import (
    TrapClass,
    certify_trap_order,
    directional_scaling_check,
    variation,
    witness_anharmonic,
    witness_harmonic,
)
from qlandscape.model import S1, S2, InitialState, Observable, PiecewiseControl, ThreeLevelSystem
from qlandscape.smallmat import expm_unitary

from conftest import hermitian, record, systems

OBS = Observable()
PSI3 = InitialState(3)
TWO_PI = 2 * math.pi
V12, V23 = 1.0, 1.7


def chain(w1, w2, v12=V12, v23=V23):
    return ThreeLevelSystem(0.0, w1, w1 + w2, v12, v23)


def rel(a, b):
    return abs(a - b) / abs(b)


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_closed_forms():
    t0 = time.perf_counter()
    errs = {}
    T, w1 = 7.0, 1.3
    errs["f1"] = rel(form_A(chain(w1, 0.0), 1, 3, 2, AnalyticControl.constant(1.0, T)), cf.a2_f1(V12, V23, w1, T))
    f2 = AnalyticControl.constant(1.0, TWO_PI)
    for w in (0.37, 2.6, 0.0, -1.0):
        errs[f"f2 omega1={w:g}"] = rel(form_A(chain(w, 1.0), 1, 3, 2, f2), cf.a2_f2(V12, V23, w))
    errs["f2 omega1=0 literal"] = rel(form_A(chain(0.0, 1.0), 1, 3, 2, f2), -2j * math.pi * V12 * V23)
    errs["f2 omega1=-1 literal"] = rel(form_A(chain(-1.0, 1.0), 1, 3, 2, f2), 2j * math.pi * V12 * V23)
    for n, A, B in ((2, 1.0, 0.5), (3, -0.4, 1.2), (-3, 0.8, 0.3)):
        f3 = AnalyticControl.trig_polynomial(0.0, cos={n: A}, sin={n: B}, support=TWO_PI)
        errs[f"f3 n={n}"] = rel(form_A(chain(float(n), 1.0), 1, 3, 2, f3), cf.a2_f3(V12, V23, n, A, B))
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= 1e-10 and dt < 1.0
    record(1, "second-order closed forms", ok, f"max rel err {errs[worst]:.2e} ({worst}); {dt:.2f} s")
    assert ok


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_special_family():
    t0 = time.perf_counter()
    f4 = AnalyticControl.special_family(*cf.F4_PARAMETERS)
    K3, R3 = forms_K3_R3(f4)
    K4, R4 = forms_K4_R4(f4)
    rng = np.random.default_rng(2)
    worst3 = worst4 = 0.0
    for A, B, C in rng.uniform(-1, 1, size=(50, 3)):
        f = AnalyticControl.special_family(A, B, C)
        k3, r3 = forms_K3_R3(f)
        k4, r4 = forms_K4_R4(f)
        worst3 = max(worst3, abs(r3 + 2 * k3) / max(1.0, abs(k3)))
        worst4 = max(worst4, abs(r4 + k4) / max(1.0, abs(k4)))
    dt = time.perf_counter() - t0
    k4_err = rel(K4, cf.k4_f4())
    ok = max(abs(K3), abs(R3)) <= 1e-10 and worst3 <= 1e-10 and worst4 <= 1e-10 and k4_err <= 1e-9 and dt < 10
    record(2, "special family", ok,
           f"|K3|,|R3| at f4 {abs(K3):.1e},{abs(R3):.1e}; R3+2K3 {worst3:.1e}; R4+K4 {worst4:.1e}; "
           f"K4<f4> rel {k4_err:.1e}; {dt:.1f} s")
    assert ok


# -- 3 ------------------------------------------------------------------------


def test_criterion_3_certificates():
    t0 = time.perf_counter()
    c1 = certify_trap_order(S1, OBS, n_dirs=100)
    c2 = certify_trap_order(S2, OBS, n_dirs=100)
    c_open = certify_trap_order(S2.with_couplings(v23=S2.v12), OBS, n_dirs=100)
    c_sym = certify_trap_order(chain(1.0, -1.0), OBS, n_dirs=100)
    dt = time.perf_counter() - t0
    rep = variation(S2, OBS, c2.witness)
    j8_ok = rep.J8 > 0 and abs(rep.J8 - OBS.lambda1 * abs(rep.form(1, 4)) ** 2) <= 1e-10 * rep.J8
    parts = {
        "S1 order 3": c1.certified and c1.order == 3,
        "S2 order 7, f4, J8 = l1|A4|^2 > 0": c2.certified and c2.order == 7 and c2.witness_name == "f4" and j8_ok,
        "|v12|=|v23| open": c_open.open_case and c_open.verdict == "OpenCase",
        "omega1=-omega2 order 3": c_sym.system_class == TrapClass.SYMMETRIC_UNCONTROLLABLE and c_sym.certified
        and c_sym.order == 3,
        "runtime < 60 s": dt < 60,
    }
    ok = all(parts.values())
    record(3, "trap certificates", ok,
           "; ".join(f"{k} {'ok' if v else 'NO'}" for k, v in parts.items()) + f"; J8={rep.J8:.6g}; {dt:.1f} s")
    assert ok


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_scaling():
    t0 = time.perf_counter()
    eps = np.logspace(-1, -2.5, 7)
    r1 = directional_scaling_check(S1, OBS, witness_anharmonic(S1), 4, eps_grid=eps)
    r2 = directional_scaling_check(S2, OBS, witness_harmonic(S2), 8, eps_grid=eps)
    dt = time.perf_counter() - t0

    def converged(r):
        g = list(r.coefficient_gaps.values())
        return g[0] <= 0.1 and (g[1] < g[0] or g[0] < 1e-12)

    # growth at eighth order is a small-eps statement; at eps = 0.1 the eps^10 term still competes
    small = r2.eps < 0.06
    grows = bool(np.all(r2.objective[small] > 0))
    j_slope = float(np.polyfit(np.log(r2.eps[small]), np.log(np.abs(r2.objective[small])), 1)[0]) if grows else 0.0
    ok = (r1.passed and r2.passed and converged(r1) and converged(r2)
          and grows and abs(j_slope - 8) < 0.3 and dt < 300)
    record(4, "order-of-vanishing scaling", ok,
           f"S1 n=4 slope {r1.slope:.2f} (>= 4.7); S2 n=8 slope {r2.slope:.2f} (>= 8.7); "
           f"S2 c8 gap {r2.coefficient_gaps} ratio {r2.refinement_ratio:.2f}; "
           f"J(eps f4) > 0 for eps < 0.06: {grows}, log-slope {j_slope:.2f}; "
           f"J at eps=0.1: {r2.objective[0]:.3e}; {dt:.0f} s")
    assert ok


# -- 5 ------------------------------------------------------------------------


def _oracle_steps(sys, c, dt):
    """Step propagators by numpy's dense eigensolver, independent of the package."""
    H = sys.H0[None] + np.asarray(c)[:, None, None] * sys.V[None]
    w, Q = np.linalg.eigh(H)
    return np.einsum("kij,kj,klj->kil", Q, np.exp(-1j * w * dt), Q.conj())


def _oracle_fd(sys, obs, c, T, h=1e-3):
    """Richardson-extrapolated central differences of the discretised objective."""
    c = np.asarray(c, dtype=float)
    D = c.size
    dt = T / D
    U = _oracle_steps(sys, c, dt)
    rho = np.zeros((3, 3), complex)
    rho[2, 2] = 1.0
    O = obs.matrix
    pre = [np.eye(3, dtype=complex)]
    for k in range(D):
        pre.append(U[k] @ pre[-1])
    suf = [np.eye(3, dtype=complex)]
    for k in range(D - 1, -1, -1):
        suf.append(suf[-1] @ U[k])
    suf = suf[::-1]   # suf[k+1] = U_{D-1} ... U_{k+1}
    g = np.empty(D)
    for k in range(D):
        vals = {}
        for s in (-2, -1, 1, 2):
            Uk = _oracle_steps(sys, [c[k] + s * h], dt)[0]
            W = suf[k + 1] @ Uk @ pre[k]
            vals[s] = np.trace(W @ rho @ W.conj().T @ O).real
        g[k] = (8 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12 * h)
    return g


def _rel_inf(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def test_criterion_5_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    lit, ex = [], []
    for i in range(100):
        if i % 3 == 0:
            sys_ = S1
        elif i % 3 == 1:
            sys_ = S2
        else:
            h = np.sort(rng.uniform(-2, 2, 3))
            sys_ = ThreeLevelSystem(h[0], h[1], h[2], rng.uniform(0.3, 2) * np.exp(1j * rng.uniform(-3, 3)),
                                    rng.uniform(0.3, 2))
        D = int(rng.integers(5, 51))
        T = float(rng.uniform(2, 10))
        pc = PiecewiseControl(rng.normal(0, 1, D), T)
        fd = _oracle_fd(sys_, OBS, pc.coefficients, T)
        lit.append(_rel_inf(gradient(sys_, OBS, PSI3, pc), fd))
        ex.append(_rel_inf(gradient(sys_, OBS, PSI3, pc, exact=True), fd))
    # O(dt) caveat: the same smooth controls at D = 50 and D = 400
    ratio = []
    for j in range(5):
        f = AnalyticControl.trig_polynomial(rng.normal(), cos={1: rng.normal(), 2: rng.normal()},
                                            sin={1: rng.normal()}, freq=TWO_PI / 10.0, support=10.0)
        e = {}
        for D in (50, 400):
            pc = PiecewiseControl(f.cell_averages(D), 10.0)
            e[D] = _rel_inf(gradient(S1, OBS, PSI3, pc), _oracle_fd(S1, OBS, pc.coefficients, 10.0))
        ratio.append(e[50] / e[400])
    dt = time.perf_counter() - t0
    ok = max(lit) <= 1e-5 and dt < 60
    record(5, "printed gradient vs central FD (100 instances, D <= 50)", ok,
           f"max rel err {max(lit):.3e}, median {np.median(lit):.3e}; exact discrete gradient max {max(ex):.2e}; "
           f"err(D=50)/err(D=400) median {np.median(ratio):.2f} (first order in dt gives 8); {dt:.0f} s")
    # the exact variant is the control that the oracle itself is sound
    assert max(ex) <= 1e-7
    assert ok


# -- 6 ------------------------------------------------------------------------

SEEDS = (0, 1, 2)
L_RUNS = 100


@lru_cache(maxsize=None)
def n_fail(system: str, l: float, shift: float, seed: int) -> int:
    sys_ = {"S1": S1, "S2": S2}[system]
    eps = {"S1": 0.1, "S2": 0.2}[system]
    cfg = GrapeConfig(l=l, eps=eps, T=10.0, D=200, I_err=1e-5, K_stop=1000, shift=shift, seed=seed)
    return grape_batch(sys_, OBS, PSI3, cfg, L_RUNS).n_fail


def mean_fail(system, l, shift=0.0):
    counts = [n_fail(system, round(l, 12), shift, s) for s in SEEDS]
    return float(np.mean(counts)), counts


def test_criterion_6_grape_statistics():
    t0 = time.perf_counter()
    s1, c1 = mean_fail("S1", 1.0)
    s2, c2 = mean_fail("S2", 3.7)
    sh06, c3 = mean_fail("S2", 0.6, 3.0)
    sh37, c4 = mean_fail("S2", 3.7, 3.0)
    parts = [
        ("S1 l=1 N_fail = 0", s1 == 0, c1),
        ("S2 l=3.7 N_fail <= 5", s2 <= 5, c2),
        ("S2 shifted l=0.6 N_fail >= 95", sh06 >= 95, c3),
        ("S2 shifted l=3.7 N_fail in [35, 65]", 35 <= sh37 <= 65, c4),
    ]
    dt = time.perf_counter() - t0
    ok = all(p[1] for p in parts)
    for label, pok, counts in parts:
        record(6, label, pok, f"per seed {counts}, mean {np.mean(counts):.1f}")
    print(f"criterion 6 point clauses: {dt:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_6_monotone_trend():
    t0 = time.perf_counter()
    details, ok = [], True
    for system, grid in (("S1", [round(0.1 * i, 12) for i in range(1, 11)]),
                         ("S2", [round(0.1 * i, 12) for i in range(1, 41)])):
        means = [mean_fail(system, l)[0] for l in grid]
        worst = max(b - a for a, b in zip(means, means[1:]))
        ok &= worst <= 5
        details.append(f"{system} means {[round(m, 1) for m in means]} max rise {worst:.1f}")
    dt = time.perf_counter() - t0
    record(6, "N_fail trend in l non-increasing within 5", ok, "; ".join(details) + f"; {dt:.0f} s")
    assert ok


# -- 7 ------------------------------------------------------------------------


def _run_property(label, test, count):
    try:
        test()
    except Exception as exc:
        record(7, label, False, f"{type(exc).__name__}: {str(exc).splitlines()[0][:200]}")
        raise
    return record(7, label, count[0] >= 100, f"{count[0]} cases")


@st.composite
def controls(draw):
    T = draw(st.floats(2.0, 8.0))
    c = draw(st.lists(st.floats(-1, 1), min_size=5, max_size=5))
    return AnalyticControl.trig_polynomial(c[0], cos={1: c[1], 2: c[2]}, sin={1: c[3], 3: c[4]},
                                           freq=TWO_PI / T, support=T, T=T)


def test_criterion_7_parity():
    count = [0]

    @settings(max_examples=100)
    @given(systems(), controls())
    def check(sys_, f):
        count[0] += 1
        forms = forms_to(sys_, f, max_order=8)
        for n in range(1, 9):
            zero = (1, n) if n % 2 else (2, n)
            assert expand_paths(sys_, zero[0], 3, n).is_empty and forms[zero] == 0

    assert _run_property("parity zeros of A^n (exact)", check, count)


def test_criterion_7_unitarity_group():
    count = [0]

    @settings(max_examples=100)
    @given(hermitian(), st.floats(-3, 3), st.floats(-3, 3))
    def check(H, s, t):
        count[0] += 1
        U = expm_unitary(H, s)
        assert np.max(np.abs(U.conj().T @ U - np.eye(3))) <= 1e-12
        assert np.max(np.abs(expm_unitary(H, s) @ expm_unitary(H, t) - expm_unitary(H, s + t))) <= 1e-12 * (
            1 + abs(s) + abs(t))

    assert _run_property("unitarity and group property", check, count)


def test_criterion_7_objective_bounds():
    count = [0]

    @settings(max_examples=100)
    @given(systems(), st.integers(1, 30), st.integers(0, 2**32 - 1), st.floats(0.5, 1.5))
    def check(sys_, D, seed, lam):
        count[0] += 1
        obs = Observable.population_contrast(lam)
        C = np.random.default_rng(seed).normal(0, 2, (4, D))
        J = Propagator(sys_, obs, PSI3, 5.0, D).objective(C)
        assert np.all(J >= obs.lambda2 - 1e-12) and np.all(J <= obs.lambda1 + 1e-12)

    assert _run_property("objective bounds [lambda2, lambda1]", check, count)


def test_criterion_7_harmonic_factorisation():
    count = [0]

    @settings(max_examples=100)
    @given(st.floats(0.2, 3.0), st.floats(0.3, 2.0), controls())
    def check(w, v23, f):
        count[0] += 1
        a2 = form_A(chain(w, w, 1.0, v23), 1, 3, 2, f)
        m = f.integral(-1j * w)
        assert abs(a2 - 0.5 * v23 * m * m) <= 1e-10 * (1 + abs(a2))

    assert _run_property("harmonic factorisation of A^2_13", check, count)


def test_criterion_7_lambda3_shift():
    count = [0]

    @settings(max_examples=100)
    @given(systems(), st.integers(1, 20), st.integers(0, 2**32 - 1), st.integers(-16, 16))
    def check(sys_, D, seed, k):
        count[0] += 1
        l3 = k / 8   # dyadic, so eigenvalue differences are exact
        shifted = Observable(1.0 + l3, -1.0 + l3, l3)
        C = np.random.default_rng(seed).normal(0, 1, (3, D))
        a = Propagator(sys_, shifted, PSI3, 4.0, D)
        b = Propagator(sys_, OBS, PSI3, 4.0, D)
        Ja, ga = a.value_and_gradient(C)
        Jb, gb = b.value_and_gradient(C)
        assert np.allclose(Ja - l3, Jb, atol=1e-13, rtol=0)
        assert np.allclose(ga, gb, atol=1e-12, rtol=0)
        f = AnalyticControl.piecewise_constant(C[0], 4.0)
        va, vb = variation(sys_, shifted, f, max_order=4), variation(sys_, OBS, f, max_order=4)
        assert (va.J2, va.J4) == (vb.J2, vb.J4)

    assert _run_property("lambda3-shift landscape equivalence", check, count)


# -- 8 ------------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path, monkeypatch):
    args = ["batch", "--system", "S2", "--seed", "8", "--set", "batch.L=12", "--set", "grape.l=3.7",
            "--set", "grape.eps=0.2"]
    dirs = [tmp_path / "a", tmp_path / "b", tmp_path / "c"]
    assert main(args + ["--out", str(dirs[0])]) == 0
    assert main(args + ["--out", str(dirs[1])]) == 0
    monkeypatch.setenv("QLANDSCAPE_THREADS", "4")
    assert main(args + ["--out", str(dirs[2])]) == 0
    names = ["runs.csv", "hist_iterations.csv", "hist_initial_J.csv"]
    same = all(strip_header((dirs[0] / n).read_text()) == strip_header((d / n).read_text())
               for d in dirs[1:] for n in names)
    raw_same = all((dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names)
    m = [json.loads((d / "batch.manifest.json").read_text())["files"] for d in dirs]
    ok = same and raw_same and m[0] == m[1] == m[2]
    rows = len(strip_header((dirs[0] / "runs.csv").read_text()).splitlines()) - 1
    record(8, "byte-identical batch CSV", ok, f"{rows} runs, 3 invocations (1 thread twice, 4 threads once)")
    assert ok
