import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from qlandscape.dynamics import (
    Propagator,
    fd_gradient,
    gradient,
    objective,
    propagate,
    trace_from_json,
    trace_to_json,
)
from qlandscape.model import S1, S2, InitialState, Observable, PiecewiseControl, ThreeLevelSystem

from conftest import systems

OBS = Observable(1.0, -1.0, 0.0)
PSI3 = InitialState(3)


def ode_propagator(sys, control: PiecewiseControl):
    # independent route: DOP853 on i dU/dt = (H0 + f V) U, one solve per step
    H0, V = sys.H0, sys.V
    U = np.eye(3, dtype=complex)
    for k, c in enumerate(control.coefficients):
        H = H0 + c * V

        def rhs(t, y, H=H):
            return (-1j * H @ y.reshape(3, 3)).ravel()

        sol = solve_ivp(rhs, (0.0, control.dt), U.ravel(), method="DOP853", rtol=1e-13, atol=1e-14)
        U = sol.y[:, -1].reshape(3, 3)
    return U


def test_zero_control_is_diagonal():
    tr = propagate(S1, PiecewiseControl(np.zeros(200), 10.0))
    assert np.allclose(tr.final, np.diag(np.exp(-1j * np.array([0, 10, 25]))), atol=1e-12)


def test_constant_refinement():
    a = propagate(S2, PiecewiseControl([0.3], 10.0)).final
    b = propagate(S2, PiecewiseControl(np.full(64, 0.3), 10.0)).final
    assert np.max(np.abs(a - b)) <= 1e-10


@pytest.mark.parametrize("sys", [S1, S2, ThreeLevelSystem(0.0, -0.4, 1.1, 0.3 + 0.8j, -1.2j)])
def test_matches_ode_oracle(sys, rng):
    pc = PiecewiseControl(rng.uniform(-1.5, 1.5, 50), 10.0)
    W = propagate(sys, pc).final
    assert np.max(np.abs(W - ode_propagator(sys, pc))) <= 1e-8


def test_objective_recorded_grape_control_vs_ode(rng):
    from qlandscape.grape import GrapeConfig, grape_run

    rec = grape_run(S2, OBS, PSI3, GrapeConfig(l=4.0, eps=0.2, K_stop=30, D=40))
    pc = PiecewiseControl(rec.final_control, 10.0)
    U = ode_propagator(S2, pc)
    J_ode = float(np.real(np.trace(U @ PSI3.matrix @ U.conj().T @ OBS.matrix)))
    assert abs(objective(S2, OBS, PSI3, pc) - J_ode) <= 1e-8
    assert abs(rec.final_objective - J_ode) <= 1e-8


def test_objective_trivial_values():
    z = PiecewiseControl(np.zeros(10), 10.0)
    assert objective(S2, OBS, PSI3, z) == 0.0
    assert objective(S2, OBS, InitialState(1), z) == pytest.approx(1.0, abs=1e-15)


def test_trace_invariants(rng):
    pc = PiecewiseControl(rng.uniform(-2, 2, 30), 10.0)
    tr = propagate(S1, pc)
    eye = np.eye(3)
    for U in tr.U:
        assert np.linalg.norm(U.conj().T @ U - eye) <= 1e-12
    W = eye
    for U in tr.U:
        W = U @ W
    assert np.linalg.norm(W - tr.final) <= 1e-12


def test_trace_json_roundtrip(rng):
    tr = propagate(S1, PiecewiseControl(rng.uniform(-1, 1, 5), 1.0))
    back = trace_from_json(trace_to_json(tr))
    assert np.array_equal(back.U, tr.U) and np.array_equal(back.W, tr.W) and back.dt == tr.dt
    assert json.loads(trace_to_json(tr))["format"] == "qlandscape.trace.v1"
    with pytest.raises(ValueError):
        trace_from_json('{"format": "other"}')


def test_gradient_zero_control_is_critical():
    for sys in (S1, S2, ThreeLevelSystem(0, 1, 0, 1j, 0.5)):
        for exact in (False, True):
            g = gradient(sys, OBS, PSI3, PiecewiseControl(np.zeros(20), 10.0), exact=exact)
            assert np.max(np.abs(g)) <= 1e-15


def test_gradient_trivial_single_step():
    g = gradient(S1, OBS, PSI3, PiecewiseControl([0.0], 10.0))
    assert np.array_equal(g, [0.0])


def test_exact_gradient_matches_fd(rng):
    for sys in (S1, S2):
        pc = PiecewiseControl(rng.uniform(-2, 2, 20), 10.0)
        g = gradient(sys, OBS, PSI3, pc, exact=True)
        fd = fd_gradient(sys, OBS, PSI3, pc)
        assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_printed_gradient_bias_is_first_order(rng):
    # the printed formula omits the within-step dynamics of V: error ~ dt
    errs = {}
    c = rng.uniform(-2, 2, 8)
    for D in (50, 400):
        pc = PiecewiseControl(np.repeat(c, D // 8), 10.0)
        fd = fd_gradient(S1, OBS, PSI3, pc)
        errs[D] = np.max(np.abs(gradient(S1, OBS, PSI3, pc) - fd)) / np.max(np.abs(fd))
    assert 5.0 < errs[50] / errs[400] < 12.0


@given(systems(), st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(0.5, 1.0))
def test_objective_bounds(sys, c, lam2):
    obs = Observable(1.0, -lam2, 0.0)
    J = objective(sys, obs, PSI3, PiecewiseControl(c, 5.0))
    assert obs.lambda2 - 1e-12 <= J <= obs.lambda1 + 1e-12


@given(systems(), st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(-2, 2))
def test_lambda3_shift_equivalence(sys, c, shift):
    pc = PiecewiseControl(c, 5.0)
    obs = Observable(1.0 + shift, -1.0 + shift, shift)
    J = objective(sys, obs, PSI3, pc)
    J0 = objective(sys, obs.shifted(), PSI3, pc)
    assert abs((J - shift) - J0) <= 1e-12 * (1 + abs(shift))
    g = gradient(sys, obs, PSI3, pc)
    g0 = gradient(sys, obs.shifted(), PSI3, pc)
    assert np.max(np.abs(g - g0)) <= 1e-12


def test_propagator_rejects_bad_controls():
    prop = Propagator(S1, OBS, PSI3, 10.0, 4)
    with pytest.raises(ValueError):
        prop.objective(np.zeros(5))
    with pytest.raises(ValueError):
        prop.objective(np.array([0, 0, np.nan, 0]))
