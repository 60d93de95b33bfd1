"""Exact propagation under piecewise-constant controls, objective and gradients.

The step propagators are ``U_n = exp(-i (H0 + c_n V) dt)`` and the prefix
products ``W_k = U_k ... U_1``.  All kernels accept a stack of control
vectors with shape ``(..., D)`` so that many GRAPE runs can advance in one
pass; results for one control never depend on the rest of the stack.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import InitialState, Observable, PiecewiseControl, ThreeLevelSystem
from .smallmat import dagger, herm_eig, mm3

__all__ = [
    "NonRealObjective",
    "PropagationTrace",
    "propagate",
    "objective",
    "gradient",
    "fd_gradient",
    "trace_to_json",
    "trace_from_json",
    "Propagator",
]

IMAG_TOL = 1e-10


class NonRealObjective(ArithmeticError):
    """The trace ``Tr[W rho W^dagger O]`` came out with a non-negligible imaginary part."""


@dataclass
class PropagationTrace:
    """Step unitaries ``U`` and prefix products ``W`` (``W[k-1] = U_k ... U_1``)."""

    U: np.ndarray
    W: np.ndarray
    dt: float
    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.W[..., -1, :, :]

    @property
    def D(self) -> int:
        return self.U.shape[-3]


class Propagator:
    """Propagation kernel bound to one system, observable and initial state.

    Parameters
    ----------
    sys, obs, init
        Problem definition.
    T, D
        Horizon and number of piecewise-constant steps.
    """

    def __init__(self, sys: ThreeLevelSystem, obs: Observable, init: InitialState, T: float, D: int):
        if D < 1:
            raise ValueError("D must be >= 1")
        if not T > 0:
            raise ValueError("T must be positive")
        self.sys, self.obs, self.init = sys, obs, init
        self.T, self.D = float(T), int(D)
        self.dt = self.T / self.D
        self.H0 = sys.H0
        self.Vm = sys.V
        self.rho = init.matrix
        self.lam = obs.eigenvalues
        if sys.is_real:
            self.H0 = self.H0.real
            self.Vm = self.Vm.real

    def _check(self, C) -> np.ndarray:
        C = np.asarray(C, dtype=float)
        if C.shape[-1] != self.D:
            raise ValueError(f"control has {C.shape[-1]} components, expected D={self.D}")
        if not np.all(np.isfinite(C)):
            raise ValueError("control contains non-finite values")
        return C

    def run(self, C, keep_eig: bool = False) -> PropagationTrace:
        C = self._check(C)
        H = self.H0 + C[..., None, None] * self.Vm
        w, Q = herm_eig(H)
        phase = np.exp(-1j * self.dt * w)
        U = mm3(Q * phase[..., None, :], dagger(Q))
        # step-major contiguous copy keeps the sequential product loop cheap
        Us = np.ascontiguousarray(np.moveaxis(U, -3, 0))
        Ws = np.empty_like(Us)
        acc = Us[0]
        Ws[0] = acc
        for k in range(1, self.D):
            acc = mm3(Us[k], acc)
            Ws[k] = acc
        W = np.moveaxis(Ws, 0, -3)
        if keep_eig:
            return PropagationTrace(U, W, self.dt, w, Q)
        return PropagationTrace(U, W, self.dt)

    def populations(self, Wf) -> np.ndarray:
        """Diagonal of ``W rho W^dagger``, computed entrywise (no cancellation for pure states)."""
        prod = Wf[..., :, :, None] * self.rho * np.conj(Wf)[..., :, None, :]
        return prod.sum(axis=(-1, -2))

    def value(self, Wf, relative: bool = False) -> np.ndarray:
        pops = self.populations(Wf)
        if np.any(np.abs(pops.imag) > IMAG_TOL):
            raise NonRealObjective(f"imaginary residue {np.max(np.abs(pops.imag)):.3e}")
        pops = pops.real
        lam3 = self.lam[2]
        J = ((self.lam - lam3) * pops).sum(axis=-1)
        if relative:
            return J
        # Tr(rho) = 1 is exact for valid states; add the shift back separately
        return J + lam3

    def objective(self, C, relative: bool = False):
        tr = self.run(C)
        return self.value(tr.final, relative=relative)

    def value_and_gradient(self, C, exact: bool = False):
        """Objective and gradient for a stack of controls.

        ``exact=False`` is the first-order GRAPE formula
        ``dJ/dc_k = 2 dt Im Tr[W_k^+ V W_k rho W_D^+ O W_D]``.
        ``exact=True`` replaces ``V`` by its average over step ``k``,
        ``(1/dt) int_0^dt e^{-iH_k s} V e^{iH_k s} ds``, which gives the exact
        derivative of the discretised objective.
        """
        tr = self.run(C, keep_eig=exact)
        Wf = tr.final
        J = self.value(Wf)
        O = np.diag(self.lam).astype(complex)
        X = mm3(mm3(self.rho, dagger(Wf)), mm3(O, Wf))
        Y = mm3(mm3(tr.W, X[..., None, :, :]), dagger(tr.W))
        if exact:
            Veff = _step_average(self.Vm, tr.eigenvalues, tr.eigenvectors, self.dt)
            tr_vy = (Veff * np.swapaxes(Y, -1, -2)).sum(axis=(-1, -2))
        else:
            tr_vy = (self.Vm * np.swapaxes(Y, -1, -2)).sum(axis=(-1, -2))
        g = 2.0 * self.dt * tr_vy.imag
        return J, g


def _step_average(V, w, Q, dt):
    # (1/dt) int_0^dt exp(-iHs) V exp(iHs) ds in the eigenbasis of H
    Vp = mm3(mm3(dagger(Q), V), Q)
    y = (w[..., :, None] - w[..., None, :]) * dt
    small = np.abs(y) < 1e-300
    y_safe = np.where(small, 1.0, y)
    phi = np.where(small, 1.0 + 0j, -np.expm1(-1j * y_safe) / (1j * y_safe))
    return mm3(mm3(Q, Vp * phi), dagger(Q))


def _as_pc(control, T=None) -> PiecewiseControl:
    if isinstance(control, PiecewiseControl):
        return control
    if T is None:
        raise TypeError("pass a PiecewiseControl or give T explicitly")
    return PiecewiseControl(np.asarray(control, dtype=float), T)


def propagate(sys: ThreeLevelSystem, control: PiecewiseControl) -> PropagationTrace:
    prop = Propagator(sys, Observable(), InitialState(3), control.T, control.D)
    return prop.run(control.coefficients)


def objective(sys, obs, init, control, relative: bool = False) -> float:
    """``Tr[W_D rho0 W_D^dagger O]`` for a piecewise-constant control.

    With ``relative=True`` the value is reported for ``O - lambda3 I``, which
    keeps full relative precision when the populations of levels 1 and 2 are
    tiny (as in the small-amplitude scaling checks).
    """
    control = _as_pc(control)
    prop = Propagator(sys, obs, init, control.T, control.D)
    return float(prop.objective(control.coefficients, relative=relative))


def gradient(sys, obs, init, control, exact: bool = False) -> np.ndarray:
    """Gradient of the discretised objective with respect to the D amplitudes.

    The default is the printed GRAPE expression, which carries an O(dt)
    bias against the exact derivative of the discretised objective; pass
    ``exact=True`` for the bias-free version.
    """
    control = _as_pc(control)
    prop = Propagator(sys, obs, init, control.T, control.D)
    _, g = prop.value_and_gradient(control.coefficients, exact=exact)
    return g


def fd_gradient(sys, obs, init, control, step: float = 1e-5, richardson: bool = True) -> np.ndarray:
    """Central finite differences of the objective, with one Richardson level.

    The step for component k is ``step * max(1, |c_k|)``.
    """
    control = _as_pc(control)
    prop = Propagator(sys, obs, init, control.T, control.D)
    c = control.coefficients
    h = step * np.maximum(1.0, np.abs(c))
    eye = np.eye(c.size)

    def central(hh):
        plus = c + eye * hh[:, None]
        minus = c - eye * hh[:, None]
        Jp = prop.objective(plus)
        Jm = prop.objective(minus)
        return (Jp - Jm) / (2 * hh)

    g1 = central(h)
    if not richardson:
        return g1
    g2 = central(h / 2)
    return (4 * g2 - g1) / 3


def _cplx_to_pairs(a: np.ndarray):
    return np.stack([a.real, a.imag], axis=-1).tolist()


def trace_to_json(trace: PropagationTrace) -> str:
    """Serialise a trace as JSON; complex entries become ``[re, im]`` pairs."""
    payload = {
        "format": "qlandscape.trace.v1",
        "dt": trace.dt,
        "D": trace.D,
        "U": _cplx_to_pairs(trace.U),
        "W": _cplx_to_pairs(trace.W),
    }
    return json.dumps(payload)


def trace_from_json(text: str) -> PropagationTrace:
    payload = json.loads(text)
    if payload.get("format") != "qlandscape.trace.v1":
        raise ValueError("unrecognised trace format")

    def back(x):
        a = np.asarray(x, dtype=float)
        return a[..., 0] + 1j * a[..., 1]

    return PropagationTrace(back(payload["U"]), back(payload["W"]), float(payload["dt"]))
