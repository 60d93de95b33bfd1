"""Three-level systems with one forbidden transition (|1> <-/-> |3>).

Holds the value types (system, observable, initial state, piecewise control),
matrix assembly, and the controllability classification by Bohr frequencies
together with an independent Lie-closure rank computation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ThreeLevelSystem",
    "Observable",
    "InitialState",
    "PiecewiseControl",
    "ControllabilityClass",
    "ControllabilityVerdict",
    "ToleranceAmbiguous",
    "S1",
    "S2",
    "bohr_frequencies",
    "classify_controllability",
    "lie_closure_rank",
    "assemble",
]


@dataclass(frozen=True)
class ThreeLevelSystem:
    """Free Hamiltonian ``diag(h1, h2, h3)`` and couplings ``v12``, ``v23``.

    Energies are angular frequencies (hbar = 1).  The direct 1-3 transition is
    forbidden, so ``V[0, 2] == 0``.
    """

    h1: float
    h2: float
    h3: float
    v12: complex = 1.0
    v23: complex = 1.0
    name: str = ""

    def __post_init__(self):
        for key in ("h1", "h2", "h3"):
            val = getattr(self, key)
            if not np.isfinite(val) or np.iscomplexobj(val) and np.imag(val) != 0:
                raise ValueError(f"{key} must be a finite real number, got {val!r}")
            object.__setattr__(self, key, float(np.real(val)))
        for key in ("v12", "v23"):
            val = complex(getattr(self, key))
            if val == 0 or not np.isfinite(abs(val)):
                raise ValueError(f"{key} must be a nonzero finite complex number, got {val!r}")
            object.__setattr__(self, key, val)

    @property
    def omega1(self) -> float:
        return self.h2 - self.h1

    @property
    def omega2(self) -> float:
        return self.h3 - self.h2

    @property
    def H0(self) -> np.ndarray:
        return np.diag([self.h1, self.h2, self.h3]).astype(complex)

    @property
    def V(self) -> np.ndarray:
        v12, v23 = self.v12, self.v23
        return np.array(
            [[0, v12, 0], [np.conj(v12), 0, v23], [0, np.conj(v23), 0]], dtype=complex
        )

    @property
    def is_real(self) -> bool:
        return self.v12.imag == 0 and self.v23.imag == 0

    def shifted(self, c: float) -> "ThreeLevelSystem":
        """Same system with every level moved by ``c``."""
        return ThreeLevelSystem(self.h1 + c, self.h2 + c, self.h3 + c, self.v12, self.v23, self.name)

    def with_couplings(self, v12=None, v23=None) -> "ThreeLevelSystem":
        return ThreeLevelSystem(
            self.h1, self.h2, self.h3,
            self.v12 if v12 is None else v12,
            self.v23 if v23 is None else v23,
        )


S1 = ThreeLevelSystem(0.0, 1.0, 2.5, 1.0, 1.7, name="S1")
S2 = ThreeLevelSystem(0.0, 1.0, 2.0, 1.0, 1.7, name="S2")


@dataclass(frozen=True)
class Observable:
    """Diagonal observable ``diag(lambda1, lambda2, lambda3)`` with l1 > l3 > l2."""

    lambda1: float = 1.0
    lambda2: float = -1.0
    lambda3: float = 0.0

    def __post_init__(self):
        l1, l2, l3 = self.lambda1, self.lambda2, self.lambda3
        if not (l1 > l3 > l2):
            raise ValueError(
                f"observable eigenvalues must satisfy lambda1 > lambda3 > lambda2, got ({l1}, {l2}, {l3})"
            )

    @classmethod
    def population_contrast(cls, lam: float = 1.0) -> "Observable":
        """``|1><1| - lam |2><2|``, the observable used in the GRAPE study."""
        if lam <= 0:
            raise ValueError("lam must be positive")
        return cls(1.0, -float(lam), 0.0)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3])

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.eigenvalues).astype(complex)

    @property
    def max_value(self) -> float:
        return self.lambda1

    @property
    def min_value(self) -> float:
        return self.lambda2

    def shifted(self) -> "Observable":
        """``O - lambda3 * I``; same landscape up to a constant."""
        return Observable(self.lambda1 - self.lambda3, self.lambda2 - self.lambda3, 0.0)


@dataclass(frozen=True)
class InitialState:
    """Initial density matrix, either a basis projector ``|k><k|`` or an explicit matrix."""

    basis_index: int | None = 3
    density: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.density is None:
            if self.basis_index not in (1, 2, 3):
                raise ValueError(f"basis_index must be 1, 2 or 3, got {self.basis_index!r}")
            return
        rho = np.asarray(self.density, dtype=complex)
        if rho.shape != (3, 3):
            raise ValueError("density matrix must be 3x3")
        if np.linalg.norm(rho - rho.conj().T) > 1e-12:
            raise ValueError("density matrix must be Hermitian")
        if abs(np.trace(rho) - 1) > 1e-12:
            raise ValueError("density matrix must have unit trace")
        if np.linalg.eigvalsh(rho).min() < -1e-12:
            raise ValueError("density matrix must be positive semidefinite")
        object.__setattr__(self, "density", rho)
        object.__setattr__(self, "basis_index", None)

    @classmethod
    def mixed(cls, rho) -> "InitialState":
        return cls(basis_index=None, density=rho)

    @property
    def matrix(self) -> np.ndarray:
        if self.density is not None:
            return self.density.copy()
        rho = np.zeros((3, 3), dtype=complex)
        rho[self.basis_index - 1, self.basis_index - 1] = 1.0
        return rho

    @property
    def is_pure_basis(self) -> bool:
        return self.density is None


@dataclass(frozen=True)
class PiecewiseControl:
    """``f(t) = sum_k c_k chi_[t_k, t_{k+1}](t)`` on ``[0, T]`` with ``D`` equal steps."""

    coefficients: np.ndarray
    T: float

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("coefficients must be a non-empty 1-D array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if not (self.T > 0):
            raise ValueError("T must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "T", float(self.T))

    @property
    def D(self) -> int:
        return self.coefficients.size

    @property
    def dt(self) -> float:
        return self.T / self.D

    @property
    def knots(self) -> np.ndarray:
        return self.dt * np.arange(self.D + 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.floor(t / self.dt).astype(int), 0, self.D - 1)
        return np.where((t >= 0) & (t <= self.T), self.coefficients[k], 0.0)


class ControllabilityClass(str, enum.Enum):
    CONTROLLABLE = "Controllable"
    UNCONTROLLABLE_SYMMETRIC = "UncontrollableSymmetric"
    CONDITIONAL_ON_DIPOLES = "ConditionalOnDipoles"


@dataclass(frozen=True)
class ControllabilityVerdict:
    cls: ControllabilityClass
    controllable: bool
    lie_rank: int | None = None
    degenerate: bool = False
    note: str = ""


class ToleranceAmbiguous(RuntimeError):
    """Singular values sit too close to the rank threshold to call the rank."""


def bohr_frequencies(sys: ThreeLevelSystem) -> tuple[float, float]:
    return sys.h2 - sys.h1, sys.h3 - sys.h2


def _eq(a: float, b: float, tol: float) -> bool:
    if tol == 0:
        return a == b
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def classify_controllability(
    sys: ThreeLevelSystem, tol: float = 1e-12, with_rank: bool = False
) -> ControllabilityVerdict:
    """Operator controllability from the Bohr frequencies and dipole moduli.

    ``tol=0`` compares the user-supplied numbers exactly.  With
    ``with_rank=True`` the Lie-closure rank is attached as evidence.
    """
    w1, w2 = bohr_frequencies(sys)
    rank = lie_closure_rank(sys) if with_rank else None
    if not _eq(abs(w1), abs(w2), tol):
        return ControllabilityVerdict(ControllabilityClass.CONTROLLABLE, True, rank)
    if _eq(w1, 0.0, tol) and _eq(w2, 0.0, tol):
        return ControllabilityVerdict(
            ControllabilityClass.CONDITIONAL_ON_DIPOLES,
            False,
            rank,
            degenerate=True,
            note="fully degenerate spectrum (omega1 = omega2 = 0); H0 is a multiple of the identity",
        )
    if _eq(w1, -w2, tol):
        return ControllabilityVerdict(ControllabilityClass.UNCONTROLLABLE_SYMMETRIC, False, rank)
    controllable = not _eq(abs(sys.v12), abs(sys.v23), tol)
    note = "" if controllable else "harmonic with |v12| = |v23|"
    return ControllabilityVerdict(ControllabilityClass.CONDITIONAL_ON_DIPOLES, controllable, rank, note=note)


def _to_real_vec(X: np.ndarray) -> np.ndarray:
    # u(3) element (anti-Hermitian) -> R^9
    iu = np.triu_indices(3, 1)
    return np.concatenate([X.diagonal().imag, X[iu].real, X[iu].imag])


def lie_closure_rank(
    sys: ThreeLevelSystem, max_depth: int = 12, tol: float = 1e-9, guard: float = 1e2
) -> int:
    """Dimension of the real Lie algebra generated by ``iH0`` and ``iV``.

    Left-normed brackets with the generators are added level by level; the
    span is tracked with an orthonormal basis.  A new direction counts when
    its residual after projection exceeds ``tol`` (relative to the bracket
    norm).  Residuals inside ``[tol/guard, tol*guard]`` are ambiguous and
    raise :class:`ToleranceAmbiguous`.
    """
    gens = [1j * sys.H0, 1j * sys.V]
    basis: list[np.ndarray] = []
    mats: list[np.ndarray] = []

    def try_add(X) -> bool:
        v = _to_real_vec(X)
        nv = np.linalg.norm(v)
        if nv == 0:
            return False
        v = v / nv
        for b in basis:
            v = v - (b @ v) * b
        for b in basis:  # second pass for orthogonality
            v = v - (b @ v) * b
        r = np.linalg.norm(v)
        if tol / guard < r < tol * guard:
            raise ToleranceAmbiguous(f"bracket residual {r:.3e} is within a factor {guard:g} of tol={tol:g}")
        if r <= tol:
            return False
        basis.append(v / r)
        mats.append(X / nv)
        return True

    frontier = [g for g in gens if try_add(g)]
    for _ in range(max_depth):
        if len(basis) == 9 or not frontier:
            break
        nxt = []
        for X in frontier:
            for g in gens:
                if try_add(g @ X - X @ g):
                    nxt.append(mats[-1])
        frontier = nxt
    return len(basis)


def assemble(sys: ThreeLevelSystem, obs: Observable, init: InitialState):
    """Return ``(H0, V, O, rho0)`` as complex 3x3 arrays."""
    return sys.H0, sys.V, obs.matrix, init.matrix
