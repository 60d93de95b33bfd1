"""Time-ordered simplex forms for three-level chains.

For a system with couplings on 1-2 and 2-3 only, the interaction-picture
matrix element ``<l|V_{t1} ... V_{tn}|k>`` (``V_t = e^{itH0} V e^{-itH0}``,
``t1 > ... > tn``) is a finite sum over walks on the chain 1-2-3.  Each walk
contributes ``amplitude * exp(i sum_j a_j t_j)``, so every form

    A^n_{lk}<f> = int_{0<tn<...<t1<T} f(t1)...f(tn) <l|V_{t1}...V_{tn}|k>

reduces to nested one-dimensional integrals of exponential polynomials.
Controls are represented piecewise as ``sum c t^d e^{mu t}`` and the nested
integrals are carried out with closed-form antiderivatives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .model import PiecewiseControl, ThreeLevelSystem

__all__ = [
    "DepthOverflow",
    "NoConvergence",
    "AnalyticControl",
    "PathExpansion",
    "expand_paths",
    "simplex_integral",
    "nested_integral",
    "form_A",
    "forms_to",
    "forms_K3_R3",
    "forms_K4_R4",
    "quadrature_oracle",
    "K3_PHASES",
    "R3_PHASES",
    "K4_PHASES",
    "R4_PHASES",
]

MAX_DEPTH = 8
ZETA = 1e-9           # exponents below this are exactly zero
SERIES_BAND = 0.1     # |mu| * T below this: integrate the Taylor polynomial instead
_SERIES_TOL = 1e-18
_KEY_DIGITS = 12

K3_PHASES = (1.0, -1.0, -1.0)
R3_PHASES = (-1.0, 1.0, -1.0)
K4_PHASES = (-1.0, 1.0, -1.0, -1.0)
R4_PHASES = (-1.0, -1.0, 1.0, -1.0)


class DepthOverflow(ValueError):
    """Requested form order exceeds the configured maximum."""


class NoConvergence(RuntimeError):
    """The quadrature oracle could not reach the requested tolerance."""


# ---------------------------------------------------------------------------
# exponential-polynomial terms.  A term list is a triple of arrays
# (coef, mu, deg) meaning sum coef * t**deg * exp(mu t).


def _arr(terms):
    if isinstance(terms, tuple) and len(terms) == 3 and isinstance(terms[0], np.ndarray):
        return terms
    terms = list(terms)
    if not terms:
        return _EMPTY
    c, mu, d = zip(*terms)
    return (np.asarray(c, dtype=complex), np.asarray(mu, dtype=complex), np.asarray(d, dtype=np.int64))


_EMPTY = (np.zeros(0, dtype=complex), np.zeros(0, dtype=complex), np.zeros(0, dtype=np.int64))
_ONE = (np.ones(1, dtype=complex), np.zeros(1, dtype=complex), np.zeros(1, dtype=np.int64))


def _merge(terms):
    c, mu, d = _arr(terms)
    if c.size == 0:
        return _EMPTY
    keys = np.stack([np.round(mu.real, _KEY_DIGITS), np.round(mu.imag, _KEY_DIGITS), d.astype(float)], axis=1)
    uniq, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    cs = np.zeros(uniq.shape[0], dtype=complex)
    np.add.at(cs, inv, c)
    keep = cs != 0
    return cs[keep], mu[first][keep], d[first][keep]


def _eval_terms(terms, t):
    c, mu, d = _arr(terms)
    t = np.asarray(t, dtype=float)
    if c.size == 0:
        return np.zeros(t.shape, dtype=complex)
    tt = t[..., None]
    return (c * tt**d * np.exp(mu * tt)).sum(axis=-1)


def _eval_terms_scalar(terms, x: float) -> complex:
    c, mu, d = _arr(terms)
    if c.size == 0:
        return 0j
    return complex(np.sum(c * float(x) ** d * np.exp(mu * x)))


def _snap(terms, scale):
    """Zero tiny exponents and expand small ones as Taylor polynomials in ``mu t``."""
    c, mu, d = _arr(terms)
    if c.size == 0:
        return _EMPTY
    a = np.abs(mu)
    mu = np.where(a < ZETA, 0j, mu)
    series = (a >= ZETA) & (a * scale < SERIES_BAND)
    if not np.any(series):
        return c, mu, d
    cs, ms, ds = [c[~series]], [mu[~series]], [d[~series]]
    sc, smu, sd = c[series], mu[series], d[series]
    z = float(np.max(a[series])) * scale
    coef, bound, m = sc.copy(), 1.0, 0
    while True:
        cs.append(coef)
        ms.append(np.zeros_like(smu))
        ds.append(sd + m)
        m += 1
        bound *= z / m
        coef = coef * smu / m
        if bound < _SERIES_TOL or m > 60:
            break
    return np.concatenate(cs), np.concatenate(ms), np.concatenate(ds)


def _antiderivative(terms):
    c, mu, d = _arr(terms)
    if c.size == 0:
        return _EMPTY
    zero = mu == 0
    cs = [c[zero] / (d[zero] + 1)]
    ms = [mu[zero]]
    ds = [d[zero] + 1]
    c, mu, d = c[~zero], mu[~zero], d[~zero]
    # int t^d e^{mu t} = e^{mu t} sum_j (-1)^j d!/(d-j)! t^{d-j} / mu^{j+1}
    fall = np.ones(c.size)
    inv = 1.0 / mu if c.size else mu
    powinv = inv.copy()
    for j in range(int(d.max()) + 1 if c.size else 0):
        live = d >= j
        cs.append((c * (-1) ** j * fall * powinv)[live])
        ms.append(mu[live])
        ds.append((d - j)[live])
        fall = fall * (d - j)
        powinv = powinv * inv
    return np.concatenate(cs), np.concatenate(ms), np.concatenate(ds)


def _product(a_terms, b_terms, shift: complex = 0j):
    c1, m1, d1 = _arr(a_terms)
    c2, m2, d2 = _arr(b_terms)
    return (
        (c1[:, None] * c2[None, :]).ravel(),
        (m1[:, None] + m2[None, :] + shift).ravel(),
        (d1[:, None] + d2[None, :]).ravel(),
    )


def _add_const(terms, k: complex):
    c, mu, d = _arr(terms)
    return (np.append(c, k), np.append(mu, 0j), np.append(d, 0))


def _as_list(terms):
    c, mu, d = _arr(terms)
    return [(complex(a), complex(b), int(e)) for a, b, e in zip(c, mu, d)]


class AnalyticControl:
    """Piecewise exponential-polynomial control on ``[0, T]``.

    ``pieces`` is a sequence of ``(a, b, terms)`` covering ``[0, T]`` without
    gaps; ``terms`` is a list of ``(coef, mu, deg)`` meaning
    ``coef * t**deg * exp(mu * t)`` in absolute time ``t``.
    """

    def __init__(self, pieces, real: bool = True, check_real: bool = True):
        clean = []
        prev = 0.0
        for a, b, terms in pieces:
            a, b = float(a), float(b)
            if abs(a - prev) > 1e-12 * max(1.0, abs(prev)):
                raise ValueError(f"pieces must partition [0, T]; gap or overlap at t={prev}")
            if not b > a:
                raise ValueError(f"empty piece [{a}, {b}]")
            clean.append((prev, b, _merge(terms)))
            prev = b
        if not clean:
            raise ValueError("at least one piece is required")
        self.pieces = tuple(clean)
        self.real = bool(real)
        self.label = ""
        self.params: dict = {}
        if self.real and check_real:
            ts = np.concatenate([np.linspace(a, b, 7) for a, b, _ in self.pieces])
            vals = self(ts, complex_out=True)
            scale = max(1.0, float(np.max(np.abs(vals))))
            if np.max(np.abs(vals.imag)) > 1e-12 * scale:
                raise ValueError("control flagged real but takes complex values")

    # -- construction -------------------------------------------------------

    @classmethod
    def zero(cls, T: float) -> "AnalyticControl":
        return cls([(0.0, T, _EMPTY)])

    @classmethod
    def constant(cls, value: float, T: float, support: float | None = None) -> "AnalyticControl":
        """``value * chi_[0, support]`` on ``[0, T]``."""
        support = T if support is None else support
        pieces = [(0.0, support, [(value, 0, 0)])]
        if support < T:
            pieces.append((support, T, _EMPTY))
        return cls(pieces)

    @classmethod
    def piecewise_constant(cls, coefficients, T: float) -> "AnalyticControl":
        c = np.asarray(coefficients, dtype=float)
        edges = np.linspace(0.0, T, c.size + 1)
        return cls([(edges[k], edges[k + 1], [(c[k], 0, 0)]) for k in range(c.size)])

    @classmethod
    def from_piecewise(cls, control: PiecewiseControl) -> "AnalyticControl":
        return cls.piecewise_constant(control.coefficients, control.T)

    @classmethod
    def trig_polynomial(cls, a0: float, cos=None, sin=None, freq: float = 1.0,
                        support: float | None = None, T: float | None = None) -> "AnalyticControl":
        """``a0 + sum_k cos[k] cos(k freq t) + sin[k] sin(k freq t)`` on ``[0, support]``."""
        if T is None:
            T = support if support is not None else 2 * math.pi / abs(freq)
        support = T if support is None else support
        terms = [(a0, 0, 0)]
        for k, a in (cos or {}).items():
            w = 1j * k * freq
            terms += [(a / 2, w, 0), (a / 2, -w, 0)]
        for k, b in (sin or {}).items():
            w = 1j * k * freq
            terms += [(b / 2j, w, 0), (-b / 2j, -w, 0)]
        pieces = [(0.0, support, terms)]
        if support < T:
            pieces.append((support, T, _EMPTY))
        return cls(pieces)

    @classmethod
    def special_family(cls, A: float, B: float, C: float, omega: float = 1.0,
                       T: float | None = None) -> "AnalyticControl":
        """``(A + B sin(2 omega t) + C cos(3 omega t)) chi_[0, 2 pi/omega]``."""
        period = 2 * math.pi / abs(omega)
        return cls.trig_polynomial(A, cos={3: C}, sin={2: B}, freq=omega, support=period,
                                   T=period if T is None else T)

    # -- evaluation -----------------------------------------------------------

    @property
    def T(self) -> float:
        return self.pieces[-1][1]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([0.0] + [b for _, b, _ in self.pieces])

    def __call__(self, t, complex_out: bool = False):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for i, (a, b, terms) in enumerate(self.pieces):
            last = i == len(self.pieces) - 1
            mask = (t >= a) & ((t <= b) if last else (t < b))
            if np.any(mask):
                out[mask] = _eval_terms(terms, t[mask])
        if complex_out or not self.real:
            return out
        return out.real

    def eval_piece(self, index: int, t):
        return _eval_terms(self.pieces[index][2], t)

    def piece_integral(self, index: int, weight_mu: complex = 0j) -> complex:
        """``int_piece e^{weight_mu t} f(t) dt`` in closed form."""
        a, b, terms = self.pieces[index]
        weight_mu = 0j if abs(weight_mu) < ZETA else weight_mu
        h = _snap(_product(terms, _ONE, weight_mu), max(abs(a), abs(b), 1.0))
        F = _antiderivative(h)
        return _eval_terms_scalar(F, b) - _eval_terms_scalar(F, a)

    def integral(self, weight_mu: complex = 0j) -> complex:
        return sum(self.piece_integral(i, weight_mu) for i in range(len(self.pieces)))

    def l2_norm(self) -> float:
        total = 0.0
        for a, b, terms in self.pieces:
            c, mu, d = terms
            if c.size == 0:
                continue
            sq = _snap(_product(terms, (np.conj(c), np.conj(mu), d)), max(abs(a), abs(b), 1.0))
            F = _antiderivative(_merge(sq))
            total += (_eval_terms_scalar(F, b) - _eval_terms_scalar(F, a)).real
        return math.sqrt(max(total, 0.0))

    def cell_averages(self, D: int) -> np.ndarray:
        """Exact averages of ``f`` over ``D`` equal cells of ``[0, T]``."""
        edges = np.linspace(0.0, self.T, D + 1)
        bps = self.breakpoints
        out = np.empty(D)
        for k in range(D):
            lo, hi = edges[k], edges[k + 1]
            cuts = np.unique(np.concatenate([[lo, hi], bps[(bps > lo) & (bps < hi)]]))
            s = 0j
            for x0, x1 in zip(cuts[:-1], cuts[1:]):
                idx = self._piece_index(0.5 * (x0 + x1))
                F = _antiderivative(_snap(self.pieces[idx][2], max(abs(x1), 1.0)))
                s += _eval_terms_scalar(F, x1) - _eval_terms_scalar(F, x0)
            out[k] = (s / (hi - lo)).real
        return out

    def discretize(self, D: int) -> PiecewiseControl:
        return PiecewiseControl(self.cell_averages(D), self.T)

    def _piece_index(self, t: float) -> int:
        for i, (a, b, _) in enumerate(self.pieces):
            if a <= t < b:
                return i
        return len(self.pieces) - 1

    # -- arithmetic -------------------------------------------------------------

    def _refined(self, cuts):
        pieces = []
        for a, b, terms in self.pieces:
            inner = [c for c in cuts if a < c < b]
            xs = [a] + inner + [b]
            pieces += [(x0, x1, terms) for x0, x1 in zip(xs[:-1], xs[1:])]
        return pieces

    def __add__(self, other: "AnalyticControl") -> "AnalyticControl":
        if not isinstance(other, AnalyticControl):
            return NotImplemented
        if abs(self.T - other.T) > 1e-12 * max(1.0, self.T):
            raise ValueError("controls live on different horizons")
        cuts = sorted(set(self.breakpoints.tolist()) | set(other.breakpoints.tolist()))
        p1, p2 = self._refined(cuts), other._refined(cuts)
        return AnalyticControl(
            [(a, b, tuple(np.concatenate([u, w]) for u, w in zip(t1, t2))) for (a, b, t1), (_, _, t2) in zip(p1, p2)],
            real=self.real and other.real, check_real=False,
        )

    def __mul__(self, s) -> "AnalyticControl":
        s = complex(s)
        real = self.real and s.imag == 0
        return AnalyticControl([(a, b, (t[0] * s, t[1], t[2])) for a, b, t in self.pieces],
                               real=real, check_real=False)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def extend_to(self, T: float) -> "AnalyticControl":
        """Pad with zero up to ``T``."""
        if T < self.T - 1e-12:
            raise ValueError("cannot shrink a control")
        if T <= self.T + 1e-12:
            return self
        return AnalyticControl(list(self.pieces) + [(self.T, T, _EMPTY)], real=self.real, check_real=False)

    def __repr__(self):
        return f"AnalyticControl(T={self.T:g}, pieces={len(self.pieces)}, real={self.real})"


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathExpansion:
    """``<l|V_{t1}...V_{tn}|k> = sum_p amplitude_p exp(i sum_j phases_p[j] t_j)``."""

    l: int
    k: int
    n: int
    paths: tuple  # of (amplitude, phases, walk)

    def __len__(self):
        return len(self.paths)

    @property
    def is_empty(self) -> bool:
        return not self.paths


def expand_paths(sys: ThreeLevelSystem, l: int, k: int, n: int) -> PathExpansion:
    """Enumerate chain walks ``l = j0, j1, ..., jn = k`` and their phases."""
    if l not in (1, 2, 3) or k not in (1, 2, 3):
        raise ValueError("level indices must be 1, 2 or 3")
    if n < 1:
        raise ValueError("order must be >= 1")
    H = [sys.h1, sys.h2, sys.h3]
    V = sys.V
    paths = []

    def walk(seq):
        if len(seq) == n + 1:
            if seq[-1] == k:
                amp = 1 + 0j
                phases = []
                for a, b in zip(seq[:-1], seq[1:]):
                    amp *= V[a - 1, b - 1]
                    phases.append(H[a - 1] - H[b - 1])
                paths.append((complex(amp), tuple(phases), tuple(seq)))
            return
        cur = seq[-1]
        for nxt in (cur - 1, cur + 1):
            if 1 <= nxt <= 3:
                walk(seq + [nxt])

    walk([l])
    return PathExpansion(l, k, n, tuple(paths))


def _integrate_level(f: AnalyticControl, G, a: float, scale: float, keep: bool = True):
    """One level of ``G_new(s) = int_0^s f(u) e^{i a u} G(u) du``; returns ``(G_new, G_new(T))``."""
    # a Bohr frequency below ZETA is zero, also where it would shift a nonzero exponent
    a = 0.0 if abs(a) < ZETA else a
    carry = 0j
    newG = []
    for (x0, x1, fterms), Gp in zip(f.pieces, G):
        if fterms[0].size == 0 or Gp[0].size == 0:
            if keep:
                newG.append(_arr([(carry, 0j, 0)]) if carry != 0 else _EMPTY)
            continue
        h = _merge(_snap(_product(fterms, Gp, 1j * a), scale))
        F = _merge(_antiderivative(h))
        F0 = _eval_terms_scalar(F, x0)
        F1 = _eval_terms_scalar(F, x1)
        if keep:
            newG.append(_merge(_add_const(F, carry - F0)))
        carry = carry + F1 - F0
    return newG, carry


def nested_integral(f: AnalyticControl, phases, max_depth: int = MAX_DEPTH) -> complex:
    """``int_{0<tn<...<t1<T} prod_j f(t_j) exp(i phases[j] t_j)`` in closed form.

    Works inside-out: ``G_1(s) = int_0^s f e^{i a_n u} du`` and
    ``G_m(s) = int_0^s f(u) e^{i a u} G_{m-1}(u) du``; each ``G_m`` stays a
    piecewise exponential polynomial.
    """
    phases = tuple(float(a) for a in phases)
    n = len(phases)
    if n > max_depth:
        raise DepthOverflow(f"order {n} exceeds maximum depth {max_depth}")
    if n == 0:
        return 1 + 0j
    scale = max(1.0, f.T)
    G = [_ONE for _ in f.pieces]
    total = 0j
    for level, a in enumerate(reversed(phases)):
        G, total = _integrate_level(f, G, a, scale, keep=level < n - 1)
    return total


def forms_to(sys: ThreeLevelSystem, f: AnalyticControl, k: int = 3, max_order: int = MAX_DEPTH) -> dict:
    """Every ``A^n_{lk}<f>`` for ``n <= max_order`` in one pass.

    Walks are grown backwards from ``k``; the inner integrals of walks that
    share their tail are computed once.  Returns ``{(l, n): value}`` for all
    ``l`` in 1..3 and ``1 <= n <= max_order`` (structural zeros included).
    """
    if max_order > MAX_DEPTH:
        raise DepthOverflow(f"order {max_order} exceeds maximum depth {MAX_DEPTH}")
    H = [sys.h1, sys.h2, sys.h3]
    V = sys.V
    out = {(l, n): 0j for l in (1, 2, 3) for n in range(1, max_order + 1)}
    scale = max(1.0, f.T)

    def grow(j, G, amp, depth):
        for i in (j - 1, j + 1):
            if not 1 <= i <= 3:
                continue
            a = H[i - 1] - H[j - 1]
            last = depth + 1 == max_order
            newG, val = _integrate_level(f, G, a, scale, keep=not last)
            amp_i = V[i - 1, j - 1] * amp
            out[(i, depth + 1)] += amp_i * val
            if not last:
                grow(i, newG, amp_i, depth + 1)

    grow(k, [_ONE for _ in f.pieces], 1 + 0j, 0)
    return out


def simplex_integral(expansion: PathExpansion, f: AnalyticControl, max_depth: int = MAX_DEPTH) -> complex:
    if expansion.n > max_depth:
        raise DepthOverflow(f"order {expansion.n} exceeds maximum depth {max_depth}")
    return sum((amp * nested_integral(f, ph, max_depth) for amp, ph, _ in expansion.paths), 0j)


def form_A(sys: ThreeLevelSystem, l: int, k: int, n: int, f: AnalyticControl,
           max_depth: int = MAX_DEPTH) -> complex:
    """``A^n_{lk}<f>``; identically zero when no walk of length ``n`` joins ``k`` to ``l``."""
    return simplex_integral(expand_paths(sys, l, k, n), f, max_depth)


def _scaled(phases, omega):
    return tuple(omega * a for a in phases)


def forms_K3_R3(f: AnalyticControl, omega: float = 1.0) -> tuple[complex, complex]:
    """Cubic forms with phases ``(t1 - t2 - t3)`` and ``(-t1 + t2 - t3)`` times ``omega``."""
    return nested_integral(f, _scaled(K3_PHASES, omega)), nested_integral(f, _scaled(R3_PHASES, omega))


def forms_K4_R4(f: AnalyticControl, omega: float = 1.0) -> tuple[complex, complex]:
    """Quartic forms with phases ``(-t1 + t2 - t3 - t4)`` and ``(-t1 - t2 + t3 - t4)``."""
    return nested_integral(f, _scaled(K4_PHASES, omega)), nested_integral(f, _scaled(R4_PHASES, omega))


# ---------------------------------------------------------------------------
# independent check: spectral indefinite integration on Chebyshev panels


@lru_cache(maxsize=None)
def _cc_operator(N: int):
    """Nodes on [-1, 1] and the matrix mapping samples to ``int_{-1}^{x_j}`` of the interpolant."""
    x = -np.cos(np.pi * np.arange(N + 1) / N)
    V = cheb.chebvander(x, N)
    Vinv = np.linalg.inv(V)
    Mint = np.stack([cheb.chebint(np.eye(N + 1)[j], lbnd=-1) for j in range(N + 1)], axis=1)
    S = cheb.chebvander(x, N + 1) @ Mint @ Vinv
    return x, S


def _panels(f: AnalyticControl, max_len: float):
    out = []
    for idx, (a, b, terms) in enumerate(f.pieces):
        m = max(1, int(math.ceil((b - a) / max_len)))
        edges = np.linspace(a, b, m + 1)
        out += [(edges[i], edges[i + 1], idx) for i in range(m)]
    return out


def _numeric_nested(f, phases, panels, N):
    x, S = _cc_operator(N)
    lo = np.array([p[0] for p in panels])
    hi = np.array([p[1] for p in panels])
    half = 0.5 * (hi - lo)
    t = lo[:, None] + half[:, None] * (x[None, :] + 1.0)
    fv = np.empty(t.shape, dtype=complex)
    for row, (_, _, idx) in enumerate(panels):
        fv[row] = f.eval_piece(idx, t[row])
    G = np.ones(t.shape, dtype=complex)
    total = 0j
    for a in reversed(phases):
        h = fv * np.exp(1j * a * t) * G
        local = half[:, None] * (h @ S.T)
        ends = local[:, -1]
        carry = np.concatenate([[0j], np.cumsum(ends)[:-1]])
        G = carry[:, None] + local
        total = carry[-1] + ends[-1]
    return complex(total)


def quadrature_oracle(expansion, f: AnalyticControl, rel_tol: float = 1e-10,
                      panel_length: float = 0.5, max_nodes: int = 256) -> complex:
    """Nested simplex integral by iterated spectral quadrature.

    Each level is interpolated on Chebyshev panels (aligned with the pieces of
    ``f``) and integrated indefinitely; the node count doubles until two
    successive estimates agree to ``rel_tol * (1 + |value|)``.

    ``expansion`` may be a :class:`PathExpansion` or a bare phase tuple.
    """
    if isinstance(expansion, PathExpansion):
        items = [(amp, ph) for amp, ph, _ in expansion.paths]
    else:
        items = [(1.0, tuple(expansion))]
    if not items:
        return 0j
    panels = _panels(f, panel_length)

    def estimate(N):
        return sum(amp * _numeric_nested(f, ph, panels, N) for amp, ph in items)

    N = 16
    prev = estimate(N)
    while N < max_nodes:
        N *= 2
        cur = estimate(N)
        if abs(cur - prev) <= rel_tol * (1.0 + abs(cur)):
            return complex(cur)
        prev = cur
    raise NoConvergence(f"no agreement to rel_tol={rel_tol:g} with up to {max_nodes} nodes per panel")
