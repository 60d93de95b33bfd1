"""Fixed-size 3x3 complex matrix algebra.

Every routine accepts a single matrix of shape ``(3, 3)`` or a stack of
shape ``(..., 3, 3)``.  Stacked products go through ``np.matmul``, which
treats each slice independently, and the Jacobi solver is purely
elementwise, so the result for one matrix never depends on what else is in
the stack.  Batched GRAPE runs rely on this for bit-reproducibility.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "NotHermitian",
    "HermEig3",
    "dagger",
    "mm3",
    "herm_eig",
    "expm_unitary",
    "is_unitary",
]

_PAIRS = ((0, 1), (0, 2), (1, 2))
_MAX_SWEEPS = 30


class NotHermitian(ValueError):
    """Raised when a matrix handed to a Hermitian routine is not Hermitian."""


class HermEig3:
    """Eigenvalues (ascending) and unitary eigenvectors of a Hermitian 3x3.

    ``eigenvectors[..., :, j]`` is the eigenvector for ``eigenvalues[..., j]``.
    """

    __slots__ = ("eigenvalues", "eigenvectors")

    def __init__(self, eigenvalues, eigenvectors):
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors

    def reconstruct(self):
        Q = self.eigenvectors
        return mm3(Q * self.eigenvalues[..., None, :], dagger(Q))


def dagger(A):
    return np.conj(np.swapaxes(A, -1, -2))


def mm3(A, B):
    """Matrix product of (stacks of) 3x3 matrices."""
    return np.matmul(A, B)


def _check_hermitian(H, tol):
    scale = np.maximum(1.0, np.sqrt((np.abs(H) ** 2).sum(axis=(-1, -2))))
    asym = np.sqrt((np.abs(H - dagger(H)) ** 2).sum(axis=(-1, -2)))
    bad = asym > tol * scale
    if np.any(bad):
        worst = float(np.max(asym))
        raise NotHermitian(f"||H - H^dagger||_F = {worst:.3e} exceeds tolerance {tol:g}")


def herm_eig(H, tol: float = 1e-12) -> HermEig3:
    """Eigendecomposition of Hermitian 3x3 matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    H : array_like, shape (..., 3, 3)
        Hermitian matrices.
    tol : float
        Relative Hermiticity tolerance, ``||H - H^dagger||_F <= tol * max(1, ||H||_F)``.

    Returns
    -------
    HermEig3
        Ascending eigenvalues ``(..., 3)`` and eigenvectors ``(..., 3, 3)``.

    Raises
    ------
    NotHermitian
        If any matrix in the stack violates the tolerance.
    """
    H = np.asarray(H)
    if H.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) input, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("matrix has non-finite entries")
    _check_hermitian(H, tol)

    batch_shape = H.shape[:-2]
    flat = H.reshape(-1, 3, 3)
    is_real = not np.iscomplexobj(flat) or not np.any(flat.imag)
    if is_real:
        flat = np.real(flat).astype(float)
        conj = _identity
    else:
        flat = flat.astype(complex)
        conj = np.conj

    n = flat.shape[0]
    d = [np.real(flat[:, i, i]).astype(float) for i in range(3)]
    # upper triangle, symmetrised against rounding in the input
    off = {
        (p, q): 0.5 * (flat[:, p, q] + conj(flat[:, q, p]))
        for p, q in _PAIRS
    }
    dtype = flat.dtype
    Q = [[np.full(n, 1.0 if i == j else 0.0, dtype=dtype) for j in range(3)] for i in range(3)]

    scale2 = d[0] ** 2 + d[1] ** 2 + d[2] ** 2 + 2 * sum(np.abs(o) ** 2 for o in off.values())
    thresh = (np.finfo(float).eps ** 2) * np.maximum(scale2, np.finfo(float).tiny)
    floor = np.maximum(2.0**-20 * np.sqrt(thresh), np.finfo(float).tiny)

    for _ in range(_MAX_SWEEPS):
        resid = sum(np.abs(o) ** 2 for o in off.values())
        if np.all(resid <= thresh):
            break
        for p, q in _PAIRS:
            k = 3 - p - q
            apq = off[(p, q)]
            r = np.abs(apq)
            # entries far below working precision are treated as zero already
            live = r > floor
            r_safe = np.where(live, r, 1.0)
            # an exactly zero entry must leave Q untouched, so its phase is 1
            phase = np.where(live, apq / r_safe, 1.0) if not is_real else np.where(apq < 0, -1.0, 1.0)
            with np.errstate(over="ignore", divide="ignore"):
                tau = (d[q] - d[p]) / (2.0 * r_safe)
                t = np.copysign(1.0, tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(live, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            ph = conj(phase)

            d[p] = d[p] - t * r
            d[q] = d[q] + t * r
            off[(p, q)] = np.zeros_like(apq)

            # row k of the rotated matrix, read through the stored upper triangle
            akp = off[(k, p)] if k < p else conj(off[(p, k)])
            akq = off[(k, q)] if k < q else conj(off[(q, k)])
            new_kp = c * akp - s * ph * akq
            new_kq = s * akp + c * ph * akq
            if k < p:
                off[(k, p)] = new_kp
            else:
                off[(p, k)] = conj(new_kp)
            if k < q:
                off[(k, q)] = new_kq
            else:
                off[(q, k)] = conj(new_kq)

            for row in range(3):
                vp = Q[row][p]
                vq = Q[row][q]
                Q[row][p] = c * vp - s * ph * vq
                Q[row][q] = s * vp + c * ph * vq

    w = np.stack(d, axis=-1)
    V = np.stack([np.stack(Q[i], axis=-1) for i in range(3)], axis=-2)
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return HermEig3(w.reshape(batch_shape + (3,)), V.reshape(batch_shape + (3, 3)))


def _identity(x):
    return x


def expm_unitary(H, t, tol: float = 1e-12):
    """Return ``exp(-i H t)`` for Hermitian ``H`` via its eigendecomposition.

    ``t`` may be a scalar or broadcast against the batch shape of ``H``.
    """
    w, Q = herm_eig(H, tol=tol)
    phase = np.exp(-1j * w * np.asarray(t, dtype=float)[..., None])
    return mm3(Q * phase[..., None, :], dagger(Q))


def is_unitary(U, atol: float = 1e-12) -> bool:
    U = np.asarray(U)
    err = mm3(dagger(U), U) - np.eye(3)
    return bool(np.all(np.sqrt((np.abs(err) ** 2).sum(axis=(-1, -2))) <= atol))
