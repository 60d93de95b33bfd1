"""Closed-form values of second-, third- and fourth-order forms on test controls.

These are transcriptions of displayed results, used as references for the
exact engine in :mod:`qlandscape.dyson`.  Where a printed expression is
internally inconsistent the corrected version is the default and the literal
one is kept alongside under an ``_as_printed`` name.
"""
from __future__ import annotations

import cmath
import math

__all__ = [
    "a2_f1",
    "a2_f2",
    "a2_f3",
    "k3_special",
    "k4_special",
    "k4_special_as_printed",
    "k4_f4",
    "F4_PARAMETERS",
    "cubic_system",
    "cubic_system_as_printed",
]

_SQ73 = math.sqrt(73.0)
F4_PARAMETERS = (1.0, math.sqrt(19.0 - _SQ73) / math.sqrt(6.0), (5.0 + _SQ73) / 3.0)


def a2_f1(v12: complex, v23: complex, omega1: float, T: float) -> complex:
    """``A^2_13<chi_[0,T]>`` for ``omega2 = 0``, ``omega1 != 0``."""
    w = omega1
    return v12 * v23 * (-1 + cmath.exp(-1j * w * T) * (1 + 1j * w * T)) / w**2


def a2_f2(v12: complex, v23: complex, omega1: float) -> complex:
    """``A^2_13<chi_[0,2pi]>`` for ``omega2 = 1`` (three cases)."""
    if omega1 == 0:
        return -2j * math.pi * v12 * v23
    if omega1 == -1:
        return 2j * math.pi * v12 * v23
    s = math.pi * omega1
    return -v12 * v23 / (omega1 * (omega1 + 1)) * (2 * math.sin(s) ** 2 + 1j * math.sin(2 * s))


def a2_f3(v12: complex, v23: complex, n: int, A: float, B: float) -> complex:
    """``A^2_13<(A cos nt + B sin nt) chi_[0,2pi]>`` for ``omega2 = 1``, ``omega1 = n``."""
    return v12 * v23 * (1j * A + B) * (A - 1j * B * n) * math.pi / (n * n - 1)


def k3_special(A: float, B: float, C: float) -> complex:
    """Cubic form with phases ``(t1 - t2 - t3)`` on ``(A + B sin 2t + C cos 3t) chi_[0,2pi]``."""
    return math.pi / 576 * (
        12 * C * (-12 * A**2 + 8j * A * B + 5 * B**2)
        + 64 * (3 * A + 2j * B) * (6 * A**2 - B**2)
        - 24 * C**2 * (3 * A + 2j * B)
        + 9 * C**3
    )


def k4_special(A: float, B: float, C: float) -> complex:
    """Quartic form with phases ``(-t1 + t2 - t3 - t4)`` on the same family.

    Homogeneous of degree four.  The printed polynomial carries a degree-three
    term ``690 i A^3`` and the coefficients ``4600 i A^3 B`` and ``-230 A^3 C``;
    fitting the exact form gives ``46080 i A^3 B`` and ``-6912 A^3 C`` with no
    cubic term.  All other printed coefficients are confirmed.
    """
    return 1j * math.pi / 9216 * (
        27648 * A**4 + 46080j * A**3 * B - 16896 * A**2 * B**2 - 8448j * A * B**3 + 2048 * B**4
        + C * (1920j * B**3 - 6912 * A**3 - 192 * A * B**2)
        - 27 * C**4
        + C**3 * (432 * A + 288j * B)
        + C**2 * (432 * B**2 - 1296 * A**2 - 4608j * A * B)
    )


def k4_special_as_printed(A: float, B: float, C: float) -> complex:
    return 1j * math.pi / 9216 * (
        690j * A**3 + 27648 * A**4 + 4600j * A**3 * B - 16896 * A**2 * B**2 - 8448j * A * B**3
        + 2048 * B**4
        + C * (1920j * B**3 - 230 * A**3 - 192 * A * B**2)
        - 27 * C**4
        + C**3 * (432 * A + 288j * B)
        + C**2 * (432 * B**2 - 1296 * A**2 - 4608j * A * B)
    )


def k4_f4() -> complex:
    """Displayed value of the quartic form at the special parameters."""
    return math.pi * (
        24 * math.sqrt(6) * (5 * _SQ73 + 121) * math.sqrt(19 - _SQ73) - 1j * (887 * _SQ73 + 4603)
    ) / 10368


def cubic_system(A: float, B: float, C: float) -> tuple[float, float]:
    """Real and imaginary parts of ``576 K3 / pi``, up to the factors 3 and 16.

    The leading coefficient is ``384 A^3``; the printed ``348`` does not
    reproduce the real part of the cubic form above.
    """
    e1 = 384 * A**3 - 64 * A * B**2 + C * (20 * B**2 - 48 * A**2) - 24 * A * C**2 + 3 * C**3
    e2 = 48 * A**2 * B + 6 * A * B * C - 8 * B**3 - 3 * B * C**2
    return e1, e2


def cubic_system_as_printed(A: float, B: float, C: float) -> tuple[float, float]:
    e1 = 348 * A**3 - 64 * A * B**2 + C * (20 * B**2 - 48 * A**2) - 24 * A * C**2 + 3 * C**3
    e2 = 48 * A**2 * B + 6 * A * B * C - 8 * B**3 - 3 * B * C**2
    return e1, e2
