"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

from numbers import Real

import numpy as np
from sklearn.utils import check_array

from .model import S1, S2, Observable, ThreeLevelSystem

__all__ = ["check_system", "check_observable", "check_controls"]

_PRESETS = {"S1": S1, "S2": S2}


def check_system(system) -> ThreeLevelSystem:
    """Accept a preset name, a :class:`ThreeLevelSystem`, or a mapping of its fields.

    A mapping may give ``h`` as a 3-sequence instead of ``h1, h2, h3``.
    """
    if isinstance(system, ThreeLevelSystem):
        return system
    if isinstance(system, str):
        if system not in _PRESETS:
            raise ValueError(f"unknown system {system!r}; expected one of {sorted(_PRESETS)}")
        return _PRESETS[system]
    if isinstance(system, dict):
        kw = dict(system)
        if "h" in kw:
            h = kw.pop("h")
            if len(h) != 3:
                raise ValueError("h must have three entries")
            kw.update(h1=h[0], h2=h[1], h3=h[2])
        try:
            return ThreeLevelSystem(**kw)
        except TypeError as exc:
            raise ValueError(f"bad system fields: {exc}") from None
    raise TypeError(f"cannot interpret {type(system).__name__} as a three-level system")


def check_observable(observable) -> Observable:
    """``None`` (default), a positive ``lambda``, a 3-sequence of eigenvalues, or an Observable."""
    if observable is None:
        return Observable()
    if isinstance(observable, Observable):
        return observable
    if isinstance(observable, Real):
        return Observable.population_contrast(float(observable))
    vals = np.asarray(observable, dtype=float)
    if vals.shape != (3,):
        raise ValueError("observable must be a scalar lambda or three eigenvalues")
    return Observable(*map(float, vals))


def check_controls(X, D: int | None = None, name: str = "X") -> np.ndarray:
    """2-D finite float array of piecewise-constant amplitudes, one run per row."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if D is not None and X.shape[1] != D:
        raise ValueError(f"{name} has {X.shape[1]} columns, expected D={D}")
    return X
