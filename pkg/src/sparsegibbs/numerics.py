"""Bracketing scalar solvers shared by the model, theory and spectra modules."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.optimize import brentq

TOL = 1e-12
MAX_ITER = 200
INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class NumericalError(RuntimeError):
    """A solver failed to converge or a self-consistency check failed."""


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = TOL,
           max_iter: int = MAX_ITER, expand: bool = True, max_expand: int = 60) -> float:
    """Bracketed root of ``f`` on ``[lo, hi]``; expands the bracket outward if needed."""
    flo, fhi = f(lo), f(hi)
    n = 0
    while flo * fhi > 0:
        if not expand or n >= max_expand:
            raise NumericalError(
                f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
        width = hi - lo
        lo, hi = lo - width, hi + width
        flo, fhi = f(lo), f(hi)
        n += 1
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    # Brent's method keeps the bracket (bisection fallback) but needs far fewer steps
    return brentq(f, lo, hi, xtol=tol * max(1.0, min(abs(lo), abs(hi))), rtol=max(tol, 1e-15),
                  maxiter=max_iter)


def golden_min(f: Callable[[float], float], a: float, b: float, tol: float = TOL,
               max_iter: int = MAX_ITER) -> tuple[float, float]:
    """Golden-section minimization of a unimodal ``f`` on ``[a, b]``.

    Returns ``(argmin, min)``.  The endpoints are also considered so that a
    monotone ``f`` returns the correct boundary value.
    """
    c = b - INVPHI * (b - a)
    e = a + INVPHI * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + INVPHI * (b - a)
            fe = f(e)
    x = 0.5 * (a + b)
    best = min((f(x), x), (fc, c), (fe, e))
    return best[1], best[0]


def golden_min_vec(f: Callable[[np.ndarray, np.ndarray], np.ndarray], a: np.ndarray,
                   b: np.ndarray, ids: np.ndarray, tol: float = TOL,
                   max_iter: int = MAX_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise golden-section search.

    ``f(x, ids)`` evaluates the i-th objective at ``x[i]``; ``ids`` is passed
    through unchanged so callers can index per-element parameters.
    """
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    c = b - INVPHI * (b - a)
    e = a + INVPHI * (b - a)
    fc, fe = f(c, ids), f(e, ids)
    for _ in range(max_iter):
        if np.all(b - a <= tol * np.maximum(1.0, np.abs(a) + np.abs(b))):
            break
        left = fc < fe
        # shrink to [a, e] where left, else [c, b]
        b = np.where(left, e, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - INVPHI * (b - a), e)
        new_e = np.where(left, c, a + INVPHI * (b - a))
        new_fc = np.where(left, np.nan, fe)
        new_fe = np.where(left, fc, np.nan)
        c, e = new_c, new_e
        need_c, need_e = np.isnan(new_fc), np.isnan(new_fe)
        fc, fe = new_fc, new_fe
        if need_c.any():
            fc[need_c] = f(c[need_c], ids[need_c])
        if need_e.any():
            fe[need_e] = f(e[need_e], ids[need_e])
    x = 0.5 * (a + b)
    fx = f(x, ids)
    stack_x = np.stack([x, c, e])
    stack_f = np.stack([fx, fc, fe])
    k = np.argmin(stack_f, axis=0)
    cols = np.arange(x.size)
    return stack_x[k, cols], stack_f[k, cols]
