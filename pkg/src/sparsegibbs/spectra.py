"""Empirical L^q and large-deviation spectra, and a numeric Legendre conjugate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, make_interp_spline

from .numerics import golden_min_vec

CONCAVITY_TOL = 1e-9
KINDS = ("tau", "tau_star", "D", "f_lower", "f_upper", "other")


class EmptySupportError(ValueError):
    pass


@dataclass
class Curve:
    xs: np.ndarray
    ys: np.ndarray
    kind: str = "other"
    meta: dict = field(default_factory=dict)
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.ndim != 1 or self.xs.shape != self.ys.shape or self.xs.size < 2:
            raise ValueError("a curve needs matching 1-D xs, ys with at least 2 points")
        if np.any(np.diff(self.xs) <= 0):
            raise ValueError("curve xs must be strictly increasing")
        if self.kind not in KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")

    def __len__(self):
        return self.xs.size


def _values(grid):
    v = np.asarray(grid.values, dtype=float).ravel()
    return v[np.isfinite(v)]


# ---------------------------------------------------------------------------
# L^q spectrum

def lq_from_values(finite_log2: np.ndarray, J: int, q_grid) -> np.ndarray:
    """-(1/J) log2 sum 2^{q v}, max-shifted per q."""
    v = np.asarray(finite_log2, dtype=float)
    if v.size == 0:
        raise EmptySupportError("no cell has a finite value")
    qs = np.asarray(q_grid, dtype=float)
    out = np.empty(qs.size)
    for i, q in enumerate(qs):
        x = q * v
        m = x.max()
        out[i] = -(m + math.log2(np.exp2(x - m).sum())) / J
    return out


def lq_spectrum(grid, q_grid) -> Curve:
    """Empirical free energy tau_J(q) of a capacity grid, summed over finite cells."""
    qs = np.asarray(q_grid, dtype=float)
    ys = lq_from_values(_values(grid), grid.J, qs)
    return Curve(qs, ys, "tau", dict(J=grid.J, d=grid.d, provenance=getattr(grid, "provenance", {})))


def average_curves(curves: Sequence[Curve], kind: Optional[str] = None) -> Curve:
    xs = curves[0].xs
    for c in curves[1:]:
        if not np.array_equal(c.xs, xs):
            raise ValueError("curves must share the same x grid to be averaged")
    ys = np.mean([c.ys for c in curves], axis=0)
    return Curve(xs, ys, kind or curves[0].kind, dict(n_averaged=len(curves)))


# ---------------------------------------------------------------------------
# large deviations

@dataclass
class LDResult:
    H: np.ndarray
    counts: np.ndarray
    epsilon: float
    f_lower: Curve
    f_upper: Curve


def ld_counts(grid, H_bins, epsilon: float = 0.1) -> LDResult:
    """Counts of cells with exponent -log2 M/J within epsilon of each H.

    At one depth the lower and upper estimates coincide; see ``ld_ladder``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    H = np.asarray(H_bins, dtype=float)
    exps = np.sort(-_values(grid) / grid.J)
    lo = np.searchsorted(exps, H - epsilon, side="left")
    hi = np.searchsorted(exps, H + epsilon, side="right")
    counts = (hi - lo).astype(np.int64)
    with np.errstate(divide="ignore"):
        f = np.where(counts > 0, np.log2(np.maximum(counts, 1)) / grid.J, -np.inf)
    meta = dict(J=grid.J, epsilon=epsilon)
    return LDResult(H, counts, epsilon, Curve(H, f, "f_lower", meta), Curve(H, f.copy(), "f_upper", meta))


def ld_ladder(grids: Sequence, H_bins, epsilon: float = 0.1) -> tuple[Curve, Curve]:
    """Lower/upper envelopes (min/max) of the estimates over a ladder of depths."""
    ests = np.array([ld_counts(g, H_bins, epsilon).f_lower.ys for g in grids])
    H = np.asarray(H_bins, dtype=float)
    meta = dict(depths=[g.J for g in grids], epsilon=epsilon)
    return Curve(H, ests.min(axis=0), "f_lower", meta), Curve(H, ests.max(axis=0), "f_upper", meta)


# ---------------------------------------------------------------------------
# Legendre conjugate

def check_concave(xs: np.ndarray, ys: np.ndarray, tol: float = CONCAVITY_TOL):
    """Raise ValueError naming the first triple that violates the chord condition."""
    x0, x1, x2 = xs[:-2], xs[1:-1], xs[2:]
    y0, y1, y2 = ys[:-2], ys[1:-1], ys[2:]
    chord = y0 + (y2 - y0) * (x1 - x0) / (x2 - x0)
    scale = 1.0 + np.maximum(np.abs(y0), np.maximum(np.abs(y1), np.abs(y2)))
    bad = np.nonzero(y1 < chord - tol * scale)[0]
    if bad.size:
        i = int(bad[0])
        x0, x1, x2, y0, y1, y2 = (float(a[i]) for a in (x0, x1, x2, y0, y1, y2))
        raise ValueError(
            f"curve is not concave: triple ({x0!r}, {y0!r}), ({x1!r}, {y1!r}), "
            f"({x2!r}, {y2!r}) lies below its chord by {float(chord[i]) - y1:.3e}")


def _interpolant(xs, ys, breakpoints):
    """Quintic splines on the pieces between breakpoints (kinks are not smoothed over).

    Each piece is fitted to the samples inside it and extrapolated up to its
    breakpoints.
    """
    bps = sorted(b for b in breakpoints if xs[0] < b < xs[-1])
    edges = np.array([xs[0], *bps, xs[-1]])
    fits = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (xs >= lo) & (xs <= hi)
        sx, sy = xs[sel], ys[sel]
        if sx.size >= 6:
            fits.append(make_interp_spline(sx, sy, k=5))
        elif sx.size >= 4:
            fits.append(CubicSpline(sx, sy))
        elif sx.size >= 2:
            fits.append(np.poly1d(np.polyfit(sx, sy, 1)))
        else:
            fits.append(None)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        piece = np.clip(np.searchsorted(edges, x, side="left") - 1, 0, len(fits) - 1)
        out = np.interp(x, xs, ys)
        for i, f in enumerate(fits):
            sel = piece == i
            if f is not None and sel.any():
                out[sel] = f(x[sel])
        return out

    return evaluate


def legendre_conjugate_numeric(curve: Curve, H_grid, breakpoints: Sequence[float] = (),
                               concavity_tol: float = CONCAVITY_TOL, refine_tol: float = 1e-12,
                               return_argmin: bool = False):
    """inf_x (H x - y(x)) for a concave sampled curve.

    The sample minimum is refined by golden section between the neighbouring
    samples, on ``curve.fn`` when the curve carries its exact evaluator and on
    a piecewise quintic interpolant otherwise.  H outside the range of end
    slopes gives exactly -inf.
    """
    xs, ys = curve.xs, curve.ys
    if xs.size < 8:
        raise ValueError("the numeric conjugate needs at least 8 samples")
    if not np.all(np.isfinite(ys)):
        raise ValueError("the numeric conjugate needs finite samples")
    check_concave(xs, ys, concavity_tol)
    H = np.asarray(H_grid, dtype=float)
    s_left = (ys[1] - ys[0]) / (xs[1] - xs[0])
    s_right = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    slack = 1e-9 * max(1.0, abs(s_left), abs(s_right))
    inside = (H >= s_right - slack) & (H <= s_left + slack)

    out = np.full(H.shape, -np.inf)
    arg = np.full(H.shape, np.nan)
    idx = np.nonzero(inside)[0]
    if idx.size:
        Hi = H[idx]
        vals = Hi[:, None] * xs[None, :] - ys[None, :]
        k = np.argmin(vals, axis=1)
        best = vals[np.arange(idx.size), k]
        best_x = xs[k]
        a = xs[np.maximum(k - 1, 0)]
        b = xs[np.minimum(k + 1, xs.size - 1)]
        f = curve.fn if curve.fn is not None else _interpolant(xs, ys, breakpoints)

        def obj(x, ids):
            return Hi[ids] * x - np.asarray(f(x), dtype=float)

        rx, rv = golden_min_vec(obj, a, b, np.arange(idx.size), tol=refine_tol)
        better = rv < best
        best = np.where(better, rv, best)
        best_x = np.where(better, rx, best_x)
        # breakpoints are where infima at kinks sit
        for bp in breakpoints:
            if xs[0] <= bp <= xs[-1]:
                v = Hi * bp - float(np.asarray(f(np.array([bp])))[0])
                take = v < best
                best = np.where(take, v, best)
                best_x = np.where(take, bp, best_x)
        out[idx] = best
        arg[idx] = best_x
    kind = "tau_star" if curve.kind == "tau" else "tau"
    res = Curve(H, out, kind, dict(conjugate_of=curve.kind, **curve.meta))
    return (res, arg) if return_argmin else res


# ---------------------------------------------------------------------------
# comparisons

@dataclass(frozen=True)
class CurveGap:
    sup: float
    mean: float
    argsup: float
    n: int

    def to_dict(self):
        return dict(sup=self.sup, mean=self.mean, argsup=self.argsup, n=self.n)


def compare_curves(a: Curve, b: Curve, lo: float = -math.inf, hi: float = math.inf) -> CurveGap:
    """Sup and mean absolute gaps on exactly shared x points (within [lo, hi]).

    Points where both curves are -inf count as zero gap; one-sided -inf is an
    infinite gap.
    """
    if not np.array_equal(a.xs, b.xs):
        only_a = np.setdiff1d(a.xs, b.xs)
        only_b = np.setdiff1d(b.xs, a.xs)
        raise ValueError(f"curve grids differ: only in first {only_a[:10].tolist()}, "
                         f"only in second {only_b[:10].tolist()}")
    sel = (a.xs >= lo) & (a.xs <= hi)
    ya, yb, xs = a.ys[sel], b.ys[sel], a.xs[sel]
    if xs.size == 0:
        raise ValueError("no shared points in the requested range")
    both_inf = np.isneginf(ya) & np.isneginf(yb)
    with np.errstate(invalid="ignore"):
        gap = np.where(both_inf, 0.0, np.abs(ya - yb))
    gap = np.where(np.isnan(gap), np.inf, gap)
    k = int(np.argmax(gap))
    return CurveGap(float(gap[k]), float(gap.mean()), float(xs[k]), int(xs.size))


def curve_from_function(fn, xs, kind="other", meta=None, attach=True) -> Curve:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(fn(xs), dtype=float)
    return Curve(xs, ys, kind, dict(meta or {}), fn if attach else None)


def default_q_grid() -> np.ndarray:
    return np.round(np.arange(-100, 101) * 0.05, 10)


def default_H_grid(H_max_plus: float) -> np.ndarray:
    n = int(math.floor((H_max_plus + 0.5) / 0.02 + 1e-9))
    return np.round(np.arange(n + 1) * 0.02, 10)
