"""Closed-form predictions for the sampled capacity.

Notation follows the module docs: ``D`` is the Legendre spectrum of the model,
``g(q) = q tau'(q) - tau(q)`` is ``D`` read in the dual variable (decreasing on
q > 0, increasing on q < 0), and ``c = d(1 - eta)`` is the dimension lost by
sampling.  The left exponents ``H_l(eta')`` solve ``D(H) = c/(1 - eta')`` on the
increasing branch of ``D``; ``eta_tilde`` minimizes ``(1/eta' - 1) H_l(eta')``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .gibbs_model import (Q_CAP, BernoulliWeights, GibbsModel, dual_q, endpoints, tau_mu, tau_star)
from .numerics import NumericalError, bisect, golden_min

ETA_FLOOR = 1e-9
DUAL_TOL = 1e-6
DUAL_FAIL = 1e-5
NEAR_HOMOGENEOUS = 1e-6


def _g(model: GibbsModel, q: float) -> float:
    return q * model._tau_prime_raw(q) - model._tau_raw(q)


def _check_eta(eta: float):
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")


def _endpoint_dims(model: GibbsModel) -> tuple[float, float]:
    """(D(H_min), D(H_max)); exact for Bernoulli bases (log2 of the multiplicity)."""
    if isinstance(model.base, BernoulliWeights):
        w = np.asarray(model.base.weights)
        top = np.sum(np.abs(w - w.max()) <= 1e-15 * w.max())
        bottom = np.sum(np.abs(w - w.min()) <= 1e-15 * w.max())
        return math.log2(top), math.log2(bottom)
    return _g(model, Q_CAP), _g(model, -Q_CAP)


def _require_heterogeneous(model: GibbsModel):
    if model.is_homogeneous:
        raise ValueError("model is homogeneous; use homogeneous_forms")
    hmin, _, hmax = endpoints(model)
    if hmax - hmin < NEAR_HOMOGENEOUS:
        warnings.warn(f"near-homogeneous model (exponent spread {hmax - hmin:.2e}); "
                      "spectrum breakpoints nearly coincide", RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# left / right thresholds

def eta_ell(model: GibbsModel, eta: float) -> float:
    _check_eta(eta)
    _require_heterogeneous(model)
    c = model.d * (1 - eta)
    dmin = _endpoint_dims(model)[0]
    return 0.0 if dmin <= c else 1.0 - c / dmin


def eta_r(model: GibbsModel, eta: float) -> float:
    _check_eta(eta)
    _require_heterogeneous(model)
    c = model.d * (1 - eta)
    dmax = _endpoint_dims(model)[1]
    return 0.0 if dmax <= c else 1.0 - c / dmax


def _dual_level(model: GibbsModel, target: float, side: int) -> float:
    """q with g(q) = target on q >= 0 (side=+1) or q <= 0 (side=-1); +-Q_CAP at the limit."""
    if target >= model.d:
        return 0.0
    edge = side * Q_CAP
    if _g(model, edge) >= target:
        return edge
    lo, hi = (0.0, edge) if side > 0 else (edge, 0.0)
    return bisect(lambda q: _g(model, q) - target, lo, hi, expand=False)


def _check_eta_prime(model, eta, eta_prime, floor):
    if not (floor - 1e-12 <= eta_prime <= eta + 1e-12):
        raise ValueError(f"eta' = {eta_prime} outside [{floor}, {eta}]")


def q_ell(model: GibbsModel, eta: float, eta_prime: float) -> float:
    """Dual variable of H_l(eta'), in [0, Q_CAP]."""
    _check_eta_prime(model, eta, eta_prime, eta_ell(model, eta))
    if eta_prime >= eta:
        return 0.0
    return _dual_level(model, model.d * (1 - eta) / (1 - eta_prime), +1)


def q_r(model: GibbsModel, eta: float, eta_prime: float) -> float:
    _check_eta_prime(model, eta, eta_prime, eta_r(model, eta))
    if eta_prime >= eta:
        return 0.0
    return _dual_level(model, model.d * (1 - eta) / (1 - eta_prime), -1)


def H_ell(model: GibbsModel, eta: float, eta_prime: float) -> float:
    """The exponent in [H_min, H_s] with D(H) = d(1-eta)/(1-eta')."""
    q = q_ell(model, eta, eta_prime)
    if q >= Q_CAP:
        return endpoints(model)[0]
    return model._tau_prime_raw(q)


def H_r(model: GibbsModel, eta: float, eta_prime: float) -> float:
    """The exponent in [H_s, H_max] with D(H) = d(1-eta)/(1-eta')."""
    q = q_r(model, eta, eta_prime)
    if q <= -Q_CAP:
        return endpoints(model)[2]
    return model._tau_prime_raw(q)


def H_tilde_ell(model: GibbsModel, eta: float, eta_prime: float) -> float:
    if eta_prime <= 0:
        return math.inf
    return (1.0 / eta_prime - 1.0) * H_ell(model, eta, eta_prime)


def H_tilde_r(model: GibbsModel, eta: float, eta_prime: float) -> float:
    if eta_prime <= 0:
        return math.inf
    return (1.0 / eta_prime - 1.0) * H_r(model, eta, eta_prime)


# ---------------------------------------------------------------------------
# tangent construction

@dataclass(frozen=True)
class TangentPoint:
    eta_tilde: float
    q_eta_tilde: float
    H_ell_tilde: float
    H_tilde_ell_tilde: float
    eta_tilde_argmin: float
    H_tilde_argmin: float

    @property
    def dual_gap(self) -> float:
        return abs(self.eta_tilde - self.eta_tilde_argmin)


def q_eta_tilde(model: GibbsModel, eta: float) -> float:
    """The q > 0 solving tau(q) = -d(1-eta)."""
    _check_eta(eta)
    target = -model.d * (1 - eta)
    return bisect(lambda q: model._tau_raw(q) - target, 0.0, 1.0)


def tangent_point(model: GibbsModel, eta: float) -> TangentPoint:
    """eta_tilde by root-finding in q and, independently, by minimizing H_tilde_l."""
    _require_heterogeneous(model)
    c = model.d * (1 - eta)
    q = q_eta_tilde(model, eta)
    h = model._tau_prime_raw(q)
    dim = q * h + c  # g(q) since tau(q) = -c
    et = 1.0 - c / dim
    ht = c / q

    lo = max(eta_ell(model, eta), ETA_FLOOR)
    et_a, ht_a = golden_min(lambda e: H_tilde_ell(model, eta, e), lo, eta, tol=1e-12)
    gap = abs(et - et_a)
    if gap > DUAL_FAIL:
        raise NumericalError(
            f"tangent constructions disagree: root gives eta~={et!r}, argmin gives {et_a!r} "
            f"(gap {gap:.3e})")
    return TangentPoint(et, q, h, ht, et_a, ht_a)


def eta_tilde(model: GibbsModel, eta: float) -> tuple[float, float, float]:
    """(eta_tilde, q_eta_tilde, H_tilde_l(eta_tilde))."""
    tp = tangent_point(model, eta)
    return tp.eta_tilde, tp.q_eta_tilde, tp.H_tilde_ell_tilde


def q_eta_ell(model: GibbsModel, eta: float) -> float:
    """+inf when eta_l > 0, else the q > q_eta_tilde with g(q) = d(1-eta)."""
    if model.is_homogeneous or eta_ell(model, eta) > 0:
        return math.inf
    return _dual_level(model, model.d * (1 - eta), +1)


# ---------------------------------------------------------------------------
# summary and piecewise curves

@dataclass(frozen=True)
class TheorySummary:
    d: int
    eta: float
    homogeneous: bool
    eta_ell: float
    eta_r: float
    H_min: float
    H_s: float
    H_max: float
    H_ell_of_eta_ell: float
    H_r_of_eta_r: float
    H_ell_zero: float
    eta_tilde: float
    H_ell_tilde: float
    H_tilde_ell_tilde: float
    q_eta_tilde: float
    q_eta_ell: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def q_eta_ell_finite(self) -> bool:
        return math.isfinite(self.q_eta_ell)

    @property
    def breakpoints(self) -> tuple[float, float, float, float]:
        return (self.H_ell_of_eta_ell, self.H_ell_tilde,
                self.H_ell_tilde + self.H_tilde_ell_tilde, self.H_max + self.H_tilde_ell_tilde)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["q_eta_ell_finite"] = self.q_eta_ell_finite
        out["breakpoints"] = list(self.breakpoints)
        return out


def homogeneous_forms(beta: float, d: int, eta: float):
    """(tau_M, D_M, params) for a capacity with mu(I_w) ~ 2^{-beta |w|}.

    ``tau_M(q) = q beta/eta - d`` for ``q <= d eta/beta`` and ``q beta - d eta``
    above; ``D_M(H) = (d eta/beta) H`` on ``[beta, beta/eta]``.
    """
    if not beta > 0:
        raise ValueError("homogeneous forms need beta > 0")
    _check_eta(eta)
    qt = d * eta / beta

    def tau_M(q):
        q = np.asarray(q, dtype=float)
        out = np.where(q <= qt, q * beta / eta - d, q * beta - d * eta)
        return float(out) if out.ndim == 0 else out

    def D_M(H):
        H = np.asarray(H, dtype=float)
        ok = (H >= beta - 1e-12) & (H <= beta / eta + 1e-12)
        out = np.where(ok, qt * H, -np.inf)
        return float(out) if out.ndim == 0 else out

    params = dict(q_eta_tilde=qt, eta_tilde=eta, eta_ell=eta, eta_r=eta,
                  H_ell_tilde=beta, H_tilde_ell_tilde=beta * (1 / eta - 1), q_eta_ell=math.inf)
    return tau_M, D_M, params


def summarize(model: GibbsModel, eta: float) -> TheorySummary:
    _check_eta(eta)
    hmin, hs, hmax = endpoints(model)
    d = model.d
    c = d * (1 - eta)
    if model.is_homogeneous:
        beta = model.homogeneous_exponent
        _, _, p = homogeneous_forms(beta, d, eta)
        diag = dict(tau_at_q_eta_tilde_residual=abs(model._tau_raw(p["q_eta_tilde"]) + c),
                    tangency_residual=0.0, eta_tilde_dual_gap=0.0,
                    middle_coefficient_gap=abs(eta * d / beta - p["q_eta_tilde"]))
        return TheorySummary(d, eta, True, eta, eta, hmin, hs, hmax, beta, beta, beta, eta, beta,
                             p["H_tilde_ell_tilde"], p["q_eta_tilde"], math.inf, diag)

    el, er = eta_ell(model, eta), eta_r(model, eta)
    tp = tangent_point(model, eta)
    qel = q_eta_ell(model, eta)
    h_el = H_ell(model, eta, el)
    h_er = H_r(model, eta, er)
    h0 = H_ell(model, eta, 0.0) if el == 0 else h_el
    # independent re-derivations for the diagnostics
    dim_t = tau_star(model, tp.H_ell_tilde)
    slope_t = dual_q(model, tp.H_ell_tilde)
    diag = dict(
        tau_at_q_eta_tilde_residual=abs(model._tau_raw(tp.q_eta_tilde) + c),
        tangency_residual=abs(slope_t - (dim_t - c) / tp.H_ell_tilde),
        eta_tilde_dual_gap=tp.dual_gap,
        eta_tilde_argmin=tp.eta_tilde_argmin,
        middle_coefficient_gap=abs(tp.eta_tilde * dim_t / tp.H_ell_tilde - tp.q_eta_tilde),
        H_tilde_argmin=tp.H_tilde_argmin,
    )
    if math.isfinite(qel):
        diag["q_eta_ell_slope_residual"] = abs(model._tau_prime_raw(qel) - h0)
    s = TheorySummary(d, eta, False, el, er, hmin, hs, hmax, h_el, h_er, h0, tp.eta_tilde,
                      tp.H_ell_tilde, tp.H_tilde_ell_tilde, tp.q_eta_tilde, qel, diag)
    diag.update(continuity_residuals(model, s))
    return s


def _as_summary(model, eta_or_summary) -> TheorySummary:
    if isinstance(eta_or_summary, TheorySummary):
        return eta_or_summary
    return summarize(model, float(eta_or_summary))


def tau_tilde(model: GibbsModel, eta, q):
    """Predicted free energy of the sampled capacity (three pieces)."""
    s = _as_summary(model, eta)
    c = model.d * (1 - s.eta)
    if s.homogeneous:
        tau_M, _, _ = homogeneous_forms(model.homogeneous_exponent, model.d, s.eta)
        return tau_M(q)

    def one(x):
        if x <= s.q_eta_tilde:
            return model._tau_raw(x) + s.H_tilde_ell_tilde * x
        if x < s.q_eta_ell:
            return model._tau_raw(x) + c
        return s.H_ell_zero * x

    if np.ndim(q) == 0:
        return one(float(q))
    return np.array([one(float(x)) for x in np.ravel(q)]).reshape(np.shape(q))


def D_Mmu(model: GibbsModel, eta, H):
    """Predicted singularity spectrum of the sampled capacity (four cases)."""
    s = _as_summary(model, eta)
    c = model.d * (1 - s.eta)
    if s.homogeneous:
        _, D_M, _ = homogeneous_forms(model.homogeneous_exponent, model.d, s.eta)
        return D_M(H)
    b0, b1, b2, b3 = s.breakpoints

    def one(h):
        if b0 <= h <= b1:
            return tau_star(model, h) - c
        if b1 < h <= b2:
            return s.q_eta_tilde * h
        if b2 < h <= b3:
            return tau_star(model, min(h - s.H_tilde_ell_tilde, s.H_max))
        return -math.inf

    if np.ndim(H) == 0:
        return one(float(H))
    return np.array([one(float(x)) for x in np.ravel(H)]).reshape(np.shape(H))


def continuity_residuals(model: GibbsModel, s: TheorySummary) -> dict:
    c = model.d * (1 - s.eta)
    out = {}
    q = s.q_eta_tilde
    out["tau_tilde_jump_at_q_eta_tilde"] = abs(
        (model._tau_raw(q) + s.H_tilde_ell_tilde * q) - (model._tau_raw(q) + c))
    if math.isfinite(s.q_eta_ell):
        q = s.q_eta_ell
        out["tau_tilde_jump_at_q_eta_ell"] = abs(model._tau_raw(q) + c - s.H_ell_zero * q)
    _, b1, b2, _ = s.breakpoints
    out["D_jump_at_H_ell_tilde"] = abs((tau_star(model, b1) - c) - s.q_eta_tilde * b1)
    out["D_jump_at_H_ell_tilde_plus"] = abs(
        s.q_eta_tilde * b2 - tau_star(model, b2 - s.H_tilde_ell_tilde))
    if s.eta_ell == 0:
        out["D_at_left_end"] = abs(tau_star(model, s.H_ell_of_eta_ell) - c)
    return out


# ---------------------------------------------------------------------------
# brute-force optimizer

@dataclass(frozen=True)
class BruteForceResult:
    value: float
    alpha: float = math.nan
    eta_prime: float = math.nan
    delta: float = math.nan
    branch: str = ""


@dataclass(frozen=True)
class BruteForceOptions:
    grid: int = 120
    starts: int = 5
    xatol: float = 1e-9
    fatol: float = 1e-11
    maxiter: int = 4000


class _Branch:
    """Tabulated D(alpha) and H_tilde_i(eta') for one side of the spectrum."""

    def __init__(self, model, eta, side, n):
        self.model, self.eta, self.side = model, eta, side
        lo_eta = eta_ell(model, eta) if side == "l" else eta_r(model, eta)
        self.eta_lo = max(lo_eta, ETA_FLOOR)
        self.hmin, _, self.hmax = endpoints(model)
        self.alphas = np.linspace(self.hmin, self.hmax, n)
        self.dims = np.array([tau_star(model, a) for a in self.alphas])
        self.etas = np.linspace(self.eta_lo, eta, n)
        self.htil = np.array([self.H_tilde(e) for e in self.etas])

    def H_tilde(self, e):
        if self.side == "l":
            return H_tilde_ell(self.model, self.eta, e)
        return H_tilde_r(self.model, self.eta, e)

    def value(self, alpha, e, H, htil=None):
        """Objective with delta eliminated: D(alpha)/delta*, delta* the least feasible delta."""
        if not (self.eta_lo <= e <= self.eta) or not (self.hmin <= alpha <= self.hmax):
            return -math.inf, math.nan
        if htil is None:
            htil = self.H_tilde(e)
        delta = max(1.0, (alpha + htil) / H)
        if delta > 1.0 / e * (1 + 1e-15):
            return -math.inf, math.nan
        return tau_star(self.model, alpha) / delta, delta


def D_bruteforce(model: GibbsModel, eta: float, H: float,
                 options: BruteForceOptions = BruteForceOptions(), branches=None) -> BruteForceResult:
    """Direct maximization of D(alpha)/delta over the feasible (alpha, i, eta', delta).

    A test oracle: a coarse grid in (alpha, eta', delta) followed by Nelder-Mead
    refinement from the best grid points, with delta set to its least feasible value.
    """
    if H <= 0:
        return BruteForceResult(-math.inf)
    n = options.grid
    if branches is None:
        branches = [_Branch(model, eta, "l", n), _Branch(model, eta, "r", n)]
    t = np.linspace(0.0, 1.0, n)
    pool = []
    for br in branches:
        # grid: delta = 1 + t (1/eta' - 1)
        A = br.alphas[:, None, None]
        Dv = br.dims[:, None, None]
        E = br.etas[None, :, None]
        HT = br.htil[None, :, None]
        delta = 1.0 + t[None, None, :] * (1.0 / E - 1.0)
        feas = (A + HT) / delta <= H
        vals = np.where(feas, Dv / delta, -np.inf)
        flat = vals.ravel()
        k = min(options.starts, flat.size)
        for i in np.argpartition(-flat, k - 1)[:k]:
            if np.isfinite(flat[i]):
                ia, ie, _ = np.unravel_index(i, vals.shape)
                pool.append((flat[i], br.side, ia, ie, br))
    # the best starts over both branches
    pool.sort(key=lambda c: (-c[0], c[1], c[2], c[3]))
    candidates = [(br, br.alphas[ia], br.etas[ie]) for _, _, ia, ie, br in pool[:options.starts]]
    if not candidates:
        return BruteForceResult(-math.inf)

    best = BruteForceResult(-math.inf)
    for br, a0, e0 in candidates:
        span_e = br.eta - br.eta_lo

        def decode(x):
            e = br.eta_lo + min(max(x[1], 0.0), 1.0) * span_e
            ht = br.H_tilde(e)
            amax = min(br.hmax, H / e - ht)
            a = br.hmin + min(max(x[0], 0.0), 1.0) * (amax - br.hmin)
            return a, e, ht, amax

        def obj(x):
            a, e, ht, amax = decode(x)
            if amax < br.hmin:
                return math.inf
            v, _ = br.value(a, e, H, ht)
            return -v if math.isfinite(v) else math.inf

        ht0 = br.H_tilde(e0)
        amax0 = min(br.hmax, H / e0 - ht0)
        s0 = 0.5 if amax0 <= br.hmin else (a0 - br.hmin) / (amax0 - br.hmin)
        x0 = np.array([min(max(s0, 0.0), 1.0), (e0 - br.eta_lo) / span_e if span_e > 0 else 0.0])
        res = minimize(obj, x0, method="Nelder-Mead",
                       options=dict(xatol=options.xatol, fatol=options.fatol,
                                    maxiter=options.maxiter, initial_simplex=_simplex(x0)))
        for x in (res.x, x0):
            a, e, ht, amax = decode(x)
            if amax < br.hmin:
                continue
            v, dl = br.value(a, e, H, ht)
            if v > best.value:
                best = BruteForceResult(v, a, e, dl, br.side)
    return best


def _simplex(x0):
    step = 0.05
    pts = [x0]
    for i in range(2):
        p = x0.copy()
        p[i] = p[i] - step if p[i] + step > 1 else p[i] + step
        pts.append(p)
    return np.array(pts)


def bruteforce_branches(model: GibbsModel, eta: float, grid: int = 120):
    """Precomputed branch tables, reusable across many H values."""
    return [_Branch(model, eta, "l", grid), _Branch(model, eta, "r", grid)]


def lemma_grid_argmax(model: GibbsModel, eta: float, n: int = 2000) -> float:
    """Grid argmax of D(H)/(H + H_tilde_l(eta_tilde)) over [H_min, H_s]."""
    s = summarize(model, eta)
    grid = np.linspace(s.H_min, s.H_s, n)
    vals = np.array([tau_star(model, h) for h in grid]) / (grid + s.H_tilde_ell_tilde)
    return float(grid[np.argmax(vals)])


def tau_mu_curve(model: GibbsModel, qs) -> np.ndarray:
    return np.asarray(tau_mu(model, np.asarray(qs, dtype=float)))
