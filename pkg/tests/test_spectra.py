import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsegibbs import GibbsModel
from sparsegibbs.capacity_sampler import build_capacity_grid
from sparsegibbs.gibbs_model import endpoints, tau_mu, tau_star
from sparsegibbs.spectra import (Curve, EmptySupportError, average_curves, check_concave, compare_curves,
                                 curve_from_function, default_H_grid, default_q_grid, ld_counts, ld_ladder,
                                 legendre_conjugate_numeric, lq_from_values, lq_spectrum)
from sparsegibbs.survival_field import make_field


def fake_grid(values, J, d=1):
    return SimpleNamespace(values=np.asarray(values, dtype=float), J=J, d=d)


def test_curve_validation():
    with pytest.raises(ValueError):
        Curve([0.0], [1.0])
    with pytest.raises(ValueError):
        Curve([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        Curve([0.0, 1.0], [1.0, 2.0], kind="nope")
    c = Curve([0, 1], [-np.inf, 2.0], "D")
    assert len(c) == 2


# --- L^q spectrum ---------------------------------------------------------------

def test_constant_grid_gives_linear_tau():
    J, a = 6, 1.3
    g = fake_grid(np.full(1 << J, -a * J), J)
    qs = np.linspace(-3, 3, 13)
    tau = lq_spectrum(g, qs)
    assert np.allclose(tau.ys, a * qs - 1, atol=1e-12)
    assert tau.kind == "tau"


def test_q_zero_counts_finite_cells():
    g = fake_grid([-1.0, -2.0, -np.inf, -3.0], 2)
    assert lq_spectrum(g, [0.0, 1.0]).ys[0] == pytest.approx(-math.log2(3) / 2)


def test_empty_support_raises():
    with pytest.raises(EmptySupportError):
        lq_spectrum(fake_grid([-np.inf] * 4, 2), [0.0, 1.0])


def test_log_sum_exp_does_not_overflow():
    v = np.array([-2000.0, -1000.0, -3000.0])
    out = lq_from_values(v, 10, [-50.0, 50.0])
    assert np.all(np.isfinite(out))
    assert out[1] == pytest.approx(50 * 1000 / 10, rel=1e-12)


@settings(max_examples=30)
@given(st.lists(st.floats(-60, 0), min_size=1, max_size=40), st.integers(1, 20))
def test_lq_spectrum_is_concave(values, J):
    qs = np.linspace(-5, 5, 41)
    ys = lq_from_values(np.array(values), J, qs)
    check_concave(qs, ys, 1e-9)


def test_lq_sanity_bound_at_one():
    # capacities at most 1 and summing to at most 1 give tau(1) >= 0
    v = np.log2(np.full(8, 1 / 8))
    assert lq_from_values(v, 3, [1.0])[0] == pytest.approx(0.0, abs=1e-15)


def test_average_curves():
    a = Curve([0, 1, 2], [0, 1, 2], "tau")
    b = Curve([0, 1, 2], [2, 3, 4], "tau")
    assert average_curves([a, b]).ys.tolist() == [1, 2, 3]
    with pytest.raises(ValueError):
        average_curves([a, Curve([0, 1, 3], [0, 0, 0])])


# --- large deviations -----------------------------------------------------------

def test_ld_counts_basic():
    J = 4
    vals = -J * np.array([1.0, 1.05, 1.5, 2.0, 2.0, np.inf, 1.0, 1.0] + [3.0] * 8)
    g = fake_grid(vals, J)
    res = ld_counts(g, [1.0, 2.0, 5.0], epsilon=0.1)
    assert res.counts.tolist() == [4, 2, 0]
    assert res.f_lower.ys[2] == -np.inf
    assert res.f_lower.ys[0] == pytest.approx(2 / J)
    assert np.array_equal(res.f_lower.ys, res.f_upper.ys)
    with pytest.raises(ValueError):
        ld_counts(g, [1.0], epsilon=0.0)


@settings(max_examples=30)
@given(st.lists(st.floats(0, 4), min_size=16, max_size=16), st.floats(0.01, 0.5))
def test_disjoint_bins_never_exceed_cells(exps, eps):
    g = fake_grid(-4 * np.array(exps), 4)
    centers = np.arange(0, 5, 2 * eps) + eps
    # bins of width 2 eps centred on the grid are disjoint up to shared endpoints
    res = ld_counts(g, centers[::2], eps)
    assert res.counts.sum() <= 16


def test_ld_ladder_envelopes():
    g1 = fake_grid(-2 * np.array([1.0, 1.0, 1.0, 2.0]), 2)
    g2 = fake_grid(-3 * np.array([1.0] * 2 + [2.0] * 6), 3)
    lo, hi = ld_ladder([g1, g2], [1.0, 2.0], 0.1)
    assert lo.ys.tolist() == pytest.approx([1 / 3, 0.0])
    assert hi.ys.tolist() == pytest.approx([math.log2(3) / 2, math.log2(6) / 3])
    assert lo.kind == "f_lower" and hi.kind == "f_upper"


# --- Legendre conjugate ---------------------------------------------------------

def test_linear_conjugate():
    beta, d = 1.3, 1
    c = curve_from_function(lambda q: beta * q - d, np.linspace(-3, 3, 61), "tau")
    out = legendre_conjugate_numeric(c, [beta - 0.5, beta, beta + 0.5])
    assert out.ys[1] == pytest.approx(d, abs=1e-9)
    assert out.ys[0] == -np.inf and out.ys[2] == -np.inf


def test_conjugate_matches_model_legendre_spectrum(bern):
    qs = np.linspace(-40, 40, 400)
    c = curve_from_function(lambda q: tau_mu(bern, q), qs, "tau", attach=False)
    hmin, _, hmax = endpoints(bern)
    H = np.linspace(hmin + 0.05, hmax - 0.05, 200)
    num = legendre_conjugate_numeric(c, H)
    exact = np.array([tau_star(bern, h) for h in H])
    assert np.max(np.abs(num.ys - exact)) <= 1e-6


def test_double_conjugation(bern):
    qs = np.linspace(-20, 20, 801)
    c = curve_from_function(lambda q: tau_mu(bern, q), qs, "tau")
    hmin, _, hmax = endpoints(bern)
    H = np.linspace(hmin + 1e-3, hmax - 1e-3, 1500)
    star = curve_from_function(lambda h: np.array([tau_star(bern, x) for x in np.atleast_1d(h)]), H, "tau_star")
    back = legendre_conjugate_numeric(star, np.linspace(-3, 3, 25))
    assert np.max(np.abs(back.ys - tau_mu(bern, np.linspace(-3, 3, 25)))) < 1e-6


def test_nonconcave_input_names_the_triple():
    c = Curve(np.arange(10.0), np.array([0, 1, 2, 3, 2, 3, 2, 1, 0, -1.0]), "tau")
    with pytest.raises(ValueError, match=r"triple \(3\.0, 3\.0\), \(4\.0, 2\.0\)"):
        legendre_conjugate_numeric(c, [0.5, 1.0])


def test_conjugate_needs_eight_samples():
    c = Curve(np.arange(5.0), -np.arange(5.0) ** 2, "tau")
    with pytest.raises(ValueError, match="8"):
        legendre_conjugate_numeric(c, [0.0, 1.0])


@settings(max_examples=10)
@given(st.floats(0.5, 3.0), st.floats(0.1, 2.0), st.floats(-1.0, 1.0))
def test_conjugate_of_quadratic(a, b, h):
    # tau(q) = b q - a q^2 / 2 has conjugate -(H - b)^2 / (2a)
    qs = np.linspace(-10, 10, 201)
    c = Curve(qs, b * qs - a * qs ** 2 / 2, "tau")
    H = b + h
    out = legendre_conjugate_numeric(c, [H, H + 1.0])
    assert out.ys[0] == pytest.approx(-h * h / (2 * a), abs=1e-8)


# --- comparisons ----------------------------------------------------------------

def test_compare_self_is_zero_and_mismatch_lists_points():
    a = Curve([0, 1, 2], [0.0, -np.inf, 1.0])
    gap = compare_curves(a, a)
    assert gap.sup == 0.0 and gap.mean == 0.0
    b = Curve([0, 1, 3], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError, match=r"\[2\.0\].*\[3\.0\]"):
        compare_curves(a, b)
    c = Curve([0, 1, 2], [0.5, 0.0, 1.0])
    gap = compare_curves(a, c)
    assert gap.sup == np.inf and gap.argsup == 1.0
    assert compare_curves(a, c, lo=1.5).sup == 0.0


def test_default_grids():
    q = default_q_grid()
    assert q[0] == -5.0 and q[-1] == 5.0 and q.size == 201
    H = default_H_grid(3.0)
    assert H[0] == 0.0 and H[-1] == pytest.approx(3.5)


# --- empirical spectra from sampled grids ---------------------------------------

def test_chernoff_bound_between_ld_and_lq(bern):
    J, eps = 12, 0.1
    g = build_capacity_grid(bern, make_field(3, 0.5, backend="index"), J)
    qs = np.round(np.arange(-100, 101) * 0.05, 10)
    tau = lq_spectrum(g, qs)
    H = np.round(np.arange(0, 201) * 0.02, 10)
    star, qstar = legendre_conjugate_numeric(tau, H, return_argmin=True)
    ld = ld_counts(g, H, eps)
    ok = np.isfinite(ld.f_lower.ys) & np.isfinite(star.ys)
    slack = 2 / J + eps * np.abs(qstar[ok])
    assert np.all(ld.f_lower.ys[ok] <= star.ys[ok] + slack)


def test_spectrum_is_bit_reproducible(homog):
    g = build_capacity_grid(homog, make_field(5, 0.5, backend="index"), 10)
    qs = default_q_grid()
    a, b = lq_spectrum(g, qs), lq_spectrum(g, qs)
    assert a.ys.tobytes() == b.ys.tobytes()


def annealed_homogeneous_tau(J, q, eta=0.5):
    """-(1/J) log2(2^J E 2^{-q log2 M}) from the exact law of the shallowest survivor depth.

    Interior cells only; the neighbourhood minimum treats the three cells as independent.
    """
    js = np.arange(J, 2 * J + 40)
    log_empty = np.array([2.0 ** (k - J) * math.log1p(-2.0 ** (-(1 - eta) * k)) for k in js])
    tail = np.exp(3 * np.cumsum(log_empty))
    pmf = -np.diff(np.concatenate([[1.0], tail]))
    return -(J + math.log2(np.sum(pmf * 2.0 ** (-q * js)))) / J


@pytest.mark.parametrize("J", [12, 16])
def test_homogeneous_tau_matches_annealed_law(homog, J):
    taus = [lq_spectrum(build_capacity_grid(homog, make_field(s, 0.5, backend="index"), J), [-2.0, -1.0]).ys
            for s in range(8)]
    emp = np.mean(taus, axis=0)
    assert emp[0] == pytest.approx(annealed_homogeneous_tau(J, -2.0), abs=0.03)
    assert emp[1] == pytest.approx(annealed_homogeneous_tau(J, -1.0), abs=0.03)
