import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsegibbs import GibbsModel
from sparsegibbs import theory
from sparsegibbs.gibbs_model import endpoints, tau_mu, tau_mu_prime, tau_star
from sparsegibbs.numerics import NumericalError
from sparsegibbs.theory import (D_Mmu, D_bruteforce, H_ell, H_r, H_tilde_ell, bruteforce_branches,
                                eta_ell, eta_r, eta_tilde, homogeneous_forms, lemma_grid_argmax,
                                q_eta_ell, q_eta_tilde, summarize, tangent_point, tau_tilde)

GOLDEN_ENTROPY = math.log2((1 + math.sqrt(5)) / 2)


@pytest.fixture(scope="module")
def golden_markov():
    # the loop 00 and the excursion 010 tie for the largest weight per letter,
    # so the maximal-weight sequences are those with isolated 1s
    return GibbsModel.markov([0.5, 0.5], [[0.6, 0.4], [0.9, 0.1]])


@pytest.fixture(scope="module")
def quad():
    return GibbsModel.bernoulli([0.4, 0.4, 0.1, 0.1])


def one_sided_slope(f, x, side, h=1e-3):
    """Richardson-extrapolated one-sided derivative (third order)."""
    def fd(step):
        return side * (f(x + side * step) - f(x)) / step
    a, b, c = fd(h), fd(h / 2), fd(h / 4)
    ab, bc = 2 * b - a, 2 * c - b
    return (4 * bc - ab) / 3


# --- frozen oracle values -------------------------------------------------------

@pytest.mark.parametrize("eta", ["0.3", "0.5", "0.8"])
def test_tangent_parameters_bernoulli(bern, frozen, eta):
    s = summarize(bern, float(eta))
    key = f"bernoulli_eta{eta}_"
    assert s.q_eta_tilde == pytest.approx(frozen[key + "q_eta_tilde"], abs=1e-10)
    assert s.eta_tilde == pytest.approx(frozen[key + "eta_tilde"], abs=1e-9)
    assert s.H_ell_tilde == pytest.approx(frozen[key + "H_ell_tilde"], abs=1e-9)
    assert s.H_tilde_ell_tilde == pytest.approx(frozen[key + "H_tilde"], abs=1e-9)
    assert s.q_eta_ell == pytest.approx(frozen[key + "q_eta_ell"], abs=1e-9)
    assert s.H_ell_zero == pytest.approx(frozen[key + "H_ell_zero"], abs=1e-9)


def test_tangent_parameters_markov(markov, frozen):
    s = summarize(markov, 0.5)
    for name in ("q_eta_tilde", "eta_tilde", "H_ell_tilde", "q_eta_ell", "H_ell_zero"):
        assert getattr(s, name) == pytest.approx(frozen[f"markov_eta0.5_{name}"], abs=1e-8)
    assert s.H_tilde_ell_tilde == pytest.approx(frozen["markov_eta0.5_H_tilde"], abs=1e-8)


def test_worked_example_values(bern):
    et, qt, ht = eta_tilde(bern, 0.5)
    # the quoted 0.4250 is rounded; the root itself is 0.424899...
    assert qt == pytest.approx(0.4249, abs=1e-4)
    assert 0.2 ** qt + 0.8 ** qt == pytest.approx(2 ** 0.5, abs=1e-12)
    assert et == pytest.approx(0.468, abs=1e-3)
    assert ht == pytest.approx(1.176, abs=1e-3)
    assert H_ell(bern, 0.5, et) == pytest.approx(1.0356, abs=1e-4)


# --- thresholds ---------------------------------------------------------------------

def test_eta_ell_examples(bern, quad, golden_markov, monkeypatch):
    assert eta_ell(bern, 0.5) == 0.0
    assert eta_r(bern, 0.5) == 0.0
    # D(H_min) = log2 2 = 1 for two tied largest weights
    assert eta_ell(quad, 0.8) == pytest.approx(1 - 0.4 / 1.0, abs=1e-15)
    assert eta_ell(golden_markov, 0.8) == pytest.approx(1 - 0.2 / GOLDEN_ENTROPY, abs=1e-10)
    monkeypatch.setattr(theory, "_endpoint_dims", lambda m: (0.8, 0.0))
    assert eta_ell(bern, 0.5) == pytest.approx(0.375, abs=1e-15)


def test_homogeneous_models_are_rejected(homog):
    with pytest.raises(ValueError, match="homogeneous"):
        eta_ell(homog, 0.5)


def test_near_homogeneous_warns():
    m = GibbsModel.bernoulli([0.5 - 1e-9, 0.5 + 1e-9])
    with pytest.warns(RuntimeWarning, match="near-homogeneous"):
        eta_ell(m, 0.5)


def test_H_ell_examples(bern):
    hmin, hs, _ = endpoints(bern)
    assert H_ell(bern, 0.5, 0.5) == pytest.approx(hs, abs=1e-12)
    h0 = H_ell(bern, 0.5, 0.0)
    assert abs(tau_star(bern, h0) - 0.5) < 1e-10
    assert hmin < h0 < hs
    hr = H_r(bern, 0.5, 0.0)
    assert abs(tau_star(bern, hr) - 0.5) < 1e-10
    assert hr > hs


def test_eta_prime_out_of_range(bern, quad):
    with pytest.raises(ValueError):
        H_ell(bern, 0.5, 0.6)
    with pytest.raises(ValueError):
        H_ell(quad, 0.8, 0.3)


def test_two_tangent_constructions_agree(bern, markov):
    for model in (bern, markov):
        for eta in (0.2, 0.5, 0.9):
            tp = tangent_point(model, eta)
            assert tp.dual_gap < 1e-6
            assert H_ell(model, eta, tp.eta_tilde) == pytest.approx(tp.H_ell_tilde, abs=1e-6)


def test_disagreeing_constructions_raise(bern, monkeypatch):
    monkeypatch.setattr(theory, "golden_min", lambda f, a, b, tol: (a, f(a)))
    with pytest.raises(NumericalError, match="disagree"):
        tangent_point(bern, 0.5)


def test_lemma_grid_argmax(bern):
    s = summarize(bern, 0.5)
    spacing = (s.H_s - s.H_min) / 1999
    assert abs(lemma_grid_argmax(bern, 0.5) - s.H_ell_tilde) <= spacing


def test_q_eta_ell(bern, quad, golden_markov, homog):
    s = summarize(bern, 0.5)
    assert math.isfinite(s.q_eta_ell) and s.q_eta_ell > s.q_eta_tilde
    assert abs(tau_mu_prime(bern, s.q_eta_ell) - s.H_ell_zero) < 1e-8
    g = s.q_eta_ell * tau_mu_prime(bern, s.q_eta_ell) - tau_mu(bern, s.q_eta_ell)
    assert abs(g - 0.5) < 1e-10
    assert q_eta_ell(quad, 0.8) == math.inf
    assert q_eta_ell(golden_markov, 0.8) == math.inf
    assert q_eta_ell(homog, 0.5) == math.inf


def test_homogeneous_summary(homog):
    s = summarize(homog, 0.5)
    assert s.homogeneous
    assert s.eta_tilde == 0.5 and s.eta_ell == 0.5 and s.eta_r == 0.5
    assert s.H_tilde_ell_tilde == pytest.approx(1.0)
    assert s.q_eta_tilde == 0.5
    assert s.q_eta_ell == math.inf


# --- piecewise curves -----------------------------------------------------------

def test_tau_tilde_examples(bern, homog):
    s = summarize(bern, 0.5)
    assert tau_tilde(bern, s, s.q_eta_tilde) == pytest.approx(0.0, abs=1e-12)
    assert tau_tilde(bern, s, 0.0) == pytest.approx(-1.0, abs=1e-12)
    for q in (-1.0, 0.2, 0.5):
        assert tau_tilde(homog, 0.5, q) == pytest.approx(2 * q - 1)
    for q in (0.6, 2.0):
        assert tau_tilde(homog, 0.5, q) == pytest.approx(q - 0.5)


def test_D_Mmu_examples(bern, homog):
    s = summarize(bern, 0.5)
    assert D_Mmu(bern, s, s.H_s + s.H_tilde_ell_tilde) == pytest.approx(1.0, abs=1e-12)
    assert D_Mmu(bern, s, s.H_ell_of_eta_ell) == pytest.approx(0.0, abs=1e-9)
    assert D_Mmu(bern, s, s.H_ell_of_eta_ell - 0.01) == -math.inf
    assert D_Mmu(bern, s, s.H_max + s.H_tilde_ell_tilde + 0.01) == -math.inf
    assert D_Mmu(homog, 0.5, 1.5) == pytest.approx(0.75)
    assert D_Mmu(homog, 0.5, 0.9) == -math.inf
    assert D_Mmu(homog, 0.5, 2.1) == -math.inf


def test_homogeneous_forms():
    tau_M, D_M, p = homogeneous_forms(1.0, 1, 0.5)
    assert p["q_eta_tilde"] == 0.5
    assert tau_M(0.5) == 0.0
    assert tau_M(2.0) == pytest.approx(2.0 - 0.5)
    assert tau_M(-1.0) == pytest.approx(2 * -1.0 - 1)
    assert D_M(1.0) == pytest.approx(0.5)
    assert D_M(2.0) == pytest.approx(1.0)
    tau_M, D_M, p = homogeneous_forms(2.0, 2, 0.3)
    assert D_M(2.0) == pytest.approx(2 * 0.3)
    assert D_M(2.0 / 0.3) == pytest.approx(2.0)
    q = p["q_eta_tilde"]
    assert tau_M(q) == pytest.approx(tau_M(q + 1e-12), abs=1e-9)


@pytest.mark.parametrize("eta", [0.3, 0.5, 0.8])
def test_phase_transitions(bern, markov, eta):
    for model in (bern, markov):
        s = summarize(model, eta)
        f = lambda q: tau_tilde(model, s, q)
        left = one_sided_slope(f, s.q_eta_tilde, -1)
        right = one_sided_slope(f, s.q_eta_tilde, +1)
        assert abs((left - right) - s.H_tilde_ell_tilde) < 1e-8
        if math.isfinite(s.q_eta_ell):
            left = one_sided_slope(f, s.q_eta_ell, -1)
            right = one_sided_slope(f, s.q_eta_ell, +1)
            assert abs(left - right) < 1e-6


def test_H_tilde_nonincreasing_in_eta(bern, markov):
    for model in (bern, markov):
        vals = [summarize(model, eta).H_tilde_ell_tilde for eta in np.arange(1, 10) / 10]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("eta", [0.3, 0.5, 0.8])
def test_continuity(bern, markov, golden_markov, eta):
    for model in (bern, markov, golden_markov):
        s = summarize(model, eta)
        for k, v in s.diagnostics.items():
            if "jump" in k or k == "D_at_left_end":
                assert v < 1e-9, k
        assert s.diagnostics["middle_coefficient_gap"] < 1e-8
        assert s.diagnostics["tangency_residual"] < 1e-8
        assert s.diagnostics["tau_at_q_eta_tilde_residual"] < 1e-9
        for b in s.breakpoints[1:3]:
            lo, hi = D_Mmu(model, s, b - 1e-11), D_Mmu(model, s, b + 1e-11)
            assert abs(lo - hi) < 1e-9


bernoulli_weights = st.lists(st.floats(0.05, 1.0), min_size=2, max_size=2).filter(
    lambda w: abs(w[0] - w[1]) > 0.05 * max(w))


@settings(max_examples=25)
@given(bernoulli_weights, st.floats(0.1, 0.9))
def test_summary_invariants(w, eta):
    model = GibbsModel.bernoulli([x / math.fsum(w) for x in w])
    s = summarize(model, eta)
    assert s.eta_ell <= s.eta_tilde <= s.eta
    assert s.eta_ell < s.eta_tilde < s.eta
    assert s.eta_r <= s.eta
    assert abs(tau_mu(model, s.q_eta_tilde) + (1 - eta)) < 1e-9
    assert s.diagnostics["tangency_residual"] < 1e-8
    assert s.q_eta_ell_finite == (s.eta_ell == 0)
    b = s.breakpoints
    assert b[0] <= b[1] <= b[2] <= b[3]


# --- brute-force optimizer ------------------------------------------------------

@pytest.fixture(scope="module")
def bern_branches(bern):
    return bruteforce_branches(bern, 0.5)


def test_bruteforce_below_support_is_empty(bern, bern_branches):
    s = summarize(bern, 0.5)
    assert D_bruteforce(bern, 0.5, s.H_ell_of_eta_ell - 0.05, branches=bern_branches).value == -math.inf
    assert D_bruteforce(bern, 0.5, 0.0).value == -math.inf


def test_bruteforce_agrees_on_a_few_points(bern, bern_branches):
    s = summarize(bern, 0.5)
    for H in np.linspace(s.H_ell_of_eta_ell, s.H_s + s.H_tilde_ell_tilde, 6)[1:]:
        r = D_bruteforce(bern, 0.5, H, branches=bern_branches)
        assert abs(r.value - D_Mmu(bern, s, H)) < 1e-3


def test_bruteforce_argmax_triplet(bern, bern_branches):
    s = summarize(bern, 0.5)
    H = s.H_ell_tilde + s.H_tilde_ell_tilde
    r = D_bruteforce(bern, 0.5, H, branches=bern_branches)
    assert r.branch == "l"
    assert abs(r.alpha - (H - s.H_tilde_ell_tilde)) < 0.02
    assert abs(r.eta_prime - s.eta_tilde) < 0.02
    assert abs(r.delta - 1.0) < 0.02


def test_H_tilde_at_zero_is_infinite(bern):
    assert H_tilde_ell(bern, 0.5, 0.0) == math.inf


def test_q_eta_tilde_root(bern):
    q = q_eta_tilde(bern, 0.5)
    assert abs(tau_mu(bern, q) + 0.5) < 1e-12
