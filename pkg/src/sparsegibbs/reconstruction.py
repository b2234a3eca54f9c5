"""Recovering capacity values from surviving pairs (w, wu), and the threshold experiment.

If both ``w`` and ``wu`` survive, ``mu(wu)/mu(w)`` approximates ``mu(u)`` up to
the quasi-Bernoulli constant.  A word is k-reconstructible when it splits into
k pieces that each have such a pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .gibbs_model import GibbsModel, mu_log2, quasi_bernoulli_log2C
from .survival_field import FieldConfig, SurvivalField
from .words import DyadicWord

DEFAULT_K_MAX = 4


@dataclass(frozen=True)
class Piece:
    u: DyadicWord
    w: DyadicWord

    @property
    def wu(self) -> DyadicWord:
        return self.w + self.u


@dataclass
class ReconResult:
    target: DyadicWord
    found: bool
    k: int = 0
    pieces: list[Piece] = field(default_factory=list)
    mu_estimate_log2: float | None = None
    error_bound_log2: float | None = None
    search_depth_used: int = 0

    @property
    def witness(self) -> Piece | None:
        return self.pieces[0] if self.k == 1 else None


def _require_hash(field: SurvivalField):
    if field.cfg.backend != "hash":
        raise ValueError("pair searches need the hash backend (lazy per-node survival)")


def _pair_mask(field: SurvivalField, j: int, suffixes: np.ndarray, ell: int):
    """For the survivors w at depth j: (codes, bool matrix [len(suffixes), len(codes)]) of wu surviving."""
    d = field.d
    ws = field.level(j)
    if ws.size == 0:
        return ws, np.zeros((suffixes.size, 0), dtype=bool)
    cat = (ws[None, :] << np.uint64(d * ell)) | suffixes[:, None]
    ok = field.survives_codes(cat.ravel(), j + ell).reshape(cat.shape)
    return ws, ok


def find_pair(field: SurvivalField, u: DyadicWord, J_max: int) -> ReconResult:
    """First (depth, then code) surviving w with |w| <= J_max such that wu survives too."""
    _require_hash(field)
    ell = len(u)
    if ell + J_max > field.cfg.max_depth:
        raise ValueError(f"|u| + J_max = {ell + J_max} exceeds max_depth {field.cfg.max_depth}")
    suffix = np.array([u.code], dtype=np.uint64)
    for j in range(J_max + 1):
        ws, ok = _pair_mask(field, j, suffix, ell)
        hits = np.nonzero(ok[0])[0]
        if hits.size:
            w = DyadicWord.from_code(int(ws[hits[0]]), j, field.d)
            return ReconResult(u, True, 1, [Piece(u, w)], search_depth_used=j)
    return ReconResult(u, False, search_depth_used=J_max)


def count_pairs(field: SurvivalField, u: DyadicWord, J_max: int, start: int = 1) -> int:
    """Number of w with start <= |w| <= J_max and both w, wu surviving."""
    _require_hash(field)
    suffix = np.array([u.code], dtype=np.uint64)
    return int(sum(_pair_mask(field, j, suffix, len(u))[1].sum() for j in range(start, J_max + 1)))


def pair_table(field: SurvivalField, word_len: int, J_max: int, with_counts: bool = True,
               chunk: int = 1 << 22):
    """For every word of length word_len: (first witness depth or -1, pair count over depths 1..J_max).

    Without counts the scan stops once every word has a witness.
    """
    _require_hash(field)
    d = field.d
    n = 1 << (d * word_len)
    first = np.full(n, -1, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for j in range(J_max + 1):
        ws = field.level(j)
        if ws.size:
            step = max(1, chunk // n)
            for lo in range(0, ws.size, step):
                part = ws[lo:lo + step]
                cat = (part[None, :] << np.uint64(d * word_len)) | np.arange(n, dtype=np.uint64)[:, None]
                ok = field.survives_codes(cat.ravel(), j + word_len).reshape(cat.shape)
                first[(first < 0) & ok.any(axis=1)] = j
                if with_counts and j >= 1:
                    counts += ok.sum(axis=1)
        if not with_counts and np.all(first >= 0):
            break
    return first, counts


def expected_pair_count(d: int, eta: float, word_len: int, J_max: int) -> float:
    """E #{w : 1 <= |w| <= J_max, w and wu survive} = 2^{-d l (1-eta)} sum_j 2^{d j (2 eta - 1)}."""
    s = math.fsum(2.0 ** (d * j * (2 * eta - 1)) for j in range(1, J_max + 1))
    return 2.0 ** (-d * word_len * (1 - eta)) * s


def error_bound(model: GibbsModel, k: int) -> float:
    """log2 error bound for a k-piece estimate.

    Each piece ratio is within C of mu(u_i), and the product of the mu(u_i) is
    within C^{k-1} of mu(u), giving (2k-1) log2 C; (k+1) log2 C is reported
    when larger (k = 1).
    """
    return max(k + 1, 2 * k - 1) * quasi_bernoulli_log2C(model)


def reconstruct(model: GibbsModel, field: SurvivalField, u: DyadicWord, J_max: int,
                k_max: int = DEFAULT_K_MAX) -> ReconResult:
    """Fewest-piece reconstruction of mu(u) from surviving pairs (k <= k_max)."""
    _require_hash(field)
    ell = len(u)
    if ell == 0:
        root = DyadicWord.root(field.d)
        return ReconResult(u, True, 1, [Piece(u, root)], mu_log2(model, root) - mu_log2(model, root),
                           error_bound(model, 1), 0)

    @lru_cache(maxsize=None)
    def piece(a, b):
        r = find_pair(field, DyadicWord(u.letters[a:b], field.d), J_max)
        return r.pieces[0] if r.found else None

    # fewest pieces first; among equal counts the split found first in (start, end) order
    best: list[tuple[int, ...] | None] = [None] * (ell + 1)
    best[0] = ()
    for b in range(1, ell + 1):
        for a in range(b):
            if best[a] is None or len(best[a]) + 1 > k_max:
                continue
            if piece(a, b) is None:
                continue
            cand = best[a] + (b,)
            if best[b] is None or len(cand) < len(best[b]):
                best[b] = cand
    if best[ell] is None:
        return ReconResult(u, False, search_depth_used=J_max)
    cuts = (0,) + best[ell]
    pieces = [piece(a, b) for a, b in zip(cuts[:-1], cuts[1:])]
    est = math.fsum(mu_log2(model, p.wu) - mu_log2(model, p.w) for p in pieces)
    k = len(pieces)
    return ReconResult(u, True, k, pieces, est, error_bound(model, k), max(len(p.w) for p in pieces))


# ---------------------------------------------------------------------------
# the threshold experiment

@dataclass(frozen=True)
class FractionRow:
    eta: float
    seed: int
    word_len: int
    fraction: float
    expected_pairs: float


def fraction_experiment(d: int, eta_grid: Sequence[float], word_len: int, J_max: int,
                        seeds: Sequence[int], model: GibbsModel | None = None) -> list[FractionRow]:
    """Fraction of all length-word_len words that are 1-reconstructible, per (eta, seed).

    1-reconstructibility does not depend on the capacity, so ``model`` is only
    checked for dimension.
    """
    if model is not None and model.d != d:
        raise ValueError("model dimension does not match d")
    rows = []
    for eta in eta_grid:
        e = expected_pair_count(d, eta, word_len, J_max)
        for seed in seeds:
            if word_len == 0:
                rows.append(FractionRow(eta, seed, 0, 1.0, e))
                continue
            f = SurvivalField(FieldConfig(seed, eta, d, "hash", max_depth=word_len + J_max))
            first, _ = pair_table(f, word_len, J_max, with_counts=False)
            rows.append(FractionRow(eta, seed, word_len, float(np.mean(first >= 0)), e))
    return rows


def mean_fractions(rows: Sequence[FractionRow]) -> tuple[np.ndarray, np.ndarray]:
    etas = sorted({r.eta for r in rows})
    means = [np.mean([r.fraction for r in rows if r.eta == e]) for e in etas]
    return np.array(etas), np.array(means)


def crossing(etas: np.ndarray, values: np.ndarray, level: float = 0.5) -> float:
    """First eta where the curve reaches ``level``, by linear interpolation; nan if never."""
    for i in range(len(etas)):
        if values[i] >= level:
            if i == 0:
                return float(etas[0])
            x0, x1, y0, y1 = etas[i - 1], etas[i], values[i - 1], values[i]
            return float(x0 + (level - y0) * (x1 - x0) / (y1 - y0))
    return math.nan


def fraction_csv(rows: Sequence[FractionRow]) -> str:
    out = ["eta,seed,word_len,fraction,expected_pairs"]
    out += [f"{r.eta:.17g},{r.seed},{r.word_len},{r.fraction:.17g},{r.expected_pairs:.17g}" for r in rows]
    return "\n".join(out) + "\n"
