"""Gibbs capacities on the 2^d-ary tree and their thermodynamics.

A model is ``mu(I_w) = K * nu([w])**alpha * 2**(-beta_bits*|w|)`` where ``nu`` is
a Bernoulli (product) measure, a memory-one Markov measure, or absent
(homogeneous).  All capacity values are handled as base-2 logarithms.

``beta_bits`` is the per-level decay in base-2 units: a decay written as
``exp(-beta*|w|)`` corresponds to ``beta_bits = beta / ln 2``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Union

import numpy as np
import scipy.linalg

from .numerics import NumericalError, bisect
from .words import DyadicWord, letters_of

Q_CAP = 200.0
POWER_TOL = 1e-13
POWER_MAX_ITER = 10_000
HOMOGENEITY_TOL = 1e-12
STOCHASTIC_TOL = 1e-9


class ModelError(ValueError):
    pass


class ModelFileError(ModelError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class BernoulliWeights:
    weights: tuple[float, ...]


@dataclass(frozen=True)
class MarkovWeights:
    init: tuple[float, ...]
    rows: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class Homogeneous:
    pass


Base = Union[BernoulliWeights, MarkovWeights, Homogeneous]


def _check_probability_vector(v, size, what):
    if len(v) != size:
        raise ModelError(f"{what} needs {size} entries, got {len(v)}")
    if any(not (x > 0) or not math.isfinite(x) for x in v):
        raise ModelError(f"{what} must be strictly positive and finite")
    if abs(math.fsum(v) - 1.0) > STOCHASTIC_TOL:
        raise ModelError(f"{what} must sum to 1 (sum={math.fsum(v)!r})")


@dataclass(frozen=True)
class GibbsModel:
    d: int
    base: Base
    K: float = 1.0
    alpha: float = 1.0
    beta_bits: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise ModelError("d must be >= 1")
        if not (self.K > 0 and math.isfinite(self.K)):
            raise ModelError("K must be positive")
        if self.alpha < 0 or self.beta_bits < 0:
            raise ModelError("alpha and beta_bits must be nonnegative")
        n = 1 << self.d
        if isinstance(self.base, BernoulliWeights):
            object.__setattr__(self, "base", BernoulliWeights(tuple(map(float, self.base.weights))))
            _check_probability_vector(self.base.weights, n, "weights")
        elif isinstance(self.base, MarkovWeights):
            init = tuple(map(float, self.base.init))
            rows = tuple(tuple(map(float, r)) for r in self.base.rows)
            object.__setattr__(self, "base", MarkovWeights(init, rows))
            _check_probability_vector(init, n, "init")
            if len(rows) != n:
                raise ModelError(f"transition matrix needs {n} rows, got {len(rows)}")
            for i, r in enumerate(rows):
                _check_probability_vector(r, n, f"row {i}")
        elif isinstance(self.base, Homogeneous):
            # no base measure: mu = K 2^{-beta |w|}
            object.__setattr__(self, "alpha", 0.0)
        else:
            raise ModelError(f"unknown base {self.base!r}")
        if self.alpha == 0 and self.beta_bits == 0:
            raise ModelError("(alpha, beta_bits) must not both be zero")

    # -- constructors -----------------------------------------------------
    @classmethod
    def bernoulli(cls, weights, K=1.0, alpha=1.0, beta_bits=0.0, name=""):
        d = int(round(math.log2(len(weights))))
        if 1 << d != len(weights):
            raise ModelError(f"number of weights must be a power of two, got {len(weights)}")
        return cls(d, BernoulliWeights(tuple(weights)), K, alpha, beta_bits, name)

    @classmethod
    def markov(cls, init, rows, K=1.0, alpha=1.0, beta_bits=0.0, name=""):
        d = int(round(math.log2(len(init))))
        if 1 << d != len(init):
            raise ModelError(f"number of states must be a power of two, got {len(init)}")
        return cls(d, MarkovWeights(tuple(init), tuple(tuple(r) for r in rows)), K, alpha,
                   beta_bits, name)

    @classmethod
    def homogeneous(cls, beta_bits, d=1, K=1.0, name=""):
        return cls(d, Homogeneous(), K, 0.0, beta_bits, name)

    # -- cached log-weights -----------------------------------------------
    @cached_property
    def _log2_weights(self) -> np.ndarray:
        return np.log2(np.asarray(self.base.weights))

    @cached_property
    def _log2_init(self) -> np.ndarray:
        return np.log2(np.asarray(self.base.init))

    @cached_property
    def _log2_trans(self) -> np.ndarray:
        return np.log2(np.asarray(self.base.rows))

    @property
    def alphabet_size(self) -> int:
        return 1 << self.d

    @property
    def kind(self) -> str:
        return {BernoulliWeights: "bernoulli", MarkovWeights: "markov",
                Homogeneous: "homogeneous"}[type(self.base)]

    @cached_property
    def is_homogeneous(self) -> bool:
        if isinstance(self.base, Homogeneous) or self.alpha == 0:
            return True
        if isinstance(self.base, BernoulliWeights):
            w = self.base.weights
            return max(w) - min(w) <= HOMOGENEITY_TOL
        rows = np.asarray(self.base.rows)
        if np.all(np.abs(rows - 1.0 / self.alphabet_size) <= HOMOGENEITY_TOL):
            return True
        # a Markov potential can be cohomologous to a constant with non-uniform rows
        lo, hi = self._tau_prime_raw(Q_CAP), self._tau_prime_raw(-Q_CAP)
        return hi - lo <= HOMOGENEITY_TOL

    @cached_property
    def homogeneous_exponent(self) -> float:
        """The single local exponent of a homogeneous model (its H_s)."""
        return self._tau_prime_raw(0.0)

    @cached_property
    def canonical_text(self) -> str:
        return format_model(self)

    @cached_property
    def model_hash(self) -> str:
        return hashlib.sha256(self.canonical_text.encode()).hexdigest()

    # -- Perron data for Markov bases ---------------------------------------
    @lru_cache(maxsize=4096)
    def _perron(self, s: float) -> tuple[float, float]:
        """``(log2 rho(A_s), d/ds log2 rho(A_s))`` for ``A_s = P**s`` entrywise."""
        L = self._log2_trans
        E = s * L
        shift = float(E.max())
        A = np.exp2(E - shift)
        u, v = _perron_vectors(A, s)
        uv = float(u @ v)
        rho = float(u @ A @ v) / uv
        drho = float(u @ (A * L) @ v) / uv
        return shift + math.log2(rho), drho / rho

    @cached_property
    def _log2_weight_list(self) -> tuple[float, ...]:
        return tuple(math.log2(w) for w in self.base.weights)

    # plain-float loops: the alphabets are tiny and these sit in inner solver loops
    def _tau_nu(self, s: float) -> float:
        if isinstance(self.base, BernoulliWeights):
            x = [s * lw for lw in self._log2_weight_list]
            m = max(x)
            return -(m + math.log2(math.fsum(2.0 ** (v - m) for v in x)))
        if isinstance(self.base, MarkovWeights):
            return -self._perron(float(s))[0]
        return -float(self.d)

    def _tau_nu_prime(self, s: float) -> float:
        if isinstance(self.base, BernoulliWeights):
            lws = self._log2_weight_list
            x = [s * lw for lw in lws]
            m = max(x)
            w = [2.0 ** (v - m) for v in x]
            return -math.fsum(a * b for a, b in zip(w, lws)) / math.fsum(w)
        if isinstance(self.base, MarkovWeights):
            return -self._perron(float(s))[1]
        return 0.0

    def _tau_raw(self, q: float) -> float:
        return self.beta_bits * q + self._tau_nu(self.alpha * q)

    def _tau_prime_raw(self, q: float) -> float:
        return self.beta_bits + self.alpha * self._tau_nu_prime(self.alpha * q)


def _perron_vectors(A: np.ndarray, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Left and right Perron vectors (dense solve), each scaled to max 1."""
    vals, left, right = scipy.linalg.eig(A, left=True, right=True)
    k = int(np.argmax(vals.real))
    u, v = np.abs(left[:, k].real), np.abs(right[:, k].real)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))) or u.max() <= 0 or v.max() <= 0:
        raise NumericalError(f"no Perron vector for s={s}: eigenvalues {vals}")
    return u / u.max(), v / v.max()


def power_iteration_log2_rho(model: "GibbsModel", s: float, tol: float = POWER_TOL,
                             max_iter: int = POWER_MAX_ITER) -> float:
    """log2 spectral radius of the entrywise power matrix by plain power iteration.

    Kept as an independent check of the dense solve; it converges slowly when
    the matrix is close to cyclic (large |s|).
    """
    E = s * model._log2_trans
    shift = float(E.max())
    A = np.exp2(E - shift)
    v = np.ones(A.shape[0])
    for _ in range(max_iter):
        w = A @ v
        top = w.max()
        w /= top
        if np.max(np.abs(w - v)) < tol:
            return shift + math.log2(top)
        v = w
    raise NumericalError(f"power iteration did not converge for s={s} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# capacity values

def _check_dim(model: GibbsModel, w: DyadicWord):
    if w.d != model.d:
        raise ModelError(f"word dimension {w.d} does not match model dimension {model.d}")


# The scalar and vectorized capacity functions share one arithmetic: letter
# (or transition) counts times log-weights, accumulated in a fixed order.  This
# makes grid values bit-identical to mu_log2 of their witness words.

def _accumulate(counts, logs):
    acc = 0.0
    for n, lw in zip(counts, logs):
        acc = acc + n * lw
    return acc


def mu_log2(model: GibbsModel, w: DyadicWord) -> float:
    """log2 of mu(I_w)."""
    _check_dim(model, w)
    j = len(w)
    head = math.log2(model.K) - model.beta_bits * j
    if model.alpha == 0 or j == 0:
        return head
    n = model.alphabet_size
    if isinstance(model.base, BernoulliWeights):
        counts = [0.0] * n
        for a in w.letters:
            counts[a] += 1.0
        lognu = _accumulate(counts, model._log2_weights.tolist())
    else:
        counts = [0.0] * (n * n)
        for a, b in zip(w.letters[:-1], w.letters[1:]):
            counts[a * n + b] += 1.0
        lognu = model._log2_init[w.letters[0]] + _accumulate(counts, model._log2_trans.ravel().tolist())
    return float(head + model.alpha * lognu)


def _letter_counts(model: GibbsModel, codes: np.ndarray, depth: int) -> list[np.ndarray]:
    if model.d == 1:
        ones = np.bitwise_count(codes).astype(np.float64)
        return [depth - ones, ones]
    counts = [np.zeros(codes.shape) for _ in range(model.alphabet_size)]
    for letter in letters_of(codes, depth, model.d):
        for i in range(model.alphabet_size):
            counts[i] += letter == np.uint64(i)
    return counts


def _transition_counts(model: GibbsModel, codes: np.ndarray, depth: int):
    n = model.alphabet_size
    first = (codes >> np.uint64(model.d * (depth - 1))).astype(np.intp)
    if model.d == 1:
        m = np.uint64((1 << (depth - 1)) - 1)
        hi, lo = (codes >> np.uint64(1)) & m, codes & m
        n11 = np.bitwise_count(hi & lo).astype(np.float64)
        n10 = np.bitwise_count(hi & ~lo & m).astype(np.float64)
        n01 = np.bitwise_count(~hi & lo & m).astype(np.float64)
        n00 = (depth - 1) - n11 - n10 - n01
        return first, [n00, n01, n10, n11]
    counts = [np.zeros(codes.shape) for _ in range(n * n)]
    prev = None
    for letter in letters_of(codes, depth, model.d):
        cur = letter.astype(np.intp)
        if prev is not None:
            pair = prev * n + cur
            for k in range(n * n):
                counts[k] += pair == k
        prev = cur
    return first, counts


def mu_log2_codes(model: GibbsModel, codes: np.ndarray, depth: int) -> np.ndarray:
    """Vectorized ``mu_log2`` for words given by their integer codes at one depth."""
    codes = np.asarray(codes, dtype=np.uint64)
    head = math.log2(model.K) - model.beta_bits * depth
    if model.alpha == 0 or depth == 0 or codes.size == 0:
        return np.full(codes.shape, head)
    if isinstance(model.base, BernoulliWeights):
        lognu = _accumulate(_letter_counts(model, codes, depth), model._log2_weights.tolist())
    else:
        first, counts = _transition_counts(model, codes, depth)
        lognu = model._log2_init[first] + _accumulate(counts, model._log2_trans.ravel().tolist())
    return head + model.alpha * lognu


def quasi_bernoulli_log2C(model: GibbsModel) -> float:
    """A valid log2 C for C^-1 mu(w)mu(v) <= mu(wv) <= C mu(w)mu(v)."""
    c = abs(math.log2(model.K))
    if isinstance(model.base, MarkovWeights) and model.alpha > 0:
        ratio = model._log2_trans - model._log2_init[None, :]
        c += model.alpha * float(np.abs(ratio).max())
    return c


# ---------------------------------------------------------------------------
# thermodynamics

def tau_mu(model: GibbsModel, q):
    """Free energy tau_mu(q) = beta q + tau_nu(alpha q); accepts scalars or arrays."""
    if np.ndim(q) == 0:
        return model._tau_raw(float(q))
    return np.array([model._tau_raw(float(x)) for x in np.ravel(q)]).reshape(np.shape(q))


def tau_mu_prime(model: GibbsModel, q):
    if np.ndim(q) == 0:
        return model._tau_prime_raw(float(q))
    return np.array([model._tau_prime_raw(float(x)) for x in np.ravel(q)]).reshape(np.shape(q))


def tau_mu_prime_fd(model: GibbsModel, q: float, h: float = 1e-5) -> float:
    """Central difference with one Richardson step; a cross-check for the analytic slope."""
    def central(step):
        return (model._tau_raw(q + step) - model._tau_raw(q - step)) / (2 * step)
    return (4 * central(h / 2) - central(h)) / 3


def tau_mu_finite(model: GibbsModel, q: float, j: int) -> float:
    """Finite-volume free energy at depth j, from exact transfer-matrix sums."""
    s = model.alpha * q
    base = q * (math.log2(model.K) - model.beta_bits * j)
    if model.alpha == 0 or j == 0:
        return -(base + model.d * j) / j
    if isinstance(model.base, BernoulliWeights):
        x = s * model._log2_weights
        m = x.max()
        log2sum = j * (m + math.log2(np.exp2(x - m).sum()))
    else:
        E = s * model._log2_trans
        shift = float(E.max())
        A = np.exp2(E - shift)
        x0 = s * model._log2_init
        m0 = float(x0.max())
        v = np.exp2(x0 - m0)
        log2sum = m0
        for _ in range(j - 1):
            v = v @ A
            t = v.max()
            v /= t
            log2sum += shift + math.log2(t)
        log2sum += math.log2(v.sum())
    return -(base + log2sum) / j


def endpoints(model: GibbsModel) -> tuple[float, float, float]:
    """(H_min, H_s, H_max)."""
    if model.is_homogeneous:
        h = model.homogeneous_exponent
        return h, h, h
    hs = model._tau_prime_raw(0.0)
    if isinstance(model.base, BernoulliWeights):
        neg = -model._log2_weights
        return (model.beta_bits + model.alpha * float(neg.min()), hs,
                model.beta_bits + model.alpha * float(neg.max()))
    return model._tau_prime_raw(Q_CAP), hs, model._tau_prime_raw(-Q_CAP)


def legendre_point(model: GibbsModel, q: float) -> tuple[float, float]:
    """``(H, tau*(H))`` at ``H = tau'(q)``, i.e. ``(tau'(q), q tau'(q) - tau(q))``."""
    h = model._tau_prime_raw(q)
    return h, q * h - model._tau_raw(q)


def dual_q(model: GibbsModel, H: float) -> float:
    """The q in [-Q_CAP, Q_CAP] solving tau'(q) = H (clamped at the caps)."""
    if H <= model._tau_prime_raw(Q_CAP):
        return Q_CAP
    if H >= model._tau_prime_raw(-Q_CAP):
        return -Q_CAP
    return bisect(lambda q: model._tau_prime_raw(q) - H, -Q_CAP, Q_CAP, expand=False)


def tau_star(model: GibbsModel, H: float) -> float:
    """Legendre spectrum inf_q (Hq - tau(q)); -inf outside [H_min, H_max]."""
    H = float(H)
    if model.is_homogeneous:
        return float(model.d) if abs(H - model.homogeneous_exponent) <= 1e-12 else -math.inf
    hmin, _, hmax = endpoints(model)
    if H < hmin - 1e-12 or H > hmax + 1e-12:
        return -math.inf
    q = dual_q(model, H)
    return H * q - model._tau_raw(q)


# ---------------------------------------------------------------------------
# model files

_FLOAT_KEYS = ("K", "alpha", "beta_bits")


def _floats(text: str, line: int, key: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ModelFileError(line, f"{key}: expected comma-separated reals, got {text!r}")


def parse_model(text: str, name: str = "") -> GibbsModel:
    """Parse the ``key = value`` model format.  Errors carry line numbers."""
    entries: dict[str, tuple[int, str]] = {}
    rows: list[tuple[int, list[float]]] = []
    last = 0
    for n, raw in enumerate(text.splitlines(), start=1):
        last = n
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ModelFileError(n, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key == "row":
            rows.append((n, _floats(value, n, key)))
            continue
        if key == "rows":
            for part in value.split(";"):
                if part.strip():
                    rows.append((n, _floats(part, n, key)))
            continue
        if key not in ("kind", "d", "weights", "init") + _FLOAT_KEYS:
            raise ModelFileError(n, f"unknown key {key!r}")
        if key in entries:
            raise ModelFileError(n, f"duplicate key {key!r}")
        entries[key] = (n, value)

    if "kind" not in entries:
        raise ModelFileError(last, "missing key 'kind'")
    kline, kind = entries["kind"]
    kind = kind.lower()
    if kind not in ("bernoulli", "markov", "homogeneous"):
        raise ModelFileError(kline, f"kind must be bernoulli|markov|homogeneous, got {kind!r}")
    d = 1
    if "d" in entries:
        dline, dtext = entries["d"]
        try:
            d = int(dtext)
        except ValueError:
            raise ModelFileError(dline, f"d must be an integer, got {dtext!r}")
        if d < 1:
            raise ModelFileError(dline, "d must be >= 1")
    params = {}
    for key in _FLOAT_KEYS:
        if key in entries:
            line, value = entries[key]
            try:
                params[key] = float(value)
            except ValueError:
                raise ModelFileError(line, f"{key}: expected a real, got {value!r}")
    n_letters = 1 << d

    def checked_vector(line, values, key):
        if len(values) != n_letters:
            raise ModelFileError(line, f"{key} needs {n_letters} entries for d={d}, got {len(values)}")
        for v in values:
            if not v > 0:
                raise ModelFileError(line, f"{key}: weights must be positive, got {v!r}")
        if abs(math.fsum(values) - 1.0) > STOCHASTIC_TOL:
            raise ModelFileError(line, f"{key}: entries must sum to 1, got {math.fsum(values)!r}")
        return values

    try:
        if kind == "bernoulli":
            if "weights" not in entries:
                raise ModelFileError(last, "bernoulli model needs 'weights'")
            wline, wtext = entries["weights"]
            weights = checked_vector(wline, _floats(wtext, wline, "weights"), "weights")
            return GibbsModel(d, BernoulliWeights(tuple(weights)), params.get("K", 1.0),
                              params.get("alpha", 1.0), params.get("beta_bits", 0.0), name)
        if kind == "markov":
            if "init" not in entries:
                raise ModelFileError(last, "markov model needs 'init'")
            iline, itext = entries["init"]
            init = checked_vector(iline, _floats(itext, iline, "init"), "init")
            if len(rows) != n_letters:
                raise ModelFileError(rows[-1][0] if rows else last,
                                     f"markov model needs {n_letters} rows, got {len(rows)}")
            checked = [checked_vector(line, r, "row") for line, r in rows]
            return GibbsModel(d, MarkovWeights(tuple(init), tuple(map(tuple, checked))),
                              params.get("K", 1.0), params.get("alpha", 1.0),
                              params.get("beta_bits", 0.0), name)
        return GibbsModel(d, Homogeneous(), params.get("K", 1.0), 0.0,
                          params.get("beta_bits", 0.0), name)
    except ModelFileError:
        raise
    except ModelError as exc:
        raise ModelFileError(kline, str(exc)) from None


def load_model(path) -> GibbsModel:
    path = Path(path)
    return parse_model(path.read_text(), name=path.stem)


def format_model(model: GibbsModel) -> str:
    """Canonical text form; ``parse_model(format_model(m)) == m``."""
    lines = [f"kind = {model.kind}", f"d = {model.d}"]
    if isinstance(model.base, BernoulliWeights):
        lines.append("weights = " + ", ".join(repr(w) for w in model.base.weights))
    elif isinstance(model.base, MarkovWeights):
        lines.append("init = " + ", ".join(repr(w) for w in model.base.init))
        for r in model.base.rows:
            lines.append("row = " + ", ".join(repr(w) for w in r))
    lines += [f"K = {model.K!r}", f"alpha = {model.alpha!r}", f"beta_bits = {model.beta_bits!r}"]
    return "\n".join(lines) + "\n"
