"""Seeded Bernoulli survival fields on the 2^d-ary tree.

Node ``w`` survives with probability ``2**(-d*(1-eta)*|w|)``.  Two backends:

* ``hash``: survival of each node is a keyed 64-bit hash of (seed, depth, code)
  compared with a threshold.  Any node can be queried lazily.
* ``index``: the survivor set of a whole level is drawn at once (binomial
  count, then distinct uniform indices) from a stream seeded by (seed, depth).
  Cost is proportional to the number of survivors.

Both are pure functions of the configuration, so runs replay exactly.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass

import numpy as np

from .words import DyadicWord

MIXER = "splitmix64-finalizer(seed ^ golden*depth ^ code), 2 rounds"
DEFAULT_WORK_CAP = 2 ** 32
DEFAULT_SURVIVOR_CAP = 2 ** 26  # 512 MiB of uint64 codes per level
_SCAN_CHUNK = 1 << 22

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


class ResourceError(RuntimeError):
    """A requested computation exceeds a configured work or memory cap."""


@dataclass(frozen=True)
class FieldConfig:
    seed: int
    eta: float
    d: int = 1
    backend: str = "hash"
    max_depth: int = 64
    work_cap: int = DEFAULT_WORK_CAP
    survivor_cap: int = DEFAULT_SURVIVOR_CAP

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.backend not in ("hash", "index"):
            raise ValueError(f"backend must be 'hash' or 'index', got {self.backend!r}")
        if not 0 <= self.seed <= _M64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.max_depth < 0 or self.d * self.max_depth > 64:
            raise ValueError(f"d*max_depth must be <= 64 (codes are 64-bit), got {self.d * self.max_depth}")

    def log2_survival(self, j: int) -> float:
        return -self.d * (1.0 - self.eta) * j


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _C1
    x = x ^ (x >> np.uint64(27))
    x = x * _C2
    return x ^ (x >> np.uint64(31))


def node_hash(seed, depth: int, codes) -> np.ndarray:
    """Keyed 64-bit hash of nodes given by their codes at one depth.

    ``seed`` may be an array broadcasting against ``codes``.
    """
    key = np.asarray(seed, dtype=np.uint64) ^ np.uint64((_GOLDEN * (depth + 1)) & _M64)
    with np.errstate(over="ignore"):
        x = np.asarray(codes, dtype=np.uint64) ^ key
        x = _mix(x)
        x = _mix(x ^ key)
    return x


def survives_many(seeds, codes, j: int, eta: float, d: int = 1) -> np.ndarray:
    """Hash-backend survival of (seed, code) pairs at depth j, vectorized over seeds."""
    t = survival_threshold(FieldConfig(0, eta, d, max_depth=max(j, 1)), j)
    shape = np.broadcast(np.asarray(seeds), np.asarray(codes)).shape
    if t is None:
        return np.ones(shape, dtype=bool)
    return node_hash(seeds, j, codes) < np.uint64(t)


def survival_threshold(cfg: FieldConfig, j: int) -> int | None:
    """Integer threshold t with P(hash < t) = 2^{-d(1-eta)j}; None means always survive."""
    e = 64 + cfg.log2_survival(j)
    if e >= 64:
        return None
    if e < 0:
        warnings.warn(f"survival probability 2^{cfg.log2_survival(j):.1f} at depth {j} is below "
                      "2^-64; the level is treated as empty", RuntimeWarning, stacklevel=3)
        return 0
    return max(1, int(round(2.0 ** e)))


class SurvivalField:
    """Survival queries and survivor enumeration for one configuration.

    Per-depth survivor arrays are built once and then shared read-only; the
    cache is guarded so concurrent callers see a single construction.
    """

    def __init__(self, cfg: FieldConfig):
        self.cfg = cfg
        self._levels: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def d(self) -> int:
        return self.cfg.d

    @property
    def eta(self) -> float:
        return self.cfg.eta

    def _check_depth(self, j: int):
        if not 0 <= j <= self.cfg.max_depth:
            raise ValueError(f"depth {j} outside [0, {self.cfg.max_depth}]")

    # -- lazy per-node queries (hash backend) ------------------------------
    def survives_codes(self, codes, j: int) -> np.ndarray:
        self._check_depth(j)
        codes = np.asarray(codes, dtype=np.uint64)
        if self.cfg.backend == "index":
            return np.isin(codes, self.level(j))
        t = survival_threshold(self.cfg, j)
        if t is None:
            return np.ones(codes.shape, dtype=bool)
        if t == 0:
            return np.zeros(codes.shape, dtype=bool)
        if t >= 1 << 64:
            return np.ones(codes.shape, dtype=bool)
        return node_hash(self.cfg.seed, j, codes) < np.uint64(t)

    def survives(self, w: DyadicWord) -> bool:
        if w.d != self.cfg.d:
            raise ValueError(f"word dimension {w.d} does not match field dimension {self.cfg.d}")
        return bool(self.survives_codes(np.array([w.code], dtype=np.uint64), len(w))[0])

    # -- level enumeration ---------------------------------------------------
    def level(self, j: int) -> np.ndarray:
        """Sorted codes of all survivors at depth j."""
        self._check_depth(j)
        cached = self._levels.get(j)
        if cached is not None:
            return cached
        with self._lock:
            cached = self._levels.get(j)
            if cached is None:
                if self.cfg.backend == "hash":
                    cached = self._scan(j, 0, 1 << (self.d * j))
                else:
                    cached = self._draw_level(j)
                cached.setflags(write=False)
                self._levels[j] = cached
            return cached

    def _scan(self, j: int, start: int, count: int) -> np.ndarray:
        if count > self.cfg.work_cap:
            raise ResourceError(
                f"hash scan of {count} candidates at depth {j} exceeds the work cap "
                f"{self.cfg.work_cap}; use the index backend")
        t = survival_threshold(self.cfg, j)
        if t is None or t >= 1 << 64:
            return np.arange(start, start + count, dtype=np.uint64)
        if t == 0:
            return np.zeros(0, dtype=np.uint64)
        out = []
        for lo in range(start, start + count, _SCAN_CHUNK):
            hi = min(start + count, lo + _SCAN_CHUNK)
            codes = np.arange(lo, hi, dtype=np.uint64)
            out.append(codes[node_hash(self.cfg.seed, j, codes) < np.uint64(t)])
        return np.concatenate(out) if out else np.zeros(0, dtype=np.uint64)

    def _draw_level(self, j: int) -> np.ndarray:
        if j == 0:
            return np.zeros(1, dtype=np.uint64)
        rng = np.random.default_rng([self.cfg.seed, j, 0x5EED])
        n_bits = self.d * j
        p = 2.0 ** self.cfg.log2_survival(j)
        if n_bits >= 63:
            # n*p is far below n here, so the binomial is Poisson to double precision
            count = int(rng.poisson(2.0 ** n_bits * p))
        else:
            count = int(rng.binomial(1 << n_bits, p))
        if count > self.cfg.survivor_cap:
            raise ResourceError(f"{count} survivors at depth {j} exceed the survivor cap "
                                f"{self.cfg.survivor_cap}")
        return _distinct_uniform(rng, count, n_bits)

    def survivor_codes(self, j: int, prefix: DyadicWord | None = None) -> np.ndarray:
        """Sorted survivor codes at depth j below ``prefix`` (default: root)."""
        self._check_depth(j)
        if prefix is None or len(prefix) == 0:
            return self.level(j)
        m = len(prefix)
        if m > j:
            raise ValueError(f"prefix depth {m} exceeds j={j}")
        shift = self.d * (j - m)
        lo = prefix.code << shift
        hi = lo + (1 << shift)
        if self.cfg.backend == "hash" and j not in self._levels:
            return self._scan(j, lo, hi - lo)
        codes = self.level(j)
        a = np.searchsorted(codes, np.uint64(lo), side="left")
        b = np.searchsorted(codes, np.uint64(hi - 1), side="right")
        return codes[a:b]

    def survivors_at(self, j: int, prefix: DyadicWord | None = None) -> list[DyadicWord]:
        return [DyadicWord.from_code(int(c), j, self.d) for c in self.survivor_codes(j, prefix)]

    def count_at(self, j: int) -> int:
        return int(self.level(j).size)


def _distinct_uniform(rng: np.random.Generator, count: int, n_bits: int) -> np.ndarray:
    """``count`` distinct uniform integers in [0, 2^n_bits), sorted (rejection of repeats)."""
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    if n_bits < 64:
        top = 1 << n_bits
        if count > top // 2:
            # dense: choose the complement instead
            return np.sort(rng.choice(top, size=count, replace=False).astype(np.uint64))
    out = np.zeros(0, dtype=np.uint64)
    while out.size < count:
        need = count - out.size
        draw = rng.integers(0, 1 << n_bits, size=need + need // 8 + 8, dtype=np.uint64,
                            endpoint=False) if n_bits < 64 else \
            rng.integers(0, _M64, size=need + need // 8 + 8, dtype=np.uint64, endpoint=True)
        # keep first occurrences in draw order so the result does not depend on batching
        merged = np.concatenate([out, draw])
        _, first = np.unique(merged, return_index=True)
        keep = np.sort(first)
        out = merged[keep][:count]
    return np.sort(out)


def make_field(seed: int, eta: float, d: int = 1, backend: str = "hash", max_depth: int | None = None,
               work_cap: int = DEFAULT_WORK_CAP) -> SurvivalField:
    if max_depth is None:
        max_depth = 64 // d
    return SurvivalField(FieldConfig(seed, eta, d, backend, max_depth, work_cap))


def write_survivor_csv(path, model, field: SurvivalField, depths) -> int:
    """Dump survivors as ``depth,index_0..index_{d-1},log2_mu``; returns rows written."""
    from .gibbs_model import mu_log2_codes
    from .words import codes_to_coords

    d = field.d
    cols = ["index"] if d == 1 else [f"index_{i}" for i in range(d)]
    rows = 0
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["depth", *cols, "log2_mu"]) + "\n")
        for j in depths:
            codes = field.level(j)
            coords = codes_to_coords(codes, j, d)
            vals = mu_log2_codes(model, codes, j)
            for c, v in zip(coords, vals):
                fh.write(f"{j}," + ",".join(str(int(x)) for x in c) + f",{v:.17g}\n")
                rows += 1
    return rows


def expected_count(cfg: FieldConfig, j: int) -> float:
    return 2.0 ** (cfg.d * j + cfg.log2_survival(j))


def count_sd(cfg: FieldConfig, j: int) -> float:
    p = 2.0 ** cfg.log2_survival(j)
    return math.sqrt(2.0 ** (cfg.d * j) * p * (1 - p))
