"""The neighbour-aware sampled capacity on a depth-J grid, plus survivor diagnostics.

For each cell ``W`` at depth ``J`` the own-cube value ``M(W)`` is the largest
``mu(I_w)`` over surviving descendants ``w`` of ``W`` with ``|w| <= T`` (the
truncation depth), and the grid value is the max of ``M`` over ``W`` and its
same-depth neighbours.  All values are log2; empty cells hold ``-inf``.

Witnesses are ordered by (value desc, depth asc, code asc), a total order, so
results do not depend on the order in which levels are processed.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .gibbs_model import GibbsModel, mu_log2_codes
from .survival_field import ResourceError, SurvivalField
from .words import DyadicWord, codes_to_coords, coords_to_codes

MAX_CELL_BITS = 26
DEEPEN_LEVELS = 4
GRID_MAGIC = b"SGGRID\x00\x01"
GRID_VERSION = 1
NO_DEPTH = -1


class PartialResultError(ResourceError):
    """The build hit a resource cap; carries what was completed."""

    def __init__(self, message: str, completed_levels: list[int], stats: dict):
        super().__init__(message)
        self.completed_levels = completed_levels
        self.stats = stats


@dataclass
class CapacityGrid:
    J: int
    d: int
    values: np.ndarray          # log2 of the neighbour max, indexed by cell code
    own: np.ndarray             # log2 of the own-cube max
    witness_depth: np.ndarray   # depth of the witness of ``values`` (NO_DEPTH if none)
    witness_code: np.ndarray
    truncation_depth: int
    incomplete_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint64))
    unresolved_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint64))
    provenance: dict = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return self.values.size

    def witness(self, cell: int) -> DyadicWord | None:
        dep = int(self.witness_depth[cell])
        if dep == NO_DEPTH:
            return None
        return DyadicWord.from_code(int(self.witness_code[cell]), dep, self.d)

    def sha256(self) -> str:
        return hashlib.sha256(grid_bytes(self)).hexdigest()


# ---------------------------------------------------------------------------
# reductions

def _level_best(model: GibbsModel, codes: np.ndarray, j: int, J: int, d: int):
    """Best (value, code) per depth-J ancestor for one level's survivors."""
    if codes.size == 0:
        return np.zeros(0, np.uint64), np.zeros(0), np.zeros(0, np.uint64)
    vals = mu_log2_codes(model, codes, j)
    anc = codes >> np.uint64(d * (j - J))
    order = np.lexsort((codes, -vals, anc))
    anc_s = anc[order]
    first = np.ones(anc_s.size, dtype=bool)
    first[1:] = anc_s[1:] != anc_s[:-1]
    pick = order[first]
    return anc[pick], vals[pick], codes[pick]


def _merge(best_val, best_depth, best_code, cells, vals, depth, codes):
    """In-place max-update of the per-cell best witness under the total order."""
    cur_v = best_val[cells]
    cur_d = best_depth[cells]
    cur_c = best_code[cells]
    better = (vals > cur_v) | ((vals == cur_v) & (
        (depth < cur_d) | ((depth == cur_d) & (codes < cur_c))))
    better &= np.isfinite(vals)
    c = cells[better]
    best_val[c] = vals[better]
    best_depth[c] = depth
    best_code[c] = codes[better]


def _neighbour_max(own, own_depth, own_code, J, d):
    """Max over each cell and its same-depth neighbours (no wraparound)."""
    n = 1 << J
    if d == 1:
        perm = None
        cube_v, cube_d, cube_c = own, own_depth, own_code
    else:
        # coordinate layout: index = sum coords[i] * n^i
        codes = np.arange(n ** d, dtype=np.uint64)
        coords = codes_to_coords(codes, J, d)
        perm = np.zeros(n ** d, dtype=np.int64)
        for i in range(d):
            perm += coords[:, i] * n ** i
        cube_v = np.empty_like(own); cube_v[perm] = own
        cube_d = np.empty_like(own_depth); cube_d[perm] = own_depth
        cube_c = np.empty_like(own_code); cube_c[perm] = own_code
    shape = (n,) * d
    V = cube_v.reshape(shape[::-1])
    Dp = cube_d.reshape(shape[::-1])
    C = cube_c.reshape(shape[::-1])
    out_v, out_d, out_c = V.copy(), Dp.copy(), C.copy()
    for off in product((-1, 0, 1), repeat=d):
        if not any(off):
            continue
        src = []
        dst = []
        for o in off[::-1]:
            if o == 1:
                src.append(slice(1, None)); dst.append(slice(None, -1))
            elif o == -1:
                src.append(slice(None, -1)); dst.append(slice(1, None))
            else:
                src.append(slice(None)); dst.append(slice(None))
        src, dst = tuple(src), tuple(dst)
        sv, sd, sc = V[src], Dp[src], C[src]
        tv, td, tc = out_v[dst], out_d[dst], out_c[dst]
        better = (sv > tv) | ((sv == tv) & np.isfinite(sv) & (
            (sd < td) | ((sd == td) & (sc < tc))))
        tv[better] = sv[better]
        td[better] = sd[better]
        tc[better] = sc[better]
    out_v, out_d, out_c = out_v.ravel(), out_d.ravel(), out_c.ravel()
    if perm is not None:
        out_v, out_d, out_c = out_v[perm], out_d[perm], out_c[perm]
    return out_v, out_d, out_c


def neighbour_cells(cell: int, J: int, d: int) -> list[int]:
    w = DyadicWord.from_code(cell, J, d)
    return [u.code for u in w.neighbors()]


# ---------------------------------------------------------------------------
# build

def truncation_for(J: int, eta: float, trunc_factor: float) -> int:
    return math.ceil(J / eta) + math.ceil(trunc_factor * math.log2(J))


def build_capacity_grid(model: GibbsModel, field: SurvivalField, J: int, trunc_factor: float = 1.0,
                        truncation_depth: int | None = None, workers: int = 1,
                        deepen_levels: int = DEEPEN_LEVELS) -> CapacityGrid:
    """Sampled capacity of all depth-J cells from survivors down to the truncation depth."""
    d = field.d
    if model.d != d:
        raise ValueError(f"model dimension {model.d} differs from field dimension {d}")
    if J < 1:
        raise ValueError("J must be >= 1")
    if trunc_factor < 1:
        raise ValueError("trunc_factor must be >= 1")
    if d * J > MAX_CELL_BITS:
        raise ResourceError(f"grid of 2^{d * J} cells exceeds the supported envelope "
                            f"d*J <= {MAX_CELL_BITS}")
    T = truncation_depth if truncation_depth is not None else truncation_for(J, field.eta, trunc_factor)
    if T < J:
        raise ValueError(f"truncation depth {T} is below J={J}")
    if T > field.cfg.max_depth:
        raise ValueError(f"truncation depth {T} exceeds the field's max_depth {field.cfg.max_depth}")

    n = 1 << (d * J)
    own = np.full(n, -np.inf)
    own_depth = np.full(n, NO_DEPTH, dtype=np.int16)
    own_code = np.zeros(n, dtype=np.uint64)

    def job(j):
        return j, _level_best(model, field.level(j), j, J, d)

    done: list[int] = []
    levels = list(range(J, T + 1))
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(job, levels)
                for j, (cells, vals, codes) in results:
                    _merge(own, own_depth, own_code, cells.astype(np.intp), vals, j, codes)
                    done.append(j)
        else:
            for j in levels:
                _, (cells, vals, codes) = job(j)
                _merge(own, own_depth, own_code, cells.astype(np.intp), vals, j, codes)
                done.append(j)
    except ResourceError as exc:
        stats = dict(finite_own_cells=int(np.isfinite(own).sum()), cells=n)
        raise PartialResultError(f"{exc} (completed levels {done[:1]}..{done[-1:]})", done, stats) from exc

    vals, wdep, wcode = _neighbour_max(own, own_depth, own_code, J, d)
    incomplete = np.nonzero(~np.isfinite(vals))[0].astype(np.uint64)

    deepened_to = {}
    if incomplete.size and deepen_levels > 0:
        # the subtrees that can still contribute: neighbourhoods of empty cells
        targets = set()
        for c in incomplete.tolist():
            targets.add(c)
            targets.update(neighbour_cells(c, J, d))
        targets = np.array(sorted(targets), dtype=np.uint64)
        for extra in range(1, deepen_levels + 1):
            j = T + extra
            if j > field.cfg.max_depth:
                break
            for c in targets.tolist():
                if np.isfinite(own[c]):
                    continue
                codes = field.survivor_codes(j, DyadicWord.from_code(c, J, d))
                if codes.size:
                    cells, v, cc = _level_best(model, codes, j, J, d)
                    _merge(own, own_depth, own_code, cells.astype(np.intp), v, j, cc)
                    deepened_to[c] = j
            vals, wdep, wcode = _neighbour_max(own, own_depth, own_code, J, d)
            if np.all(np.isfinite(vals[incomplete.astype(np.intp)])):
                break
    unresolved = np.nonzero(~np.isfinite(vals))[0].astype(np.uint64)

    prov = dict(model_hash=model.model_hash, model_kind=model.kind, seed=field.cfg.seed,
                eta=field.cfg.eta, d=d, backend=field.cfg.backend, J=J, trunc_factor=trunc_factor,
                truncation_depth=T, deepen_levels=deepen_levels,
                deepened_cells={str(k): v for k, v in sorted(deepened_to.items())})
    return CapacityGrid(J, d, vals, own, wdep, wcode, T, incomplete, unresolved, prov)


def brute_force_grid(model: GibbsModel, field: SurvivalField, J: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive oracle: (own maxima, neighbour maxima) by checking every node to depth T."""
    d = field.d
    n = 1 << (d * J)
    own = np.full(n, -np.inf)
    for j in range(J, T + 1):
        codes = np.arange(1 << (d * j), dtype=np.uint64)
        alive = codes[field.survives_codes(codes, j)]
        vals = mu_log2_codes(model, alive, j)
        np.maximum.at(own, (alive >> np.uint64(d * (j - J))).astype(np.intp), vals)
    full = own.copy()
    for c in range(n):
        for u in neighbour_cells(c, J, d):
            full[c] = max(full[c], own[u])
    return own, full


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<8sHHHHQd32sB")


def grid_bytes(grid: CapacityGrid) -> bytes:
    p = grid.provenance
    backend = 0 if p.get("backend", "hash") == "hash" else 1
    mh = bytes.fromhex(p.get("model_hash", "0" * 64))
    head = _HEADER.pack(GRID_MAGIC, GRID_VERSION, grid.d, grid.J, grid.truncation_depth,
                        int(p.get("seed", 0)), float(p.get("eta", math.nan)), mh, backend)
    return head + np.ascontiguousarray(grid.values, dtype="<f8").tobytes()


def write_grid(path, grid: CapacityGrid):
    Path(path).write_bytes(grid_bytes(grid))


@dataclass
class GridFile:
    d: int
    J: int
    truncation_depth: int
    seed: int
    eta: float
    model_hash: str
    backend: str
    values: np.ndarray

    @property
    def n_cells(self):
        return self.values.size


def read_grid(path) -> GridFile:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file too short for a grid header")
    magic, ver, d, J, T, seed, eta, mh, backend = _HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path}: not a grid file")
    if ver != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid version {ver}")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    if vals.size != 1 << (d * J):
        raise ValueError(f"{path}: expected {1 << (d * J)} values, found {vals.size}")
    return GridFile(d, J, T, seed, eta, mh.hex(), "hash" if backend == 0 else "index", vals)


def grid_csv(grid: CapacityGrid) -> str:
    buf = io.StringIO()
    buf.write("cell_index,log2_value,witness_depth\n")
    for i, (v, dep) in enumerate(zip(grid.values.tolist(), grid.witness_depth.tolist())):
        buf.write(f"{i},{v:.17g},{dep}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# survivor diagnostics

def survivor_exponents(model: GibbsModel, field: SurvivalField, j: int) -> np.ndarray:
    codes = field.level(j)
    return -mu_log2_codes(model, codes, j) / j


def survivor_value_range(model: GibbsModel, field: SurvivalField, j: int):
    """(min, max) of -log2 mu(w)/j over survivors at depth j, or None if there are none."""
    if j < 1:
        raise ValueError("j must be >= 1")
    e = survivor_exponents(model, field, j)
    if e.size == 0:
        return None
    return float(e.min()), float(e.max())


def survivor_level_histogram(model: GibbsModel, field: SurvivalField, j: int, bins):
    """Counts of survivor exponents per bin (numpy histogram semantics); returns (counts, edges)."""
    e = survivor_exponents(model, field, j)
    counts, edges = np.histogram(e, bins=bins)
    return counts, edges


@dataclass
class DecompositionResult:
    root_len: int
    counts: np.ndarray
    root_edges: np.ndarray
    tail_edges: np.ndarray
    coverage: float
    target: float
    n_survivors: int
    root_exponents: np.ndarray = field(repr=False)
    tail_exponents: np.ndarray = field(repr=False)


def decomposition_histogram(model: GibbsModel, field: SurvivalField, j: int, eta_prime: float,
                            bins=40, target: float | None = None, tol: float = 0.2) -> DecompositionResult:
    """Joint histogram of (root exponent, tail exponent) of depth-j survivors.

    The root is the first ``m = floor(eta' j)`` letters, the tail the rest.
    ``coverage`` is the fraction of depth-m cylinders holding a survivor whose
    tail exponent is within ``tol`` of ``target`` (typically H_l(eta')).
    """
    d = field.d
    m = int(math.floor(eta_prime * j))
    if not 0 < m < j:
        raise ValueError(f"root length floor(eta'*j) = {m} must lie in (0, {j})")
    codes = field.level(j)
    root = codes >> np.uint64(d * (j - m))
    tail = codes & np.uint64((1 << (d * (j - m))) - 1)
    re = -mu_log2_codes(model, root, m) / m
    te = -mu_log2_codes(model, tail, j - m) / (j - m)
    counts, redges, tedges = np.histogram2d(re, te, bins=bins)
    if target is None:
        coverage = math.nan
    else:
        hit = np.abs(te - target) <= tol
        coverage = np.unique(root[hit]).size / float(1 << (d * m))
    return DecompositionResult(m, counts, redges, tedges, coverage, math.nan if target is None else target,
                               int(codes.size), re, te)


def coverage_fraction(field: SurvivalField, j: int, gen: int) -> float:
    """Fraction of depth-``gen`` cylinders containing a depth-j survivor."""
    codes = field.level(j)
    anc = np.unique(codes >> np.uint64(field.d * (j - gen)))
    return anc.size / float(1 << (field.d * gen))


def max_multiplicity(field: SurvivalField, j: int, gen: int) -> int:
    """Largest number of depth-j survivors below one depth-``gen`` cylinder."""
    codes = field.level(j)
    if codes.size == 0:
        return 0
    anc = codes >> np.uint64(field.d * (j - gen))
    _, counts = np.unique(anc, return_counts=True)
    return int(counts.max())


def grid_summary_json(grid: CapacityGrid) -> str:
    return json.dumps(dict(J=grid.J, d=grid.d, truncation_depth=grid.truncation_depth,
                           incomplete=int(grid.incomplete_cells.size),
                           unresolved=int(grid.unresolved_cells.size),
                           provenance=grid.provenance), indent=2, sort_keys=True)
