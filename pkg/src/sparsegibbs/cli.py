"""Command-line experiment runner.

Every subcommand computes all of its outputs in memory and writes them (plus
a manifest with content hashes) only on success, so a failed run leaves no
partial files.  Exit codes: 0 ok, 2 usage or parse error, 3 resource limit,
4 numerical-consistency failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import resource
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .capacity_sampler import (build_capacity_grid, coverage_fraction, decomposition_histogram,
                               grid_bytes, grid_csv, max_multiplicity, read_grid,
                               survivor_level_histogram, survivor_value_range)
from .gibbs_model import ModelError, endpoints, parse_model, tau_mu, tau_star
from .numerics import NumericalError
from .reconstruction import crossing, fraction_csv, fraction_experiment, mean_fractions
from .spectra import Curve, compare_curves, ld_counts, lq_from_values
from .survival_field import MIXER, ResourceError, SurvivalField, FieldConfig
from .theory import D_Mmu, summarize, tau_tilde

EXIT_OK, EXIT_USAGE, EXIT_RESOURCE, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def fmt(x) -> str:
    """17 significant digits, locale-free; infinities as inf/-inf."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def csv_text(header, columns) -> str:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def parse_range(text: str) -> np.ndarray:
    """``lo:hi:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        try:
            lo, hi, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise UsageError(f"bad range {text!r}; expected lo:hi:step")
        if step <= 0 or hi < lo:
            raise UsageError(f"bad range {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9))
        return np.round(lo + step * np.arange(n + 1), 12)
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise UsageError(f"bad list {text!r}")


def resolve_threads(flag) -> int:
    if flag:
        return int(flag)
    env = os.environ.get("LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"LAB_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _read_model(cfg: dict):
    if "model_text" not in cfg:
        path = Path(cfg["model"])
        if not path.exists():
            raise UsageError(f"model file not found: {path}")
        cfg["model_text"] = path.read_text()
    try:
        model = parse_model(cfg["model_text"], name=Path(cfg.get("model", "model")).stem)
    except ModelError as exc:
        raise UsageError(f"{cfg.get('model', 'model')}: {exc}")
    cfg["model_hash"] = model.model_hash
    return model


def _input_file(cfg: dict, key: str, path: str) -> bytes:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input file not found: {p}")
    data = p.read_bytes()
    cfg.setdefault("inputs", {})[key] = dict(path=str(p), sha256=sha256_bytes(data))
    return data


# ---------------------------------------------------------------------------
# commands: each takes a resolved config dict and returns {filename: bytes}

def cmd_theory(cfg: dict) -> dict:
    model = _read_model(cfg)
    eta = float(cfg["eta"])
    s = summarize(model, eta)
    qs = parse_range(cfg.get("q_grid") or "-5:5:0.05")
    h_top = s.H_max + s.H_tilde_ell_tilde + 0.5
    Hs = parse_range(cfg.get("H_grid") or f"0:{h_top}:0.02")
    summary = s.to_dict()
    bad = {k: v for k, v in s.diagnostics.items()
           if k.endswith(("residual", "gap")) and k != "eta_tilde_dual_gap" and v > 1e-8}
    if s.diagnostics.get("eta_tilde_dual_gap", 0) > 1e-6 or bad:
        raise NumericalError(f"theory self-checks failed: {bad or s.diagnostics}")
    tau = np.asarray(tau_mu(model, qs))
    tt = np.asarray(tau_tilde(model, s, qs))
    D = np.array([tau_star(model, h) for h in Hs])
    DM = np.asarray(D_Mmu(model, s, Hs))
    return {
        "theory.json": json_text(summary).encode(),
        "tau_curves.csv": csv_text(["q", "tau_mu", "tau_tilde"], [qs, tau, tt]).encode(),
        "spectrum_curves.csv": csv_text(["H", "D_mu", "D_Mmu"], [Hs, D, DM]).encode(),
    }


def cmd_simulate(cfg: dict) -> dict:
    model = _read_model(cfg)
    eta, J, seed = float(cfg["eta"]), int(cfg["J"]), int(cfg["seed"])
    backend = cfg.get("backend", "index")
    field = SurvivalField(FieldConfig(seed, eta, model.d, backend, max_depth=64 // model.d))
    grid = build_capacity_grid(model, field, J, float(cfg.get("trunc_factor", 1.0)),
                               workers=int(cfg.get("threads", 1)))
    cfg["mixer"] = MIXER
    print(f"incomplete cells: {grid.incomplete_cells.size} (unresolved after deepening: "
          f"{grid.unresolved_cells.size})", file=sys.stderr)
    out = {"grid.bin": grid_bytes(grid),
           "grid_info.json": json_text(dict(
               J=J, d=model.d, truncation_depth=grid.truncation_depth,
               incomplete_cells=int(grid.incomplete_cells.size),
               unresolved_cells=int(grid.unresolved_cells.size),
               provenance=grid.provenance)).encode()}
    if cfg.get("csv"):
        out["grid.csv"] = grid_csv(grid).encode()
    return out


def _load_grids(cfg: dict):
    grids = []
    for i, path in enumerate(cfg["grids"]):
        _input_file(cfg, f"grid{i}", path)
        try:
            grids.append(read_grid(path))
        except ValueError as exc:
            raise UsageError(str(exc))
    Js = {g.J for g in grids}
    if len(Js) != 1:
        raise UsageError(f"grids have different depths {sorted(Js)}")
    return grids


def cmd_spectrum(cfg: dict) -> dict:
    grids = _load_grids(cfg)
    qs = parse_range(cfg.get("q_grid") or "-5:5:0.05")
    J = grids[0].J
    taus = np.array([lq_from_values(g.values[np.isfinite(g.values)], J, qs) for g in grids])
    tau = taus.mean(axis=0)
    cols, header = [qs, tau], ["q", "tau_emp"]
    summary = dict(J=J, n_grids=len(grids))
    if cfg.get("model"):
        model = _read_model(cfg)
        s = summarize(model, float(cfg["eta"]))
        theory = np.asarray(tau_tilde(model, s, qs))
        cols.append(theory); header.append("tau_theory")
        gap = compare_curves(Curve(qs, tau, "tau"), Curve(qs, theory, "tau"))
        summary["gap_tau"] = gap.to_dict()
    return {"lq.csv": csv_text(header, cols).encode(), "spectrum_summary.json": json_text(summary).encode()}


def cmd_ldspec(cfg: dict) -> dict:
    grids = _load_grids(cfg)
    eps = float(cfg.get("epsilon", 0.1))
    Hs = parse_range(cfg.get("H_grid") or "0:5:0.02")
    ests, totals, binned = [], [], []
    for g in grids:
        res = ld_counts(_GridView(g), Hs, eps)
        ests.append(res.f_lower.ys)
        finite = g.values[np.isfinite(g.values)]
        totals.append(int(finite.size))
        # disjoint bins of width 2*epsilon covering every exponent
        exps = -finite / g.J
        edges = np.arange(math.floor(exps.min() / (2 * eps)), math.floor(exps.max() / (2 * eps)) + 2) * 2 * eps \
            if finite.size else np.array([0.0, 1.0])
        binned.append(int(np.histogram(exps, edges)[0].sum()))
    f = np.mean(ests, axis=0)
    cols, header = [Hs, f], ["H", "f_est"]
    summary = dict(J=grids[0].J, epsilon=eps, finite_cells=totals, disjoint_bin_totals=binned,
                   cells=[g.n_cells for g in grids])
    if cfg.get("model"):
        model = _read_model(cfg)
        s = summarize(model, float(cfg["eta"]))
        D = np.asarray(D_Mmu(model, s, Hs))
        cols.append(D); header.append("D_theory")
    return {"ld.csv": csv_text(header, cols).encode(), "ld_summary.json": json_text(summary).encode()}


class _GridView:
    def __init__(self, g):
        self.values, self.J, self.d = g.values, g.J, g.d


def cmd_diagnose(cfg: dict) -> dict:
    model = _read_model(cfg)
    eta, j, seed = float(cfg["eta"]), int(cfg["j"]), int(cfg["seed"])
    field = SurvivalField(FieldConfig(seed, eta, model.d, cfg.get("backend", "index"),
                                      max_depth=64 // model.d))
    out = dict(j=j, seed=seed, survivors=int(field.count_at(j)))
    out["value_range"] = survivor_value_range(model, field, j)
    hmin, _, hmax = endpoints(model)
    counts, edges = survivor_level_histogram(model, field, j, np.linspace(hmin - 0.05, hmax + 0.05, 41))
    out["level_histogram"] = dict(edges=edges, counts=counts)
    eps = float(cfg.get("epsilon", 0.15))
    gen = int(math.floor(j * (eta - eps)))
    if gen > 0:
        out["coverage"] = dict(generation=gen, fraction=coverage_fraction(field, j, gen))
    out["multiplicity"] = dict(generation=int(math.floor(eta * j)),
                               max=max_multiplicity(field, j, int(math.floor(eta * j))))
    if not model.is_homogeneous:
        s = summarize(model, eta)
        from .theory import H_ell
        ep = float(cfg.get("eta_prime", s.eta_tilde))
        dec = decomposition_histogram(model, field, j, ep, bins=20, target=H_ell(model, eta, ep),
                                      tol=float(cfg.get("tol", 0.2)))
        out["decomposition"] = dict(eta_prime=ep, root_len=dec.root_len, coverage=dec.coverage,
                                    target=dec.target)
    return {"diagnose.json": json_text(out).encode()}


def cmd_reconstruct(cfg: dict) -> dict:
    model = _read_model(cfg)
    etas = parse_range(cfg.get("eta_grid") or "0.05:0.95:0.05")
    seeds = [int(s) for s in parse_range(cfg.get("seeds") or "0:15:1")]
    rows = fraction_experiment(model.d, etas, int(cfg["word_len"]), int(cfg["J_max"]), seeds, model)
    e, m = mean_fractions(rows)
    summary = dict(etas=e, mean_fraction=m, crossing_half=crossing(e, m))
    return {"fractions.csv": fraction_csv(rows).encode(), "reconstruct_summary.json": json_text(summary).encode()}


def _read_curve(path: str, column: str, cfg: dict, key: str) -> Curve:
    data = _input_file(cfg, key, path).decode().splitlines()
    header = data[0].split(",")
    if column not in header:
        raise UsageError(f"{path}: no column {column!r} (have {header})")
    k = header.index(column)
    rows = [line.split(",") for line in data[1:] if line.strip()]
    xs = np.array([float(r[0]) for r in rows])
    ys = np.array([float(r[k]) for r in rows])
    return Curve(xs, ys)


def cmd_compare(cfg: dict) -> dict:
    a = _read_curve(cfg["a"], cfg["a_col"], cfg, "a")
    b = _read_curve(cfg["b"], cfg["b_col"], cfg, "b")
    lo = float(cfg.get("lo", -math.inf))
    hi = float(cfg.get("hi", math.inf))
    try:
        gap = compare_curves(a, b, lo, hi)
    except ValueError as exc:
        raise UsageError(str(exc))
    return {"compare.json": json_text(gap.to_dict()).encode()}


COMMANDS = {"theory": cmd_theory, "simulate": cmd_simulate, "spectrum": cmd_spectrum,
            "ldspec": cmd_ldspec, "diagnose": cmd_diagnose, "reconstruct": cmd_reconstruct,
            "compare": cmd_compare}


# ---------------------------------------------------------------------------
# running, manifests and replay

def execute(command: str, cfg: dict, out_dir: Path) -> dict:
    """Run a command, then write its outputs and manifest; returns the manifest."""
    t0 = time.perf_counter()
    outputs = COMMANDS[command](cfg)
    wall = time.perf_counter() - t0
    manifest = dict(
        tool="sparsegibbs", version=__version__, subcommand=command,
        config={k: v for k, v in sorted(cfg.items()) if k not in ("out", "config")},
        outputs={name: sha256_bytes(data) for name, data in sorted(outputs.items())},
        stats=dict(wall_seconds=wall,
                   peak_rss_kib=resource.getrusage(resource.RUSAGE_SELF).ru_maxrss),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in outputs.items():
        (out_dir / name).write_bytes(data)
    (out_dir / "manifest.json").write_text(json_text(manifest))
    return manifest


def replay(manifest_path: Path, out_dir: Path | None) -> dict:
    man = json.loads(Path(manifest_path).read_text())
    cfg = dict(man["config"])
    for key, info in cfg.get("inputs", {}).items():
        p = Path(info["path"])
        if not p.exists() or sha256_bytes(p.read_bytes()) != info["sha256"]:
            raise NumericalError(f"replay input {p} is missing or changed")
    cfg.pop("inputs", None)
    target = out_dir or Path(manifest_path).parent / "replay"
    outputs = COMMANDS[man["subcommand"]](cfg)
    mismatched = [n for n, h in man["outputs"].items()
                  if n not in outputs or sha256_bytes(outputs[n]) != h]
    target.mkdir(parents=True, exist_ok=True)
    for name, data in outputs.items():
        (target / name).write_bytes(data)
    report = dict(manifest=str(manifest_path), identical=not mismatched, mismatched=mismatched)
    (target / "replay.json").write_text(json_text(report))
    if mismatched:
        raise NumericalError(f"replay differs in {mismatched}")
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsegibbs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        sp.add_argument("--config", help="JSON file of defaults; flags override it")
        sp.add_argument("--out", required=True, help="output directory")
        if model:
            sp.add_argument("--model", help="model file")
        return sp

    sp = common(sub.add_parser("theory", help="closed-form predictions"))
    sp.add_argument("--eta", type=float)
    sp.add_argument("--q-grid", dest="q_grid")
    sp.add_argument("--H-grid", dest="H_grid")

    sp = common(sub.add_parser("simulate", help="build a sampled capacity grid"))
    sp.add_argument("--eta", type=float)
    sp.add_argument("--J", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--backend", choices=["hash", "index"])
    sp.add_argument("--trunc-factor", dest="trunc_factor", type=float)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--csv", action="store_true", default=None)

    sp = common(sub.add_parser("spectrum", help="empirical L^q spectrum of grid files"))
    sp.add_argument("--grid", dest="grids", action="append")
    sp.add_argument("--eta", type=float)
    sp.add_argument("--q-grid", dest="q_grid")

    sp = common(sub.add_parser("ldspec", help="large-deviation estimates of grid files"))
    sp.add_argument("--grid", dest="grids", action="append")
    sp.add_argument("--eta", type=float)
    sp.add_argument("--H-grid", dest="H_grid")
    sp.add_argument("--epsilon", type=float)

    sp = common(sub.add_parser("diagnose", help="survivor statistics at one depth"))
    sp.add_argument("--eta", type=float)
    sp.add_argument("--j", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--backend", choices=["hash", "index"])
    sp.add_argument("--eta-prime", dest="eta_prime", type=float)
    sp.add_argument("--epsilon", type=float)

    sp = common(sub.add_parser("reconstruct", help="1-reconstructible fraction versus eta"))
    sp.add_argument("--eta-grid", dest="eta_grid")
    sp.add_argument("--word-len", dest="word_len", type=int)
    sp.add_argument("--J-max", dest="J_max", type=int)
    sp.add_argument("--seeds")

    sp = common(sub.add_parser("compare", help="gaps between two curve columns"), model=False)
    sp.add_argument("--a")
    sp.add_argument("--a-col", dest="a_col")
    sp.add_argument("--b")
    sp.add_argument("--b-col", dest="b_col")
    sp.add_argument("--lo", type=float)
    sp.add_argument("--hi", type=float)

    sp = sub.add_parser("replay", help="re-run a manifest and check outputs are byte-identical")
    sp.add_argument("manifest")
    sp.add_argument("--out")
    return p


REQUIRED = {
    "theory": ["model", "eta"],
    "simulate": ["model", "eta", "J", "seed"],
    "spectrum": ["grids"],
    "ldspec": ["grids"],
    "diagnose": ["model", "eta", "j", "seed"],
    "reconstruct": ["model", "word_len", "J_max"],
    "compare": ["a", "a_col", "b", "b_col"],
}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}")
    for k, v in vars(args).items():
        if k in ("command", "config", "out") or v is None:
            continue
        cfg[k] = v
    missing = [k for k in REQUIRED[args.command] if k not in cfg]
    if missing:
        raise UsageError(f"{args.command}: missing required settings {missing}")
    if args.command == "simulate":
        cfg["threads"] = resolve_threads(cfg.get("threads"))
        cfg.setdefault("backend", "index")
        cfg.setdefault("trunc_factor", 1.0)
    if args.command in ("spectrum", "ldspec") and cfg.get("model") and "eta" not in cfg:
        raise UsageError("--eta is required with --model for theory columns")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            report = replay(Path(args.manifest), Path(args.out) if args.out else None)
            print(json.dumps(report))
            return EXIT_OK
        cfg = resolve_config(args)
        manifest = execute(args.command, cfg, Path(args.out))
        print(json.dumps(dict(outputs=manifest["outputs"], out=args.out)))
        return EXIT_OK
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
