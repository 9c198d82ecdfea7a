"""Command-line experiment runner.

    vosub <command> [--config cfg.json] [--out DIR] [--threads N] [--seed N]

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure,
3 acceptance failure (``verify``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import acceptance
from .asymptotics import (cascade_zero, choose_p0, remainder_probe_one, remainder_probe_zero, write_cascade_flux,
                          write_remainder)
from .errors import AssumptionViolation, ConfigError, SolverError
from .forward import CoefficientSet, boundary_flux, flux_curve, log_grid, weighted_data, write_flux_curve, write_weighted_data
from .geometry import (Excitation, Mesh, OrderField, Partition, ScalarField, build_disk_mesh, build_square_mesh,
                       read_mesh, tag_rings_sectors)
from .inverse import (distinguishability_experiment, figure1_orders, known_medium_coefficients,
                      linearized_recovery, recover_exponents, stability_report, write_distance_matrix,
                      write_exponents, write_recovery, write_stability)
from .timedomain import l1_step_solve, laplace_at, weighted_time_integral, write_flux_series

log = logging.getLogger("vosub")

SCHEMA = "vosub-experiment/1"
COMMANDS = ("forward", "asympt", "invert-exponents", "invert-linearized", "stability", "crosscheck",
            "figure1", "verify")

DEFAULT_CONFIG = {
    "schema": SCHEMA,
    "domain": {"type": "disk", "level": 4},
    "tags": {"radii": [], "sectors": 1, "offset": 0.0},
    "coefficients": {"sigma": 1.0, "rho": 1.0, "q": 0.0},
    "order": {"type": "constant", "value": 0.5},
    "excitation": [{"k": 2, "phi": 1.0}],
    "observation": {"x0": [1.0, 0.0]},
    "p_grid": {"lo": 1e-6, "hi": 1e-2, "n": 24},
}


@dataclass
class Experiment:
    """Validated configuration bound to a mesh."""

    raw: dict
    mesh: Mesh
    cfg: CoefficientSet
    excitation: Excitation
    x0: int
    x0_distance: float
    p_grid: np.ndarray
    section: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# config parsing


def _num(errors, path, v, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{path}: expected a number, got {v!r}")
        return None
    if positive and v <= 0:
        errors.append(f"{path}: must be positive")
    if nonneg and v < 0:
        errors.append(f"{path}: must be nonnegative")
    return float(v)


def _mesh(errors, entry, base_dir):
    kind = entry.get("type", "disk")
    try:
        if kind == "disk":
            level = entry.get("level", 4)
            if not isinstance(level, int) or level < 0:
                errors.append("domain.level: expected an integer >= 0")
                return None
            return build_disk_mesh(level)
        if kind == "square":
            n = entry.get("n", 16)
            if not isinstance(n, int) or n < 1:
                errors.append("domain.n: expected an integer >= 1")
                return None
            return build_square_mesh(n)
        if kind == "file":
            path = entry.get("path")
            if not isinstance(path, str):
                errors.append("domain.path: expected a mesh file stem")
                return None
            return read_mesh(Path(base_dir) / path)
    except (OSError, ValueError) as exc:
        errors.append(f"domain: {exc}")
        return None
    errors.append(f"domain.type: unknown domain {kind!r} (disk, square, file)")
    return None


def _vertex_field(errors, path, entry, mesh, positive=False, nonneg=False):
    """Constant, radial polynomial or per-tag table; returns a vertex ScalarField."""
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        entry = {"type": "constant", "value": entry}
    if not isinstance(entry, dict):
        errors.append(f"{path}: expected a number or an object")
        return None
    kind = entry.get("type")
    if kind == "constant":
        v = _num(errors, f"{path}.value", entry.get("value"), positive, nonneg)
        return None if v is None else ScalarField.constant(mesh, v)
    if kind == "radial":
        coeffs = entry.get("coeffs")
        if not isinstance(coeffs, list) or not coeffs:
            errors.append(f"{path}.coeffs: expected a list of polynomial coefficients in r")
            return None
        r = np.hypot(*mesh.vertices.T)
        vals = sum(float(c) * r**i for i, c in enumerate(coeffs))
    elif kind == "tags":
        table = entry.get("values")
        if not isinstance(table, dict):
            errors.append(f"{path}.values: expected a {{tag: value}} object")
            return None
        missing = [int(t) for t in mesh.tags if str(int(t)) not in table]
        if missing:
            errors.append(f"{path}.values: missing tags {missing}")
            return None
        tri = np.array([float(table[str(int(t))]) for t in mesh.triangle_tags])
        # area-weighted average onto vertices
        w = np.repeat(mesh.areas[:, None], 3, axis=1)
        num = np.bincount(mesh.triangles.ravel(), (w * tri[:, None]).ravel(), mesh.n_vertices)
        den = np.bincount(mesh.triangles.ravel(), w.ravel(), mesh.n_vertices)
        vals = num / den
    else:
        errors.append(f"{path}.type: unknown field type {kind!r} (constant, radial, tags)")
        return None
    if positive and np.any(vals <= 0):
        errors.append(f"{path}: must be positive everywhere")
    if nonneg and np.any(vals < 0):
        errors.append(f"{path}: must be nonnegative everywhere")
    return ScalarField(vals)


def _order(errors, entry, mesh, base_dir, path="order"):
    if not isinstance(entry, dict):
        errors.append(f"{path}: expected an object")
        return None
    kind = entry.get("type")
    try:
        if kind == "constant":
            v = _num(errors, f"{path}.value", entry.get("value"))
            return None if v is None else OrderField.constant(mesh, v)
        if kind == "partition":
            table = entry.get("values")
            if not isinstance(table, dict):
                errors.append(f"{path}.values: expected a {{tag: alpha}} object")
                return None
            missing = [int(t) for t in mesh.tags if str(int(t)) not in table]
            if missing:
                errors.append(f"{path}.values: missing tags {missing}")
                return None
            vals = np.array([float(table[str(int(t))]) for t in mesh.triangle_tags])
            return OrderField.from_values(mesh, vals)
        if kind == "nodal":
            data = np.loadtxt(Path(base_dir) / entry["path"], comments="#", ndmin=1)
            vals = data[:, -1] if data.ndim == 2 else data
            if vals.size != mesh.n_vertices:
                errors.append(f"{path}.path: {vals.size} values for {mesh.n_vertices} vertices")
                return None
            return OrderField.from_values(mesh, vals, "vertex")
        if kind == "figure1":
            i = entry.get("index")
            if i not in (1, 2, 3, 4):
                errors.append(f"{path}.index: expected 1..4")
                return None
            return figure1_orders(mesh)[i - 1]
    except AssumptionViolation as exc:
        errors.append(f"{path}: {exc}")
        return None
    except (OSError, KeyError, ValueError) as exc:
        errors.append(f"{path}: {exc}")
        return None
    errors.append(f"{path}.type: unknown order type {kind!r} (constant, partition, nodal, figure1)")
    return None


def _phi(errors, path, entry, mesh):
    nb = mesh.boundary_vertices.size
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        return np.full(nb, float(entry))
    if isinstance(entry, dict) and entry.get("type") == "fourier":
        xy = mesh.vertices[mesh.boundary_vertices]
        th = np.arctan2(xy[:, 1], xy[:, 0])
        out = np.full(nb, float(entry.get("a0", 0.0)))
        for j, c in enumerate(entry.get("cos", []), start=1):
            out += float(c) * np.cos(j * th)
        for j, c in enumerate(entry.get("sin", []), start=1):
            out += float(c) * np.sin(j * th)
        return out
    errors.append(f"{path}: expected a number or a fourier object")
    return None


def _grid(errors, path, entry):
    if isinstance(entry, list):
        g = np.array(entry, dtype=float)
    elif isinstance(entry, dict):
        lo, hi, n = entry.get("lo"), entry.get("hi"), entry.get("n")
        if not (isinstance(n, int) and n >= 2):
            errors.append(f"{path}.n: expected an integer >= 2")
            return None
        if _num(errors, f"{path}.lo", lo, positive=True) is None or _num(errors, f"{path}.hi", hi) is None:
            return None
        if hi <= lo:
            errors.append(f"{path}: hi must exceed lo")
            return None
        g = log_grid(lo, hi, n)
    else:
        errors.append(f"{path}: expected a list or {{lo, hi, n}}")
        return None
    if np.any(g <= 0) or np.any(np.diff(g) <= 0):
        errors.append(f"{path}: values must be positive and strictly increasing")
        return None
    return g


def merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None, command=None) -> Experiment:
    """Parse and validate a JSON configuration; raises :class:`ConfigError`."""
    raw = DEFAULT_CONFIG
    base_dir = Path(".")
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config: top level must be an object")
        if user.get("schema") != SCHEMA:
            raise ConfigError(f"schema: expected {SCHEMA!r}, got {user.get('schema')!r}")
        raw = merge(DEFAULT_CONFIG, user)
        base_dir = Path(path).parent
    return build_experiment(raw, base_dir, command)


def build_experiment(raw: dict, base_dir=".", command=None) -> Experiment:
    errors = []
    mesh = _mesh(errors, raw.get("domain", {}), base_dir)
    if mesh is None:
        raise ConfigError(errors)
    tags = raw.get("tags") or {}
    if tags.get("radii") or tags.get("sectors", 1) != 1:
        mesh = tag_rings_sectors(mesh, tags.get("radii", []), int(tags.get("sectors", 1)),
                                 float(tags.get("offset", 0.0)))
    co = raw.get("coefficients", {})
    sigma = _vertex_field(errors, "coefficients.sigma", co.get("sigma", 1.0), mesh, positive=True)
    rho = _vertex_field(errors, "coefficients.rho", co.get("rho", 1.0), mesh, positive=True)
    q = _vertex_field(errors, "coefficients.q", co.get("q", 0.0), mesh, nonneg=True)
    alpha = _order(errors, raw.get("order"), mesh, base_dir)
    terms = []
    exc_entries = raw.get("excitation")
    if not isinstance(exc_entries, list) or not exc_entries:
        errors.append("excitation: expected a non-empty list of {k, phi}")
    else:
        for i, t in enumerate(exc_entries):
            k = t.get("k") if isinstance(t, dict) else None
            if not isinstance(k, int) or k < 2:
                errors.append(f"excitation[{i}].k: expected an integer >= 2 (excitation-form assumption)")
                continue
            phi = _phi(errors, f"excitation[{i}].phi", t.get("phi"), mesh)
            if phi is not None:
                terms.append((k, phi))
    excitation = None
    if terms:
        try:
            excitation = Excitation(tuple(terms))
            excitation.check_assumptions()
        except (AssumptionViolation, ValueError) as exc:
            errors.append(f"excitation: {exc}")
    obs = raw.get("observation", {}).get("x0")
    if not (isinstance(obs, list) and len(obs) == 2):
        errors.append("observation.x0: expected [x, y]")
    grid = _grid(errors, "p_grid", raw.get("p_grid"))
    if errors:
        raise ConfigError(errors)
    x0, dist = mesh.nearest_boundary(obs)
    cfg = CoefficientSet(mesh, sigma, rho, q, alpha)
    section = raw.get(command.replace("-", "_"), {}) if command else {}
    return Experiment(raw, mesh, cfg, excitation, x0, dist, grid, section or {})


# --------------------------------------------------------------------------
# commands


def cmd_forward(ex: Experiment, out: Path, args) -> int:
    prov = ex.section.get("provenance", "direct")
    curve = flux_curve(ex.cfg, ex.excitation, ex.x0, ex.p_grid, prov, args.threads)
    write_flux_curve(curve, out)
    write_weighted_data(weighted_data(ex.cfg, ex.excitation), out)
    log.info("x0 = vertex %d (distance %.3g from the requested point)", ex.x0, ex.x0_distance)
    return 0


def cmd_asympt(ex: Experiment, out: Path, args) -> int:
    Ns = ex.section.get("N", [1, 2])
    p0 = choose_p0(ex.cfg, seed=args.seed)
    errors = []
    grid = _grid(errors, "asympt.p_grid", ex.section.get("p_grid", {"lo": 1e-6, "hi": 0.1 * p0, "n": 12}))
    dgrid = _grid(errors, "asympt.delta_grid", ex.section.get("delta_grid", {"lo": 1e-3, "hi": 0.3, "n": 10}))
    if errors:
        raise ConfigError(errors)
    casc = [cascade_zero(ex.cfg, ex.excitation, p, max(Ns)) for p in grid]
    write_cascade_flux(casc, ex.x0, out)
    for N in Ns:
        pz = remainder_probe_zero(ex.cfg, ex.excitation, ex.x0, N, grid, args.threads)
        write_remainder(pz, out, f"remainder_zero_N{N}.csv")
        po = remainder_probe_one(ex.cfg, ex.excitation, ex.x0, N, dgrid, threads=args.threads)
        write_remainder(po, out, f"remainder_one_N{N}.csv")
        print(f"N={N}: low-frequency slope {pz.slope:.4f} (floor {pz.floor:.3f}); "
              f"near-one slope {po.slope:.4f} (floor {po.floor:.0f})")
        if N == Ns[0]:
            write_remainder(pz, out)
    print(f"p0 = {p0:.4g}")
    return 0


def cmd_invert_exponents(ex: Experiment, out: Path, args) -> int:
    s = ex.section
    errors = []
    grid = _grid(errors, "invert_exponents.p_grid", s.get("p_grid", {"lo": 1e-9, "hi": 1e-4, "n": 24}))
    if errors:
        raise ConfigError(errors)
    curve = flux_curve(ex.cfg, ex.excitation, ex.x0, grid, "representation", args.threads)
    b = None
    if s.get("known_medium", True):
        b, _ = known_medium_coefficients(ex.cfg, ex.excitation, [], ex.x0)
    model = recover_exponents(curve, b, int(s.get("max_terms", 2)), float(s.get("gap", 0.05)))
    write_exponents(model, out)
    curve.to_csv(out / "exponents_flux_curve.csv")
    for a, c in zip(model.exponents, model.coefficients):
        print(f"alpha = {a:.6f}  c = {c:.6g}")
    if model.flags:
        print("flags: " + "; ".join(model.flags))
    return 0


def _order_pair(ex: Experiment):
    errors = []
    base = Path(ex.raw.get("_base_dir", "."))
    a1 = _order(errors, ex.section.get("alpha1"), ex.mesh, base, "alpha1")
    a2 = _order(errors, ex.section.get("alpha2"), ex.mesh, base, "alpha2")
    if errors:
        raise ConfigError(errors)
    return a1, a2


def cmd_invert_linearized(ex: Experiment, out: Path, args) -> int:
    a1, a2 = _order_pair(ex)
    cfg2 = ex.cfg.with_alpha(a2)
    Dd = weighted_data(ex.cfg.with_alpha(a1), ex.excitation) - weighted_data(cfg2, ex.excitation)
    # only the tag list of the partition is used by the solver
    part = Partition(tuple((int(t), 0.01 * (i + 1)) for i, t in enumerate(ex.mesh.tags)))
    res = linearized_recovery(Dd, part, cfg2, ex.excitation, ex.section.get("tikhonov"),
                              bool(ex.section.get("monotone", False)), args.threads)
    write_recovery(res, out)
    for t, d in zip(res.tags, res.dalpha):
        print(f"tag {t}: dalpha = {d:.6g}")
    print(f"residual {res.residual:.3e}, condition {res.condition:.3e}")
    return 0


def cmd_stability(ex: Experiment, out: Path, args) -> int:
    a1, a2 = _order_pair(ex)
    reports = [stability_report(a1, a2, ex.cfg, ex.excitation)]
    rng = np.random.default_rng(args.seed)
    for _ in range(int(ex.section.get("n_random", 0))):
        shift = rng.uniform(0.0, 0.05, size=len(ex.mesh.tags))
        lookup = dict(zip(ex.mesh.tags.tolist(), shift))
        da = np.array([lookup[int(t)] for t in ex.mesh.triangle_tags])
        try:
            b = OrderField.from_values(ex.mesh, a2.values + da)
        except AssumptionViolation:
            continue
        reports.append(stability_report(b, a2, ex.cfg, ex.excitation))
    write_stability(reports, out)
    finite = [r.ratio for r in reports if np.isfinite(r.ratio)]
    if finite:
        print(f"empirical C = {max(finite):.6g} over {len(finite)} pairs")
    return 0


def cmd_crosscheck(ex: Experiment, out: Path, args) -> int:
    tau = float(ex.section.get("tau", 1e-3))
    T = float(ex.section.get("T", 40.0))
    series = l1_step_solve(ex.cfg, ex.excitation, tau, T)
    write_flux_series(series, out, [ex.x0])
    pos = ex.mesh.boundary_position[series.vertices]
    lap = laplace_at(series, 1.0)
    F1 = boundary_flux(ex.cfg, ex.excitation, 1.0)[pos]
    D = weighted_data(ex.cfg, ex.excitation).D[pos]
    wi = weighted_time_integral(series)
    print(f"p=1 transform: max relative gap {np.abs(lap / F1 - 1).max():.3e}")
    print(f"weighted integral: max relative gap {np.abs(wi.values / D - 1).max():.3e} "
          f"(tail estimate {wi.tail_estimate:.2e})")
    return 0


def cmd_figure1(ex: Experiment, out: Path, args) -> int:
    orders = figure1_orders(ex.mesh)
    Dm, curves = distinguishability_experiment(orders, ex.cfg, ex.excitation, ex.x0, ex.p_grid, args.threads)
    write_distance_matrix(Dm, out)
    for i, c in enumerate(curves, start=1):
        c.to_csv(out / f"figure1_flux_a{i}.csv")
    print(np.array2string(Dm, precision=4))
    return 0


def cmd_verify(ex, out: Path, args) -> int:
    nums = None
    if args.criteria:
        nums = sorted({int(x) for x in args.criteria.split(",")})
        bad = [n for n in nums if n not in acceptance.CRITERIA]
        if bad:
            raise ConfigError(f"--criteria: unknown criteria {bad}")
    results = acceptance.run_all(nums, seed=args.seed, out_dir=out, threads=args.threads,
                                 echo=lambda s: print(s, flush=True))
    if args.verbose:
        for r in results:
            print(r.report())
    return 0 if all(r.passed for r in results) else 3


HANDLERS = {
    "forward": cmd_forward,
    "asympt": cmd_asympt,
    "invert-exponents": cmd_invert_exponents,
    "invert-linearized": cmd_invert_linearized,
    "stability": cmd_stability,
    "crosscheck": cmd_crosscheck,
    "figure1": cmd_figure1,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vosub", description="Variable-order subdiffusion experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON experiment configuration")
    ap.add_argument("--out", default=".", help="output directory for CSV files")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for frequency sweeps")
    ap.add_argument("--seed", type=int, default=None, help="seed for randomized sweeps (default: config or 42)")
    ap.add_argument("--criteria", help="verify: comma-separated subset, e.g. 1,2,6")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify" and args.config is None:
            ex = None
            if args.seed is None:
                args.seed = 42
        else:
            ex = load_config(args.config, args.command)
            ex.raw["_base_dir"] = str(Path(args.config).parent) if args.config else "."
            if args.seed is None:
                args.seed = int(ex.raw.get("seed", 42))
        return HANDLERS[args.command](ex, out, args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    except AssumptionViolation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
