"""Order recovery and the uniqueness/stability experiments."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares, lsq_linear

from .elliptic import solve_dirichlet, variational_flux
from .forward import (CoefficientSet, FluxCurve, WeightedData, _pmap, flux_curve,
                      solve_Uhat_direct, weighted_data)
from .geometry import Excitation, Mesh, OrderField, Partition, lumped

# --------------------------------------------------------------------------
# leading power


def loglog_slope(p, F) -> float:
    return float(np.polyfit(np.log(p), np.log(np.abs(F)), 1)[0])


def detect_leading_M(curve: FluxCurve, tol: float = 0.05, max_drift: float = 0.3) -> int:
    """Leading excitation power from the small-``p`` blow-up of ``F``.

    With ``d = -slope`` of ``log|F|`` against ``log p``, ``F ~ p**-(M+1)``
    gives ``d`` close to the integer ``M + 1``; a vanishing baseline gives
    ``d = M + 1 - a`` for some order ``a``, resolved by rounding up.
    """
    p, F = curve.p, curve.F
    if np.log10(p[-1] / p[0]) < 2.0 - 1e-9:
        raise ValueError("curve must cover at least two decades of p")
    if np.any(F == 0):
        raise ValueError("flux curve vanishes; leading power undefined")
    d = -loglog_slope(p, F)
    h = p.size // 2
    if h >= 2:
        d1, d2 = -loglog_slope(p[:h + 1], F[:h + 1]), -loglog_slope(p[h:], F[h:])
        if abs(d1 - d2) > max_drift:
            raise ValueError(f"ambiguous slope: {d1:.3f} on the lower half, {d2:.3f} on the upper half")
    n = math.ceil(d - tol)
    if n < 3:
        raise ValueError(f"slope {-d:.3f} implies M < 2")
    return n - 1


# --------------------------------------------------------------------------
# power-sum fitting


@dataclass
class ExponentModel:
    """``G(p) = b - p**(M+1) F / sigma(x0) ~ sum_j c_j p**alpha_j``.

    ``baseline`` is ``b``; ``offset`` is the constant absorbed by the fit
    when the baseline was estimated (zero in known-medium mode).
    """

    M: int
    baseline: float | None
    exponents: np.ndarray
    coefficients: np.ndarray
    residual: float
    offset: float = 0.0
    flags: list = field(default_factory=list)
    iterations: int = 0

    def predict(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.offset + sum(c * p ** a for a, c in zip(self.exponents, self.coefficients))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha_j", "c_j"])
            for a, c in zip(self.exponents, self.coefficients):
                w.writerow([repr(float(a)), repr(float(c))])


def _design(p, exps, constant):
    cols = [p ** a for a in exps]
    if constant:
        cols.append(np.ones_like(p))
    return np.column_stack(cols) if cols else np.zeros((p.size, 0))


def _solve_linear(p, G, wt, exps, constant):
    A = _design(p, exps, constant)
    if A.shape[1] == 0:
        return np.zeros(0), G.copy()
    c, *_ = np.linalg.lstsq(A * wt[:, None], G * wt, rcond=None)
    return c, G - A @ c


def _peel_slope(p, r):
    """Local log-log slope of ``|r|`` at the small-``p`` end."""
    n = max(3, p.size // 3)
    pp, rr = p[:n], np.abs(r[:n])
    ok = rr > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(pp[ok]), np.log(rr[ok]), 1)[0])


def fit_power_sum(p, G, max_terms: int = 2, gap: float = 0.05, tol: float = 1e-12,
                  constant: bool = False, bounds=(1e-3, 0.999)):
    """Fit ``G ~ sum_j c_j p**a_j (+ const)`` by peeling then variable projection.

    Residuals are weighted relative to ``|G|`` so every decade counts.
    Returns ``(exponents, coefficients, const, rel_residual, flags, iters)``.
    """
    p = np.asarray(p, dtype=float)
    G = np.asarray(G, dtype=float)
    flags = []
    scale = np.abs(G).max() if G.size else 0.0
    if scale == 0.0:
        return np.zeros(0), np.zeros(0), 0.0, 0.0, flags, 0
    wt = 1.0 / np.maximum(np.abs(G), 1e-300 + 1e-14 * scale)
    lo, hi = bounds

    def rel(r):
        return float(np.sqrt(np.mean((r * wt) ** 2)))

    # peeling
    exps = []
    r = G.copy()
    for _ in range(max_terms):
        if rel(r) <= tol:
            break
        a = _peel_slope(p, r)
        if not np.isfinite(a):
            break
        a = float(np.clip(a, lo, hi))
        if any(abs(a - b) < gap for b in exps):
            # slope is pinned by a previous term; try the next free slot
            a = float(np.clip(max(exps) + 2 * gap, lo, hi))
            if any(abs(a - b) < gap for b in exps):
                flags.append("peeling stalled")
                break
        exps.append(a)
        _, r = _solve_linear(p, G, wt, exps, constant)

    # variable projection refinement from the peeled start and, when two terms
    # are allowed and still needed, the best few points of a coarse grid of
    # separated pairs (peeling stalls when G changes sign)
    iters = 0
    starts = [np.array(exps)] if exps else []
    if max_terms >= 2 and rel(_solve_linear(p, G, wt, exps, constant)[1]) > tol:
        g = np.arange(lo + 0.01, hi, 0.025)
        pairs = [(a, b) for i, a in enumerate(g) for b in g[i + 1:] if b - a >= gap]
        score = [rel(_solve_linear(p, G, wt, pr, constant)[1]) for pr in pairs]
        starts += [np.array(pairs[i]) for i in np.argsort(score)[:3]]
    if starts:
        def resid(x):
            return _solve_linear(p, G, wt, np.sort(x), constant)[1] * wt

        best = None
        for x0 in starts:
            res = least_squares(resid, np.clip(x0, lo, hi), bounds=(lo, hi), xtol=1e-15, ftol=1e-15,
                                gtol=1e-15, max_nfev=200 * x0.size)
            iters += int(res.nfev)
            if best is None or res.cost < best.cost:
                best = res
        if not exps or rel(resid(best.x)) <= rel(resid(np.array(exps))):
            exps = list(np.sort(best.x))
        if best.status == 0:
            flags.append("refinement hit iteration cap")

    # merge near-collisions
    exps = sorted(exps)
    merged = []
    for a in exps:
        if merged and a - merged[-1][-1] < gap:
            merged[-1].append(a)
            flags.append("exponent collision merged")
        else:
            merged.append([a])
    exps = [float(np.mean(g)) for g in merged]
    c, r = _solve_linear(p, G, wt, exps, constant)
    # drop terms that contribute nothing measurable
    contrib = [np.abs(ci * p**a).max() for a, ci in zip(exps, c)]
    small = [a for a, s in zip(exps, contrib) if s < 1e-6 * scale]
    if small:
        exps = [a for a in exps if a not in small]
        c, r = _solve_linear(p, G, wt, exps, constant)
    const = float(c[-1]) if constant else 0.0
    coef = c[:-1] if constant else c
    keep = coef != 0
    return (np.array(exps)[keep], coef[keep], const, rel(r), flags, iters)


def aitken_limit(y) -> float:
    """Aitken delta-squared limit from the first three terms of ``y``."""
    y0, y1, y2 = y[:3]
    den = y2 - 2 * y1 + y0
    if den == 0:
        return float(y0)
    return float(y0 - (y1 - y0) ** 2 / den)


def recover_exponents(curve: FluxCurve, known_baseline: float | None = None, max_terms: int = 2,
                      gap: float = 0.05, tol: float = 1e-12, M: int | None = None) -> ExponentModel:
    """Recover the anomalous exponents of a small-``p`` flux curve.

    Without ``known_baseline`` the limit of ``p**(M+1) F / sigma`` is
    extrapolated (Aitken on the smallest ``p`` samples) and a constant is
    kept in the fit to absorb the extrapolation error.
    """
    if M is None:
        M = detect_leading_M(curve)
    Y = curve.p ** (M + 1) * curve.F / curve.sigma_x0
    flags = []
    if known_baseline is None:
        b = aitken_limit(Y)
        flags.append("baseline extrapolated")
    else:
        b = float(known_baseline)
    G = b - Y
    exps, coef, const, resid, f2, iters = fit_power_sum(curve.p, G, max_terms, gap, tol,
                                                        constant=known_baseline is None)
    flags.extend(f2)
    if known_baseline is None:
        b = b - const
    return ExponentModel(M, b, exps, coef, resid, const, flags, iters)


def write_exponents(model: ExponentModel, out_dir) -> Path:
    path = Path(out_dir) / "exponents.csv"
    model.to_csv(path)
    return path


# --------------------------------------------------------------------------
# probes


def leading_lifting(cfg: CoefficientSet, excitation: Excitation) -> np.ndarray:
    """``u[M, 0] = S[M! phi_M]``."""
    M = excitation.M
    return solve_dirichlet(cfg.system(0.0), None, math.factorial(M) * excitation.phi(M))


def _tag_mask(mesh: Mesh, tags) -> np.ndarray:
    return np.isin(mesh.triangle_tags, np.asarray(list(tags), dtype=np.int64))


def hopf_probe(cfg: CoefficientSet, excitation: Excitation, subset_tags, x0: int,
               u: np.ndarray | None = None) -> float:
    """``d_nu A^{-1}[u[M,0] chi_A](x0)`` with ``A`` the union of the tagged triangles."""
    mesh = cfg.mesh
    tags = list(subset_tags)
    if not tags:
        return 0.0
    unknown = set(tags) - set(mesh.tags.tolist())
    if unknown:
        raise ValueError(f"unknown tags {sorted(unknown)}")
    if u is None:
        u = leading_lifting(cfg, excitation)
    chi = _tag_mask(mesh, tags).astype(float)
    src = cfg.rho_corners() * chi[:, None] * u[mesh.triangles]
    sys_ = cfg.system(0.0)
    v = solve_dirichlet(sys_, src, 0.0)
    return variational_flux(sys_, v, src).at(x0) / cfg.sigma_at(x0)


def known_medium_coefficients(cfg: CoefficientSet, excitation: Excitation, partition_tags, x0: int):
    """Baseline ``d_nu u[M,0](x0)`` and ``c_j = d_nu A^{-1}[u[M,0] chi_j](x0)`` per tag group."""
    sys_ = cfg.system(0.0)
    u = leading_lifting(cfg, excitation)
    b = variational_flux(sys_, u).at(x0) / cfg.sigma_at(x0)
    cs = [hopf_probe(cfg, excitation, tags, x0, u) for tags in partition_tags]
    return b, np.array(cs)


# --------------------------------------------------------------------------
# linearized full-boundary recovery


@dataclass
class RecoveryResult:
    tags: list
    dalpha: np.ndarray
    residual: float
    condition: float
    iterations: int = 0
    flags: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tag", "dalpha"])
            for t, d in zip(self.tags, self.dalpha):
                w.writerow([int(t), repr(float(d))])


def background_field(cfg: CoefficientSet, excitation: Excitation) -> np.ndarray:
    """``v = sum_k v[k, 0](1)``: reaction ``q + rho``, boundary ``ghat(1)``."""
    return solve_Uhat_direct(cfg, excitation, 1.0)


def source_response(cfg: CoefficientSet, v: np.ndarray, dalpha_tri: np.ndarray):
    """``vt`` with reaction ``q + rho`` and source ``dalpha rho v``; returns ``(vt, flux, load)``."""
    mesh = cfg.mesh
    src = cfg.rho_corners() * np.asarray(dalpha_tri, float)[:, None] * v[mesh.triangles]
    sys_ = cfg.system(1.0)
    vt = solve_dirichlet(sys_, src, 0.0)
    return vt, variational_flux(sys_, vt, src), src


def linearized_columns(cfg: CoefficientSet, excitation: Excitation, tags, threads=None) -> np.ndarray:
    """Boundary ``d_nu vt_j`` for unit ``dalpha`` on each tag (one column per tag)."""
    v = background_field(cfg, excitation)
    sig = cfg.sigma.values[cfg.mesh.boundary_vertices]

    def col(t):
        chi = (cfg.mesh.triangle_tags == t).astype(float)
        return source_response(cfg, v, chi)[1].density / sig

    return np.column_stack(_pmap(col, list(tags), threads))


def linearized_recovery(D_diff: WeightedData, partition: Partition, cfg: CoefficientSet,
                        excitation: Excitation, tikhonov: float | None = None,
                        monotone: bool = False, threads: int | None = None,
                        columns: np.ndarray | None = None) -> RecoveryResult:
    """Per-tag ``dalpha`` from ``D1 - D2`` on the whole boundary.

    The data satisfy ``D1 - D2 = d_nu vt`` where ``vt`` solves the
    ``p = 1`` problem with source ``(alpha1 - alpha2) rho v``.
    """
    tags = partition.tags
    C = linearized_columns(cfg, excitation, tags, threads) if columns is None else columns
    d = np.asarray(D_diff.D, dtype=float)
    colmax = float(np.linalg.norm(C, axis=0).max()) if C.size else 0.0
    lam = 1e-10 * colmax**2 if tikhonov is None else float(tikhonov)
    sv = np.linalg.svd(C, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    flags = []
    if not np.isfinite(cond) or cond > 1e12:
        flags.append("rank-deficient columns")
    n = C.shape[1]
    A = np.vstack([C, math.sqrt(lam) * np.eye(n)])
    b = np.concatenate([d, np.zeros(n)])
    iters = 0
    if monotone:
        res = lsq_linear(A, b, bounds=(0.0, np.inf), method="bvls")
        x, iters = res.x, int(res.nit)
    else:
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = float(np.linalg.norm(C @ x - d))
    return RecoveryResult(list(tags), x, resid, cond, iters, flags)


def write_recovery(result: RecoveryResult, out_dir) -> Path:
    path = Path(out_dir) / "recovery.csv"
    result.to_csv(path)
    return path


# --------------------------------------------------------------------------
# stability and reciprocity


@dataclass
class StabilityReport:
    l1_dalpha: float
    boundary_functional: float
    ratio: float
    flags: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l1_dalpha", "boundary_functional", "ratio"])
            w.writerow([repr(self.l1_dalpha), repr(self.boundary_functional), repr(self.ratio)])


def stability_report(alpha1: OrderField, alpha2: OrderField, cfg: CoefficientSet,
                     excitation: Excitation) -> StabilityReport:
    """``||alpha1 - alpha2||_L1`` against ``int |D1 - D2| ds`` and their ratio."""
    mesh = cfg.mesh
    da = alpha1.values - alpha2.values
    flags = []
    if np.any(da < 0):
        warnings.warn("alpha1 >= alpha2 does not hold everywhere", RuntimeWarning)
        flags.append("monotonicity violated")
    g1 = excitation.ghat(1.0)
    if np.min(np.abs(g1)) <= 1e-12 * np.max(np.abs(g1)) or (g1.min() < 0 < g1.max()):
        flags.append("ghat(1) not bounded away from zero")
    l1 = float(np.sum(mesh.areas * np.abs(da)))
    D1 = weighted_data(cfg.with_alpha(alpha1), excitation)
    D2 = weighted_data(cfg.with_alpha(alpha2), excitation)
    bf = (D1 - D2).l1()
    if l1 == 0 and bf == 0:
        ratio = float("nan")
        flags.append("ratio undefined")
    else:
        ratio = l1 / bf if bf > 0 else float("inf")
    return StabilityReport(l1, bf, ratio, flags)


def write_stability(reports, out_dir) -> Path:
    path = Path(out_dir) / "stability.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l1_dalpha", "boundary_functional", "ratio"])
        for r in reports:
            w.writerow([repr(r.l1_dalpha), repr(r.boundary_functional), repr(r.ratio)])
    return path


@dataclass(frozen=True)
class Reciprocity:
    volume: float
    boundary: float

    @property
    def residual(self) -> float:
        return abs(self.volume + self.boundary)

    @property
    def relative(self) -> float:
        s = abs(self.volume) + abs(self.boundary)
        return self.residual / s if s > 0 else 0.0


def reciprocity_check(alpha1: OrderField, alpha2: OrderField, cfg: CoefficientSet,
                      excitation: Excitation) -> Reciprocity:
    """``int (alpha1 - alpha2) rho v w dx`` and ``int sigma d_nu vt ds``; they cancel.

    ``w`` solves the ``p = 1`` problem with boundary value 1. The volume
    integral uses the same vertex rule as the discrete load.
    """
    mesh = cfg.mesh
    v = background_field(cfg, excitation)
    _, flux, src = source_response(cfg, v, alpha1.values - alpha2.values)
    w = solve_dirichlet(cfg.system(1.0), None, np.ones(mesh.boundary_vertices.size))
    return Reciprocity(float(lumped(mesh, src) @ w), flux.total())


# --------------------------------------------------------------------------
# distinguishability


def curve_distance(F1, F2) -> float:
    """Largest relative gap ``|F1 - F2| / max(|F1|, |F2|)`` over the grid."""
    F1, F2 = np.asarray(F1, float), np.asarray(F2, float)
    den = np.maximum(np.abs(F1), np.abs(F2))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, np.abs(F1 - F2) / den, 0.0)
    return float(r.max())


def distinguishability_experiment(configs, cfg: CoefficientSet, excitation: Excitation, x0: int,
                                  p_grid, threads: int | None = None):
    """Pairwise curve distances for a list of order fields; returns ``(matrix, curves)``."""
    curves = [flux_curve(cfg.with_alpha(a), excitation, x0, p_grid, "representation", threads)
              for a in configs]
    n = len(curves)
    Dm = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            Dm[i, j] = Dm[j, i] = curve_distance(curves[i].F, curves[j].F)
    return Dm, curves


def figure1_orders(mesh: Mesh):
    """Four order maps on the disk in ``[0.4, 0.8]``.

    The first three are nested (``a1 >= a2 >= a3``); the first takes the
    value 0.7, the third and fourth do not; the fourth shares the range of
    the third but not its layout and is not comparable with the others.
    """
    c = mesh.centroids
    r = np.hypot(c[:, 0], c[:, 1])
    inner, outer = r < 0.25, r >= 0.75
    mid = ~inner & ~outer
    upper = c[:, 1] >= 0
    a1 = np.where(outer, 0.45, np.where(mid, 0.7, 0.8))
    a2 = np.where(inner, 0.7 - 0.4 * r, np.where(mid, 0.65 - 0.2 * (r - 0.25), 0.45 - 0.2 * (r - 0.75)))
    a3 = np.where(outer, 0.4, np.where(mid, 0.5, 0.6))
    a4 = np.where(outer & upper, 0.4, np.where(inner & upper, 0.6, 0.5))
    return [OrderField.from_values(mesh, a) for a in (a1, a2, a3, a4)]


# pairs (0-based) separated by the monotone or range arguments, plus the (3, 4) layout argument
FIGURE1_DISTINGUISHABLE = [(0, 1), (0, 2), (1, 2), (0, 3), (2, 3)]


def write_distance_matrix(Dm, out_dir, name: str = "figure1_distances.csv") -> Path:
    """Square matrix CSV: header ``order,a1,..,an``, one row per order field."""
    path = Path(out_dir) / name
    n = Dm.shape[0]
    labels = [f"a{i + 1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order"] + labels)
        for i in range(n):
            w.writerow([labels[i]] + [repr(float(x)) for x in Dm[i]])
    return path
