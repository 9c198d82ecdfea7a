"""Expansion cascades at p -> 0 and p -> 1 and their remainders."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elliptic import RESIDUAL_TOL, solve_dirichlet, variational_flux
from .forward import CoefficientSet, boundary_flux, _pmap
from .geometry import Excitation, OrderField, corner_values

ZERO = "zero"
ONE = "one"


@dataclass(eq=False)
class ExpansionCascade:
    """Fields ``u[k, l]`` (regime zero) or ``v[k, l]`` (regime one) at one frequency.

    ``fields[(k, l)]`` are vertex values, ``fluxes[(k, l)]`` the variational
    fluxes ``sigma d_nu`` on the boundary.
    """

    regime: str
    p: float
    N: int
    ks: tuple
    fields: dict = field(default_factory=dict)
    fluxes: dict = field(default_factory=dict)

    def flux_at(self, vertex: int) -> dict:
        return {kl: f.at(vertex) for kl, f in self.fluxes.items()}

    def total_flux(self, vertex: int, depth: int | None = None) -> float:
        """Sum of ``sigma d_nu`` over ``l < depth`` (all levels by default)."""
        depth = self.N if depth is None else depth
        return float(sum(f.at(vertex) for (k, l), f in self.fluxes.items() if l < depth))

    def total_density(self, depth: int | None = None) -> np.ndarray:
        depth = self.N if depth is None else depth
        return sum(f.density for (k, l), f in self.fluxes.items() if l < depth)


def _cascade(cfg, excitation, p, N, regime, weight):
    if N < 1:
        raise ValueError("N must be >= 1")
    mesh = cfg.mesh
    M = excitation.M
    sys_ = cfg.system(0.0 if regime == ZERO else 1.0)
    rho_w = cfg.rho_corners() * weight[:, None]
    out = ExpansionCascade(regime, float(p), int(N), tuple(k for k, _ in excitation.terms))
    for k, phi in excitation.terms:
        u = solve_dirichlet(sys_, None, math.factorial(k) * p ** (M - k) * phi)
        out.fields[(k, 0)] = u
        out.fluxes[(k, 0)] = variational_flux(sys_, u)
        for l in range(1, N):
            src = rho_w * u[mesh.triangles]
            u = solve_dirichlet(sys_, src, 0.0)
            out.fields[(k, l)] = u
            out.fluxes[(k, l)] = variational_flux(sys_, u, src)
    return out


def cascade_zero(cfg: CoefficientSet, excitation: Excitation, p: float, N: int) -> ExpansionCascade:
    """Low-frequency cascade: reaction ``q``, source ``-p**alpha rho u[k, l-1]``."""
    if p <= 0:
        raise ValueError("p must be positive")
    return _cascade(cfg, excitation, p, N, ZERO, -cfg.alpha.power(p))


def cascade_one(cfg: CoefficientSet, excitation: Excitation, p: float, N: int) -> ExpansionCascade:
    """Cascade around ``p = 1``: reaction ``q + rho``, source ``(1 - p**alpha) rho v[k, l-1]``."""
    if not 0.5 < p < 1.5:
        raise ValueError("cascade_one needs p in (0.5, 1.5)")
    return _cascade(cfg, excitation, p, N, ONE, 1.0 - cfg.alpha.power(p))


# --------------------------------------------------------------------------
# remainders


@dataclass(frozen=True, eq=False)
class RemainderProbe:
    """``|R|`` over a grid (``p`` for regime zero, ``|p - 1|`` for regime one)."""

    regime: str
    N: int
    grid: np.ndarray
    absR: np.ndarray
    slope: float
    floor: float
    fit_mask: np.ndarray
    note: str = ""

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.slope) and self.slope >= self.floor - 0.1)

    def bound(self) -> np.ndarray:
        """``C * grid**floor`` with the smallest ``C`` covering the fitted points."""
        m = self.fit_mask if self.fit_mask.any() else np.ones_like(self.fit_mask)
        C = np.max(self.absR[m] / self.grid[m] ** self.floor)
        return C * self.grid ** self.floor

    def to_csv(self, path) -> None:
        b = self.bound()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "absR", "bound"])
            for x, r, bb in zip(self.grid, self.absR, b):
                w.writerow([repr(float(x)), repr(float(r)), repr(float(bb))])


MIN_FIT_POINTS = 6


def fit_slope(x, y, threshold: float):
    """Least-squares log-log slope over the longest run with ``y > threshold``.

    Returns ``(slope, mask)``; the slope is NaN when fewer than
    :data:`MIN_FIT_POINTS` points qualify.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    good = y > threshold
    best, cur, start = (0, 0), 0, 0
    for i, g in enumerate(good):
        if g:
            if cur == 0:
                start = i
            cur += 1
            if cur > best[1] - best[0]:
                best = (start, i + 1)
        else:
            cur = 0
    mask = np.zeros(x.size, dtype=bool)
    mask[best[0]:best[1]] = True
    if mask.sum() < MIN_FIT_POINTS:
        return float("nan"), mask
    slope = np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)[0]
    return float(slope), mask


def remainder_zero(cfg, excitation, x0, N, p) -> tuple[float, float]:
    """``R(p) = p**(M+1) sigma d_nu U(p, x0) - sum_{k, l<N} sigma d_nu u[k, l](p, x0)`` and its scale."""
    pos = cfg.mesh.boundary_position[x0]
    full = p ** (excitation.M + 1) * boundary_flux(cfg, excitation, p, "representation")[pos]
    casc = cascade_zero(cfg, excitation, p, N).total_flux(x0)
    return full - casc, abs(full)


def remainder_one(cfg, excitation, x0, N, p) -> tuple[float, float]:
    pos = cfg.mesh.boundary_position[x0]
    full = p ** (excitation.M + 1) * boundary_flux(cfg, excitation, p)[pos]
    casc = cascade_one(cfg, excitation, p, N).total_flux(x0)
    return full - casc, abs(full)


def remainder_probe_zero(cfg: CoefficientSet, excitation: Excitation, x0: int, N: int, p_grid,
                         threads: int | None = None) -> RemainderProbe:
    p_grid = np.asarray(p_grid, dtype=float)
    vals = _pmap(lambda p: remainder_zero(cfg, excitation, x0, N, p), list(p_grid), threads)
    R = np.abs([v[0] for v in vals])
    scale = max(v[1] for v in vals)
    slope, mask = fit_slope(p_grid, R, 100 * RESIDUAL_TOL * scale)
    note = "" if np.isfinite(slope) else "too few points above the noise floor"
    return RemainderProbe(ZERO, N, p_grid, R, slope, N * cfg.alpha.alpha_min, mask, note)


def remainder_probe_one(cfg: CoefficientSet, excitation: Excitation, x0: int, N: int, delta_grid,
                        side: int = 1, threads: int | None = None) -> RemainderProbe:
    """Remainder of the ``p -> 1`` expansion at ``p = 1 + side * delta``."""
    d = np.asarray(delta_grid, dtype=float)
    if np.any(d <= 0) or np.any(d >= 0.4):
        raise ValueError("delta values must lie in (0, 0.4)")
    vals = _pmap(lambda dd: remainder_one(cfg, excitation, x0, N, 1.0 + side * dd), list(d), threads)
    R = np.abs([v[0] for v in vals])
    scale = max(v[1] for v in vals)
    slope, mask = fit_slope(d, R, 100 * RESIDUAL_TOL * scale)
    note = "" if np.isfinite(slope) else "too few points above the noise floor"
    return RemainderProbe(ONE, N, d, R, slope, float(N), mask, note)


# --------------------------------------------------------------------------
# Neumann series and constants


def _Ainv(cfg, f_corners, p=0.0):
    """Zero-Dirichlet solve with reaction ``q + rho p**alpha`` and load ``rho f``."""
    return solve_dirichlet(cfg.system(p), cfg.rho_corners() * f_corners, 0.0)


def _norm(cfg, u, norm):
    if norm == "max":
        return float(np.abs(u).max())
    if norm == "l2":
        mass = cfg.system(0.0).load(np.ones(cfg.mesh.n_vertices))
        return float(np.sqrt(mass @ (u * u)))
    raise ValueError(f"unknown norm {norm!r}")


def neumann_series(cfg: CoefficientSet, f, p: float, N: int) -> np.ndarray:
    """``sum_{i<N} A^{-1} (-p**alpha A^{-1})^i f``."""
    mesh = cfg.mesh
    pa = cfg.alpha.power(p)[:, None]
    t = _Ainv(cfg, corner_values(mesh, f))
    total = t.copy()
    for _ in range(1, N):
        t = -_Ainv(cfg, pa * t[mesh.triangles])
        total += t
    return total


def neumann_truncation_residual(cfg: CoefficientSet, f, p: float, N: int, norm: str = "max") -> float:
    """``||(A + p**alpha)^{-1} f - sum_{i<N} A^{-1}(-p**alpha A^{-1})^i f||``."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    exact = _Ainv(cfg, corner_values(cfg.mesh, f), p)
    return _norm(cfg, exact - neumann_series(cfg, f, p, N), norm)


def first_order_remainder(cfg: CoefficientSet, f, p: float, norm: str = "max") -> float:
    """``||A^{-1} p**alpha (A + p**alpha)^{-1} f||``: the ``N = 1`` residual by the resolvent identity."""
    mesh = cfg.mesh
    r = _Ainv(cfg, corner_values(mesh, f), p)
    return _norm(cfg, _Ainv(cfg, cfg.alpha.power(p)[:, None] * r[mesh.triangles]), norm)


def taylor_order_bound(alpha: OrderField, p: float) -> float:
    """``max |p**alpha - 1 - (p - 1) alpha|`` over triangles."""
    if not 0.5 < p < 1.5:
        raise ValueError("p must lie in (0.5, 1.5)")
    a = alpha.values
    return float(np.max(np.abs(np.power(p, a) - 1.0 - (p - 1.0) * a)))


def estimate_CA(cfg: CoefficientSet, n_probes: int = 20, seed: int = 42, norm: str = "l2") -> float:
    """Lower estimate of ``||A^{-1}||`` from random probes.

    Each probe is a random positive vertex vector; the largest ratio
    ``||A^{-1} f|| / ||f||`` is returned.
    """
    rng = np.random.default_rng(seed)
    n = cfg.mesh.n_vertices
    best = 0.0
    for _ in range(n_probes):
        f = rng.random(n)
        f[cfg.mesh.boundary_vertices] = 0.0
        u = _Ainv(cfg, corner_values(cfg.mesh, f))
        best = max(best, _norm(cfg, u, norm) / _norm(cfg, f, norm))
    return best


def choose_p0(cfg: CoefficientSet, n_probes: int = 20, seed: int = 42) -> float:
    """``min(0.1, (2 C_A)**(-1/alpha_min))``."""
    CA = estimate_CA(cfg, n_probes, seed)
    return float(min(0.1, (2.0 * CA) ** (-1.0 / cfg.alpha.alpha_min)))


# --------------------------------------------------------------------------
# output


def write_cascade_flux(cascades, x0: int, out_dir) -> Path:
    path = Path(out_dir) / "cascade_flux.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "l", "p", "flux"])
        for c in cascades:
            for (k, l), f in sorted(c.fluxes.items()):
                w.writerow([k, l, repr(c.p), repr(f.at(x0))])
    return path


def write_remainder(probe: RemainderProbe, out_dir, name: str = "remainder.csv") -> Path:
    path = Path(out_dir) / name
    probe.to_csv(path)
    return path
