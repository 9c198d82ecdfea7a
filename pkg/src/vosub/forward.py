"""Laplace-domain forward map: transformed fields, flux curves, weighted data."""

from __future__ import annotations

import csv
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elliptic import AssembledSystem, assemble, reaction, solve_dirichlet, variational_flux
from .geometry import Excitation, Mesh, OrderField, ScalarField, corner_values
from .geometry import ghat as _ghat

DIRECT = "direct"
REPRESENTATION = "representation"


def _field(mesh: Mesh, value, name: str) -> ScalarField:
    if isinstance(value, ScalarField):
        return value.check(mesh)
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return ScalarField.constant(mesh, float(v))
    return ScalarField(v).check(mesh)


@dataclass(eq=False)
class CoefficientSet:
    """Medium ``(sigma, rho, q)`` and order field on a mesh.

    Assembled systems are cached per frequency (small LRU) and shared
    between solves; the cache is thread-safe.
    """

    mesh: Mesh
    sigma: ScalarField
    rho: ScalarField
    q: ScalarField
    alpha: OrderField
    cache_size: int = 8
    _cache: OrderedDict = field(default_factory=OrderedDict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        m = self.mesh
        self.sigma = _field(m, self.sigma, "sigma")
        self.rho = _field(m, self.rho, "rho")
        self.q = _field(m, self.q, "q")
        if np.any(self.sigma.values <= 0):
            raise ValueError("sigma must be positive")
        if np.any(self.rho.values <= 0):
            raise ValueError("rho must be positive")
        if np.any(self.q.values < 0):
            raise ValueError("q must be nonnegative")
        if self.alpha.values.shape != (m.n_triangles,):
            raise ValueError("order field does not match the mesh")

    @classmethod
    def uniform(cls, mesh: Mesh, alpha, sigma=1.0, rho=1.0, q=0.0) -> "CoefficientSet":
        if not isinstance(alpha, OrderField):
            alpha = OrderField.constant(mesh, float(alpha))
        return cls(mesh, sigma, rho, q, alpha)

    def with_alpha(self, alpha: OrderField) -> "CoefficientSet":
        return CoefficientSet(self.mesh, self.sigma, self.rho, self.q, alpha, self.cache_size)

    def reaction(self, p: float) -> np.ndarray:
        """Corner values of ``q + rho * p**alpha``."""
        return reaction(self.mesh, self.q, self.rho, self.alpha.power(p))

    def system(self, p: float) -> AssembledSystem:
        """System for ``-div(sigma grad) + q + rho p**alpha``; ``p = 0`` gives reaction ``q``."""
        p = float(p)
        if p < 0:
            raise ValueError("p must be nonnegative")
        with self._lock:
            if p in self._cache:
                self._cache.move_to_end(p)
                return self._cache[p]
        sys_ = assemble(self.mesh, self.sigma, self.reaction(p))
        with self._lock:
            self._cache[p] = sys_
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return sys_

    def sigma_at(self, vertex: int) -> float:
        return float(self.sigma.values[vertex])

    def rho_corners(self) -> np.ndarray:
        return corner_values(self.mesh, self.rho)


def ghat(excitation: Excitation, p: float) -> np.ndarray:
    """Boundary values of ``sum_k k! p**(-k-1) phi_k``."""
    return _ghat(excitation, p)


def solve_Uhat_direct(cfg: CoefficientSet, excitation: Excitation, p: float) -> np.ndarray:
    if p <= 0:
        raise ValueError("p must be positive")
    return solve_dirichlet(cfg.system(p), None, excitation.ghat(p))


def _repr_parts(cfg, excitation, p):
    """``s = S[ghat]`` and ``w = (A + p**alpha)^{-1} [p**alpha s]`` with the load of ``w``."""
    if p <= 0:
        raise ValueError("p must be positive")
    s = solve_dirichlet(cfg.system(0.0), None, excitation.ghat(p))
    load = cfg.rho_corners() * cfg.alpha.power(p)[:, None] * s[cfg.mesh.triangles]
    w = solve_dirichlet(cfg.system(p), load, 0.0)
    return s, w, load


def solve_Uhat_repr(cfg: CoefficientSet, excitation: Excitation, p: float) -> np.ndarray:
    """``U = S[ghat] - (A + p**alpha)^{-1} p**alpha S[ghat]``."""
    s, w, _ = _repr_parts(cfg, excitation, p)
    return s - w


def boundary_flux(cfg: CoefficientSet, excitation: Excitation, p: float,
                  provenance: str = DIRECT) -> np.ndarray:
    """``sigma d_nu U(p)`` on all boundary vertices.

    The representation route splits the flux into the lifting part and the
    resolvent correction, which keeps relative accuracy of the correction
    when ``p**alpha`` is tiny.
    """
    if provenance == DIRECT:
        U = solve_Uhat_direct(cfg, excitation, p)
        return variational_flux(cfg.system(p), U).density
    if provenance == REPRESENTATION:
        s, w, load = _repr_parts(cfg, excitation, p)
        fs = variational_flux(cfg.system(0.0), s).density
        fw = variational_flux(cfg.system(p), w, load).density
        return fs - fw
    raise ValueError(f"unknown provenance {provenance!r}")


@dataclass(frozen=True, eq=False)
class FluxCurve:
    """Samples ``F(p) = sigma(x0) d_nu U(p, x0)``."""

    x0: int
    p: np.ndarray
    F: np.ndarray
    provenance: str = DIRECT
    sigma_x0: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        F = np.asarray(self.F, dtype=float)
        if p.shape != F.shape or p.ndim != 1:
            raise ValueError("p and F must be 1-d arrays of equal length")
        if np.any(p <= 0) or np.any(np.diff(p) <= 0):
            raise ValueError("p values must be positive and strictly increasing")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(F))):
            raise ValueError("flux curve has non-finite entries")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "F", F)

    def __len__(self):
        return self.p.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "F"])
            for a, b in zip(self.p, self.F):
                w.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path, x0: int = -1, sigma_x0: float = 1.0) -> "FluxCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(x0, data[:, 0], data[:, 1], "file", sigma_x0)


def _pmap(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def flux_curve(cfg: CoefficientSet, excitation: Excitation, x0: int, p_grid,
               provenance: str = DIRECT, threads: int | None = None) -> FluxCurve:
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any(p_grid <= 0) or np.any(np.diff(p_grid) <= 0):
        raise ValueError("p_grid must be positive and strictly increasing")
    pos = cfg.mesh.boundary_position[x0]
    if pos < 0:
        raise ValueError(f"vertex {x0} is not on the boundary")
    vals = _pmap(lambda p: boundary_flux(cfg, excitation, p, provenance)[pos], list(p_grid), threads)
    return FluxCurve(int(x0), p_grid, np.array(vals), provenance, cfg.sigma_at(x0))


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)


DEFAULT_SMALL_P = (1e-6, 1e-2, 24)


@dataclass(frozen=True, eq=False)
class WeightedData:
    """``D(x) = int_0^inf d_nu U(t, x) t exp(-t) dt`` at the boundary vertices."""

    mesh: Mesh
    D: np.ndarray

    @property
    def vertices(self) -> np.ndarray:
        return self.mesh.boundary_vertices

    def __sub__(self, other: "WeightedData") -> "WeightedData":
        if other.mesh is not self.mesh and other.D.shape != self.D.shape:
            raise ValueError("weighted data live on different meshes")
        return WeightedData(self.mesh, self.D - other.D)

    def at(self, vertex: int) -> float:
        pos = self.mesh.boundary_position[vertex]
        if pos < 0:
            raise ValueError(f"vertex {vertex} is not on the boundary")
        return float(self.D[pos])

    def l1(self) -> float:
        """Edge-length trapezoid of ``|D|``."""
        return self.mesh.boundary_integral(np.abs(self.D))

    def to_csv(self, path) -> None:
        xy = self.mesh.vertices[self.vertices]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "x", "y", "D"])
            for v, (x, y), d in zip(self.vertices, xy, self.D):
                w.writerow([int(v), repr(float(x)), repr(float(y)), repr(float(d))])


def sensitivity(cfg: CoefficientSet, excitation: Excitation, p: float = 1.0):
    """``dU/dp`` at ``p`` and its variational flux ``sigma d_nu dU/dp``.

    Differentiating the transformed problem gives reaction ``q + rho p**alpha``,
    source ``-rho alpha p**(alpha-1) U(p)`` and boundary data ``d ghat / dp``.
    """
    mesh = cfg.mesh
    sys_ = cfg.system(p)
    U = solve_dirichlet(sys_, None, excitation.ghat(p))
    a = cfg.alpha.values
    src = -cfg.rho_corners() * (a * np.power(p, a - 1.0))[:, None] * U[mesh.triangles]
    w = solve_dirichlet(sys_, src, excitation.dghat_dp(p))
    return w, variational_flux(sys_, w, src)


def weighted_data(cfg: CoefficientSet, excitation: Excitation) -> WeightedData:
    """``D = -d/dp d_nu U(p)`` at ``p = 1`` by one sensitivity solve (flux divided by sigma)."""
    _, flux = sensitivity(cfg, excitation, 1.0)
    sig = cfg.sigma.values[cfg.mesh.boundary_vertices]
    return WeightedData(cfg.mesh, -flux.density / sig)


def weighted_data_fd(cfg: CoefficientSet, excitation: Excitation, delta: float) -> WeightedData:
    """Central difference ``-(d_nu U(1+delta) - d_nu U(1-delta)) / (2 delta)``."""
    sig = cfg.sigma.values[cfg.mesh.boundary_vertices]
    hi = boundary_flux(cfg, excitation, 1.0 + delta)
    lo = boundary_flux(cfg, excitation, 1.0 - delta)
    return WeightedData(cfg.mesh, -(hi - lo) / (2.0 * delta) / sig)


def write_flux_curve(curve: FluxCurve, out_dir) -> Path:
    path = Path(out_dir) / "flux_curve.csv"
    curve.to_csv(path)
    return path


def write_weighted_data(data: WeightedData, out_dir) -> Path:
    path = Path(out_dir) / "weighted_data.csv"
    data.to_csv(path)
    return path
