"""P1 finite elements for ``-div(sigma grad u) + c u = f`` with Dirichlet data.

Stiffness is integrated exactly (sigma linear per element), reaction and
load terms use the vertex rule. Fields that are products of vertex and
triangle quantities (``rho * p**alpha * u``) are passed as per-corner arrays
of shape ``(ntri, 3)``; see :func:`vosub.geometry.corner_values`.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .errors import SolverError
from .geometry import Mesh, ScalarField, corner_values, lumped

RESIDUAL_TOL = 1e-10
DIRECT_LIMIT = 200_000


def _as_vertex(mesh, f, name):
    if isinstance(f, ScalarField):
        f = f.check(mesh)
        return f.values if f.placement == "vertex" else f.at_corners(mesh)
    return np.asarray(f, dtype=float)


def pcg(A, b, tol=RESIDUAL_TOL, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations, relative_residual)``.
    """
    n = b.shape[0]
    if maxiter is None:
        maxiter = int(20 * math.sqrt(n)) + 1
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0, 0.0
    z = dinv * r
    d = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ad = A @ d
        step = rz / (d @ Ad)
        x += step * d
        r -= step * Ad
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, it, res
        z = dinv * r
        rz, rz_old = r @ z, rz
        d = z + (rz / rz_old) * d
    return x, maxiter, res


@dataclass(eq=False)
class AssembledSystem:
    """Matrix of ``a(u, v) = int sigma grad u . grad v + int c u v``.

    The matrix covers all vertices; Dirichlet rows/columns are eliminated
    at solve time. Immutable once built; the factorization of the interior
    block is computed on first use and shared.
    """

    mesh: Mesh
    matrix: sp.csr_matrix
    sigma: np.ndarray
    method: str = "auto"
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _lu: object = field(default=None, repr=False)
    last_info: dict = field(default_factory=dict, repr=False)

    @property
    def dirichlet(self) -> np.ndarray:
        return self.mesh.boundary_vertices

    @property
    def interior(self) -> np.ndarray:
        return self.mesh.interior_vertices

    def _blocks(self):
        I, B = self.interior, self.dirichlet
        A = self.matrix
        return A[I][:, I].tocsc(), A[I][:, B]

    def _factor(self):
        with self._lock:
            if self._lu is None:
                AII, AIB = self._blocks()
                self._AII, self._AIB = AII, AIB
                use_direct = self.method == "direct" or (
                    self.method == "auto" and AII.shape[0] < DIRECT_LIMIT)
                self._lu = splu(AII, permc_spec="MMD_AT_PLUS_A") if use_direct else False
        return self._lu

    def load(self, f) -> np.ndarray:
        return lumped(self.mesh, f)

    def solve(self, b: np.ndarray, bdata) -> np.ndarray:
        """Solve with full load vector ``b`` and boundary values ``bdata``."""
        lu = self._factor()
        B, I = self.dirichlet, self.interior
        nb = B.size
        multi = b.ndim == 2
        g = np.broadcast_to(np.asarray(bdata, dtype=float), (nb,) + b.shape[1:]) if bdata is not None \
            else np.zeros((nb,) + b.shape[1:])
        rhs = b[I] - self._AIB @ g
        u = np.empty_like(b, dtype=float)
        u[B] = g
        if lu:
            x = lu.solve(rhs)
            for _ in range(3):
                res = rhs - self._AII @ x
                scale = np.linalg.norm(rhs, axis=0)
                rel = np.max(np.linalg.norm(res, axis=0) / np.where(scale > 0, scale, 1.0))
                if rel <= RESIDUAL_TOL:
                    break
                x = x + lu.solve(res)
            else:
                raise SolverError(f"direct solve residual {rel:.2e} above {RESIDUAL_TOL}")
            self.last_info = {"method": "direct", "relative_residual": float(rel)}
        else:
            cols = rhs if multi else rhs[:, None]
            x = np.empty_like(cols)
            worst, iters = 0.0, 0
            for j in range(cols.shape[1]):
                x[:, j], it, rel = pcg(self._AII, cols[:, j])
                if rel > RESIDUAL_TOL:
                    raise SolverError(f"CG stopped at relative residual {rel:.2e} after {it} iterations")
                worst, iters = max(worst, rel), max(iters, it)
            x = x if multi else x[:, 0]
            self.last_info = {"method": "cg", "relative_residual": worst, "iterations": iters}
        u[I] = x
        return u


def _sum_duplicates(rows, cols, vals, n):
    key = rows * n + cols
    order = np.argsort(key, kind="stable")
    key, vals = key[order], vals[order]
    first = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    summed = np.add.reduceat(vals, first)
    uk = key[first]
    return sp.csr_matrix((summed, (uk // n, uk % n)), shape=(n, n))


def assemble(mesh: Mesh, sigma, c, method: str = "auto") -> AssembledSystem:
    """Assemble ``a(u, v)`` for diffusion ``sigma`` and reaction ``c``.

    ``sigma`` is a vertex field (or scalar); ``c`` any field-like accepted
    by :func:`~vosub.geometry.corner_values`.
    """
    sig = corner_values(mesh, sigma.check(mesh) if isinstance(sigma, ScalarField) else sigma)
    cc = corner_values(mesh, c)
    if np.any(sig <= 0):
        raise ValueError("diffusion coefficient sigma must be positive")
    if np.any(cc < 0):
        raise ValueError("reaction coefficient c must be nonnegative")
    area, Ke = kernels.element_stiffness(mesh.vertices, mesh.triangles,
                                         np.ascontiguousarray(sig.mean(axis=1)))
    n = mesh.n_vertices
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    K = _sum_duplicates(rows, cols, Ke.ravel(), n)
    d = kernels.corner_lump(t, area, np.ascontiguousarray(cc), n)
    A = (K + sp.diags(d)).tocsr()
    A.sort_indices()
    sv = np.zeros(n)
    np.add.at(sv, t.ravel(), sig.ravel())
    cnt = np.bincount(t.ravel(), minlength=n)
    return AssembledSystem(mesh, A, sv / cnt, method)


def solve_dirichlet(system: AssembledSystem, f=None, bdata=None) -> np.ndarray:
    """Discrete solution with load ``f`` and boundary values ``bdata``.

    ``bdata`` is ordered like ``mesh.boundary_vertices``. Returns vertex values.
    """
    mesh = system.mesh
    b = np.zeros(mesh.n_vertices) if f is None else system.load(_as_vertex(mesh, f, "f"))
    return system.solve(b, bdata)


def solve_S(mesh: Mesh, sigma, q, phi) -> np.ndarray:
    """Lifting ``S[phi]``: ``-div(sigma grad v) + q v = 0``, ``v = phi`` on the boundary."""
    return solve_dirichlet(assemble(mesh, sigma, q), None, phi)


def reaction(mesh: Mesh, q, rho, weight) -> np.ndarray:
    """Corner values of ``q + rho * weight`` with ``weight`` per triangle."""
    return corner_values(mesh, q) + corner_values(mesh, rho) * np.asarray(weight, dtype=float)[:, None]


def apply_resolvent(mesh: Mesh, sigma, q, rho, alpha, p: float, f) -> np.ndarray:
    """``(A + p**alpha)^{-1} f``: zero-Dirichlet solve of
    ``-div(sigma grad u) + (q + rho p**alpha) u = rho f``."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    system = assemble(mesh, sigma, reaction(mesh, q, rho, alpha.power(p)))
    return solve_dirichlet(system, corner_values(mesh, rho) * corner_values(mesh, f), 0.0)


@dataclass(frozen=True, eq=False)
class BoundaryFlux:
    """Variational conormal flux ``sigma d_nu u`` on the boundary vertices.

    ``density`` is the P1 boundary function, ``residual`` the weak-form
    residual ``a(u, phi_i) - (f, phi_i)`` it was recovered from.
    """

    mesh: Mesh
    density: np.ndarray
    residual: np.ndarray

    def at(self, vertex: int) -> float:
        pos = self.mesh.boundary_position[vertex]
        if pos < 0:
            raise ValueError(f"vertex {vertex} is not on the boundary")
        return float(self.density[pos])

    def total(self) -> float:
        """``int sigma d_nu u ds``, equal to the summed residual."""
        return float(self.residual.sum())


def variational_flux(system: AssembledSystem, u: np.ndarray, f=None) -> BoundaryFlux:
    mesh = system.mesh
    B = mesh.boundary_vertices
    r = system.matrix[B] @ u
    if f is not None:
        r = r - system.load(_as_vertex(mesh, f, "f"))[B]
    return BoundaryFlux(mesh, mesh.solve_boundary_mass(r), r)
