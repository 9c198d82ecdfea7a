"""L1 time stepping of the variable-order problem, for cross-checking the Laplace side."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gamma, gammaincc

from . import kernels
from .elliptic import assemble
from .forward import CoefficientSet
from .geometry import Excitation, lumped

BLOCK = 256
CHUNK = 2048


@dataclass(frozen=True, eq=False)
class L1Weights:
    """``w[m] = ((m+1)**(1-a) - m**(1-a)) / Gamma(2-a)``, one table per distinct order."""

    orders: np.ndarray
    tau: float
    table: np.ndarray  # (n_orders, n_steps + 1)

    @classmethod
    def build(cls, orders, tau: float, n_steps: int) -> "L1Weights":
        orders = np.unique(np.asarray(orders, dtype=float))
        m = np.arange(n_steps + 1, dtype=float)
        rows = []
        for a in orders:
            e = 1.0 - a
            rows.append((np.power(m + 1.0, e) - np.power(m, e)) / gamma(2.0 - a))
        return cls(orders, float(tau), np.array(rows))

    def scale(self) -> np.ndarray:
        """``tau**(-alpha)`` per order."""
        return self.tau ** (-self.orders)


@dataclass(frozen=True, eq=False)
class FluxSeries:
    """Boundary flux ``sigma d_nu U(t_n)`` for ``t_n = n tau``, ``n = 0..T/tau``."""

    tau: float
    T: float
    vertices: np.ndarray
    flux: np.ndarray  # (n_steps + 1, len(vertices))
    sigma: np.ndarray
    excitation_degree: int = 0

    @property
    def t(self) -> np.ndarray:
        return self.tau * np.arange(self.flux.shape[0])

    def at(self, vertex: int) -> np.ndarray:
        hit = np.flatnonzero(self.vertices == vertex)
        if hit.size == 0:
            raise ValueError(f"vertex {vertex} is not tracked")
        return self.flux[:, hit[0]]

    def select(self, vertices) -> "FluxSeries":
        idx = [int(np.flatnonzero(self.vertices == v)[0]) for v in vertices]
        return FluxSeries(self.tau, self.T, self.vertices[idx], self.flux[:, idx], self.sigma[idx],
                          self.excitation_degree)

    def to_csv(self, path, vertices=None) -> None:
        s = self if vertices is None else self.select(vertices)
        t = s.t
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "vertex", "flux"])
            for n in range(t.size):
                for j, v in enumerate(s.vertices):
                    w.writerow([repr(float(t[n])), int(v), repr(float(s.flux[n, j]))])


def _group_masses(cfg: CoefficientSet, orders):
    mesh = cfg.mesh
    rho = cfg.rho_corners()
    out = []
    for a in orders:
        sel = (cfg.alpha.values == a).astype(float)
        out.append(lumped(mesh, rho * sel[:, None]))
    return out


def l1_step_solve(cfg: CoefficientSet, excitation: Excitation, tau: float, T: float,
                  tracked=None, block: int = BLOCK) -> FluxSeries:
    """Implicit L1 scheme with exact (full) history.

    At step ``n`` the Caputo term per order group ``g`` is
    ``tau**-a_g sum_{m<n} w_g[m] (U[n-m] - U[n-m-1])`` against the lumped
    ``rho`` mass of that group. The history is evaluated blockwise: terms
    older than the current block by one matrix product at block start,
    recent terms step by step.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if T < 10:
        raise ValueError("T must be at least 10")
    mesh = cfg.mesh
    n_steps = int(round(T / tau))
    if not math.isclose(n_steps * tau, T, rel_tol=1e-9):
        raise ValueError("T must be a multiple of tau")
    N = mesh.n_vertices
    B = mesh.boundary_vertices
    tracked = B if tracked is None else np.asarray(tracked, dtype=np.int64)
    tpos = mesh.boundary_position[tracked]
    if np.any(tpos < 0):
        raise ValueError("tracked vertices must lie on the boundary")

    W = L1Weights.build(cfg.alpha.values, tau, n_steps)
    c = W.scale()
    masses = _group_masses(cfg, W.orders)
    supports = [np.flatnonzero(mg > 0) for mg in masses]
    full = [s.size == N for s in supports]
    # system: stiffness + q + sum_g tau**-a w_g[0] rho_g
    lead = dict(zip(W.orders, c * W.table[:, 0]))
    coef = np.array([lead[a] for a in cfg.alpha.values])
    sys_ = assemble(mesh, cfg.sigma, cfg.q.at_corners(mesh) + cfg.rho_corners() * coef[:, None])
    A_B = sys_.matrix[B]

    DU = np.zeros((n_steps + 1, N))  # DU[j] = U[j] - U[j-1]
    U_prev = np.zeros(N)
    flux = np.zeros((n_steps + 1, tracked.size))
    H = [np.zeros((block, s.size)) for s in supports]
    tmp = [np.zeros(s.size) for s in supports]

    for s0 in range(1, n_steps + 1, block):
        nb = min(block, n_steps + 1 - s0)
        # old history for the whole block
        for g in range(len(W.orders)):
            H[g][:nb] = 0.0
            w = W.table[g]
            cols = supports[g]
            rows = s0 + np.arange(nb)
            for j0 in range(1, s0, CHUNK):
                j1 = min(s0, j0 + CHUNK)
                Wm = w[rows[:, None] - np.arange(j0, j1)[None, :]]
                D = DU[j0:j1] if full[g] else DU[j0:j1][:, cols]
                H[g][:nb] += Wm @ D
        for i in range(nb):
            n = s0 + i
            rhs = np.zeros(N)
            for g in range(len(W.orders)):
                w = W.table[g]
                cols = supports[g]
                h = H[g][i]
                if n > s0:
                    ws = np.ascontiguousarray(w[1:n - s0 + 1][::-1])
                    D = DU[s0:n] if full[g] else np.ascontiguousarray(DU[s0:n][:, cols])
                    h = h + kernels.history_dot(ws, D, tmp[g])
                Up = U_prev if full[g] else U_prev[cols]
                rhs[cols] += c[g] * masses[g][cols] * (w[0] * Up - h)
            U = sys_.solve(rhs, excitation.g(n * tau))
            r = A_B @ U - rhs[B]
            flux[n] = mesh.solve_boundary_mass(r)[tpos]
            DU[n] = U - U_prev
            U_prev = U
    return FluxSeries(tau, float(T), tracked, flux, cfg.sigma.values[tracked], excitation.M)


def _trapezoid(y, dx, axis=0):
    return np.trapezoid(y, dx=dx, axis=axis) if hasattr(np, "trapezoid") else np.trapz(y, dx=dx, axis=axis)


def laplace_at(series: FluxSeries, p: float = 1.0) -> np.ndarray:
    """Trapezoid ``int_0^T exp(-p t) flux(t) dt`` per tracked vertex."""
    t = series.t
    return _trapezoid(np.exp(-p * t)[:, None] * series.flux, series.tau)


@dataclass(frozen=True)
class WeightedIntegral:
    values: np.ndarray
    tail_estimate: float


def weighted_time_integral(series: FluxSeries, divide_sigma: bool = True) -> WeightedIntegral:
    """Trapezoid ``int_0^T d_nu U(t) t exp(-t) dt`` per tracked vertex.

    The tail beyond ``T`` is estimated from polynomial growth of degree
    ``M``: ``|flux(T)| T**-M int_T^inf t**(M+1) exp(-t) dt``.
    """
    t = series.t
    f = series.flux / series.sigma[None, :] if divide_sigma else series.flux
    vals = _trapezoid((t * np.exp(-t))[:, None] * f, series.tau)
    M = max(series.excitation_degree, 0)
    T = t[-1]
    # int_T^inf t**k e^-t dt = Gamma(k+1, T)
    k = M + 1
    tail_int = gammaincc(k + 1, T) * gamma(k + 1)
    fT = float(np.abs(f[-1]).max()) if f.size else 0.0
    tail = fT * T ** (-M) * tail_int if T > 0 else float("inf")
    return WeightedIntegral(vals, float(tail))


def write_flux_series(series: FluxSeries, out_dir, vertices=None) -> Path:
    path = Path(out_dir) / "flux_series.csv"
    series.to_csv(path, vertices)
    return path
