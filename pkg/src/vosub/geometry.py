"""Meshes, fields, order maps and excitations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import AssumptionViolation
from . import kernels

VERTEX = "vertex"
TRIANGLE = "triangle"


# --------------------------------------------------------------------------
# Mesh


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of a bounded planar domain.

    Triangles are stored counter-clockwise. ``boundary_edges`` are ordered
    along each boundary loop with the domain on their left, so the outward
    normal of edge ``(a, b)`` is ``(dy, -dx) / |b - a|``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    triangle_tags: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        """Boundary vertex indices in loop order (first vertex of each edge)."""
        return self.boundary_edges[:, 0].copy()

    @cached_property
    def boundary_position(self) -> np.ndarray:
        """Map vertex index -> position in :attr:`boundary_vertices` (-1 inside)."""
        pos = np.full(self.n_vertices, -1, dtype=np.int64)
        pos[self.boundary_vertices] = np.arange(self.boundary_vertices.size)
        return pos

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_position < 0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return np.hypot(e[:, 0], e[:, 1])

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        e = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return np.column_stack([e[:, 1], -e[:, 0]]) / self.edge_lengths[:, None]

    @cached_property
    def h(self) -> float:
        """Largest edge length."""
        p = self.vertices[self.triangles]
        e = p - np.roll(p, 1, axis=1)
        return float(np.sqrt((e**2).sum(axis=2)).max())

    @cached_property
    def _bedge_local(self) -> np.ndarray:
        pos = self.boundary_position
        return np.column_stack([pos[self.boundary_edges[:, 0]], pos[self.boundary_edges[:, 1]]])

    @cached_property
    def boundary_mass(self) -> sp.csc_matrix:
        """Consistent P1 mass matrix of the boundary curve."""
        le = self.edge_lengths
        a, b = self._bedge_local.T
        rows = np.concatenate([a, b, a, b])
        cols = np.concatenate([a, b, b, a])
        vals = np.concatenate([le / 3, le / 3, le / 6, le / 6])
        nb = self.boundary_vertices.size
        return sp.csc_matrix((vals, (rows, cols)), shape=(nb, nb))

    @cached_property
    def _boundary_mass_lu(self):
        return splu(self.boundary_mass)

    def solve_boundary_mass(self, r: np.ndarray) -> np.ndarray:
        return self._boundary_mass_lu.solve(np.asarray(r, dtype=float))

    def boundary_integral(self, g: np.ndarray) -> float:
        """Edge-length trapezoid of boundary values ``g``."""
        a, b = self._bedge_local.T
        return float(np.sum(self.edge_lengths * 0.5 * (g[a] + g[b])))

    @cached_property
    def tags(self) -> np.ndarray:
        return np.unique(self.triangle_tags)

    def tag_area(self, tag: int) -> float:
        return float(self.areas[self.triangle_tags == tag].sum())

    def with_tags(self, tags: np.ndarray) -> "Mesh":
        tags = np.asarray(tags, dtype=np.int64)
        if tags.shape != (self.n_triangles,):
            raise ValueError("need one tag per triangle")
        return Mesh(self.vertices, self.triangles, self.boundary_edges, tags)

    def max_angle(self) -> float:
        """Largest interior angle in radians."""
        p = self.vertices[self.triangles]
        worst = 0.0
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            c = (u * v).sum(1) / np.sqrt((u * u).sum(1) * (v * v).sum(1))
            worst = max(worst, float(np.arccos(np.clip(c, -1, 1)).max()))
        return worst

    def validate(self) -> None:
        if np.any(self.areas <= 0):
            raise ValueError("triangle with nonpositive signed area")
        edges = _triangle_edges(self.triangles)
        key = np.sort(edges, axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise ValueError("non-manifold edge")
        once = {tuple(e) for e in edges[counts[inv.ravel()] == 1]}
        got = {tuple(e) for e in self.boundary_edges}
        if once != got:
            raise ValueError("boundary edges do not match single-triangle edges")
        nxt = dict(zip(self.boundary_edges[:, 0], self.boundary_edges[:, 1]))
        if len(nxt) != len(self.boundary_edges) or set(nxt) != set(nxt.values()):
            raise ValueError("boundary edges do not form closed loops")
        if self.triangle_tags.shape != (self.n_triangles,):
            raise ValueError("tag array length mismatch")

    def nearest_boundary(self, x0) -> tuple[int, float]:
        bv = self.boundary_vertices
        d = np.hypot(*(self.vertices[bv] - np.asarray(x0, dtype=float)).T)
        # ties -> lowest vertex index
        best = np.flatnonzero(d == d.min())
        i = int(bv[best].min())
        return i, float(d.min())


def _triangle_edges(triangles):
    return np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])


def mesh_from_triangles(vertices, triangles, tags=None) -> Mesh:
    """Build a :class:`Mesh`, orienting triangles and tracing boundary loops."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.array(triangles, dtype=np.int64)
    p = vertices[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    edges = _triangle_edges(triangles)
    key = np.sort(edges, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = edges[counts[inv.ravel()] == 1]
    nxt = {int(a): int(b) for a, b in bnd}
    ordered = []
    left = set(nxt)
    while left:
        start = min(left)
        v = start
        while True:
            left.discard(v)
            ordered.append((v, nxt[v]))
            v = nxt[v]
            if v == start:
                break
    if tags is None:
        tags = np.zeros(triangles.shape[0], dtype=np.int64)
    return Mesh(vertices, np.ascontiguousarray(triangles), np.array(ordered, dtype=np.int64),
                np.asarray(tags, dtype=np.int64))


def build_disk_mesh(refinement_level: int) -> Mesh:
    """Ring triangulation of the unit disk.

    ``2**(level+1)`` concentric rings; ring ``k`` carries ``6k`` equally
    spaced vertices. Between consecutive rings each sextant is filled with
    a strip of ``2k - 1`` triangles whose apex always projects inside the
    opposite edge, so no angle exceeds a right angle. Every ring radius
    ``j / 2**(level+1)`` and every multiple of 60 degrees is resolved
    exactly by mesh edges.
    """
    if refinement_level < 0:
        raise ValueError("refinement_level must be >= 0")
    K = 2 ** (refinement_level + 1)
    start = [0, 1]
    for k in range(1, K + 1):
        start.append(start[-1] + 6 * k)
    verts = [(0.0, 0.0)]
    for k in range(1, K + 1):
        th = 2 * np.pi * np.arange(6 * k) / (6 * k)
        r = k / K
        verts.extend(zip(r * np.cos(th), r * np.sin(th)))
    verts = np.array(verts)

    def ring(k, i):
        return start[k] + i % (6 * k)

    tris = [(0, ring(1, i), ring(1, i + 1)) for i in range(6)]
    for k in range(2, K + 1):
        for s in range(6):
            for j in range(k):
                tris.append((ring(k, s * k + j), ring(k, s * k + j + 1), ring(k - 1, s * (k - 1) + j)))
            for j in range(k - 1):
                tris.append((ring(k - 1, s * (k - 1) + j), ring(k, s * k + j + 1),
                             ring(k - 1, s * (k - 1) + j + 1)))
    tris = np.array(tris, dtype=np.int64)
    outer = np.arange(start[K], start[K + 1])
    bedges = np.column_stack([outer, np.roll(outer, -1)])
    return Mesh(verts, tris, bedges, np.zeros(len(tris), dtype=np.int64))


def build_square_mesh(n: int) -> Mesh:
    """Unit square, ``n x n`` cells each cut into two right triangles."""
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return mesh_from_triangles(verts, tris)


def tag_rings_sectors(mesh: Mesh, radii: Sequence[float] = (), n_sectors: int = 1,
                      offset: float = 0.0) -> Mesh:
    """Tag triangles by centroid annulus and angular sector.

    Tag = ``ring * n_sectors + sector``; ring 0 is the innermost.
    """
    c = mesh.centroids
    r = np.hypot(c[:, 0], c[:, 1])
    th = np.mod(np.arctan2(c[:, 1], c[:, 0]) - offset, 2 * np.pi)
    ring = np.searchsorted(np.sort(np.asarray(radii, dtype=float)), r, side="right")
    sector = np.minimum((th / (2 * np.pi) * n_sectors).astype(np.int64), n_sectors - 1)
    return mesh.with_tags(ring * n_sectors + sector)


def boundary_point_index(mesh: Mesh, x0) -> int:
    """Nearest boundary vertex to ``x0`` (ties to the lowest index)."""
    return mesh.nearest_boundary(x0)[0]


# --------------------------------------------------------------------------
# mesh files


def write_mesh(mesh: Mesh, stem) -> None:
    stem = Path(stem)
    onb = mesh.boundary_position >= 0
    with open(stem.with_suffix(".node"), "w") as fh:
        fh.write("# id x y boundary_flag\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i} {float(x)!r} {float(y)!r} {int(onb[i])}\n")
    with open(stem.with_suffix(".ele"), "w") as fh:
        fh.write("# id v1 v2 v3 tag\n")
        for i, (t, g) in enumerate(zip(mesh.triangles, mesh.triangle_tags)):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {g}\n")


def _read_table(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(line.split())
    return rows


def read_mesh(stem) -> Mesh:
    stem = Path(stem)
    nodes = _read_table(stem.with_suffix(".node"))
    eles = _read_table(stem.with_suffix(".ele"))
    ids = np.array([int(r[0]) for r in nodes])
    verts = np.empty((len(nodes), 2))
    verts[ids] = [[float(r[1]), float(r[2])] for r in nodes]
    eids = np.array([int(r[0]) for r in eles])
    tris = np.empty((len(eles), 3), dtype=np.int64)
    tags = np.empty(len(eles), dtype=np.int64)
    tris[eids] = [[int(v) for v in r[1:4]] for r in eles]
    tags[eids] = [int(r[4]) if len(r) > 4 else 0 for r in eles]
    mesh = mesh_from_triangles(verts, tris, tags)
    flags = np.zeros(len(nodes), dtype=bool)
    flags[ids] = [bool(int(r[3])) if len(r) > 3 else False for r in nodes]
    if not np.array_equal(flags, mesh.boundary_position >= 0):
        raise ValueError(f"{stem}: boundary flags disagree with mesh topology")
    return mesh


# --------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    placement: str = VERTEX

    def __post_init__(self):
        if self.placement not in (VERTEX, TRIANGLE):
            raise ValueError(f"unknown placement {self.placement!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def constant(cls, mesh: Mesh, value: float, placement: str = VERTEX) -> "ScalarField":
        n = mesh.n_vertices if placement == VERTEX else mesh.n_triangles
        return cls(np.full(n, float(value)), placement)

    @classmethod
    def from_function(cls, mesh: Mesh, f: Callable, placement: str = VERTEX) -> "ScalarField":
        pts = mesh.vertices if placement == VERTEX else mesh.centroids
        return cls(np.broadcast_to(f(pts[:, 0], pts[:, 1]), pts.shape[:1]).astype(float), placement)

    def check(self, mesh: Mesh) -> "ScalarField":
        n = mesh.n_vertices if self.placement == VERTEX else mesh.n_triangles
        if self.values.shape != (n,):
            raise ValueError(f"{self.placement} field has {self.values.shape} values, mesh needs {n}")
        return self

    def on_triangles(self, mesh: Mesh) -> np.ndarray:
        if self.placement == TRIANGLE:
            return self.values
        return self.values[mesh.triangles].mean(axis=1)

    def at_corners(self, mesh: Mesh) -> np.ndarray:
        """Values at each triangle corner, shape ``(ntri, 3)``."""
        if self.placement == VERTEX:
            return self.values[mesh.triangles]
        return np.repeat(self.values[:, None], 3, axis=1)


def corner_values(mesh: Mesh, f) -> np.ndarray:
    """Normalize a field-like (ScalarField, scalar, vertex/corner array) to corners."""
    if isinstance(f, ScalarField):
        return f.at_corners(mesh)
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        return np.full((mesh.n_triangles, 3), float(f))
    if f.shape == (mesh.n_triangles, 3):
        return f
    if f.shape == (mesh.n_vertices,):
        return f[mesh.triangles]
    raise ValueError(f"cannot interpret array of shape {f.shape} as a field")


def lumped(mesh: Mesh, f) -> np.ndarray:
    """Vertex-quadrature load vector of a field-like ``f``."""
    return kernels.corner_lump(mesh.triangles, mesh.areas, np.ascontiguousarray(corner_values(mesh, f)),
                               mesh.n_vertices)


@dataclass(frozen=True, eq=False)
class OrderField:
    """Triangle-wise variable order with validated bounds."""

    field: ScalarField
    alpha_min: float = field(init=False)
    alpha_max: float = field(init=False)

    def __post_init__(self):
        v = self.field.values
        if self.field.placement != TRIANGLE:
            raise ValueError("OrderField needs a triangle-placed field; use OrderField.from_values")
        lo, hi = float(v.min()), float(v.max())
        if not (0.0 < lo and hi < 1.0):
            raise AssumptionViolation(f"order values must lie in (0, 1), got [{lo}, {hi}]")
        if not hi < 2.0 * lo:
            raise AssumptionViolation(
                f"order bounds violate max < 2*min (order-bound assumption): max={hi}, min={lo}")
        object.__setattr__(self, "alpha_min", lo)
        object.__setattr__(self, "alpha_max", hi)

    @classmethod
    def from_values(cls, mesh: Mesh, values, placement: str = TRIANGLE) -> "OrderField":
        f = ScalarField(values, placement).check(mesh)
        return cls(ScalarField(f.on_triangles(mesh), TRIANGLE))

    @classmethod
    def constant(cls, mesh: Mesh, alpha: float) -> "OrderField":
        return cls(ScalarField.constant(mesh, alpha, TRIANGLE))

    @classmethod
    def from_function(cls, mesh: Mesh, f: Callable) -> "OrderField":
        return cls(ScalarField.from_function(mesh, f, TRIANGLE))

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def power(self, p: float) -> np.ndarray:
        """``p ** alpha`` per triangle (``p = 0`` gives zeros)."""
        if p == 0:
            return np.zeros_like(self.values)
        return np.power(float(p), self.values)

    def distinct(self) -> np.ndarray:
        return np.unique(self.values)


@dataclass(frozen=True)
class Partition:
    """Piecewise-constant order: ``(tag, alpha_j)`` with strictly increasing alpha."""

    entries: tuple

    def __post_init__(self):
        ent = tuple((int(t), float(a)) for t, a in self.entries)
        tags = [t for t, _ in ent]
        if len(set(tags)) != len(tags):
            raise ValueError("partition tags must be distinct")
        al = [a for _, a in ent]
        if any(b <= a for a, b in zip(al, al[1:])):
            raise ValueError("partition orders must be strictly increasing")
        object.__setattr__(self, "entries", ent)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "Partition":
        """Accepts ``{tag: alpha}`` in any order; tags sharing a value are not merged."""
        return cls(tuple(sorted(mapping.items(), key=lambda kv: kv[1])))

    @property
    def tags(self):
        return [t for t, _ in self.entries]

    @property
    def orders(self):
        return [a for _, a in self.entries]


def build_partition_order(mesh: Mesh, partition: Partition) -> OrderField:
    lookup = dict(partition.entries)
    missing = set(mesh.tags.tolist()) - set(lookup)
    if missing:
        raise ValueError(f"mesh tags {sorted(missing)} absent from partition")
    for t in lookup:
        if mesh.tag_area(t) <= 0:
            raise ValueError(f"partition tag {t} has no triangles")
    vals = np.array([lookup[int(t)] for t in mesh.triangle_tags])
    return OrderField(ScalarField(vals, TRIANGLE))


def partition_of(mesh: Mesh, alpha: OrderField) -> Partition:
    """Per-tag constants of a tag-wise constant order field."""
    out = {}
    for t in mesh.tags:
        v = alpha.values[mesh.triangle_tags == t]
        if np.ptp(v) != 0:
            raise ValueError(f"order not constant on tag {t}")
        out[int(t)] = float(v[0])
    return Partition.from_mapping(out)


# --------------------------------------------------------------------------
# excitation


@dataclass(frozen=True, eq=False)
class Excitation:
    """Dirichlet data ``g(t, x) = sum_k t**k phi_k(x)``.

    ``terms`` holds ``(k, phi_k)`` with ``phi_k`` given on
    ``mesh.boundary_vertices`` (in that order).
    """

    terms: tuple

    def __post_init__(self):
        terms = tuple(sorted(((int(k), np.asarray(phi, dtype=float)) for k, phi in self.terms),
                             key=lambda kv: kv[0]))
        ks = [k for k, _ in terms]
        if not ks:
            raise ValueError("excitation needs at least one term")
        if any(k < 2 for k in ks):
            raise AssumptionViolation("excitation powers must be >= 2 (excitation-form assumption)")
        if len(set(ks)) != len(ks):
            raise ValueError("excitation powers must be distinct")
        object.__setattr__(self, "terms", terms)

    @property
    def M(self) -> int:
        return self.terms[-1][0]

    @property
    def n_boundary(self) -> int:
        return self.terms[0][1].size

    def phi(self, k: int) -> np.ndarray:
        for kk, ph in self.terms:
            if kk == k:
                return ph
        return np.zeros(self.n_boundary)

    def check_assumptions(self) -> None:
        if not np.any(self.terms[-1][1] != 0):
            raise AssumptionViolation("leading excitation profile phi_M vanishes identically")

    def ghat(self, p: float) -> np.ndarray:
        """Laplace transform ``sum_k k! p**(-k-1) phi_k`` at the boundary vertices."""
        if p <= 0:
            raise ValueError("p must be positive")
        return sum(math.factorial(k) * p ** (-k - 1) * ph for k, ph in self.terms)

    def dghat_dp(self, p: float) -> np.ndarray:
        return sum(-math.factorial(k) * (k + 1) * p ** (-k - 2) * ph for k, ph in self.terms)

    def g(self, t: float) -> np.ndarray:
        return sum(t**k * ph for k, ph in self.terms)

    def scaled(self, lam: float) -> "Excitation":
        return Excitation(tuple((k, lam * ph) for k, ph in self.terms))

    @classmethod
    def constant(cls, mesh: Mesh, coeffs: dict) -> "Excitation":
        nb = mesh.boundary_vertices.size
        return cls(tuple((k, np.full(nb, float(c))) for k, c in coeffs.items()))

    @classmethod
    def from_functions(cls, mesh: Mesh, funcs: dict) -> "Excitation":
        xy = mesh.vertices[mesh.boundary_vertices]
        return cls(tuple((k, np.broadcast_to(f(xy[:, 0], xy[:, 1]), (xy.shape[0],)).astype(float))
                         for k, f in funcs.items()))


def ghat(excitation: Excitation, p: float) -> np.ndarray:
    return excitation.ghat(p)
