"""Structured quadrilateral meshes for the unit cell and for the macroscopic domain.

Every mesh here is a single mapped block: the image of a uniform ``nx x ny``
grid on the reference square under the bilinear map through the four domain
corners.  Since that map restricted to any sub-square is again bilinear,
each element's own Q1 geometry coincides with the global block map, which
makes point location exact and cheap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "DomainSpec",
    "Mesh",
    "PeriodicMesh",
    "unit_square",
    "build_unit_cell_mesh",
    "build_domain_mesh",
    "boundary_distance",
    "export_mesh",
    "EDGE_NAMES",
]

# edge e joins vertex e and vertex e+1 (counterclockwise); for rectangles this is
# bottom, right, top, left
EDGE_NAMES = ("bottom", "right", "top", "left")

DIRICHLET = 0
ROBIN = 1


class GeometryError(ValueError):
    """Raised for degenerate or unsupported geometry."""


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class DomainSpec:
    """Polygonal domain with the Robin part of the boundary given by edge indices.

    ``kind`` is ``"rectangle"`` (axis aligned) or ``"polygon"``.  Only
    four-vertex polygons can be meshed; distance queries work for any simple
    polygon.
    """

    vertices: tuple
    robin_edges: frozenset = frozenset()
    kind: str = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("a domain needs at least three 2D vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite vertex coordinates")
        area = _signed_area(v)
        if abs(area) < 1e-14:
            raise GeometryError("degenerate polygon (zero area)")
        if area < 0:
            raise GeometryError("polygon must be positively oriented (counterclockwise)")
        nv = len(v)
        for a in range(nv):
            for b in range(a + 1, nv):
                if b == a + 1 or (a == 0 and b == nv - 1):
                    continue
                if _segments_intersect(v[a], v[(a + 1) % nv], v[b], v[(b + 1) % nv]):
                    raise GeometryError("polygon is self-intersecting")
        edges = frozenset(int(e) for e in self.robin_edges)
        bad = [e for e in edges if not 0 <= e < nv]
        if bad:
            raise GeometryError(f"robin edge indices out of range: {sorted(bad)}")
        if self.kind not in ("rectangle", "polygon"):
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        if self.kind == "rectangle":
            if nv != 4 or not (
                v[0, 1] == v[1, 1] and v[1, 0] == v[2, 0] and v[2, 1] == v[3, 1] and v[3, 0] == v[0, 0]
            ):
                raise GeometryError("rectangle vertices must be axis aligned, starting bottom-left")
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        object.__setattr__(self, "robin_edges", edges)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    @property
    def robin_everywhere(self) -> bool:
        return len(self.robin_edges) == self.n_edges

    @property
    def area(self) -> float:
        return _signed_area(self.points)

    @property
    def diameter(self) -> float:
        p = self.points
        return float(np.max(np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)))

    def with_robin(self, edges) -> "DomainSpec":
        return DomainSpec(self.vertices, frozenset(edges), self.kind)


def unit_square(robin_edges: Sequence[int] = ()) -> DomainSpec:
    return DomainSpec(((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)), frozenset(robin_edges), "rectangle")


def _bilinear(corners: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    c0, c1, c2, c3 = corners
    s = s[..., None]
    t = t[..., None]
    return (1 - s) * (1 - t) * c0 + s * (1 - t) * c1 + s * t * c2 + (1 - s) * t * c3


@dataclass(frozen=True, eq=False)
class Mesh:
    """Bilinear quadrilateral mesh of a mapped structured block.

    Nodes are numbered ``j * (nx + 1) + i`` and elements ``j * nx + i``;
    element connectivity is counterclockwise starting at the lower-left node.
    """

    corners: np.ndarray
    nx: int
    ny: int
    domain: DomainSpec | None = None
    robin_edges: frozenset = field(default_factory=frozenset)

    @cached_property
    def nodes(self) -> np.ndarray:
        s = np.arange(self.nx + 1) / self.nx
        t = np.arange(self.ny + 1) / self.ny
        S, T = np.meshgrid(s, t)
        return _bilinear(self.corners, S.ravel(), T.ravel())

    @cached_property
    def elements(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        i, j = i.ravel(), j.ravel()
        n0 = j * (self.nx + 1) + i
        return np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @cached_property
    def h(self) -> float:
        """Largest element diameter."""
        x = self.nodes[self.elements]
        d1 = np.linalg.norm(x[:, 2] - x[:, 0], axis=1)
        d2 = np.linalg.norm(x[:, 3] - x[:, 1], axis=1)
        return float(max(d1.max(), d2.max()))

    @cached_property
    def spacing(self) -> float:
        """Largest element edge length."""
        x = self.nodes[self.elements]
        return float(max(np.linalg.norm(x[:, (k + 1) % 4] - x[:, k], axis=1).max() for k in range(4)))

    def _edge_nodes(self, edge: int) -> np.ndarray:
        nx, ny = self.nx, self.ny
        if edge == 0:
            return np.arange(nx + 1)
        if edge == 1:
            return np.arange(ny + 1) * (nx + 1) + nx
        if edge == 2:
            return ny * (nx + 1) + np.arange(nx, -1, -1)
        return np.arange(ny, -1, -1) * (nx + 1)

    @cached_property
    def boundary_facets(self) -> np.ndarray:
        """Boundary segments as node pairs, oriented counterclockwise."""
        out = []
        for e in range(4):
            nd = self._edge_nodes(e)
            out.append(np.stack([nd[:-1], nd[1:]], axis=1))
        return np.concatenate(out)

    @cached_property
    def facet_edge(self) -> np.ndarray:
        return np.concatenate([np.full(self.nx if e % 2 == 0 else self.ny, e) for e in range(4)])

    @cached_property
    def facet_tags(self) -> np.ndarray:
        tags = np.full(len(self.boundary_facets), DIRICHLET, dtype=np.int8)
        for e in self.robin_edges:
            tags[self.facet_edge == e] = ROBIN
        return tags

    @cached_property
    def facet_normals(self) -> np.ndarray:
        x = self.nodes[self.boundary_facets]
        t = x[:, 1] - x[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        """Nodes touching any Dirichlet facet (corners between the parts included)."""
        f = self.boundary_facets[self.facet_tags == DIRICHLET]
        return np.unique(f.ravel())

    @cached_property
    def grid_index(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(self.n_nodes)
        return k % (self.nx + 1), k // (self.nx + 1)

    def locate(self, points: np.ndarray, tol: float = 1e-10):
        """Return ``(element, xi, eta)`` with local coordinates in [0, 1]^2.

        Points are clamped onto the block; callers are expected to pass points
        in the closure of the domain.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        c = self.corners
        if self.is_affine_rectangle:
            s = (p[:, 0] - c[0, 0]) / (c[1, 0] - c[0, 0])
            t = (p[:, 1] - c[0, 1]) / (c[3, 1] - c[0, 1])
        else:
            s, t = self._invert_bilinear(p, tol)
        s = np.clip(s, 0.0, 1.0) * self.nx
        t = np.clip(t, 0.0, 1.0) * self.ny
        i = np.minimum(np.floor(s).astype(np.int64), self.nx - 1)
        j = np.minimum(np.floor(t).astype(np.int64), self.ny - 1)
        return j * self.nx + i, s - i, t - j

    @cached_property
    def is_affine_rectangle(self) -> bool:
        c = self.corners
        return bool(c[0, 1] == c[1, 1] and c[1, 0] == c[2, 0] and c[2, 1] == c[3, 1] and c[3, 0] == c[0, 0])

    def _invert_bilinear(self, p: np.ndarray, tol: float):
        c0, c1, c2, c3 = self.corners
        s = np.full(len(p), 0.5)
        t = np.full(len(p), 0.5)
        for _ in range(50):
            r = _bilinear(self.corners, s, t) - p
            ds = ((1 - t)[:, None] * (c1 - c0) + t[:, None] * (c2 - c3))
            dt = ((1 - s)[:, None] * (c3 - c0) + s[:, None] * (c2 - c1))
            det = ds[:, 0] * dt[:, 1] - ds[:, 1] * dt[:, 0]
            us = (r[:, 0] * dt[:, 1] - r[:, 1] * dt[:, 0]) / det
            ut = (ds[:, 0] * r[:, 1] - ds[:, 1] * r[:, 0]) / det
            s -= us
            t -= ut
            if max(np.abs(us).max(initial=0), np.abs(ut).max(initial=0)) < tol:
                break
        return s, t


@dataclass(frozen=True, eq=False)
class PeriodicMesh(Mesh):
    """Uniform ``m x m`` mesh of [0,1]^2 with opposite faces identified."""

    @property
    def m(self) -> int:
        return self.nx

    @cached_property
    def dof_map(self) -> np.ndarray:
        i, j = self.grid_index
        return (j % self.ny) * self.nx + (i % self.nx)

    @property
    def n_dofs(self) -> int:
        return self.nx * self.ny

    @cached_property
    def prolongation(self):
        """Sparse ``n_nodes x n_dofs`` 0/1 matrix expanding periodic DOFs to nodes."""
        from scipy.sparse import csr_matrix

        n = self.n_nodes
        return csr_matrix((np.ones(n), (np.arange(n), self.dof_map)), shape=(n, self.n_dofs))


def build_unit_cell_mesh(m: int) -> PeriodicMesh:
    if int(m) != m or m < 2:
        raise ValueError(f"invalid resolution m={m!r}: need an integer m >= 2")
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return PeriodicMesh(corners, int(m), int(m))


def build_domain_mesh(spec: DomainSpec, h_target: float) -> Mesh:
    """Mesh a four-sided domain with element edges no longer than ``h_target``."""
    if not h_target > 0:
        raise ValueError("h_target must be positive")
    v = spec.points
    if len(v) != 4:
        raise GeometryError("only four-sided domains can be meshed (single mapped block)")
    for k in range(4):
        if _cross(v[k] - v[k - 1], v[(k + 1) % 4] - v[k]) <= 0:
            raise GeometryError("mapped-block meshing needs a strictly convex quadrilateral")
    lengths = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    # tiny slack so exact divisors (1 / (1/8)) are not rounded up
    nx = max(1, math.ceil(max(lengths[0], lengths[2]) / h_target - 1e-9))
    ny = max(1, math.ceil(max(lengths[1], lengths[3]) / h_target - 1e-9))
    return Mesh(v.copy(), nx, ny, spec, frozenset(spec.robin_edges))


def _cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def boundary_distance(spec: DomainSpec, x) -> np.ndarray | float:
    """Euclidean distance to the polygon boundary; 0 for points outside.

    Accepts a single point or an array of shape (P, 2).
    """
    p = np.asarray(x, dtype=float)
    scalar = p.ndim == 1
    p = np.atleast_2d(p)
    v = spec.points
    a = v
    b = np.roll(v, -1, axis=0)
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pek,ek->pe", ap, ab) / np.einsum("ek,ek->e", ab, ab), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    d = np.linalg.norm(p[:, None, :] - closest, axis=-1).min(axis=1)
    d = np.where(_inside(v, p), d, 0.0)
    return float(d[0]) if scalar else d


def _inside(v: np.ndarray, p: np.ndarray) -> np.ndarray:
    # even-odd ray casting; boundary points count as inside
    x, y = p[:, 0], p[:, 1]
    inside = np.zeros(len(p), dtype=bool)
    nv = len(v)
    for k in range(nv):
        x0, y0 = v[k]
        x1, y1 = v[(k + 1) % nv]
        cond = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= cond & (x < xc)
    return inside | _on_boundary(v, p)


def _on_boundary(v: np.ndarray, p: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    a = v
    b = np.roll(v, -1, axis=0)
    ab = b - a
    ap = p[:, None, :] - a[None]
    t = np.clip(np.einsum("pek,ek->pe", ap, ab) / np.einsum("ek,ek->e", ab, ab), 0.0, 1.0)
    d = np.linalg.norm(ap - t[..., None] * ab[None], axis=-1).min(axis=1)
    return d <= tol


def export_mesh(mesh: Mesh, path) -> None:
    """Write nodes, elements and tagged boundary facets as plain text records."""
    tag_name = {DIRICHLET: "dirichlet", ROBIN: "robin"}
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# nodes {mesh.n_nodes}\n")
        for k, (x, y) in enumerate(mesh.nodes):
            fh.write(f"node {k} {float(x)!r} {float(y)!r}\n")
        fh.write(f"# elements {mesh.n_elements}\n")
        for k, e in enumerate(mesh.elements):
            fh.write(f"element {k} {e[0]} {e[1]} {e[2]} {e[3]}\n")
        fh.write(f"# facets {len(mesh.boundary_facets)}\n")
        for k, (f, t, n) in enumerate(zip(mesh.boundary_facets, mesh.facet_tags, mesh.facet_normals)):
            fh.write(f"facet {k} {f[0]} {f[1]} {tag_name[int(t)]} {float(n[0])!r} {float(n[1])!r}\n")
