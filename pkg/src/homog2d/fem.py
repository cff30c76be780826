"""Q1 finite element machinery: quadrature, assembly, sparse solves and norms.

Vector fields with ``n`` components are stored component-major: the degree of
freedom of component ``alpha`` at node ``k`` is ``alpha * n_nodes + k``.
Coefficient tensors are indexed ``[..., alpha, beta, i, j]`` so that the
diffusion form reads ``a[alpha, beta, i, j] * d_j u^beta * d_i phi^alpha``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

__all__ = [
    "AssemblyError",
    "NumericError",
    "NormKind",
    "SUP",
    "DUAL_H1",
    "W1p",
    "SolutionField",
    "gauss_rule",
    "element_quadrature",
    "constrained_mask",
    "assemble_diffusion",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_load",
    "assemble_semilinear",
    "assemble_linearization",
    "pin_constrained",
    "solve_sparse",
    "norm",
    "dual_norm",
    "export_coo",
    "recover_gradient",
    "factorize",
    "dual_operator",
]

log = logging.getLogger(__name__)

CHUNK = 32768


class AssemblyError(RuntimeError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class NormKind:
    name: str
    p: float = 2.0

    def __post_init__(self):
        if self.name not in ("sup", "w1p", "dual_h1"):
            raise ValueError(f"unknown norm {self.name!r}")
        if not np.isfinite(self.p) or self.p < 1:
            raise ValueError("norm exponent must be finite and >= 1")


SUP = NormKind("sup")
DUAL_H1 = NormKind("dual_h1")


def W1p(p: float = 2.0) -> NormKind:
    return NormKind("w1p", float(p))


# ---------------------------------------------------------------------------
# reference element


def gauss_rule(order: int = 3):
    """Tensor Gauss-Legendre rule on [0,1]^2 with ``order`` points per direction."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def line_rule(order: int = 3):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def shape(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def shape_grad(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1)
    return np.stack([dxi, deta], axis=-1)


@dataclass
class ElementQuadrature:
    """Geometry of a block of elements at quadrature points."""

    elements: np.ndarray  # (E, 4) node indices
    x: np.ndarray  # (E, Q, 2)
    w: np.ndarray  # (E, Q) weights times |det J|
    N: np.ndarray  # (Q, 4)
    grad: np.ndarray  # (E, Q, 4, 2) physical gradients


def element_quadrature(mesh: Mesh, elems: slice | np.ndarray = slice(None), order: int = 3) -> ElementQuadrature:
    pts, wts = gauss_rule(order)
    N = shape(pts[:, 0], pts[:, 1])
    dN = shape_grad(pts[:, 0], pts[:, 1])  # (Q, 4, 2)
    conn = mesh.elements[elems]
    X = mesh.nodes[conn]  # (E, 4, 2)
    x = np.matmul(N, X)  # (E, Q, 2)
    J = np.matmul(np.swapaxes(X, 1, 2)[:, None], dN[None])  # J[e, q, d, r] = dx_d / dxi_r
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise AssemblyError("element with non-positive Jacobian determinant")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    grad = np.matmul(dN[None], inv)
    return ElementQuadrature(conn, x, det * wts[None, :], N, grad)


def _chunks(mesh: Mesh, size: int = CHUNK):
    for start in range(0, mesh.n_elements, size):
        yield slice(start, min(start + size, mesh.n_elements))


def constrained_mask(mesh: Mesh, n: int = 1) -> np.ndarray:
    """Boolean mask of Dirichlet-constrained DOFs (same node set per component)."""
    mask = np.zeros(n * mesh.n_nodes, dtype=bool)
    for a in range(n):
        mask[a * mesh.n_nodes + mesh.dirichlet_nodes] = True
    return mask


# ---------------------------------------------------------------------------
# fields


@dataclass
class SolutionField:
    """Nodal Q1 vector field on a mesh, component-major."""

    mesh: Mesh
    n: int
    values: np.ndarray
    constrained: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.n * self.mesh.n_nodes:
            raise ValueError("value vector has wrong length for mesh and component count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("solution field contains non-finite values")
        if self.constrained is None:
            self.constrained = constrained_mask(self.mesh, self.n)

    @classmethod
    def zeros(cls, mesh: Mesh, n: int = 1) -> "SolutionField":
        return cls(mesh, n, np.zeros(n * mesh.n_nodes))

    @classmethod
    def interpolate(cls, mesh: Mesh, fn: Callable, n: int = 1) -> "SolutionField":
        """Nodal interpolant of ``fn(x) -> (P, n)`` (or (P,) when n == 1)."""
        v = np.asarray(fn(mesh.nodes), dtype=float).reshape(mesh.n_nodes, n)
        field_ = cls(mesh, n, v.T.ravel())
        field_.values[field_.constrained] = 0.0
        return field_

    def copy(self, values=None) -> "SolutionField":
        return SolutionField(self.mesh, self.n, self.values.copy() if values is None else values, self.constrained)

    def nodal(self) -> np.ndarray:
        """Values as (n_nodes, n)."""
        return self.values.reshape(self.n, -1).T

    def evaluate(self, points) -> np.ndarray:
        """Field values (P, n) at arbitrary points of the domain."""
        e, s, t = self.mesh.locate(points)
        N = shape(s, t)
        nodal = self.nodal()[self.mesh.elements[e]]  # (P, 4, n)
        return np.einsum("pa,pan->pn", N, nodal)

    def gradient(self, points) -> np.ndarray:
        """Gradients (P, n, 2) at arbitrary points (element-interior limit)."""
        e, s, t = self.mesh.locate(points)
        conn = self.mesh.elements[e]
        X = self.mesh.nodes[conn]
        dN = shape_grad(s, t)  # (P, 4, 2)
        J = np.einsum("par,pad->pdr", dN, X)
        inv = np.linalg.inv(J)
        g = np.einsum("par,prd->pad", dN, inv)
        nodal = self.nodal()[conn]
        return np.einsum("pad,pan->pnd", g, nodal)

    def transfer(self, mesh: Mesh) -> "SolutionField":
        """Bilinear interpolation onto the nodes of another mesh of the same domain."""
        out = SolutionField(mesh, self.n, self.evaluate(mesh.nodes).T.ravel())
        out.values[out.constrained] = 0.0
        return out



def recover_gradient(u: SolutionField) -> np.ndarray:
    """Nodal gradients (n_nodes, n, 2) by averaging element gradients over each node's patch."""
    mesh = u.mesh
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    dN = shape_grad(corners[:, 0], corners[:, 1])  # (corner, a, r)
    conn = mesh.elements
    X = mesh.nodes[conn]
    J = np.einsum("car,ead->ecdr", dN, X)
    g = np.einsum("car,ecrd->ecad", dN, np.linalg.inv(J))  # (E, corner, a, d)
    vals = u.nodal()[conn]  # (E, 4, n)
    grads = np.einsum("ecad,ean->ecnd", g, vals)  # gradient of element e at its corner c
    out = np.zeros((mesh.n_nodes, u.n, 2))
    np.add.at(out, conn.ravel(), grads.reshape(-1, u.n, 2))
    count = np.bincount(conn.ravel(), minlength=mesh.n_nodes)
    return out / count[:, None, None]

# ---------------------------------------------------------------------------
# assembly


def _as_sampler(coeff, n):
    if callable(coeff):
        return coeff
    arr = np.asarray(coeff, dtype=float)
    if arr.shape == (2, 2):
        arr = arr.reshape(1, 1, 2, 2)
    if arr.shape != (n, n, 2, 2):
        raise AssemblyError(f"constant tensor must have shape ({n},{n},2,2), got {arr.shape}")
    return lambda x: np.broadcast_to(arr, (len(x), n, n, 2, 2))


def _scatter_matrix(mesh, n, conn, local, shape_):
    # local: (E, n, 4, n, 4)
    E = conn.shape[0]
    N = mesh.n_nodes
    dof = conn[:, None, :] + (np.arange(n) * N)[None, :, None]  # (E, n, 4)
    rows = np.broadcast_to(dof[:, :, :, None, None], (E, n, 4, n, 4))
    cols = np.broadcast_to(dof[:, None, None, :, :], (E, n, 4, n, 4))
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=shape_).tocsr()


def assemble_diffusion(mesh: Mesh, coeff, n: int = 1, order: int = 3) -> sp.csr_matrix:
    """Galerkin matrix of  int a^{ab}_{ij}(x) d_j u^b d_i phi^a dx.

    ``coeff`` is a callable ``x (P,2) -> (P,n,n,2,2)`` or a constant tensor.
    """
    sampler = _as_sampler(coeff, n)
    size = n * mesh.n_nodes
    A = sp.csr_matrix((size, size))
    for sl in _chunks(mesh):
        q = element_quadrature(mesh, sl, order)
        E, Q = q.w.shape
        a = np.asarray(sampler(q.x.reshape(-1, 2)), dtype=float)
        if not np.all(np.isfinite(a)):
            bad = np.argwhere(~np.isfinite(a.reshape(E * Q, -1)).all(axis=1))[0, 0]
            raise AssemblyError(f"coefficient sampler returned non-finite values at x={q.x.reshape(-1, 2)[bad]}")
        a = a.reshape(E, Q, n, n, 2, 2)
        local = np.einsum("eq,eqxyij,eqai,eqbj->exayb", q.w, a, q.grad, q.grad, optimize=True)
        A = A + _scatter_matrix(mesh, n, q.elements, local, (size, size))
    return A


def assemble_stiffness(mesh: Mesh, n: int = 1) -> sp.csr_matrix:
    eye = np.zeros((n, n, 2, 2))
    for a in range(n):
        eye[a, a] = np.eye(2)
    return assemble_diffusion(mesh, eye, n)


def assemble_mass(mesh: Mesh, n: int = 1, order: int = 3) -> sp.csr_matrix:
    size = n * mesh.n_nodes
    M = sp.csr_matrix((size, size))
    eye = np.eye(n)
    for sl in _chunks(mesh):
        q = element_quadrature(mesh, sl, order)
        m = np.einsum("eq,qa,qb->eab", q.w, q.N, q.N)
        local = np.einsum("eab,xy->exayb", m, eye)
        M = M + _scatter_matrix(mesh, n, q.elements, local, (size, size))
    return M


def assemble_load(mesh: Mesh, fn: Callable, n: int = 1, order: int = 3) -> np.ndarray:
    """Vector of  int f^a(x) phi_k(x) dx  for ``fn(x) -> (P, n)``."""
    out = np.zeros(n * mesh.n_nodes)
    for sl in _chunks(mesh):
        q = element_quadrature(mesh, sl, order)
        E, Q = q.w.shape
        f = np.asarray(fn(q.x.reshape(-1, 2)), dtype=float).reshape(E, Q, n)
        loc = np.einsum("eq,eqx,qa->exa", q.w, f, q.N)
        _scatter_vector(out, mesh, n, q.elements, loc)
    return out


def _scatter_vector(out, mesh, n, conn, loc):
    dof = conn[:, None, :] + (np.arange(n) * mesh.n_nodes)[None, :, None]
    out += np.bincount(dof.ravel(), weights=loc.ravel(), minlength=out.size)


def _field_at(values, n, N_nodes, conn, N):
    nodal = values.reshape(n, N_nodes)[:, conn]  # (n, E, 4)
    return np.einsum("xea,qa->eqx", nodal, N)


def _call(fn, x, u, what, expect):
    try:
        out = np.asarray(fn(x, u), dtype=float)
    except Exception as exc:
        raise AssemblyError(f"{what} evaluation failed near x={x[0]}: {exc}") from exc
    try:
        out = np.broadcast_to(out, expect)
    except ValueError as exc:
        raise AssemblyError(f"{what} returned shape {out.shape}, expected {expect}") from exc
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out.reshape(len(x), -1)).all(axis=1))[0, 0]
        raise AssemblyError(f"{what} returned non-finite value at x={x[bad]}, u={u[bad]}")
    return out


def _robin_facets(mesh):
    from .mesh import ROBIN

    return mesh.boundary_facets[mesh.facet_tags == ROBIN]


def _facet_quadrature(mesh, facets, order=3):
    s, w = line_rule(order)
    X = mesh.nodes[facets]  # (F, 2, 2)
    L = np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
    x = X[:, None, 0] * (1 - s)[None, :, None] + X[:, None, 1] * s[None, :, None]
    N = np.stack([1 - s, s], axis=1)  # (Q, 2)
    return x, L[:, None] * w[None, :], N


def _values(u):
    return u.values if isinstance(u, SolutionField) else np.asarray(u, dtype=float)


def assemble_semilinear(u: SolutionField, model, mesh: Mesh | None = None, order: int = 3) -> np.ndarray:
    """Discrete  <B(u), phi_k>  including the Robin term  -int_Gamma b_0 phi ds.

    Entries belonging to Dirichlet-constrained DOFs are zeroed.
    """
    mesh = mesh or u.mesh
    n = u.n
    vals = _values(u)
    out = np.zeros(n * mesh.n_nodes)
    flux = getattr(model, "flux", None)
    reaction = getattr(model, "reaction", None)
    if flux is not None or reaction is not None:
        for sl in _chunks(mesh):
            q = element_quadrature(mesh, sl, order)
            E, Q = q.w.shape
            U = _field_at(vals, n, mesh.n_nodes, q.elements, q.N).reshape(E * Q, n)
            X = q.x.reshape(E * Q, 2)
            loc = np.zeros((E, n, 4))
            if flux is not None:
                bi = _call(flux, X, U, "flux b_i", (E * Q, n, 2)).reshape(E, Q, n, 2)
                loc += np.einsum("eq,eqxi,eqai->exa", q.w, bi, q.grad)
            if reaction is not None:
                b = _call(reaction, X, U, "reaction b", (E * Q, n)).reshape(E, Q, n)
                loc += np.einsum("eq,eqx,qa->exa", q.w, b, q.N)
            _scatter_vector(out, mesh, n, q.elements, loc)
    robin = getattr(model, "robin", None)
    facets = _robin_facets(mesh)
    if robin is not None and len(facets):
        x, w, N = _facet_quadrature(mesh, facets, order)
        F, Q = w.shape
        U = np.einsum("xfa,qa->fqx", vals.reshape(n, -1)[:, facets], N).reshape(F * Q, n)
        b0 = _call(robin, x.reshape(-1, 2), U, "robin b_0", (F * Q, n)).reshape(F, Q, n)
        loc = -np.einsum("fq,fqx,qa->fxa", w, b0, N)
        dof = facets[:, None, :] + (np.arange(n) * mesh.n_nodes)[None, :, None]
        out += np.bincount(dof.ravel(), weights=loc.ravel(), minlength=out.size)
    out[constrained_mask(mesh, n)] = 0.0
    return out


def assemble_linearization(u: SolutionField, model, mesh: Mesh | None = None, order: int = 3) -> sp.csr_matrix:
    """Discrete  B'(u)  (unpinned; combine with the diffusion matrix, then pin)."""
    mesh = mesh or u.mesh
    n = u.n
    vals = _values(u)
    size = n * mesh.n_nodes
    J = sp.csr_matrix((size, size))
    dflux = getattr(model, "dflux", None)
    dreaction = getattr(model, "dreaction", None)
    if dflux is not None or dreaction is not None:
        for sl in _chunks(mesh):
            q = element_quadrature(mesh, sl, order)
            E, Q = q.w.shape
            U = _field_at(vals, n, mesh.n_nodes, q.elements, q.N).reshape(E * Q, n)
            X = q.x.reshape(E * Q, 2)
            loc = np.zeros((E, n, 4, n, 4))
            if dflux is not None:
                db = _call(dflux, X, U, "flux derivative", (E * Q, n, 2, n)).reshape(E, Q, n, 2, n)
                loc += np.einsum("eq,eqxiy,eqai,qb->exayb", q.w, db, q.grad, q.N, optimize=True)
            if dreaction is not None:
                db = _call(dreaction, X, U, "reaction derivative", (E * Q, n, n)).reshape(E, Q, n, n)
                loc += np.einsum("eq,eqxy,qa,qb->exayb", q.w, db, q.N, q.N, optimize=True)
            J = J + _scatter_matrix(mesh, n, q.elements, loc, (size, size))
    drobin = getattr(model, "drobin", None)
    facets = _robin_facets(mesh)
    if drobin is not None and len(facets):
        x, w, N = _facet_quadrature(mesh, facets, order)
        F, Q = w.shape
        U = np.einsum("xfa,qa->fqx", vals.reshape(n, -1)[:, facets], N).reshape(F * Q, n)
        db0 = _call(drobin, x.reshape(-1, 2), U, "robin derivative", (F * Q, n, n)).reshape(F, Q, n, n)
        loc = -np.einsum("fq,fqxy,qa,qb->fxayb", w, db0, N, N)
        dof = facets[:, None, :] + (np.arange(n) * mesh.n_nodes)[None, :, None]
        rows = np.broadcast_to(dof[:, :, :, None, None], loc.shape)
        cols = np.broadcast_to(dof[:, None, None, :, :], loc.shape)
        J = J + sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())), shape=(size, size)).tocsr()
    return J


def pin_constrained(A: sp.spmatrix, mask: np.ndarray) -> sp.csr_matrix:
    """Zero constrained rows and columns and put 1 on their diagonal."""
    keep = sp.diags((~mask).astype(float))
    A = keep @ sp.csr_matrix(A) @ keep + sp.diags(mask.astype(float))
    A = sp.csr_matrix(A)
    A.eliminate_zeros()
    return A


# ---------------------------------------------------------------------------
# solves and norms


def factorize(A: sp.spmatrix, spd: bool = False):
    """Sparse LU of a square matrix; raises :class:`NumericError` when singular.

    ``spd=True`` promises a symmetric positive definite matrix and turns off
    pivoting, which keeps the fill-reducing ordering intact.
    """
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise NumericError(f"matrix is not square: {A.shape}")
    try:
        # FEM matrices are structurally symmetric: minimum degree on A^T + A fills far less
        if spd:
            return spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options=dict(SymmetricMode=True))
        return spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise NumericError(f"sparse LU failed: {exc}") from exc


def solve_sparse(A: sp.spmatrix, rhs: np.ndarray, rtol: float = 1e-10, method: str = "direct") -> np.ndarray:
    """Solve ``A x = rhs`` and check the relative residual against ``rtol``."""
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise NumericError("right-hand side has non-finite entries")
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return np.zeros_like(rhs)
    if method == "direct":
        x = factorize(A).solve(rhs)
    elif method == "cg":
        d = A.diagonal()
        if np.any(d <= 0):
            raise NumericError("CG needs a positive diagonal")
        M = sp.diags(1.0 / d)
        x, info = spla.cg(A, rhs, rtol=rtol * 1e-2, atol=0.0, M=M, maxiter=20 * A.shape[0])
        if info != 0:
            raise NumericError(f"conjugate gradient stopped at iteration {info} without converging")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(x)):
        raise NumericError("solution has non-finite entries (singular matrix?)")
    res = np.linalg.norm(A @ x - rhs)
    if res > rtol * bnorm:
        raise NumericError(f"residual {res:.3e} exceeds {rtol:.1e} * |rhs|")
    return x


class DualNormOperator:
    """sqrt(f^T K^{-1} f) with K the H^1 Gram matrix on the constrained space."""

    def __init__(self, mesh: Mesh, n: int, mask: np.ndarray):
        self.mask = mask
        K = assemble_stiffness(mesh, n) + assemble_mass(mesh, n)
        self.K = pin_constrained(K, mask)
        self._lu = factorize(self.K, spd=True)

    def riesz(self, f: np.ndarray) -> np.ndarray:
        g = np.where(self.mask, 0.0, f)
        return self._lu.solve(g)

    def __call__(self, f: np.ndarray) -> float:
        g = np.where(self.mask, 0.0, f)
        return float(np.sqrt(max(g @ self._lu.solve(g), 0.0)))


@lru_cache(maxsize=4)
def _dual_operator(mesh: Mesh, n: int, mask_bytes: bytes) -> DualNormOperator:
    mask = np.frombuffer(mask_bytes, dtype=bool).copy()
    return DualNormOperator(mesh, n, mask)


def dual_operator(mesh: Mesh, n: int, mask: np.ndarray | None = None) -> DualNormOperator:
    if mask is None:
        mask = constrained_mask(mesh, n)
    return _dual_operator(mesh, n, np.ascontiguousarray(mask, dtype=bool).tobytes())


def dual_norm(f: np.ndarray, mesh: Mesh, n: int = 1, mask: np.ndarray | None = None) -> float:
    return dual_operator(mesh, n, mask)(f)


def norm(u, kind: NormKind, mesh: Mesh | None = None, n: int | None = None) -> float:
    """Discrete sup, W^{1,p} or dual H^1 norm.

    ``u`` is a :class:`SolutionField` or a raw component-major vector (then
    ``mesh`` and ``n`` are required).  For ``DUAL_H1`` the vector is read as a
    functional (a residual), for the other kinds as nodal values.
    """
    if isinstance(u, SolutionField):
        vals, mesh, n, mask = u.values, u.mesh, u.n, u.constrained
    else:
        vals = np.asarray(u, dtype=float)
        if mesh is None:
            raise ValueError("mesh required for raw vectors")
        n = n or vals.size // mesh.n_nodes
        mask = constrained_mask(mesh, n)
    if not np.all(np.isfinite(vals)):
        raise NumericError("norm of a non-finite vector")
    if kind.name == "sup":
        return float(np.max(np.abs(vals), initial=0.0))
    if kind.name == "dual_h1":
        return dual_norm(vals, mesh, n, mask)
    p = kind.p
    total = 0.0
    for sl in _chunks(mesh):
        q = element_quadrature(mesh, sl)
        nodal = vals.reshape(n, mesh.n_nodes)[:, q.elements]  # (n, E, 4)
        U = np.einsum("xea,qa->eqx", nodal, q.N)
        G = np.einsum("xea,eqad->eqxd", nodal, q.grad)
        total += float(np.einsum("eq,eqx->", q.w, np.abs(U) ** p + np.sum(np.abs(G) ** p, axis=-1)))
    return total ** (1.0 / p)


def export_coo(A: sp.spmatrix, path) -> None:
    """Write ``row col value`` lines (0-based), duplicates summed."""
    C = sp.coo_matrix(sp.csr_matrix(A))
    order = np.lexsort((C.col, C.row))
    with open(path, "w", newline="\n") as fh:
        fh.write(f"% {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
