"""Periodic cell problems, homogenized tensor and flux correctors."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import NumericError, element_quadrature, assemble_diffusion, assemble_mass, factorize, shape, shape_grad
from .mesh import PeriodicMesh, build_unit_cell_mesh

__all__ = [
    "CoercivityError",
    "PeriodicCoefficientField",
    "constant_field",
    "laminate_field",
    "checkerboard_field",
    "trigonometric_field",
    "tabulated_field",
    "CorrectorSet",
    "HomogenizedTensor",
    "FluxCorrectorSet",
    "solve_cell_problems",
    "homogenized_tensor",
    "flux_correctors",
    "verify_coercivity",
    "weak_flux_residual",
    "cache_path",
    "legendre_form",
    "save_cell_cache",
    "load_cell_cache",
    "CACHE_VERSION",
]

log = logging.getLogger(__name__)

CACHE_VERSION = 1


class CoercivityError(ValueError):
    pass


def _scalar_tensor(values: np.ndarray) -> np.ndarray:
    out = np.zeros(values.shape + (1, 1, 2, 2))
    out[..., 0, 0, 0, 0] = values
    out[..., 0, 0, 1, 1] = values
    return out


def legendre_form(a: np.ndarray) -> np.ndarray:
    """(..., n, n, 2, 2) -> symmetrized (..., 2n, 2n) matrix on xi_i^alpha."""
    n = a.shape[-3]
    L = np.moveaxis(a, -2, -3).reshape(a.shape[:-4] + (2 * n, 2 * n))
    return 0.5 * (L + np.swapaxes(L, -1, -2))


@dataclass(frozen=True, eq=False)
class PeriodicCoefficientField:
    """Z^2-periodic coefficient tensor  y -> a[alpha, beta, i, j](y).

    ``sampler`` receives points already folded into [0,1)^2 and returns an
    array of shape (P, n, n, 2, 2).
    """

    sampler: Callable
    n: int
    name: str
    params: dict = field(default_factory=dict)

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.asarray(self.sampler(np.mod(y, 1.0)), dtype=float).reshape(len(y), self.n, self.n, 2, 2)

    def scaled(self, eps: float) -> Callable:
        """Sampler of the oscillating coefficient  x -> a(x / eps)."""
        return lambda x: self(np.asarray(x) / eps)

    def descriptor(self) -> str:
        return json.dumps({"name": self.name, "n": self.n, "params": self.params}, sort_keys=True, default=_jsonable)

    def descriptor_hash(self) -> str:
        return hashlib.sha256(self.descriptor().encode()).hexdigest()

    def _grid_samples(self, g: int) -> np.ndarray:
        t = (np.arange(g) + 0.5) / g
        Y = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        return self(Y)

    def bounds(self, g: int = 64) -> tuple[float, float]:
        a = self._grid_samples(g)
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficient field returned non-finite values")
        return float(a.min()), float(np.abs(a).max())

    def legendre_margin(self, g: int = 64) -> float:
        """Smallest eigenvalue of the symmetrized Legendre form over a g x g sample grid."""
        return float(np.linalg.eigvalsh(legendre_form(self._grid_samples(g))).min())

    def legendre_hadamard_margin(self, g: int = 64, k: int = 64) -> float:
        a = self._grid_samples(g)
        th = np.linspace(0, np.pi, k, endpoint=False)
        xi = np.stack([np.cos(th), np.sin(th)], axis=1)
        # sym. n x n matrices  a^{ab}_{ij} xi_i xi_j  for each direction
        S = np.einsum("pxyij,ti,tj->ptxy", a, xi, xi)
        S = 0.5 * (S + np.swapaxes(S, -1, -2))
        return float(np.linalg.eigvalsh(S).min())


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return {"sha256": hashlib.sha256(np.ascontiguousarray(o).tobytes()).hexdigest(), "shape": o.shape}
    return str(o)


def constant_field(tensor) -> PeriodicCoefficientField:
    t = np.asarray(tensor, dtype=float)
    if t.ndim == 0:
        t = _scalar_tensor(np.asarray(t))
    elif t.shape == (2, 2):
        t = t.reshape(1, 1, 2, 2)
    n = t.shape[0]
    return PeriodicCoefficientField(lambda y: np.broadcast_to(t, (len(y),) + t.shape), n, "constant", {"tensor": t.tolist()})


def laminate_field(values=(1.0, 4.0), fraction: float = 0.5) -> PeriodicCoefficientField:
    """Scalar a(y_1): ``values[0]`` on y_1 < fraction, ``values[1]`` elsewhere."""
    v0, v1 = map(float, values)
    return PeriodicCoefficientField(
        lambda y: _scalar_tensor(np.where(y[:, 0] < fraction, v0, v1)),
        1,
        "laminate",
        {"values": [v0, v1], "fraction": float(fraction)},
    )


def checkerboard_field(values=(1.0, 4.0)) -> PeriodicCoefficientField:
    """Scalar 2x2 checkerboard: ``values[0]`` on the lower-left and upper-right quarters."""
    v0, v1 = map(float, values)
    return PeriodicCoefficientField(
        lambda y: _scalar_tensor(np.where((y[:, 0] < 0.5) == (y[:, 1] < 0.5), v0, v1)),
        1,
        "checkerboard",
        {"values": [v0, v1]},
    )


def trigonometric_field(c0: float = 2.0, c1: float = 1.0) -> PeriodicCoefficientField:
    """Scalar a(y) = c0 + c1 sin(2 pi y1) sin(2 pi y2)."""
    c0, c1 = float(c0), float(c1)
    return PeriodicCoefficientField(
        lambda y: _scalar_tensor(c0 + c1 * np.sin(2 * np.pi * y[:, 0]) * np.sin(2 * np.pi * y[:, 1])),
        1,
        "trigonometric",
        {"c0": c0, "c1": c1},
    )


def tabulated_field(table) -> PeriodicCoefficientField:
    """Piecewise constant field from a (g1, g2) scalar or (g1, g2, n, n, 2, 2) table.

    Cell (k, l) of the table covers [k/g1, (k+1)/g1) x [l/g2, (l+1)/g2).
    """
    tab = np.asarray(table, dtype=float)
    if tab.ndim == 2:
        tab = _scalar_tensor(tab)
    if tab.ndim != 6 or tab.shape[-2:] != (2, 2) or tab.shape[2] != tab.shape[3]:
        raise ValueError("table must have shape (g1, g2) or (g1, g2, n, n, 2, 2)")
    g1, g2, n = tab.shape[0], tab.shape[1], tab.shape[2]

    def sample(y):
        k = np.minimum((y[:, 0] * g1).astype(np.int64), g1 - 1)
        l = np.minimum((y[:, 1] * g2).astype(np.int64), g2 - 1)
        return tab[k, l]

    return PeriodicCoefficientField(sample, n, "tabulated", {"table": tab})


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    """Correctors v_j^beta on a periodic mesh.

    ``values[j, beta, alpha, d]`` is component alpha of v_j^beta at periodic DOF d.
    """

    mesh: PeriodicMesh
    values: np.ndarray
    residual: float
    means: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def nodal(self) -> np.ndarray:
        """Values expanded to all mesh nodes, shape (2, n, n, n_nodes)."""
        return self.values[..., self.mesh.dof_map]

    def evaluate(self, y) -> np.ndarray:
        """v at arbitrary points (folded periodically); returns (P, 2, n_beta, n_alpha)."""
        y = np.mod(np.atleast_2d(np.asarray(y, dtype=float)), 1.0)
        e, s, t = self.mesh.locate(y)
        N = shape(s, t)
        dofs = self.mesh.dof_map[self.mesh.elements[e]]  # (P, 4)
        return np.einsum("pa,jbxpa->pjbx", N, self.values[..., dofs])

    def gradient_at_quadrature(self, order: int = 3) -> np.ndarray:
        """Element-wise gradients, shape (E, Q, 2 j, n beta, n gamma, 2 k)."""
        q = element_quadrature(self.mesh, slice(None), order)
        dofs = self.mesh.dof_map[q.elements]
        vals = self.values[..., dofs]  # (2, n, n, E, 4)
        return np.einsum("jbgea,eqak->eqjbgk", vals, q.grad)


@dataclass(frozen=True)
class HomogenizedTensor:
    tensor: np.ndarray  # (n, n, 2, 2)
    coercivity_lower_bound: float

    @property
    def n(self) -> int:
        return self.tensor.shape[0]

    def matrix(self) -> np.ndarray:
        """Scalar case convenience: the 2x2 matrix a^{11}_{ij}."""
        return self.tensor[0, 0]


@dataclass(frozen=True, eq=False)
class FluxCorrectorSet:
    """Flux defect b, its periodic potential c and the flux correctors phi.

    Index layout: ``b[e, q, alpha, beta, i, j]`` at quadrature points of the
    cell mesh, ``c[i, j, alpha, beta, d]`` and ``phi[i, j, k, alpha, beta, d]``
    at periodic DOFs.  ``phi_quadrature`` holds phi built from the exact
    element gradients of c, shape (E, Q, 2, 2, 2, n, n), plus the
    antisymmetric compatibility correction ``correction[e, q, k, alpha, beta]``
    (added to phi_12k, subtracted from phi_21k) when one was computed.
    """

    mesh: PeriodicMesh
    b: np.ndarray
    c: np.ndarray
    phi: np.ndarray
    phi_quadrature: np.ndarray
    correction: np.ndarray | None = None

    def phi_uncorrected(self) -> np.ndarray:
        if self.correction is None:
            return self.phi_quadrature
        out = self.phi_quadrature.copy()
        out[:, :, 0, 1] -= self.correction
        out[:, :, 1, 0] += self.correction
        return out

    def evaluate_phi(self, y) -> np.ndarray:
        y = np.mod(np.atleast_2d(np.asarray(y, dtype=float)), 1.0)
        e, s, t = self.mesh.locate(y)
        N = shape(s, t)
        dofs = self.mesh.dof_map[self.mesh.elements[e]]
        return np.einsum("pa,ijkxypa->pijkxy", N, self.phi[..., dofs])


# ---------------------------------------------------------------------------


def _periodic_operator(mesh: PeriodicMesh, coeff, n: int):
    K = assemble_diffusion(mesh, coeff, n)
    P = sp.block_diag([mesh.prolongation] * n, format="csr")
    return sp.csr_matrix(P.T @ K @ P), P


def _pin(K: sp.csr_matrix, pinned: np.ndarray) -> sp.csr_matrix:
    mask = np.zeros(K.shape[0], dtype=bool)
    mask[pinned] = True
    keep = sp.diags((~mask).astype(float))
    return sp.csr_matrix(keep @ K @ keep + sp.diags(mask.astype(float)))


def _cell_weights(mesh: PeriodicMesh) -> np.ndarray:
    # integral of each periodic basis function over the cell
    ones = np.ones(mesh.n_nodes)
    return mesh.prolongation.T @ (assemble_mass(mesh) @ ones)


def solve_cell_problems(a: PeriodicCoefficientField, m: int = 128, order: int = 3) -> CorrectorSet:
    """Solve the 2n periodic cell problems for the correctors v_j^beta."""
    if m < 2:
        raise ValueError("cell resolution must be at least 2")
    n = a.n
    if a.legendre_margin() <= 0 and a.legendre_hadamard_margin() <= 0:
        raise CoercivityError(f"coefficient field {a.name!r} violates the Legendre-Hadamard condition")
    mesh = build_unit_cell_mesh(m)
    K, P = _periodic_operator(mesh, a, n)
    nd = mesh.n_dofs

    # right-hand sides  -int a^{ab}_{ij} d_i psi^a  for each (j, beta)
    q = element_quadrature(mesh, slice(None), order)
    E, Q = q.w.shape
    A = a(q.x.reshape(-1, 2)).reshape(E, Q, n, n, 2, 2)
    loc = -np.einsum("eq,eqxbij,eqai->jbxea", q.w, A, q.grad)  # (2, n, n_alpha, E, 4)
    dofs = mesh.dof_map[q.elements]
    rhs = np.zeros((2, n, n, nd))
    for j in range(2):
        for b in range(n):
            for x in range(n):
                rhs[j, b, x] = np.bincount(dofs.ravel(), weights=loc[j, b, x].ravel(), minlength=nd)
    R = rhs.reshape(2 * n, n * nd).T
    # constants are in the kernel: pin the first DOF of every component
    pinned = np.arange(n) * nd
    R_pinned = R.copy()
    R_pinned[pinned] = 0.0
    try:
        lu = factorize(_pin(K, pinned))
    except NumericError as exc:
        raise CoercivityError(f"cell operator is singular: {exc}") from exc
    V = lu.solve(R_pinned)
    if not np.all(np.isfinite(V)):
        raise CoercivityError("cell problem solve produced non-finite values")
    w = _cell_weights(mesh)
    Vr = V.T.reshape(2, n, n, nd)
    Vr = Vr - (np.einsum("jbxd,d->jbx", Vr, w) / w.sum())[..., None]
    residual = float(np.abs(K @ Vr.reshape(2 * n, n * nd).T - R).max())
    means = np.einsum("jbxd,d->jbx", Vr, w)
    energy = np.einsum("kd,kd->", Vr.reshape(2 * n, -1).T, K @ Vr.reshape(2 * n, -1).T)
    if energy < -1e-12:
        raise CoercivityError("cell operator is indefinite")
    log.debug("cell problems: m=%d residual=%.2e", m, residual)
    return CorrectorSet(mesh, Vr, residual, means)


def verify_coercivity(ahat) -> float:
    """Smallest eigenvalue of the symmetrized Legendre form of a constant tensor.

    For n = 1 this is the smallest eigenvalue of the symmetric part of the
    2x2 matrix.  For systems it is a sufficient certificate only.
    """
    t = ahat.tensor if isinstance(ahat, HomogenizedTensor) else np.asarray(ahat, dtype=float)
    if t.shape == (2, 2):
        t = t.reshape(1, 1, 2, 2)
    return float(np.linalg.eigvalsh(legendre_form(t)).min())


def homogenized_tensor(a: PeriodicCoefficientField, correctors: CorrectorSet, order: int = 3) -> HomogenizedTensor:
    mesh = correctors.mesh
    n = a.n
    q = element_quadrature(mesh, slice(None), order)
    E, Q = q.w.shape
    A = a(q.x.reshape(-1, 2)).reshape(E, Q, n, n, 2, 2)
    G = correctors.gradient_at_quadrature(order)  # (E, Q, j, beta, gamma, k)
    flux = A + np.einsum("eqxgik,eqjbgk->eqxbij", A, G)
    t = np.einsum("eq,eqxbij->xbij", q.w, flux)
    cert = verify_coercivity(t)
    if cert <= 0:
        raise CoercivityError(f"homogenized tensor fails the coercivity certificate ({cert:.3e})")
    return HomogenizedTensor(t, cert)


def flux_correctors(
    a: PeriodicCoefficientField, correctors: CorrectorSet, ahat: HomogenizedTensor, order: int = 3,
    compatible: bool = True,
) -> FluxCorrectorSet:
    """b, c and phi from the corrector gradients.

    With ``compatible=True`` the quadrature-point phi receives the smallest
    antisymmetric correction (in the L2 sense) that makes  d_i phi_ijk = b_jk
    hold against every periodic Q1 test function.
    """
    mesh = correctors.mesh
    n = a.n
    nd = mesh.n_dofs
    q = element_quadrature(mesh, slice(None), order)
    E, Q = q.w.shape
    A = a(q.x.reshape(-1, 2)).reshape(E, Q, n, n, 2, 2)
    G = correctors.gradient_at_quadrature(order)
    b = A + np.einsum("eqxgik,eqjbgk->eqxbij", A, G) - ahat.tensor[None, None]

    # periodic Poisson problems  Delta c = b  with zero mean
    L, _ = _periodic_operator(mesh, np.eye(2), 1)
    lu = factorize(_pin(L, np.array([0])))
    dofs = mesh.dof_map[q.elements]
    loads = -np.einsum("eq,eqxbij,qa->ijxbea", q.w, b, q.N)
    rhs = np.zeros((2, 2, n, n, nd))
    for idx in np.ndindex(2, 2, n, n):
        rhs[idx] = np.bincount(dofs.ravel(), weights=loads[idx].ravel(), minlength=nd)
    Rm = rhs.reshape(-1, nd).T.copy()
    Rm[0] = 0.0
    C = lu.solve(Rm).T.reshape(2, 2, n, n, nd)
    w = _cell_weights(mesh)
    C -= (np.einsum("ijxbd,d->ijxb", C, w) / w.sum())[..., None]

    # phi_ijk = d_i c_jk - d_j c_ik, from exact element gradients ...
    gc = np.einsum("jkxbea,eqai->eqijkxb", C[..., dofs], q.grad)  # d_i c_jk at quadrature points
    phi_q = gc - np.swapaxes(gc, 2, 3)
    # ... and at the nodes via patch-averaged gradients
    gn = _recover_gradient(mesh, C.reshape(-1, nd)).reshape(2, 2, n, n, 2, nd)  # [j,k,x,b,i,d]
    gn = np.moveaxis(gn, 4, 0)  # [i, j, k, x, b, d]
    phi = gn - np.swapaxes(gn, 0, 1)
    z = None
    if compatible:
        z = _compatibility_correction(mesh, q, phi_q, b)
        phi_q[:, :, 0, 1] += z
        phi_q[:, :, 1, 0] -= z
    return FluxCorrectorSet(mesh, b, C, phi, phi_q, z)


def _flux_residual_vectors(mesh: PeriodicMesh, q, phi_q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """r[j, k, alpha, beta, d] = -int phi_ijk d_i psi_d - int b_jk psi_d."""
    dofs = mesh.dof_map[q.elements]
    loc = -np.einsum("eqijkxb,eqai->jkxbea", phi_q * q.w[:, :, None, None, None, None, None], q.grad)
    loc -= np.einsum("eq,eqxbjk,qa->jkxbea", q.w, b, q.N)
    out = np.zeros(loc.shape[:4] + (mesh.n_dofs,))
    for idx in np.ndindex(loc.shape[:4]):
        out[idx] = np.bincount(dofs.ravel(), weights=loc[idx].ravel(), minlength=mesh.n_dofs)
    return out


def _compatibility_correction(mesh: PeriodicMesh, q, phi_q: np.ndarray, b: np.ndarray,
                              refine_steps: int = 30) -> np.ndarray:
    # z = d_2 mu_1 + d_1 mu_2 with mu periodic Q1 is the minimal-norm z with
    #   int z d_2 psi = -r_1k(psi),   int z d_1 psi = r_2k(psi)   for all psi.
    # The block matrix is singular (pairs mu_1 = f(y1), mu_2 = -g(y2) with
    # matching slopes), so it is solved through a slightly regularized LU and
    # iterative refinement, which converges on the consistent part.
    nd = mesh.n_dofs
    dofs = mesh.dof_map[q.elements]
    D = {}
    for r in range(2):
        for s_ in range(2):
            loc = np.einsum("eq,eqa,eqb->eab", q.w, q.grad[..., r], q.grad[..., s_])
            rows = np.broadcast_to(dofs[:, :, None], loc.shape).ravel()
            cols = np.broadcast_to(dofs[:, None, :], loc.shape).ravel()
            D[r, s_] = sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(nd, nd))
    G = sp.bmat([[D[1, 1], D[1, 0]], [D[0, 1], D[0, 0]]], format="csr")
    M = mesh.prolongation.T @ assemble_mass(mesh) @ mesh.prolongation
    tau = 1e-8 * G.diagonal().max() / M.diagonal().max()
    lu = factorize(G + tau * sp.block_diag([M, M]), spd=True)
    R = _flux_residual_vectors(mesh, q, phi_q, b)  # (j, k, x, b, d)
    n = b.shape[2]
    E, Q = q.w.shape
    z = np.zeros((E, Q, 2, n, n))
    for k, x, y in np.ndindex(2, n, n):
        rhs = np.concatenate([-R[0, k, x, y], R[1, k, x, y]])
        mu = np.zeros_like(rhs)
        for _ in range(refine_steps):
            res = rhs - G @ mu
            if np.abs(res).max() <= 1e-14 * max(np.abs(rhs).max(), 1e-300):
                break
            mu += lu.solve(res)
        m1, m2 = mu[:nd][dofs], mu[nd:][dofs]  # (E, 4)
        z[:, :, k, x, y] = np.einsum("ea,eqa->eq", m1, q.grad[..., 1]) + np.einsum("ea,eqa->eq", m2, q.grad[..., 0])
    return z


def _recover_gradient(mesh: PeriodicMesh, vals: np.ndarray) -> np.ndarray:
    """Average of the element gradients at each node over its (periodic) patch.

    ``vals`` has shape (F, n_dofs); returns (F, 2, n_dofs).
    """
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    dN = shape_grad(corners[:, 0], corners[:, 1])  # (corner, a, r)
    conn = mesh.elements
    X = mesh.nodes[conn]
    J = np.einsum("car,ead->ecdr", dN, X)
    inv = np.linalg.inv(J)
    g = np.einsum("car,ecrd->ecad", dN, inv)  # (E, corner, a, d)
    dofs = mesh.dof_map[conn]
    ev = vals[:, dofs]  # (F, E, 4)
    grads = np.einsum("ecad,fea->fecd", g, ev)  # gradient of element e at its corner c
    out = np.zeros((vals.shape[0], 2, mesh.n_dofs))
    count = np.bincount(dofs.ravel(), minlength=mesh.n_dofs)
    for f in range(vals.shape[0]):
        for d in range(2):
            out[f, d] = np.bincount(dofs.ravel(), weights=grads[f, :, :, d].ravel(), minlength=mesh.n_dofs)
    return out / count


def weak_flux_residual(flux: FluxCorrectorSet, which: str = "compatible", order: int = 3) -> float:
    """max |  -int phi_ijk d_i psi - int b_jk psi  | over periodic basis functions psi.

    ``which`` selects the phi that is tested: ``"compatible"`` (quadrature
    values including the compatibility correction), ``"element"`` (exact
    element gradients of c only) or ``"nodal"`` (Q1 interpolant of the
    patch-recovered nodal phi).
    """
    mesh = flux.mesh
    q = element_quadrature(mesh, slice(None), order)
    if which == "nodal":
        dofs = mesh.dof_map[q.elements]
        phi = np.einsum("ijkxbea,qa->eqijkxb", flux.phi[..., dofs], q.N)
    elif which == "element":
        phi = flux.phi_uncorrected()
    elif which == "compatible":
        phi = flux.phi_quadrature
    else:
        raise ValueError(f"unknown phi selection {which!r}")
    return float(np.abs(_flux_residual_vectors(mesh, q, phi, flux.b)).max())


# ---------------------------------------------------------------------------
# cache


def save_cell_cache(path, a: PeriodicCoefficientField, correctors: CorrectorSet, ahat: HomogenizedTensor,
                    flux: FluxCorrectorSet | None = None, flux_residuals=None) -> None:
    payload = dict(
        version=np.array(CACHE_VERSION),
        field_hash=np.array(a.descriptor_hash()),
        m=np.array(correctors.mesh.m),
        v=correctors.values,
        residual=np.array(correctors.residual),
        means=correctors.means,
        ahat=ahat.tensor,
        certificate=np.array(ahat.coercivity_lower_bound),
    )
    if flux is not None:
        payload.update(c=flux.c, phi=flux.phi)
    if flux_residuals is not None:
        payload.update(flux_residuals=np.asarray(flux_residuals, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_cell_cache(path, a: PeriodicCoefficientField, m: int):
    """Return ``(correctors, ahat, c, phi, flux_residuals)`` or None when the cache does not match."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CACHE_VERSION or str(z["field_hash"]) != a.descriptor_hash() or int(z["m"]) != m:
            return None
        mesh = build_unit_cell_mesh(m)
        corr = CorrectorSet(mesh, z["v"].copy(), float(z["residual"]), z["means"].copy())
        ahat = HomogenizedTensor(z["ahat"].copy(), float(z["certificate"]))
        c = z["c"].copy() if "c" in z.files else None
        phi = z["phi"].copy() if "phi" in z.files else None
        fr = tuple(z["flux_residuals"].tolist()) if "flux_residuals" in z.files else None
    return corr, ahat, c, phi, fr


def cache_path(directory, a: PeriodicCoefficientField, m: int) -> Path:
    return Path(directory) / f"cell-{a.descriptor_hash()[:16]}-m{m}.npz"
