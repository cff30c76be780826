"""Mollifiers, boundary cut-offs and first-order corrector expansions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, signal
from scipy.interpolate import RectBivariateSpline

from .cell import CorrectorSet
from .fem import SolutionField, dual_operator, recover_gradient
from .mesh import DomainSpec, Mesh, _inside, boundary_distance

__all__ = [
    "Mollifier",
    "MollifiedField",
    "mollify",
    "mollifier_constants",
    "smoothstep",
    "smoothstep_derivative",
    "cutoff",
    "cutoff_gradient",
    "ExpansionRecipe",
    "build_expansion",
    "discrepancy",
    "SMOOTHED",
    "DIRECT",
]

log = logging.getLogger(__name__)

SMOOTHED = "smoothed"
DIRECT = "direct"


# ---------------------------------------------------------------------------
# mollifier


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def _bump_mass() -> float:
    # int_{|x|<1} exp(-1/(1-|x|^2)) dx in polar coordinates
    val, _ = integrate.quad(lambda r: 2 * np.pi * r * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13)
    return val


@dataclass(frozen=True)
class Mollifier:
    """Scaled standard bump  rho_delta(x) = rho(x / delta) / delta^2  with unit mass."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("mollifier width must be positive")

    @property
    def normalization(self) -> float:
        return _bump_mass()

    def rho(self, x) -> np.ndarray:
        """Unit-scale kernel rho at points (..., 2)."""
        x = np.asarray(x, dtype=float)
        return _bump((x ** 2).sum(axis=-1)) / self.normalization

    def kernel(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float) / self.delta
        return self.rho(x) / self.delta ** 2

    def kernel_gradient(self, x) -> np.ndarray:
        """Gradient of rho_delta, shape (..., 2)."""
        y = np.asarray(x, dtype=float) / self.delta
        r2 = (y ** 2).sum(axis=-1)
        base = _bump(r2) / self.normalization
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(r2 < 1.0, -2.0 / (1.0 - r2) ** 2, 0.0)
        return (fac * base)[..., None] * y / self.delta ** 3


@dataclass(frozen=True, eq=False)
class MollifiedField:
    """S_delta u sampled on a padded midpoint grid and interpolated by bicubic splines."""

    mollifier: Mollifier
    x: np.ndarray  # grid abscissae
    y: np.ndarray
    values: np.ndarray  # (n, gx, gy)
    grads: np.ndarray  # (n, 2, gx, gy)
    spacing: float
    under_resolved: bool

    def _splines(self, arr):
        return [RectBivariateSpline(self.x, self.y, a, kx=3, ky=3) for a in arr]

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([s.ev(p[:, 0], p[:, 1]) for s in self._splines(self.values)], axis=1)

    def gradient(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        g = self.grads.reshape((-1,) + self.grads.shape[2:])
        out = np.stack([s.ev(p[:, 0], p[:, 1]) for s in self._splines(g)], axis=1)
        return out.reshape(len(p), -1, 2)

    def grid_values(self) -> np.ndarray:
        return self.values


def _domain_mask(mesh: Mesh, pts: np.ndarray) -> np.ndarray:
    if mesh.domain is not None:
        return _inside(mesh.domain.points, pts)
    c = mesh.corners
    return _inside(c, pts)


def mollify(u, delta: float, mesh: Mesh | None = None, spacing: float | None = None,
            boundary: str = "truncate") -> MollifiedField:
    """S_delta u = int_Omega rho_delta(x - y) u(y) dy for a field on ``mesh``.

    ``u`` is a :class:`SolutionField` or a callable ``(P, 2) -> (P, n)`` that is
    sampled on ``mesh``'s domain.  The integral is a midpoint rule on a square
    grid of the given spacing (default min(delta/16, mesh spacing)); u is taken
    as zero outside the domain.  The discrete kernel is scaled to unit sum.
    With ``boundary="renormalize"`` the kernel is instead rescaled to unit mass
    over the domain at every evaluation point.
    """
    if boundary not in ("truncate", "renormalize"):
        raise ValueError(f"unknown boundary treatment {boundary!r}")
    if isinstance(u, SolutionField):
        mesh = u.mesh
        sample = u.evaluate
    else:
        if mesh is None:
            raise ValueError("a mesh is needed to sample a callable")
        sample = u
    mol = Mollifier(delta)
    hq = spacing or min(delta / 16.0, mesh.spacing)
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    cells = np.ceil((hi - lo) / hq - 1e-9).astype(int)
    pad = int(np.ceil(delta / hq)) + 2
    ix = np.arange(-pad, cells[0] + pad)
    iy = np.arange(-pad, cells[1] + pad)
    gx = lo[0] + (ix + 0.5) * hq
    gy = lo[1] + (iy + 0.5) * hq
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = _domain_mask(mesh, pts)
    vals = np.zeros((len(pts), 1))
    if inside.any():
        sv = np.asarray(sample(pts[inside]), dtype=float).reshape(inside.sum(), -1)
        vals = np.zeros((len(pts), sv.shape[1]))
        vals[inside] = sv
    n = vals.shape[1]
    grid = vals.T.reshape(n, len(gx), len(gy))

    r = int(np.ceil(delta / hq))
    k = np.arange(-r, r + 1) * hq
    KX, KY = np.meshgrid(k, k, indexing="ij")
    offs = np.stack([KX, KY], axis=-1)
    stencil = mol.kernel(offs) * hq ** 2
    mass = stencil.sum()
    stencil /= mass
    dstencil = mol.kernel_gradient(offs) * hq ** 2 / mass  # same discrete normalization

    conv = np.stack([signal.fftconvolve(g, stencil, mode="same") for g in grid])
    dconv = np.stack([
        np.stack([signal.fftconvolve(g, dstencil[..., d], mode="same") for d in range(2)]) for g in grid
    ])
    if boundary == "renormalize":
        ind = inside.reshape(len(gx), len(gy)).astype(float)
        w = signal.fftconvolve(ind, stencil, mode="same")
        dw = np.stack([signal.fftconvolve(ind, dstencil[..., d], mode="same") for d in range(2)])
        w = np.where(w > 1e-12, w, 1.0)
        dconv = (dconv * w[None, None] - conv[:, None] * dw[None]) / w[None, None] ** 2
        conv = conv / w[None]
    under = bool(delta <= 2 * mesh.h)
    if under:
        log.warning("mollifier width %.3g is under-resolved by the mesh (h=%.3g)", delta, mesh.h)
    return MollifiedField(mol, gx, gy, conv, dconv, hq, under)


def mollifier_constants(mesh: Mesh, delta: float, spacing: float | None = None, iters: int = 60,
                        seed: int = 0) -> tuple[float, float]:
    """Measured constants of the smoothing bounds for exponent r = 2.

    Returns ``(c_sup, c_grad)`` with

    * ``c_sup  = delta^2 sup_u sup_x |S u(x)|^2 / ||u||^2``, exact for the
      discrete operator (Cauchy-Schwarz: the worst u is the kernel itself);
    * ``c_grad = delta^2 sup_u ||grad S u||^2 / ||u||^2``, the squared operator
      norm estimated by power iteration from a random start.

    Both are scale invariant in the continuum, so they should not drift with delta.
    """
    mol = Mollifier(delta)
    hq = spacing or min(delta / 16.0, mesh.spacing)
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    cells = np.ceil((hi - lo) / hq - 1e-9).astype(int)
    gx = lo[0] + (np.arange(cells[0]) + 0.5) * hq
    gy = lo[1] + (np.arange(cells[1]) + 0.5) * hq
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    inside = _domain_mask(mesh, np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(X.shape)
    r = int(np.ceil(delta / hq))
    k = np.arange(-r, r + 1) * hq
    KX, KY = np.meshgrid(k, k, indexing="ij")
    offs = np.stack([KX, KY], axis=-1)
    stencil = mol.kernel(offs) * hq ** 2
    mass = stencil.sum()
    stencil /= mass
    dst = mol.kernel_gradient(offs) * hq ** 2 / mass
    # sup_x sum_y rho(x-y)^2 over y in the domain, in L2(hq^2) units
    sq = signal.fftconvolve(inside.astype(float), stencil[::-1, ::-1] ** 2, mode="same")
    c_sup = delta ** 2 * float(sq[inside].max()) / hq ** 2

    def T(u):
        return [np.where(inside, signal.fftconvolve(u, dst[..., d], mode="same"), 0.0) for d in range(2)]

    def Tt(g):
        return np.where(inside, sum(signal.fftconvolve(g[d], dst[::-1, ::-1, d], mode="same") for d in range(2)), 0.0)

    rng = np.random.default_rng(seed)
    u = np.where(inside, rng.standard_normal(X.shape), 0.0)
    lam = 0.0
    for _ in range(iters):
        u /= np.linalg.norm(u)
        w = Tt(T(u))
        lam_new = float(np.vdot(u, w))
        u = w
        if abs(lam_new - lam) <= 1e-6 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    c_grad = delta ** 2 * lam
    return c_sup, c_grad


# ---------------------------------------------------------------------------
# cut-off


def smoothstep(t) -> np.ndarray:
    """Quintic 6t^5 - 15t^4 + 10t^3 clamped to [0, 1]."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t ** 3 * (t * (6 * t - 15) + 10)


def smoothstep_derivative(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30 * t ** 2 * (t - 1) ** 2, 0.0)


def _check_eps(spec: DomainSpec, eps: float):
    if not 0 < eps < spec.diameter / 4:
        raise ValueError(f"eps={eps} must lie in (0, diameter/4)")


def cutoff(spec: DomainSpec, eps: float, x) -> np.ndarray | float:
    """eta_eps(x) = s((d(x) - eps) / eps): 0 within eps of the boundary, 1 beyond 2 eps."""
    _check_eps(spec, eps)
    d = boundary_distance(spec, x)
    out = smoothstep((np.asarray(d) - eps) / eps)
    return float(out) if np.ndim(out) == 0 else out


def _closest_direction(spec: DomainSpec, p: np.ndarray) -> np.ndarray:
    v = spec.points
    a, b = v, np.roll(v, -1, axis=0)
    ab = b - a
    ap = p[:, None, :] - a[None]
    t = np.clip(np.einsum("pek,ek->pe", ap, ab) / np.einsum("ek,ek->e", ab, ab), 0.0, 1.0)
    diff = p[:, None, :] - (a[None] + t[..., None] * ab[None])
    dist = np.linalg.norm(diff, axis=-1)
    e = dist.argmin(axis=1)
    g = diff[np.arange(len(p)), e]
    nrm = dist[np.arange(len(p)), e]
    return g / np.where(nrm > 0, nrm, 1.0)[:, None]


def cutoff_gradient(spec: DomainSpec, eps: float, x) -> np.ndarray:
    """Gradient of eta_eps, shape (P, 2); uses |grad d| = 1 away from the medial axis."""
    _check_eps(spec, eps)
    p = np.atleast_2d(np.asarray(x, dtype=float))
    d = boundary_distance(spec, p)
    ds = smoothstep_derivative((d - eps) / eps) / eps
    return ds[:, None] * _closest_direction(spec, p)


# ---------------------------------------------------------------------------
# expansions


@dataclass(frozen=True)
class ExpansionRecipe:
    """Which first-order expansion to build.

    ``delta_rule`` is ``"power"`` (delta = eps^r, 0 < r < 1/2) or ``"log"``
    (delta = -1 / ln eps).  Only the smoothed variant uses delta.
    """

    variant: str
    eps: float
    delta_rule: str = "power"
    r: float = 0.25
    boundary: str = "truncate"

    def __post_init__(self):
        if self.variant not in (SMOOTHED, DIRECT):
            raise ValueError(f"unknown expansion variant {self.variant!r}")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.delta_rule == "power" and not 0 < self.r < 0.5:
            raise ValueError("the exponent r must lie in (0, 1/2)")
        if self.delta_rule not in ("power", "log"):
            raise ValueError(f"unknown delta rule {self.delta_rule!r}")
        d = self.delta
        if not 0 < d < 1:
            raise ValueError(f"delta={d} must lie in (0, 1)")

    @property
    def delta(self) -> float:
        if self.delta_rule == "log":
            return -1.0 / math.log(self.eps)
        return self.eps ** self.r


def build_expansion(recipe: ExpansionRecipe, u0: SolutionField, correctors: CorrectorSet | None,
                    mesh: Mesh, domain: DomainSpec | None = None) -> SolutionField:
    """Nodal interpolant on ``mesh`` of  u0 + eps eta_eps G_k^g v_k^{ag}(x / eps).

    G is the mollified gradient S_delta d_k u0 (smoothed variant) or the
    patch-recovered gradient of u0 (direct variant).
    """
    if correctors is None:
        raise ValueError("the expansion needs cell correctors")
    domain = domain or mesh.domain or u0.mesh.domain
    if domain is None:
        raise ValueError("the expansion needs the domain geometry for the cut-off")
    n = u0.n
    if correctors.n != n:
        raise ValueError("corrector and solution component counts differ")
    eps = recipe.eps
    x = mesh.nodes
    base = u0.evaluate(x)  # (P, n)
    if recipe.variant == SMOOTHED:
        G = _mollified_gradient(u0, recipe.delta, recipe.boundary)(x).reshape(len(x), n, 2)
    else:
        g = recover_gradient(u0).reshape(u0.mesh.n_nodes, -1)
        gfield = SolutionField(u0.mesh, 2 * n, g.T.ravel(), np.zeros(2 * n * u0.mesh.n_nodes, dtype=bool))
        G = gfield.evaluate(x).reshape(len(x), n, 2)
    eta = cutoff(domain, eps, x)
    V = correctors.evaluate(x / eps)  # (P, k, gamma, alpha)
    corr = np.einsum("pgk,pkga->pa", G, V)
    vals = base + eps * eta[:, None] * corr
    out = SolutionField(mesh, n, vals.T.ravel())
    out.values[out.constrained] = 0.0
    return out


def _mollified_gradient(u0: SolutionField, delta: float, boundary: str) -> MollifiedField:
    # S_delta applied to the piecewise (element-wise) gradient of u0
    mesh = u0.mesh

    def grad(p):
        return u0.gradient(p).reshape(len(p), -1)

    return mollify(grad, delta, mesh=mesh, boundary=boundary)


def discrepancy(spec, ubar: SolutionField) -> float:
    """Dual H^1 norm of the discrete residual F_eps(ubar)."""
    from .semilinear import residual

    f = residual(spec, ubar)
    return dual_operator(spec.mesh, spec.n, spec.mask)(f)
