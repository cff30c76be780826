"""Semilinear operators  F(u) = A u + B(u), Newton / frozen-Jacobian solves and probes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .cell import HomogenizedTensor, PeriodicCoefficientField, verify_coercivity
from .fem import (
    NumericError,
    SolutionField,
    assemble_diffusion,
    assemble_linearization,
    assemble_mass,
    assemble_semilinear,
    assemble_stiffness,
    constrained_mask,
    dual_operator,
    factorize,
    pin_constrained,
)
from .mesh import DomainSpec, Mesh, build_domain_mesh

__all__ = [
    "DegeneracyError",
    "NonlinearityModel",
    "ReactionTerm",
    "poly_term",
    "sin_term",
    "cos_term",
    "exp_term",
    "separable_reaction",
    "cubic_reaction",
    "linear_reaction",
    "drift_model",
    "robin_model",
    "combine",
    "sinsin",
    "manufactured_forcing",
    "ProblemSpec",
    "NewtonReport",
    "ProbeReport",
    "residual",
    "jacobian",
    "newton_solve",
    "check_nondegeneracy",
    "local_uniqueness_probe",
]

log = logging.getLogger(__name__)


class DegeneracyError(NumericError):
    """The linearization is singular."""


# ---------------------------------------------------------------------------
# nonlinearities


@dataclass(frozen=True, eq=False)
class NonlinearityModel:
    """Drift b_i^a(x,u), reaction b^a(x,u) and Robin data b_0^a(x,u) with u-derivatives.

    Every callback takes ``x`` of shape (P, 2) and ``u`` of shape (P, n) and returns
    flux (P, n, 2), dflux (P, n, 2, n), reaction (P, n), dreaction (P, n, n),
    robin (P, n) or drobin (P, n, n).  ``None`` means identically zero.
    """

    n: int = 1
    flux: Callable | None = None
    dflux: Callable | None = None
    reaction: Callable | None = None
    dreaction: Callable | None = None
    robin: Callable | None = None
    drobin: Callable | None = None
    name: str = "custom"

    def shifted(self, k: float) -> "NonlinearityModel":
        """Same model with  -k u  added to the reaction."""
        n = self.n
        eye = np.eye(n)
        base, dbase = self.reaction, self.dreaction

        def reaction(x, u):
            out = -k * u
            return out if base is None else out + base(x, u)

        def dreaction(x, u):
            out = np.broadcast_to(-k * eye, (len(x), n, n))
            return out if dbase is None else out + dbase(x, u)

        return NonlinearityModel(n, self.flux, self.dflux, reaction, dreaction, self.robin, self.drobin,
                                 f"{self.name}-{k}u")


@dataclass(frozen=True)
class ReactionTerm:
    """One summand  c(x) d(u)  of reaction component ``alpha``."""

    alpha: int
    coefficient: Callable  # x -> (P,)
    d: Callable  # u (P, n) -> (P,)
    dd: Callable  # u (P, n) -> (P, n)


def _unit(n, gamma):
    e = np.zeros(n)
    e[gamma] = 1.0
    return e


def _coef(c):
    if callable(c):
        return c
    c = float(c)
    return lambda x: np.full(len(x), c)


def poly_term(alpha: int, coeffs: Sequence[float], gamma: int | None = None, n: int = 1, coefficient=1.0):
    """c(x) * sum_p coeffs[p] (u^gamma)^p."""
    g = alpha if gamma is None else gamma
    cs = np.asarray(coeffs, dtype=float)
    dcs = np.polynomial.polynomial.polyder(cs) if len(cs) > 1 else np.zeros(1)
    e = _unit(n, g)
    return ReactionTerm(
        alpha,
        _coef(coefficient),
        lambda u: np.polynomial.polynomial.polyval(u[:, g], cs),
        lambda u: np.polynomial.polynomial.polyval(u[:, g], dcs)[:, None] * e,
    )


def sin_term(alpha: int, gamma: int | None = None, n: int = 1, coefficient=1.0, scale: float = 1.0):
    g = alpha if gamma is None else gamma
    e = _unit(n, g)
    return ReactionTerm(alpha, _coef(coefficient), lambda u: np.sin(scale * u[:, g]),
                        lambda u: (scale * np.cos(scale * u[:, g]))[:, None] * e)


def cos_term(alpha: int, gamma: int | None = None, n: int = 1, coefficient=1.0, scale: float = 1.0):
    g = alpha if gamma is None else gamma
    e = _unit(n, g)
    return ReactionTerm(alpha, _coef(coefficient), lambda u: np.cos(scale * u[:, g]),
                        lambda u: (-scale * np.sin(scale * u[:, g]))[:, None] * e)


def exp_term(alpha: int, gamma: int | None = None, n: int = 1, coefficient=1.0, scale: float = 1.0):
    g = alpha if gamma is None else gamma
    e = _unit(n, g)
    return ReactionTerm(alpha, _coef(coefficient), lambda u: np.exp(scale * u[:, g]),
                        lambda u: (scale * np.exp(scale * u[:, g]))[:, None] * e)


def separable_reaction(terms: Sequence[ReactionTerm], n: int = 1, forcing: Callable | None = None,
                       name: str = "separable") -> NonlinearityModel:
    """b^a(x,u) = sum_l c_l^a(x) d_l^a(u) - f^a(x)."""
    terms = tuple(terms)

    def reaction(x, u):
        out = np.zeros((len(x), n))
        for t in terms:
            out[:, t.alpha] += t.coefficient(x) * t.d(u)
        if forcing is not None:
            out -= np.asarray(forcing(x)).reshape(len(x), n)
        return out

    def dreaction(x, u):
        out = np.zeros((len(x), n, n))
        for t in terms:
            out[:, t.alpha, :] += t.coefficient(x)[:, None] * t.dd(u)
        return out

    return NonlinearityModel(n, reaction=reaction, dreaction=dreaction, name=name)


def cubic_reaction(forcing: Callable | None = None, coefficient=1.0) -> NonlinearityModel:
    """Scalar  b(x,u) = c(x) u^3 - f(x)."""
    return separable_reaction([poly_term(0, [0, 0, 0, 1], coefficient=coefficient)], 1, forcing, "cubic")


def linear_reaction(forcing: Callable | None = None, k=1.0) -> NonlinearityModel:
    """Scalar  b(x,u) = k(x) u - f(x)."""
    return separable_reaction([poly_term(0, [0, 1], coefficient=k)], 1, forcing, "linear")


def drift_model(velocity: Callable, d: Callable, dd: Callable, n: int = 1, alpha: int = 0,
                gamma: int = 0) -> NonlinearityModel:
    """b_i^alpha(x,u) = w_i(x) d(u^gamma) with ``velocity(x) -> (P, 2)``."""

    def flux(x, u):
        out = np.zeros((len(x), n, 2))
        out[:, alpha, :] = velocity(x) * d(u[:, gamma])[:, None]
        return out

    def dflux(x, u):
        out = np.zeros((len(x), n, 2, n))
        out[:, alpha, :, gamma] = velocity(x) * dd(u[:, gamma])[:, None]
        return out

    return NonlinearityModel(n, flux=flux, dflux=dflux, name="drift")


def robin_model(g=1.0, k=1.0, n: int = 1) -> NonlinearityModel:
    """b_0^a(x,u) = g(x) - k u^a   (``g=1, k=1`` is  1 - u)."""
    gf = _coef(g)

    def robin(x, u):
        return gf(x)[:, None] - k * u

    def drobin(x, u):
        return np.broadcast_to(-k * np.eye(n), (len(x), n, n))

    return NonlinearityModel(n, robin=robin, drobin=drobin, name="robin")


def combine(*models: NonlinearityModel, name: str | None = None) -> NonlinearityModel:
    """Sum of several models (callbacks added slot by slot)."""
    n = models[0].n
    if any(m.n != n for m in models):
        raise ValueError("models must have the same component count")

    def summed(slot):
        fns = [getattr(m, slot) for m in models if getattr(m, slot) is not None]
        if not fns:
            return None
        if len(fns) == 1:
            return fns[0]
        return lambda x, u: sum(f(x, u) for f in fns)

    slots = ("flux", "dflux", "reaction", "dreaction", "robin", "drobin")
    return NonlinearityModel(n, *(summed(s) for s in slots), name=name or "+".join(m.name for m in models))


def sinsin(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def manufactured_forcing(tensor, reaction: Callable = lambda u: u ** 3) -> Callable:
    """Forcing f such that u0 = sin(pi x1) sin(pi x2) solves  div(A grad u) = reaction(u) - f.

    ``tensor`` is the constant scalar diffusion matrix (2x2) or a HomogenizedTensor.
    """
    A = tensor.matrix() if isinstance(tensor, HomogenizedTensor) else np.asarray(tensor, dtype=float)
    A = A.reshape(2, 2)

    def f(x):
        s1, s2 = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
        c1, c2 = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
        div = -np.pi ** 2 * (A[0, 0] + A[1, 1]) * s1 * s2 + np.pi ** 2 * (A[0, 1] + A[1, 0]) * c1 * c2
        return reaction(s1 * s2) - div

    return f


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Oscillating (``eps > 0``) or homogenized (``eps is None``) boundary value problem.

    ``h`` is the target element edge length of the mesh.  ``mesh`` may be given
    explicitly instead.
    """

    domain: DomainSpec
    coefficient: PeriodicCoefficientField | HomogenizedTensor
    model: NonlinearityModel
    eps: float | None = None
    h: float | None = None
    mesh_override: Mesh | None = None

    def __post_init__(self):
        homogenized = isinstance(self.coefficient, HomogenizedTensor)
        if homogenized and self.eps is not None:
            raise ValueError("a homogenized problem takes eps=None")
        if not homogenized:
            if self.eps is None or not self.eps > 0:
                raise ValueError("oscillating problems need eps > 0")
        if self.coefficient.n != self.model.n:
            raise ValueError("coefficient and nonlinearity disagree on the component count")
        if self.domain.robin_everywhere:
            ok = (verify_coercivity(self.coefficient) > 0 if homogenized
                  else self.coefficient.legendre_margin() > 0)
            if not ok:
                raise ValueError("pure Robin conditions need coefficients satisfying the Legendre condition")
        if self.mesh_override is None and not (self.h and self.h > 0):
            raise ValueError("give a mesh size h or an explicit mesh")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def homogenized(self) -> bool:
        return self.eps is None

    @cached_property
    def mesh(self) -> Mesh:
        return self.mesh_override if self.mesh_override is not None else build_domain_mesh(self.domain, self.h)

    @cached_property
    def mask(self) -> np.ndarray:
        return constrained_mask(self.mesh, self.n)

    @cached_property
    def diffusion(self) -> sp.csr_matrix:
        """Linear part A (unpinned), including the mass shift for pure Robin problems."""
        if self.homogenized:
            t = self.coefficient.tensor
            A = assemble_diffusion(self.mesh, t, self.n)
        else:
            A = assemble_diffusion(self.mesh, self.coefficient.scaled(self.eps), self.n)
        if self.domain.robin_everywhere:
            A = A + assemble_mass(self.mesh, self.n)
        return A

    @cached_property
    def effective_model(self) -> NonlinearityModel:
        return self.model.shifted(1.0) if self.domain.robin_everywhere else self.model

    def with_mesh(self, mesh: Mesh) -> "ProblemSpec":
        return ProblemSpec(self.domain, self.coefficient, self.model, self.eps, None, mesh)

    def zeros(self) -> SolutionField:
        return SolutionField(self.mesh, self.n, np.zeros(self.n * self.mesh.n_nodes), self.mask)

    def field(self, values) -> SolutionField:
        v = np.array(values, dtype=float)
        v[self.mask] = 0.0
        return SolutionField(self.mesh, self.n, v, self.mask)


def residual(spec: ProblemSpec, u) -> np.ndarray:
    """Discrete F(u) = A u + B(u) with zero entries on constrained DOFs."""
    vals = u.values if isinstance(u, SolutionField) else np.asarray(u, dtype=float)
    f = spec.diffusion @ vals + assemble_semilinear(SolutionField(spec.mesh, spec.n, vals, spec.mask),
                                                    spec.effective_model, spec.mesh)
    f[spec.mask] = 0.0
    return f


def jacobian(spec: ProblemSpec, u) -> sp.csr_matrix:
    """Pinned discrete F'(u)."""
    vals = u.values if isinstance(u, SolutionField) else np.asarray(u, dtype=float)
    J = spec.diffusion + assemble_linearization(SolutionField(spec.mesh, spec.n, vals, spec.mask),
                                                spec.effective_model, spec.mesh)
    return pin_constrained(J, spec.mask)


@dataclass
class NewtonReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    final_update_norm: float = float("nan")
    frozen_jacobian: bool = False
    message: str = ""

    def contraction_ratios(self) -> np.ndarray:
        r = np.asarray(self.residuals)
        return r[1:] / r[:-1] if len(r) > 1 else np.empty(0)


def _factor(J):
    try:
        lu = factorize(J)
    except NumericError as exc:
        raise DegeneracyError(f"singular Jacobian: {exc}") from exc
    # rounding usually leaves a tiny nonzero pivot instead of an exact zero
    d = np.abs(lu.U.diagonal())
    k = int(d.argmin())
    if d[k] <= 10 * J.shape[0] * np.finfo(float).eps * d.max():
        raise DegeneracyError(f"singular Jacobian: pivot {k} is {d[k]:.3e} against {d.max():.3e}")
    return lu


def _step(lu, r):
    du = lu.solve(r)
    if not np.all(np.isfinite(du)):
        raise DegeneracyError("Jacobian solve produced non-finite values")
    return du


def newton_solve(spec: ProblemSpec, u_init: SolutionField | None = None, mode: str = "full",
                 tol: float = 1e-10, max_iter: int = 30) -> tuple[SolutionField, NewtonReport]:
    """Newton iteration (``mode="full"``) or the frozen map  u -> u - F'(u_init)^{-1} F(u).

    Convergence is declared when the dual H^1 norm of the residual drops to ``tol``.
    Non-convergence is reported, not raised.
    """
    if mode not in ("full", "frozen"):
        raise ValueError(f"unknown mode {mode!r}")
    u = spec.zeros().values if u_init is None else np.array(u_init.values, dtype=float)
    u[spec.mask] = 0.0
    dual = dual_operator(spec.mesh, spec.n, spec.mask)
    report = NewtonReport(frozen_jacobian=(mode == "frozen"))
    lu = _factor(jacobian(spec, u)) if mode == "frozen" else None
    for it in range(max_iter + 1):
        try:
            F = residual(spec, u)
        except Exception as exc:  # model blow-up far from the solution
            report.message = f"residual evaluation failed: {exc}"
            break
        if not np.all(np.isfinite(F)):
            report.message = "residual became non-finite"
            break
        r = dual(F)
        report.residuals.append(r)
        if r <= tol:
            report.converged = True
            report.message = "converged"
            break
        if it == max_iter:
            report.message = f"no convergence in {max_iter} iterations"
            break
        if mode == "full":
            lu = _factor(jacobian(spec, u))
        du = _step(lu, F)
        du[spec.mask] = 0.0
        u = u - du
        report.iterations = it + 1
        report.final_update_norm = float(np.abs(du).max())
        if not np.all(np.isfinite(u)):
            report.message = "iterate became non-finite"
            break
    log.debug("newton(%s): %d its, residuals %s", mode, report.iterations, report.residuals)
    return SolutionField(spec.mesh, spec.n, u, spec.mask), report


def check_nondegeneracy(spec: ProblemSpec, u0: SolutionField, tol: float = 1e-9, max_iter: int = 500,
                        return_history: bool = False):
    """Smallest singular value of  K^{-1/2} F'(u0) K^{-1/2}  on the free DOFs.

    K is the discrete H^1 Gram matrix.  Computed by inverse iteration on the
    generalized problem  J^T K^{-1} J y = s^2 K y.
    """
    free = ~spec.mask
    J = spec.diffusion + assemble_linearization(u0, spec.effective_model, spec.mesh)
    J = sp.csc_matrix(J)[free][:, free]
    K = (assemble_stiffness(spec.mesh, spec.n) + assemble_mass(spec.mesh, spec.n)).tocsc()[free][:, free]
    try:
        luJ = factorize(J)
    except NumericError:
        return (0.0, []) if return_history else 0.0
    luK = factorize(K, spd=True)
    y = np.ones(J.shape[0])
    y /= np.sqrt(y @ (K @ y))
    sigma_prev = np.inf
    hist = []
    sigma = np.nan
    for _ in range(max_iter):
        z = luJ.solve(K @ y, trans="T")
        y = luJ.solve(K @ z)
        if not np.all(np.isfinite(y)):
            sigma = 0.0
            break
        y /= np.sqrt(y @ (K @ y))
        Jy = J @ y
        sigma = float(np.sqrt(max(Jy @ luK.solve(Jy), 0.0)))
        hist.append(sigma)
        if abs(sigma - sigma_prev) <= tol * max(sigma, 1e-300):
            break
        sigma_prev = sigma
    return (sigma, hist) if return_history else sigma


@dataclass
class ProbeTrial:
    converged: bool
    iterations: int
    sup_distance: float
    perturbation_size: float


@dataclass
class ProbeReport:
    radius: float
    trials: list
    agree_tol: float

    @property
    def all_agree(self) -> bool:
        return all(t.converged and t.sup_distance <= self.agree_tol for t in self.trials)

    @property
    def label(self) -> str:
        if self.all_agree:
            return "consistent with local uniqueness"
        return "disagreement observed (outside the uniqueness ball or non-convergent)"


def smooth_perturbation(spec: ProblemSpec, rng: np.random.Generator, radius: float) -> np.ndarray:
    """Uniform nodal noise, one damped Jacobi pass, scaled to sup-norm ``radius``."""
    if radius == 0:
        return np.zeros(spec.n * spec.mesh.n_nodes)
    S = assemble_stiffness(spec.mesh, spec.n)
    p = rng.uniform(-1.0, 1.0, size=S.shape[0])
    p[spec.mask] = 0.0
    p = p - (2.0 / 3.0) * (S @ p) / S.diagonal()
    p[spec.mask] = 0.0
    peak = np.abs(p).max()
    return p * (radius / peak) if peak > 0 else p


def local_uniqueness_probe(spec: ProblemSpec, u_ref: SolutionField, radius: float, trials: int = 8,
                           seed: int = 0, tol: float = 1e-10, max_iter: int = 30,
                           agree_tol: float = 1e-8) -> ProbeReport:
    """Newton from random perturbations of ``u_ref``; do all limits coincide with it?"""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        p = smooth_perturbation(spec, rng, radius)
        start = spec.field(u_ref.values + p)
        try:
            u, rep = newton_solve(spec, start, "full", tol, max_iter)
        except DegeneracyError as exc:
            log.info("probe trial hit a singular Jacobian: %s", exc)
            out.append(ProbeTrial(False, 0, float("inf"), float(np.abs(p).max())))
            continue
        dist = float(np.abs(u.values - u_ref.values).max()) if rep.converged else float("inf")
        out.append(ProbeTrial(rep.converged, rep.iterations, dist, float(np.abs(p).max())))
    return ProbeReport(radius, out, agree_tol)
