"""Configuration-driven epsilon sweeps: pipeline, rate fits and report files."""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .cell import (
    HomogenizedTensor,
    PeriodicCoefficientField,
    cache_path,
    checkerboard_field,
    constant_field,
    flux_correctors,
    homogenized_tensor,
    laminate_field,
    load_cell_cache,
    save_cell_cache,
    solve_cell_problems,
    tabulated_field,
    trigonometric_field,
    weak_flux_residual,
)
from .expansion import DIRECT, SMOOTHED, ExpansionRecipe, build_expansion, discrepancy
from .fem import W1p, norm
from .mesh import EDGE_NAMES, DomainSpec
from .semilinear import (
    NonlinearityModel,
    ProblemSpec,
    check_nondegeneracy,
    combine,
    cubic_reaction,
    linear_reaction,
    local_uniqueness_probe,
    manufactured_forcing,
    newton_solve,
    robin_model,
)

__all__ = [
    "ConfigError",
    "StudyConfig",
    "parse_config",
    "config_from_string",
    "reference_config",
    "REFERENCE_CONFIGS",
    "CellData",
    "SweepRecord",
    "RateFit",
    "StudyReport",
    "fit_rate",
    "prepare_cell",
    "run_study",
    "run_probe",
    "run_solve",
    "emit_outputs",
    "CSV_HEADER",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["epsilon", "h", "sup_err", "w12_err_vs_expansion", "discrepancy", "newton_iters", "apriori_ratio"]
REFERENCE_CONFIGS = ("constant", "checkerboard", "laminate_robin")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists ``section.key: message`` entries."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


# ---------------------------------------------------------------------------
# configuration

# section -> key -> default (as text, parsed like user input)
_SCHEMA: dict[str, dict[str, str]] = {
    "problem": {"name": "study"},
    "domain": {"kind": "rectangle", "vertices": "0 0; 1 0; 1 1; 0 1", "robin": "none"},
    "coefficient": {
        "kind": "checkerboard",
        "values": "1, 4",
        "fraction": "1/2",
        "c0": "2",
        "c1": "1",
        "tensor": "1 0 0 1",
        "table": "",
        "legendre": "false",
    },
    "model": {
        "reaction": "cubic",
        "coefficient": "1",
        "forcing": "manufactured",
        "robin_g": "1",
        "robin_k": "1",
    },
    "cell": {"m": "128", "cache": "true"},
    "study": {
        "epsilons": "1/8, 1/16, 1/32, 1/64",
        "kappa": "8",
        "h0": "1/128",
        "variant": "direct",
        "tensor": "mesh-consistent",
        "cross_seed": "true",
        "seed": "0",
    },
    "expansion": {"delta_rule": "power", "r": "1/4", "boundary": "truncate"},
    "newton": {"tol": "1e-10", "max_iter": "30", "mode": "full"},
    "probe": {"eps": "1/32", "radius": "0.05", "trials": "8", "agree_tol": "1e-8"},
    "output": {"dir": "homog2d-out"},
}


@dataclass(frozen=True)
class StudyConfig:
    name: str
    domain: DomainSpec
    coefficient_kind: str
    coefficient_params: dict
    legendre: bool
    reaction: str
    reaction_coefficient: float
    forcing: str
    robin_g: float
    robin_k: float
    m: int
    use_cache: bool
    epsilons: tuple
    kappa: int
    h0: float
    variant: str
    tensor: str
    cross_seed: bool
    seed: int
    delta_rule: str
    r: float
    boundary: str
    tol: float
    max_iter: int
    mode: str
    probe_eps: float
    probe_radius: float
    probe_trials: int
    probe_agree_tol: float
    output_dir: Path
    source: str = "<string>"

    def coefficient_field(self) -> PeriodicCoefficientField:
        p = self.coefficient_params
        kind = self.coefficient_kind
        if kind == "constant":
            return constant_field(np.asarray(p["tensor"]).reshape(2, 2))
        if kind == "laminate":
            return laminate_field(p["values"], p["fraction"])
        if kind == "checkerboard":
            return checkerboard_field(p["values"])
        if kind == "trigonometric":
            return trigonometric_field(p["c0"], p["c1"])
        if kind == "tabulated":
            return tabulated_field(np.load(p["table"]))
        raise ConfigError([f"coefficient.kind: unknown field {kind!r}"])

    def with_overrides(self, **kw) -> "StudyConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return StudyConfig(**d)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["domain"] = {"vertices": list(self.domain.vertices), "robin_edges": sorted(self.domain.robin_edges),
                       "kind": self.domain.kind}
        d["output_dir"] = str(self.output_dir)
        d["epsilons"] = list(self.epsilons)
        return d


def _number(text: str) -> float:
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _numbers(text: str) -> list[float]:
    return [_number(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _vertices(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split(";"):
        parts = chunk.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"vertex {chunk.strip()!r} needs two coordinates")
        out.append((_number(parts[0]), _number(parts[1])))
    return out


def _robin_edges(text: str, n_edges: int) -> frozenset:
    t = text.strip().lower()
    if t in ("", "none"):
        return frozenset()
    if t == "all":
        return frozenset(range(n_edges))
    edges = set()
    for item in t.replace(";", ",").split(","):
        item = item.strip()
        if item in EDGE_NAMES and n_edges == 4:
            edges.add(EDGE_NAMES.index(item))
        elif item.isdigit():
            edges.add(int(item))
        else:
            raise ValueError(f"unknown boundary edge {item!r}")
    return frozenset(edges)


def config_from_string(text: str, source: str = "<string>", base_dir: Path | None = None) -> StudyConfig:
    """Parse INI-style text: ``[section]`` headers and ``key = value`` lines.

    Keys may also be written flat as ``section.key = value`` before any header.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    flat = []
    body = []
    seen_header = False
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("["):
            seen_header = True
        if not seen_header and "=" in s and "." in s.split("=", 1)[0] and not s.startswith("#"):
            flat.append(s)
        else:
            body.append(line)
    problems: list[str] = []
    try:
        parser.read_string("\n".join(body), source=source)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    raw = {sec: dict(keys) for sec, keys in _SCHEMA.items()}
    for line in flat:
        key, value = (t.strip() for t in line.split("=", 1))
        sec, _, k = key.partition(".")
        if sec not in _SCHEMA or k not in _SCHEMA[sec]:
            problems.append(f"{key}: unknown key")
            continue
        raw[sec][k] = value
    for sec in parser.sections():
        if sec not in _SCHEMA:
            problems.append(f"{sec}: unknown section")
            continue
        for k, value in parser.items(sec):
            if k not in _SCHEMA[sec]:
                problems.append(f"{sec}.{k}: unknown key")
                continue
            raw[sec][k] = value
    if problems:
        raise ConfigError(problems)
    return _validate(raw, source, base_dir or Path.cwd())


def _validate(raw: dict, source: str, base_dir: Path) -> StudyConfig:
    problems: list[str] = []

    def get(sec, key, conv, check=None, message=""):
        try:
            v = conv(raw[sec][key])
        except (ValueError, ZeroDivisionError) as exc:
            problems.append(f"{sec}.{key}: {exc}")
            return None
        if check is not None and not check(v):
            problems.append(f"{sec}.{key}: {message} (got {raw[sec][key]!r})")
            return None
        return v

    def choice(sec, key, options):
        v = raw[sec][key].strip().lower()
        if v not in options:
            problems.append(f"{sec}.{key}: must be one of {', '.join(options)} (got {v!r})")
            return None
        return v

    def integer(text):
        f = _number(text)
        if f != int(f):
            raise ValueError(f"expected an integer, got {text!r}")
        return int(f)

    name = raw["problem"]["name"].strip() or "study"
    kind = choice("domain", "kind", ("rectangle", "polygon"))
    verts = get("domain", "vertices", _vertices)
    domain = None
    if verts is not None and kind is not None:
        try:
            edges = _robin_edges(raw["domain"]["robin"], len(verts))
            domain = DomainSpec(tuple(verts), edges, kind)
        except ValueError as exc:
            problems.append(f"domain: {exc}")

    ckind = choice("coefficient", "kind", ("constant", "laminate", "checkerboard", "trigonometric", "tabulated"))
    legendre = get("coefficient", "legendre", _bool)
    params: dict = {}
    if ckind in ("laminate", "checkerboard"):
        vals = get("coefficient", "values", _numbers, lambda v: len(v) == 2 and min(v) > 0,
                   "needs two positive values")
        params["values"] = tuple(vals) if vals else None
        if ckind == "laminate":
            params["fraction"] = get("coefficient", "fraction", _number, lambda f: 0 < f < 1, "must lie in (0, 1)")
    elif ckind == "trigonometric":
        params["c0"] = get("coefficient", "c0", _number)
        params["c1"] = get("coefficient", "c1", _number)
        if params["c0"] is not None and params["c1"] is not None and not params["c0"] > abs(params["c1"]):
            problems.append("coefficient.c1: |c1| must be smaller than c0 for a positive field")
    elif ckind == "constant":
        t = get("coefficient", "tensor", lambda s: [_number(x) for x in s.replace(",", " ").split()],
                lambda v: len(v) == 4, "needs four entries a11 a12 a21 a22")
        params["tensor"] = tuple(t) if t else None
    elif ckind == "tabulated":
        p = raw["coefficient"]["table"].strip()
        if not p:
            problems.append("coefficient.table: a tabulated field needs a .npy file")
        else:
            path = Path(p)
            params["table"] = str(path if path.is_absolute() else base_dir / path)

    reaction = choice("model", "reaction", ("cubic", "linear", "none"))
    rcoef = get("model", "coefficient", _number)
    forcing = raw["model"]["forcing"].strip().lower()
    if forcing not in ("manufactured", "zero"):
        try:
            _number(forcing)
        except ValueError:
            problems.append(f"model.forcing: must be manufactured, zero or a number (got {forcing!r})")
    robin_g = get("model", "robin_g", _number)
    robin_k = get("model", "robin_k", _number)

    m = get("cell", "m", integer, lambda v: v >= 8, "cell resolution must be at least 8")
    use_cache = get("cell", "cache", _bool)
    eps = get("study", "epsilons", _numbers, lambda v: len(v) > 0, "needs at least one value")
    if eps:
        if any(not 0 < e < 0.5 for e in eps):
            problems.append("study.epsilons: all values must lie in (0, 1/2)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            problems.append("study.epsilons: not strictly decreasing")
    kappa = get("study", "kappa", integer, lambda v: v >= 8, "kappa must be at least 8")
    h0 = get("study", "h0", _number, lambda v: 0 < v < 1, "must lie in (0, 1)")
    variant = choice("study", "variant", (DIRECT, SMOOTHED))
    tensor = choice("study", "tensor", ("mesh-consistent", "cell"))
    cross = get("study", "cross_seed", _bool)
    seed = get("study", "seed", integer)
    delta_rule = choice("expansion", "delta_rule", ("power", "log"))
    r = get("expansion", "r", _number, lambda v: 0 < v < 0.5, "must lie in (0, 1/2)")
    boundary = choice("expansion", "boundary", ("truncate", "renormalize"))
    tol = get("newton", "tol", _number, lambda v: v > 0, "must be positive")
    max_iter = get("newton", "max_iter", integer, lambda v: v >= 1, "must be at least 1")
    mode = choice("newton", "mode", ("full", "frozen"))
    peps = get("probe", "eps", _number, lambda v: 0 < v < 0.5, "must lie in (0, 1/2)")
    prad = get("probe", "radius", _number, lambda v: v >= 0, "must be non-negative")
    ptri = get("probe", "trials", integer, lambda v: v >= 1, "must be at least 1")
    pagree = get("probe", "agree_tol", _number, lambda v: v > 0, "must be positive")
    out = Path(raw["output"]["dir"].strip())
    out = out if out.is_absolute() else base_dir / out

    if domain is not None and domain.robin_everywhere and legendre is False:
        problems.append("coefficient.legendre: Robin conditions on the whole boundary need legendre = true")
    if problems:
        raise ConfigError(problems)

    cfg = StudyConfig(
        name=name, domain=domain, coefficient_kind=ckind, coefficient_params=params, legendre=legendre,
        reaction=reaction, reaction_coefficient=rcoef, forcing=forcing, robin_g=robin_g, robin_k=robin_k,
        m=m, use_cache=use_cache, epsilons=tuple(eps), kappa=kappa, h0=h0, variant=variant, tensor=tensor,
        cross_seed=cross, seed=seed, delta_rule=delta_rule, r=r, boundary=boundary, tol=tol,
        max_iter=max_iter, mode=mode, probe_eps=peps, probe_radius=prad, probe_trials=ptri,
        probe_agree_tol=pagree, output_dir=out, source=source,
    )
    if domain.robin_everywhere:
        a = cfg.coefficient_field()
        if a.legendre_margin() <= 0:
            raise ConfigError(["coefficient: field violates the Legendre condition required for pure Robin data"])
    return cfg


def parse_config(path) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    return config_from_string(text, str(path), path.parent)


def reference_config(name: str) -> Path:
    """Path of one of the shipped reference study files."""
    if name not in REFERENCE_CONFIGS:
        raise KeyError(f"unknown reference config {name!r}; choose from {', '.join(REFERENCE_CONFIGS)}")
    return Path(str(resources.files("homog2d") / "configs" / f"{name}.ini"))


# ---------------------------------------------------------------------------
# problem construction


def _model(cfg: StudyConfig, ahat: HomogenizedTensor) -> NonlinearityModel:
    if cfg.forcing == "manufactured":
        if cfg.reaction == "cubic":
            f = manufactured_forcing(ahat, lambda u: cfg.reaction_coefficient * u ** 3)
        elif cfg.reaction == "linear":
            f = manufactured_forcing(ahat, lambda u: cfg.reaction_coefficient * u)
        else:
            f = manufactured_forcing(ahat, lambda u: 0.0 * u)
    elif cfg.forcing == "zero":
        f = None
    else:
        c = _number(cfg.forcing)
        f = lambda x: np.full(len(x), c)  # noqa: E731
    if cfg.reaction == "cubic":
        model = cubic_reaction(f, cfg.reaction_coefficient)
    elif cfg.reaction == "linear":
        model = linear_reaction(f, cfg.reaction_coefficient)
    else:
        model = linear_reaction(f, 0.0)
    if cfg.domain.robin_edges:
        model = combine(model, robin_model(cfg.robin_g, cfg.robin_k), name=f"{model.name}+robin")
    return model


@dataclass
class CellData:
    field: PeriodicCoefficientField
    correctors: object
    ahat: HomogenizedTensor
    flux_residual: float | None
    flux_residual_uncorrected: float | None
    from_cache: bool


def prepare_cell(cfg: StudyConfig, m: int | None = None, use_cache: bool | None = None,
                 with_flux: bool = True) -> CellData:
    """Cell problems, homogenized tensor and flux correctors at resolution m (cached)."""
    a = cfg.coefficient_field()
    m = cfg.m if m is None else m
    use_cache = cfg.use_cache if use_cache is None else use_cache
    path = cache_path(cfg.output_dir / "cache", a, m)
    hit = None
    if use_cache:
        hit = load_cell_cache(path, a, m)
        if hit is not None:
            corr, ahat, _, _, fr = hit
            log.info("cell cache hit: %s", path)
            if fr is not None or not with_flux:
                fr = fr or (None, None)
                return CellData(a, corr, ahat, fr[0], fr[1], True)
    if hit is None:
        corr = solve_cell_problems(a, m)
        ahat = homogenized_tensor(a, corr)
    res = res0 = None
    flux = None
    if with_flux:
        flux = flux_correctors(a, corr, ahat)
        res, res0 = weak_flux_residual(flux, "compatible"), weak_flux_residual(flux, "element")
    if use_cache:
        save_cell_cache(path, a, corr, ahat, flux, None if flux is None else (res, res0))
    return CellData(a, corr, ahat, res, res0, False)


# ---------------------------------------------------------------------------
# rates and records


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_points: int
    excluded: tuple = ()

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(pairs: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through (log eps, log error).

    Pairs with non-positive or non-finite error are dropped and listed in
    ``excluded``.  ``residual`` is the root mean square of the log residuals.
    """
    keep, drop = [], []
    for e, err in pairs:
        (keep if (err > 0 and math.isfinite(err) and e > 0) else drop).append((e, err))
    if len(keep) < 3:
        raise ValueError(f"need at least 3 positive errors, got {len(keep)}")
    x = np.log([p[0] for p in keep])
    y = np.log([p[1] for p in keep])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return RateFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res ** 2))), len(keep), tuple(drop))


@dataclass
class SweepRecord:
    epsilon: float
    h: float
    sup_err: float = float("nan")
    w12_err_vs_expansion: float = float("nan")
    discrepancy: float = float("nan")
    newton_iters: int = 0
    apriori_ratio: float = float("nan")
    converged: bool = False
    discrepancy_smoothed: float = float("nan")
    discrepancy_direct: float = float("nan")
    expansion_sup_dev: float = float("nan")
    cross_seed_gap: float = float("nan")
    newton_residuals: list = field(default_factory=list)
    error: str = ""
    seconds: float = 0.0

    def csv_row(self) -> list:
        return [repr(float(self.epsilon)), repr(float(self.h)), repr(float(self.sup_err)),
                repr(float(self.w12_err_vs_expansion)), repr(float(self.discrepancy)), str(int(self.newton_iters)),
                repr(float(self.apriori_ratio))]


@dataclass
class StudyReport:
    name: str
    variant: str
    ahat: list
    certificate: float
    ahat_study: list
    certificate_study: float
    tensor_mode: str
    sigma_min: float
    homogenized_iterations: int
    homogenized_residual: float
    records: list
    slopes: dict
    flux_residual: float | None = None
    flux_residual_uncorrected: float | None = None
    notes: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [r for r in self.records if not r.converged]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["records"] = [asdict(r) for r in self.records]
        return d


def _slopes(records: Sequence[SweepRecord]) -> dict:
    ok = [r for r in records if r.converged]
    out = {}
    for key in ("sup_err", "discrepancy", "discrepancy_smoothed", "discrepancy_direct", "expansion_sup_dev",
                "w12_err_vs_expansion"):
        pairs = [(r.epsilon, getattr(r, key)) for r in ok]
        try:
            out[key] = fit_rate(pairs).to_dict()
        except ValueError:
            out[key] = "insufficient data"
    return out


# ---------------------------------------------------------------------------
# pipeline


def _study_cell(cfg: StudyConfig, cell: CellData):
    if cfg.tensor == "cell":
        return cell.correctors, cell.ahat
    # a fine mesh with kappa elements per period homogenizes to the discrete
    # cell tensor on the kappa x kappa cell grid
    corr = solve_cell_problems(cell.field, cfg.kappa)
    return corr, homogenized_tensor(cell.field, corr)


def _homogenized(cfg: StudyConfig, ahat: HomogenizedTensor):
    model = _model(cfg, ahat)
    spec = ProblemSpec(cfg.domain, ahat, model, h=cfg.h0)
    u0, rep = newton_solve(spec, None, "full", cfg.tol, cfg.max_iter)
    return spec, model, u0, rep


def _recipe(cfg: StudyConfig, variant: str, eps: float) -> ExpansionRecipe:
    return ExpansionRecipe(variant, eps, cfg.delta_rule, cfg.r, cfg.boundary)


def run_study(cfg: StudyConfig, variant: str | None = None, use_cache: bool | None = None) -> StudyReport:
    """Cell solve, homogenized solve, non-degeneracy check and the epsilon sweep."""
    variant = variant or cfg.variant
    other = SMOOTHED if variant == DIRECT else DIRECT
    notes = []
    cell = prepare_cell(cfg, use_cache=use_cache)
    corr, ahat_s = _study_cell(cfg, cell)
    hspec, model, u0, hrep = _homogenized(cfg, ahat_s)
    if not hrep.converged:
        notes.append(f"homogenized solve did not converge: {hrep.message}")
    sigma = check_nondegeneracy(hspec, u0)
    notes.append("coercivity certificate is sufficient, not equivalent, for systems")
    notes.append("residual norms are the discrete dual H^1 surrogate")
    records = []
    for eps in cfg.epsilons:
        t0 = time.perf_counter()
        rec = SweepRecord(float(eps), float(eps / cfg.kappa))
        try:
            spec = ProblemSpec(cfg.domain, cell.field, model, eps=eps, h=eps / cfg.kappa)
            rec.h = float(spec.mesh.spacing)
            seeds = {}
            for var in (variant, other):
                ub = build_expansion(_recipe(cfg, var, eps), u0, corr, spec.mesh, cfg.domain)
                seeds[var] = (ub, discrepancy(spec, ub))
            ubar, disc = seeds[variant]
            rec.discrepancy = disc
            rec.discrepancy_smoothed = seeds[SMOOTHED][1]
            rec.discrepancy_direct = seeds[DIRECT][1]
            u0f = u0.transfer(spec.mesh)
            rec.expansion_sup_dev = float(np.abs(ubar.values - u0f.values).max())
            ue, rep = newton_solve(spec, ubar, cfg.mode, cfg.tol, cfg.max_iter)
            rec.newton_iters = rep.iterations
            rec.newton_residuals = [float(r) for r in rep.residuals]
            rec.converged = rep.converged
            if not rep.converged:
                rec.error = rep.message
            rec.sup_err = float(np.abs(ue.values - u0f.values).max())
            rec.w12_err_vs_expansion = norm(ue.copy(ue.values - ubar.values), W1p(2))
            rec.apriori_ratio = rec.w12_err_vs_expansion / disc if disc > 0 else float("nan")
            if cfg.cross_seed:
                ue2, rep2 = newton_solve(spec, seeds[other][0], cfg.mode, cfg.tol, cfg.max_iter)
                rec.cross_seed_gap = float(np.abs(ue2.values - ue.values).max()) if rep2.converged else float("inf")
        except Exception as exc:  # isolate failures per epsilon
            log.exception("sweep entry eps=%g failed", eps)
            rec.converged = False
            rec.error = f"{type(exc).__name__}: {exc}"
        rec.seconds = time.perf_counter() - t0
        log.info("eps=%g sup_err=%.3e disc=%.3e its=%d (%.1fs)", eps, rec.sup_err, rec.discrepancy,
                 rec.newton_iters, rec.seconds)
        records.append(rec)
    return StudyReport(
        name=cfg.name,
        variant=variant,
        ahat=cell.ahat.tensor.tolist(),
        certificate=cell.ahat.coercivity_lower_bound,
        ahat_study=ahat_s.tensor.tolist(),
        certificate_study=ahat_s.coercivity_lower_bound,
        tensor_mode=cfg.tensor,
        sigma_min=float(sigma),
        homogenized_iterations=hrep.iterations,
        homogenized_residual=float(hrep.residuals[-1]) if hrep.residuals else float("nan"),
        records=records,
        slopes=_slopes(records),
        flux_residual=cell.flux_residual,
        flux_residual_uncorrected=cell.flux_residual_uncorrected,
        notes=notes,
        config=cfg.to_dict(),
    )


def run_solve(cfg: StudyConfig, eps: float | None = None, variant: str | None = None,
              use_cache: bool | None = None) -> dict:
    """Homogenized solve plus one oscillating solve at ``eps`` (default: the first sweep value)."""
    variant = variant or cfg.variant
    eps = cfg.epsilons[0] if eps is None else eps
    cell = prepare_cell(cfg, use_cache=use_cache, with_flux=False)
    corr, ahat_s = _study_cell(cfg, cell)
    hspec, model, u0, hrep = _homogenized(cfg, ahat_s)
    spec = ProblemSpec(cfg.domain, cell.field, model, eps=eps, h=eps / cfg.kappa)
    ubar = build_expansion(_recipe(cfg, variant, eps), u0, corr, spec.mesh, cfg.domain)
    ue, rep = newton_solve(spec, ubar, cfg.mode, cfg.tol, cfg.max_iter)
    u0f = u0.transfer(spec.mesh)
    return {
        "epsilon": eps,
        "h": spec.mesh.spacing,
        "homogenized_converged": hrep.converged,
        "homogenized_residuals": hrep.residuals,
        "converged": rep.converged,
        "newton_iters": rep.iterations,
        "residuals": rep.residuals,
        "sup_err": float(np.abs(ue.values - u0f.values).max()),
        "discrepancy": discrepancy(spec, ubar),
    }


def run_probe(cfg: StudyConfig, seed: int | None = None, variant: str | None = None,
              use_cache: bool | None = None):
    """Uniqueness probe at ``probe.eps`` around the solution seeded by the expansion."""
    variant = variant or cfg.variant
    seed = cfg.seed if seed is None else seed
    eps = cfg.probe_eps
    cell = prepare_cell(cfg, use_cache=use_cache, with_flux=False)
    corr, ahat_s = _study_cell(cfg, cell)
    _, model, u0, _ = _homogenized(cfg, ahat_s)
    spec = ProblemSpec(cfg.domain, cell.field, model, eps=eps, h=eps / cfg.kappa)
    ubar = build_expansion(_recipe(cfg, variant, eps), u0, corr, spec.mesh, cfg.domain)
    u_ref, rep = newton_solve(spec, ubar, cfg.mode, cfg.tol, cfg.max_iter)
    if not rep.converged:
        raise RuntimeError(f"reference solve did not converge: {rep.message}")
    return local_uniqueness_probe(spec, u_ref, cfg.probe_radius, cfg.probe_trials, seed, cfg.tol,
                                  cfg.max_iter, cfg.probe_agree_tol)


# ---------------------------------------------------------------------------
# outputs


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Path, frozenset, set)):
        return str(o) if isinstance(o, Path) else sorted(o)
    return str(o)


def write_csv(records: Sequence[SweepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


def _plot(report: StudyReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "homog2d"
    ok = [r for r in report.records if r.converged]
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for key, label, marker in (("sup_err", "sup error", "o"), ("discrepancy", "discrepancy", "s")):
        if not ok:
            break
        e = np.array([r.epsilon for r in ok])
        v = np.array([getattr(r, key) for r in ok])
        ax.loglog(e, v, marker, label=label)
        fit = report.slopes.get(key)
        if isinstance(fit, dict):
            ax.loglog(e, np.exp(fit["intercept"]) * e ** fit["slope"], "-", lw=1,
                      label=f"fit slope {fit['slope']:.2f}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("norm")
    ax.set_title(report.name)
    if ok:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_outputs(report: StudyReport, directory) -> dict:
    """Write sweep.csv, report.json and sweep.svg; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"csv": d / "sweep.csv", "report": d / "report.json", "plot": d / "sweep.svg"}
    write_csv(report.records, paths["csv"])
    with open(paths["report"], "w", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    _plot(report, paths["plot"])
    return paths
