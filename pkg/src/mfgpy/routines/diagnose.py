"""Checks run on computed solutions.

Residuals of both MFG equations, the maximum principle at grid extrema, the
monotonicity and uniqueness properties of the coupling, and ball-sampled
Morrey / Campanato / Hölder quantities of u and Du.
"""

import asyncio
import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, product

import numpy as np

from mfgpy.bases.Grid import (
    ScalarField,
    TorusGrid,
    VectorField,
    div_A_grad,
    gradient,
    integrate,
    l2_norm,
    linf_norm,
)
from mfgpy.bases.Problem import CouplingSpec, MFGProblem, builtin_problem
from mfgpy.common.errors import ValidationError
from mfgpy.routines.solve import SolverSettings, hopf_cole, linf_bound_k0, residual, solve_mfg


logger = logging.getLogger(__name__)

ALL_PAIRS_LIMIT = 4096
DEFAULT_MAX_LEVEL = 5
DEFAULT_MAX_CENTERS = 256
DEFAULT_PAIR_BUDGET = 20000
ALPHA_RANGE = (0.05, 1.0)
EXACT_ERROR = 1e-12


def _values(f: ScalarField | np.ndarray) -> np.ndarray:
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def gradient_magnitude(u: ScalarField) -> ScalarField:
    return ScalarField(u.grid, np.sqrt(gradient(u).norm_squared()))


# ---------------------------------------------------------------- residuals


def _norms(field: ScalarField) -> tuple[ScalarField, float, float]:
    return field, linf_norm(field), l2_norm(field)


def hj_residual(u: ScalarField, prob: MFGProblem, hbar: float) -> tuple[ScalarField, float, float]:
    return _norms(residual(u, prob, hbar, 0.0))


def fp_residual(u: ScalarField, m: ScalarField, prob: MFGProblem) -> tuple[ScalarField, float, float]:
    """div(A Dmᵀ) + div(m A Duᵀ), m averaged onto the interfaces."""
    if np.any(m.values <= 0):
        raise ValidationError("density must be strictly positive")
    field = div_A_grad(m, prob.A).values + div_A_grad(u, prob.A, weight=m).values
    return _norms(ScalarField(prob.grid, field))


@dataclass(frozen=True)
class MaxPrincipleReport:
    argmax: tuple[int, ...]
    argmin: tuple[int, ...]
    margin_max: float
    margin_min: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.margin_max <= self.tol and self.margin_min >= -self.tol

    @property
    def margins(self) -> list[float]:
        return [self.margin_max, self.margin_min]


def max_principle_check(u: ScalarField, prob: MFGProblem, hbar: float, tol: float) -> MaxPrincipleReport:
    """V - hbar - g(-u) must be ≤ tol where u peaks and ≥ -tol where it bottoms out."""
    zeroth = prob.V.values - hbar - prob.coupling(-u.values)
    i_max, i_min = int(np.argmax(u.values)), int(np.argmin(u.values))
    report = MaxPrincipleReport(
        argmax=u.grid.unravel(i_max), argmin=u.grid.unravel(i_min),
        margin_max=float(zeroth.flat[i_max]), margin_min=float(zeroth.flat[i_min]), tol=tol)
    if not report.passed:
        logger.warning("maximum principle violated", extra={"fields": dict(
            argmax=report.argmax, margin_max=report.margin_max, argmin=report.argmin,
            margin_min=report.margin_min, tol=tol)})
    return report


def monotonicity_gap(m1: ScalarField, m2: ScalarField, coupling: CouplingSpec) -> float:
    if np.any(m1.values <= 0) or np.any(m2.values <= 0):
        raise ValidationError("densities must be strictly positive")
    gap = (coupling(np.log(m1.values)) - coupling(np.log(m2.values))) * (m1.values - m2.values)
    return integrate(ScalarField(m1.grid, gap))


def uniqueness_probe(prob: MFGProblem, settings: SolverSettings | None,
                     inits: list[ScalarField | float]) -> float:
    """Largest sup-distance between full solves started from each init."""
    fields = [i if isinstance(i, ScalarField) else ScalarField.constant(prob.grid, i) for i in inits]
    solutions = [solve_mfg(prob, settings, init=init).u.values for init in fields]
    spread = max((float(np.max(np.abs(a - b))) for a, b in combinations(solutions, 2)), default=0.0)
    logger.info("uniqueness probe", extra={"fields": dict(problem=prob.name, inits=len(fields), spread=spread)})
    return spread


# ---------------------------------------------------------------- balls


@lru_cache(maxsize=64)
def _ball_stencil(grid: TorusGrid, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (mod n) and weights of B(0, r): 1 inside, ½ on the sphere."""
    reach = int(np.ceil(r / grid.h - 1e-9))
    axis = np.arange(-reach, reach + 1)
    offsets = np.stack(np.meshgrid(*(axis,) * grid.dim, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    dist = np.sqrt(np.sum((offsets * grid.h) ** 2, axis=1))
    on_sphere = np.isclose(dist, r, rtol=1e-12, atol=0.0)
    weights = np.where(on_sphere, 0.5, np.where(dist < r, 1.0, 0.0))
    keep = weights > 0

    # the same node may be reached from both sides when r = 1/2
    keys = np.ravel_multi_index(tuple((offsets[keep] % grid.n).T), grid.shape)
    unique, inverse = np.unique(keys, return_inverse=True)
    merged = np.bincount(inverse, weights=weights[keep])
    return np.stack(np.unravel_index(unique, grid.shape), axis=-1), merged


@dataclass(frozen=True, eq=False)
class BallSampler:
    grid: TorusGrid
    radii: tuple[float, ...]
    centers: np.ndarray

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii:
            raise ValidationError("at least one radius is required")
        if any(not 0 < r <= 0.5 for r in radii):
            raise ValidationError("radii must lie in (0, 1/2]")
        if any(a <= b for a, b in zip(radii, radii[1:])):
            raise ValidationError("radii must be strictly decreasing")
        centers = np.asarray(self.centers, dtype=int).reshape(-1, self.grid.dim)
        if centers.size == 0 or np.any(centers < 0) or np.any(centers >= self.grid.n):
            raise ValidationError("centers must be nonempty grid indices")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "centers", centers)

    @classmethod
    def dyadic(cls, grid: TorusGrid, max_level: int = DEFAULT_MAX_LEVEL,
               max_centers: int = DEFAULT_MAX_CENTERS, radii: tuple[float, ...] | None = None) -> "BallSampler":
        """Radii 2^-j down to 2h (at most ``max_level`` of them) on a regular lattice of centers."""
        if radii is None:
            levels = min(max_level, int(np.log2(grid.n // 2)))
            radii = tuple(2.0 ** -j for j in range(1, levels + 1))
        stride = max(1, int(np.ceil((grid.size / max_centers) ** (1 / grid.dim))))
        axis = np.arange(0, grid.n, stride)
        centers = np.stack(np.meshgrid(*(axis,) * grid.dim, indexing="ij"), axis=-1).reshape(-1, grid.dim)
        return cls(grid, radii, centers)

    def stencil(self, r: float) -> tuple[np.ndarray, np.ndarray]:
        return _ball_stencil(self.grid, r)

    def measure(self, r: float) -> float:
        return float(np.sum(self.stencil(r)[1]) * self.grid.cell_volume)

    def gather(self, values: np.ndarray, r: float) -> np.ndarray:
        """Values on B(c, r) for every center c, shape (centers, offsets)."""
        offsets, _ = self.stencil(r)
        nodes = (self.centers[:, None, :] + offsets[None, :, :]) % self.grid.n
        flat = np.ravel_multi_index(tuple(np.moveaxis(nodes, -1, 0)), self.grid.shape)
        return np.asarray(values).ravel()[flat]


def _ball_integrals(a: np.ndarray, r: float, sampler: BallSampler) -> np.ndarray:
    return sampler.gather(a, r) @ sampler.stencil(r)[1] * sampler.grid.cell_volume


def morrey_norm(f: ScalarField | np.ndarray, p: float, lam: float, sampler: BallSampler) -> float:
    """sup over sampled balls of (r^-λ ∫_B |f|^p)^(1/p)."""
    if p < 1:
        raise ValueError(f"p must be ≥ 1, got {p}")
    a = np.abs(_values(f)) ** p
    best = max(r ** -lam * float(np.max(_ball_integrals(a, r, sampler))) for r in sampler.radii)
    return best ** (1.0 / p)


def campanato_norm(f: ScalarField | np.ndarray, p: float, lam: float, sampler: BallSampler,
                   scale_exponent: float | None = None) -> float:
    """As morrey_norm with the ball mean removed; balls scaled by r^-scale_exponent (default λ)."""
    if p < 1:
        raise ValueError(f"p must be ≥ 1, got {p}")
    exponent = lam if scale_exponent is None else scale_exponent
    values = _values(f)
    best = 0.0
    for r in sampler.radii:
        weights = sampler.stencil(r)[1]
        local = sampler.gather(values, r)
        mean = local @ weights / np.sum(weights)
        dev = np.abs(local - mean[:, None]) ** p @ weights * sampler.grid.cell_volume
        best = max(best, r ** -exponent * float(np.max(dev)))
    return best ** (1.0 / p)


def _pair_offsets(grid: TorusGrid) -> np.ndarray:
    offsets = np.array(list(product(range(grid.n), repeat=grid.dim)))
    return offsets[np.any(offsets != 0, axis=1)]


def holder_seminorm(f: ScalarField, alpha: float, pair_budget: int = DEFAULT_PAIR_BUDGET, seed: int = 0) -> float:
    """max |f(x) - f(y)| / dist(x, y)^alpha over all pairs, or over sampled ones on large grids."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    grid, values = f.grid, f.values
    best = 0.0

    def scan(offsets: np.ndarray):
        nonlocal best
        dist = grid.offset_distance(offsets) ** alpha
        for o, d in zip(offsets, dist):
            shifted = np.roll(values, tuple(-o), axis=tuple(range(grid.dim)))
            best = max(best, float(np.max(np.abs(shifted - values))) / d)

    if grid.size <= ALL_PAIRS_LIMIT:
        scan(_pair_offsets(grid))
        return best

    scan(np.vstack([np.eye(grid.dim, dtype=int), -np.eye(grid.dim, dtype=int)]))
    rng = np.random.default_rng(seed)
    i = rng.integers(grid.size, size=pair_budget)
    j = rng.integers(grid.size, size=pair_budget)
    distinct = i != j
    i, j = i[distinct], j[distinct]
    offsets = np.stack(np.unravel_index(j, grid.shape), axis=-1) - np.stack(np.unravel_index(i, grid.shape), axis=-1)
    flat = values.ravel()
    ratios = np.abs(flat[j] - flat[i]) / grid.offset_distance(offsets) ** alpha
    return max(best, float(np.max(ratios, initial=0.0)))


def fit_holder_exponent(f: ScalarField, sampler: BallSampler) -> float:
    """Slope of log(max ball oscillation) against log(r), clamped to [0.05, 1]."""
    osc = []
    for r in sampler.radii:
        local = sampler.gather(f.values, r)
        osc.append(float(np.max(np.max(local, axis=1) - np.min(local, axis=1))))
    osc = np.array(osc)
    radii = np.array(sampler.radii)
    usable = osc > 0
    if np.count_nonzero(usable) < 2:
        return ALPHA_RANGE[1]
    slope = np.polyfit(np.log(radii[usable]), np.log(osc[usable]), 1)[0]
    return float(np.clip(slope, *ALPHA_RANGE))


def caccioppoli_check(u: ScalarField, prob: MFGProblem, sampler: BallSampler, alpha: float | None = None) -> float:
    """C* = max over sampled balls of ∫_B |Du|² / R^(d-2+2α)."""
    if alpha is None:
        alpha = fit_holder_exponent(u, sampler)
    lam = prob.grid.dim - 2 + 2 * alpha
    return morrey_norm(gradient_magnitude(u), 2, lam, sampler) ** 2


# ---------------------------------------------------------------- differentiated equation


def _partial(values: np.ndarray, k: int, h: float, axis_offset: int = 0) -> np.ndarray:
    axis = k + axis_offset
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2 * h)


@dataclass(frozen=True, eq=False)
class DerivativeFields:
    f1: ScalarField
    f2: VectorField
    f3: VectorField
    f4: ScalarField
    residual: ScalarField
    linf: float
    l2: float


def derivative_equation_fields(u: ScalarField, prob: MFGProblem, hbar: float, k: int) -> DerivativeFields:
    """Coefficients of the equation solved by v = ∂u/∂x_k, and its residual at v.

    -div(A Dvᵀ) + f1 v + div(f2) + f3·Dv + f4 = 0 with f1 = g'(-u),
    f2 = -A_{x_k} Duᵀ, f3 = Du A, f4 = ½ Du A_{x_k} Duᵀ + V_{x_k}.
    hbar is constant in x and drops out.
    """
    grid = prob.grid
    if not 0 <= k < grid.dim:
        raise ValueError(f"axis {k} out of range for dim={grid.dim}")
    h = grid.h
    Du = gradient(u).values
    dA = _partial(prob.A.values, k, h, axis_offset=2)
    dV = _partial(prob.V.values, k, h)

    f1 = prob.coupling.derivative(-u.values)
    f2 = -np.einsum("ij...,j...->i...", dA, Du)
    f3 = prob.A.apply(Du)
    f4 = 0.5 * np.einsum("i...,ij...,j...->...", Du, dA, Du) + dV

    v = ScalarField(grid, Du[k])
    Dv = gradient(v).values
    div_f2 = sum(_partial(f2[j], j, h) for j in range(grid.dim))
    res = -div_A_grad(v, prob.A).values + f1 * v.values + div_f2 + np.sum(f3 * Dv, axis=0) + f4

    field, linf, l2 = _norms(ScalarField(grid, res))
    logger.debug("derivative equation", extra={"fields": dict(axis=k, hbar=hbar, linf=linf, l2=l2)})
    return DerivativeFields(ScalarField(grid, f1), VectorField(grid, f2), VectorField(grid, f3),
                            ScalarField(grid, f4), field, linf, l2)


# ---------------------------------------------------------------- studies


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    error: float
    order: float | None = None
    exact: bool = False


async def _asolve(prob: MFGProblem, settings: SolverSettings | None):
    return await asyncio.to_thread(solve_mfg, prob, settings)


async def _aconvergence(problems: list[MFGProblem], settings: SolverSettings | None):
    return await asyncio.gather(*(_asolve(p, settings) for p in problems))


def convergence_study(name: str, sizes: list[int], settings: SolverSettings | None = None,
                      dim: int | None = None, coupling: str = "linear", c_g: float | None = None,
                      **params) -> list[ConvergenceRow]:
    """‖u_n - u*‖∞ per size, with observed orders between consecutive sizes."""
    sizes = sorted(sizes)
    problems = [builtin_problem(name, n, dim=dim, coupling=coupling, c_g=c_g, **params) for n in sizes]
    if any(p.exact is None for p in problems):
        raise ValidationError(f"problem '{name}' has no known exact solution")
    solutions = asyncio.run(_aconvergence(problems, settings))
    errors = [float(np.max(np.abs(s.u.values - p.exact.u.values))) for p, s in zip(problems, solutions)]

    rows = [ConvergenceRow(sizes[0], errors[0], exact=errors[0] <= EXACT_ERROR)]
    for i in range(1, len(sizes)):
        exact = errors[i] <= EXACT_ERROR
        order = None
        if not exact and errors[i - 1] > EXACT_ERROR:
            order = float(np.log(errors[i - 1] / errors[i]) / np.log(sizes[i] / sizes[i - 1]))
        rows.append(ConvergenceRow(sizes[i], errors[i], order, exact))
    for row in rows:
        logger.info("convergence", extra={"fields": dict(
            problem=name, n=row.n, error=row.error, order=row.order, exact=row.exact)})
    return rows


@dataclass(frozen=True)
class EnergyEstimates:
    gradient_energy: float
    coupling_abs: float
    coupling_mass: float
    hbar_identity_gap: float


def energy_estimates(u: ScalarField, prob: MFGProblem, hbar: float) -> EnergyEstimates:
    """A-priori integrals of a solution, plus the gap in hbar = ∫(½DuADuᵀ + V - g(log m))."""
    grid = u.grid
    m = hopf_cole(u).values
    Du = gradient(u)
    coupled = prob.coupling(-u.values)

    def total(values: np.ndarray) -> float:
        return integrate(ScalarField(grid, values))

    identity = total(0.5 * prob.A.quadratic_form(Du.values) + prob.V.values - coupled)
    return EnergyEstimates(
        gradient_energy=total(Du.norm_squared() * (m + 1.0)),
        coupling_abs=total(np.abs(coupled)),
        coupling_mass=total(m * coupled),
        hbar_identity_gap=abs(hbar - identity),
    )


@dataclass(frozen=True)
class EmbeddingCheck:
    nu: float
    morrey_Du: float
    campanato_u: float
    morrey_u_oscillation: float


def embedding_spot_check(u: ScalarField, nu: float, sampler: BallSampler) -> EmbeddingCheck:
    """Du in L^{2,ν} next to u's Campanato quantity with exponent ν + 2."""
    return EmbeddingCheck(
        nu=nu,
        morrey_Du=morrey_norm(gradient_magnitude(u), 2, nu, sampler),
        campanato_u=campanato_norm(u, 2, nu + 2, sampler),
        morrey_u_oscillation=morrey_norm(u.values - np.mean(u.values), 2, nu + 2, sampler),
    )


@dataclass(frozen=True)
class RegularityReport:
    morrey_Du: float
    morrey_lambda: float
    campanato: float
    holder_alpha: float
    holder_seminorm: float
    caccioppoli_ratio: float
    k0_margin: float


def regularity_report(u: ScalarField, prob: MFGProblem, hbar: float, sampler: BallSampler,
                      pair_budget: int = DEFAULT_PAIR_BUDGET, seed: int = 0) -> RegularityReport:
    alpha = fit_holder_exponent(u, sampler)
    lam = prob.grid.dim - 2 + 2 * alpha
    morrey = morrey_norm(gradient_magnitude(u), 2, lam, sampler)
    report = RegularityReport(
        morrey_Du=morrey,
        morrey_lambda=lam,
        campanato=campanato_norm(u, 2, lam + 2, sampler),
        holder_alpha=alpha,
        holder_seminorm=holder_seminorm(u, alpha, pair_budget, seed),
        caccioppoli_ratio=morrey ** 2,
        k0_margin=linf_bound_k0(prob, hbar) - linf_norm(u),
    )
    logger.info("regularity", extra={"fields": dict(
        alpha=alpha, morrey_Du=morrey, caccioppoli=report.caccioppoli_ratio, k0_margin=report.k0_margin)})
    return report
