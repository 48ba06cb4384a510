"""Hopf–Cole reduced MFG solver.

The system collapses to one scalar equation for u once m = exp(-u):

    -div(A Du) + H_eps(x, Du) + V - hbar - g(-u) = 0

which is solved by damped Newton along a decreasing eps schedule. The ergodic
constant hbar is then bisected until the mass of exp(-u) is one.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from mfgpy.bases.Grid import (
    ScalarField,
    div_A_grad_matrix,
    gradient,
    gradient_matrices,
    integrate,
)
from mfgpy.bases.Hamiltonian import EpsSchedule, dh_eps_dp_field, h_eps_field
from mfgpy.bases.Problem import CouplingSpec, MFGProblem, coupling_samples, validate_coupling
from mfgpy.common.errors import BracketFailure, NonConvergence, ValidationError


logger = logging.getLogger(__name__)

MAX_EXPANSIONS = 60
K0_SLACK = 1e-6


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    armijo_c: float = 1e-4
    min_step: float = 2.0 ** -20

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError(f"newton_tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValidationError(f"newton_max_iter must be ≥ 1, got {self.max_iter}")
        if not 0 < self.armijo_c < 1:
            raise ValidationError(f"armijo_c must lie in (0,1), got {self.armijo_c}")
        if not 0 < self.min_step <= 1:
            raise ValidationError(f"min_step must lie in (0,1], got {self.min_step}")


@dataclass(frozen=True)
class SolverSettings:
    schedule: EpsSchedule = field(default_factory=EpsSchedule)
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    bisect_tol: float = 1e-10
    bisect_max_iter: int = 200
    max_expansions: int = MAX_EXPANSIONS
    truncate_coupling: bool = False

    def __post_init__(self):
        if not self.bisect_tol > 0:
            raise ValidationError(f"bisect_tol must be positive, got {self.bisect_tol}")
        if self.bisect_max_iter < 1:
            raise ValidationError(f"bisect_max_iter must be ≥ 1, got {self.bisect_max_iter}")
        if self.max_expansions < 0:
            raise ValidationError(f"max_expansions must be nonnegative, got {self.max_expansions}")


@dataclass
class NewtonReport:
    eps: float
    hbar: float
    stage: int | None = None
    iterations: int = 0
    residual_linf: float = float("nan")
    steps: list[float] = field(default_factory=list)
    increment: float | None = None
    linf_u: float | None = None
    converged: bool = False


@dataclass(frozen=True, eq=False)
class MFGSolution:
    u: ScalarField
    m: ScalarField
    hbar: float
    reports: tuple[NewtonReport, ...]
    k0: float
    mass: float
    bisect_iters: int = 0
    newton_iters_total: int = 0
    history: tuple[tuple[float, float], ...] = ()
    iterates: tuple[ScalarField, ...] = ()

    @property
    def eps_stages(self) -> int:
        return len(self.reports)

    @property
    def residual_linf(self) -> float:
        return self.reports[-1].residual_linf if self.reports else float("nan")


@lru_cache(maxsize=16)
def _operators(prob: MFGProblem) -> tuple[sp.csr_matrix, list[sp.csr_matrix]]:
    return div_A_grad_matrix(prob.A), gradient_matrices(prob.grid)


def _coupling(prob: MFGProblem, hbar: float, truncate: bool) -> CouplingSpec:
    return prob.coupling.truncated(prob.k0(hbar)) if truncate else prob.coupling


def _centered(u: np.ndarray) -> tuple[np.ndarray, float]:
    offset = float(np.mean(u))
    return u - offset, offset


def _residual_flat(w: np.ndarray, offset: float, prob: MFGProblem, hbar: float, eps: float,
                   g: CouplingSpec) -> np.ndarray:
    """F at u = offset + w.

    L and the gradient annihilate constants, so they only see w. With u near a
    large offset one ulp of u would otherwise move L @ u by about eps·‖L‖·|u|,
    which is above newton_tol at n = 256.
    """
    L, _ = _operators(prob)
    ham = h_eps_field(gradient(ScalarField(prob.grid, w)), prob.A, eps).ravel()
    return -(L @ w) + ham + prob.V.flat - hbar - g(-(w + offset))


def _jacobian_flat(w: np.ndarray, offset: float, prob: MFGProblem, eps: float, g: CouplingSpec) -> sp.csr_matrix:
    L, G = _operators(prob)
    drift = dh_eps_dp_field(gradient(ScalarField(prob.grid, w)), prob.A, eps)
    J = -L + sp.diags(g.derivative(-(w + offset)))
    for k, G_k in enumerate(G):
        J = J + sp.diags(drift[k].ravel()) @ G_k
    return J.tocsr()


def residual(u: ScalarField, prob: MFGProblem, hbar: float, eps: float,
             coupling: CouplingSpec | None = None) -> ScalarField:
    g = coupling or prob.coupling
    return ScalarField(prob.grid, _residual_flat(*_centered(u.flat), prob, hbar, eps, g))


def jacobian(u: ScalarField, prob: MFGProblem, eps: float, coupling: CouplingSpec | None = None) -> sp.csr_matrix:
    """dF/du at u; hbar enters F additively and drops out."""
    return _jacobian_flat(*_centered(u.flat), prob, eps, coupling or prob.coupling)


def solve_scalar(
    prob: MFGProblem,
    hbar: float,
    eps: float,
    init: ScalarField,
    opts: NewtonOptions = NewtonOptions(),
    coupling: CouplingSpec | None = None,
    stage: int | None = None,
) -> tuple[ScalarField, NewtonReport]:
    g = coupling or prob.coupling
    report = NewtonReport(eps=eps, hbar=hbar, stage=stage)
    # iterate on the deviation w from a scalar offset; the mean moves into the offset after every step
    w, offset = _centered(init.flat)
    F = _residual_flat(w, offset, prob, hbar, eps, g)
    norm = float(np.max(np.abs(F)))

    def fail(message: str):
        report.residual_linf = norm
        return NonConvergence(message, last_iterate=ScalarField(prob.grid, w + offset), report=report, stage=stage)

    while norm > opts.tol:
        if report.iterations >= opts.max_iter:
            raise fail(f"Newton reached max_iter={opts.max_iter} with residual {norm:.3e} (eps={eps:g}, hbar={hbar:g})")
        J = _jacobian_flat(w, offset, prob, eps, g)
        delta = spsolve(J.tocsc(), -F)
        if not np.all(np.isfinite(delta)):
            raise fail(f"singular Newton system (eps={eps:g}, hbar={hbar:g})")

        t = 1.0
        while True:
            trial = w + t * delta
            if np.all(np.isfinite(trial)):
                with np.errstate(over="ignore", invalid="ignore"):
                    F_trial = _residual_flat(trial, offset, prob, hbar, eps, g)
                norm_trial = float(np.max(np.abs(F_trial)))
                if np.isfinite(norm_trial) and (
                        norm_trial <= (1.0 - opts.armijo_c * t) * norm or norm_trial <= opts.tol):
                    break
            t *= 0.5
            if t < opts.min_step:
                raise fail(f"line search exhausted below step {opts.min_step:g} with residual {norm:.3e}"
                           f" (eps={eps:g}, hbar={hbar:g})")

        shift = float(np.mean(trial))
        w, offset, F, norm = trial - shift, offset + shift, F_trial, norm_trial
        report.iterations += 1
        report.steps.append(t)
        logger.debug("newton iteration", extra={"fields": dict(
            stage=stage, eps=eps, hbar=hbar, iteration=report.iterations, step=t, residual=norm)})

    u = w + offset
    report.residual_linf = norm
    report.linf_u = float(np.max(np.abs(u)))
    report.converged = True
    return ScalarField(prob.grid, u), report


def continuation_solve(
    prob: MFGProblem,
    hbar: float,
    schedule: EpsSchedule = EpsSchedule(),
    opts: NewtonOptions = NewtonOptions(),
    init: ScalarField | None = None,
    coupling: CouplingSpec | None = None,
) -> tuple[ScalarField, list[NewtonReport]]:
    u = init if init is not None else ScalarField.constant(prob.grid, 0.0)
    reports = []
    for stage, eps in enumerate(schedule):
        try:
            u_next, report = solve_scalar(prob, hbar, eps, u, opts, coupling, stage=stage)
        except NonConvergence:
            logger.warning("continuation stage failed", extra={"fields": dict(stage=stage, eps=eps, hbar=hbar)})
            raise
        report.increment = float(np.max(np.abs(u_next.values - u.values)))
        reports.append(report)
        logger.info("continuation stage", extra={"fields": dict(
            stage=stage, eps=eps, hbar=hbar, iterations=report.iterations,
            residual=report.residual_linf, increment=report.increment, linf_u=report.linf_u)})
        u = u_next
    return u, reports


def linf_bound_k0(prob: MFGProblem, hbar: float, c_h: float = 0.0) -> float:
    return prob.k0(hbar, c_h)


def hopf_cole(u: ScalarField) -> ScalarField:
    return ScalarField(u.grid, np.exp(-u.values))


def mass_functional(u: ScalarField) -> float:
    with np.errstate(over="ignore"):
        return float(u.grid.cell_volume * np.sum(np.exp(-u.values)))


@dataclass
class _Evaluation:
    hbar: float
    u: ScalarField
    reports: list[NewtonReport]
    mass: float


def _evaluate(prob: MFGProblem, hbar: float, settings: SolverSettings, init: ScalarField | None) -> _Evaluation:
    g = _coupling(prob, hbar, settings.truncate_coupling)
    u, reports = continuation_solve(prob, hbar, settings.schedule, settings.newton, init, g)
    mass = mass_functional(u)
    logger.info("mass evaluation", extra={"fields": dict(hbar=hbar, mass=mass)})
    return _Evaluation(hbar, u, reports, mass)


def _revalidate_coupling(prob: MFGProblem, hbar: float) -> None:
    k0 = prob.k0(hbar)
    report = validate_coupling(prob.coupling, coupling_samples(k0))
    fields = dict(hbar=hbar, k0=k0, coupling=prob.coupling.name)
    if report.passed:
        logger.debug("coupling revalidated", extra={"fields": fields})
    else:
        logger.warning("coupling assumptions fail at bracket scale",
                       extra={"fields": fields | dict(violations=report.summary())})


@dataclass
class _Bracket:
    low: _Evaluation
    up: _Evaluation
    expansions: int
    evaluations: list[_Evaluation]


def _find_bracket(prob: MFGProblem, settings: SolverSettings, init: ScalarField | None = None) -> _Bracket:
    offset0 = float(np.max(np.abs(prob.V.values))) + 1.0 / prob.coupling.c_g + 1.0
    evaluations = []

    def probe(hbar: float, warm: ScalarField | None) -> _Evaluation:
        try:
            ev = _evaluate(prob, hbar, settings, warm)
        except NonConvergence as e:
            raise BracketFailure(f"inner solve failed at trial hbar={hbar:g}: {e}",
                                 last_iterate=e.last_iterate, report=e.report) from e
        evaluations.append(ev)
        return ev

    low_offset = up_offset = offset0
    low = probe(low_offset, init)
    up = probe(-up_offset, init if init is not None else low.u)
    expansions = 0
    while not (low.mass < 1.0 < up.mass):
        if expansions >= settings.max_expansions:
            raise BracketFailure(
                f"no bracket after {expansions} expansions: H({low.hbar:g})={low.mass:.6g},"
                f" H({up.hbar:g})={up.mass:.6g}; the coupling is likely not coercive")
        expansions += 1
        if not low.mass < 1.0:
            low_offset *= 2.0
            low = probe(low_offset, low.u)
        if not up.mass > 1.0:
            up_offset *= 2.0
            up = probe(-up_offset, up.u)
        logger.info("bracket expansion", extra={"fields": dict(
            expansion=expansions, hbar_low=low.hbar, mass_low=low.mass, hbar_up=up.hbar, mass_up=up.mass)})

    logger.info("bracket found", extra={"fields": dict(
        hbar_low=low.hbar, mass_low=low.mass, hbar_up=up.hbar, mass_up=up.mass, expansions=expansions)})
    for ev in (low, up):
        _revalidate_coupling(prob, ev.hbar)
    return _Bracket(low, up, expansions, evaluations)


def bracket_hbar(prob: MFGProblem, schedule: EpsSchedule = EpsSchedule(), opts: NewtonOptions = NewtonOptions(),
                 max_expansions: int = MAX_EXPANSIONS) -> tuple[float, float]:
    """(hbar_low, hbar_up) with H(hbar_low) < 1 < H(hbar_up); hbar_up is the more negative one."""
    settings = SolverSettings(schedule=schedule, newton=opts, max_expansions=max_expansions)
    bracket = _find_bracket(prob, settings)
    return bracket.low.hbar, bracket.up.hbar


def _assemble(prob: MFGProblem, ev: _Evaluation, bisect_iters: int, newton_total: int,
              evaluations: list[_Evaluation]) -> MFGSolution:
    k0 = linf_bound_k0(prob, ev.hbar)
    linf_u = float(np.max(np.abs(ev.u.values)))
    if linf_u > k0 + K0_SLACK:
        logger.warning("L-infinity bound exceeded", extra={"fields": dict(linf_u=linf_u, k0=k0)})
    solution = MFGSolution(
        u=ev.u, m=hopf_cole(ev.u), hbar=ev.hbar, reports=tuple(ev.reports), k0=k0, mass=ev.mass,
        bisect_iters=bisect_iters, newton_iters_total=newton_total,
        history=tuple((e.hbar, e.mass) for e in evaluations), iterates=tuple(e.u for e in evaluations))
    logger.info("solution", extra={"fields": dict(
        hbar=solution.hbar, mass=solution.mass, k0=k0, linf_u=linf_u, bisect_iters=bisect_iters,
        newton_iters_total=newton_total)})
    return solution


def normalize_hbar(
    prob: MFGProblem,
    schedule: EpsSchedule = EpsSchedule(),
    opts: NewtonOptions = NewtonOptions(),
    bisect_tol: float = 1e-10,
    settings: SolverSettings | None = None,
    init: ScalarField | None = None,
) -> MFGSolution:
    if settings is None:
        settings = SolverSettings(schedule=schedule, newton=opts, bisect_tol=bisect_tol)
    bracket = _find_bracket(prob, settings, init)
    evaluations = bracket.evaluations
    newton_total = sum(r.iterations for ev in (bracket.low, bracket.up) for r in ev.reports)

    low, up = bracket.low, bracket.up
    for ev in (low, up):
        if abs(ev.mass - 1.0) <= settings.bisect_tol:
            return _assemble(prob, ev, 0, newton_total, evaluations)

    warm = low.u
    for iteration in range(1, settings.bisect_max_iter + 1):
        mid = 0.5 * (low.hbar + up.hbar)
        if not up.hbar < mid < low.hbar:
            raise NonConvergence(f"bisection interval collapsed at hbar={mid!r} before |H-1| ≤ {settings.bisect_tol:g}",
                                 last_iterate=warm)
        try:
            ev = _evaluate(prob, mid, settings, warm)
        except NonConvergence as e:
            raise NonConvergence(f"inner solve failed at hbar={mid:g} during bisection: {e}",
                                 last_iterate=e.last_iterate, report=e.report) from e
        newton_total += sum(r.iterations for r in ev.reports)
        evaluations.append(ev)
        logger.info("bisection step", extra={"fields": dict(
            iteration=iteration, hbar=mid, mass=ev.mass, hbar_low=low.hbar, hbar_up=up.hbar)})
        if abs(ev.mass - 1.0) <= settings.bisect_tol:
            return _assemble(prob, ev, iteration, newton_total, evaluations)
        if ev.mass > 1.0:
            up = ev
        else:
            low = ev
        warm = ev.u

    raise NonConvergence(f"bisection did not reach |H-1| ≤ {settings.bisect_tol:g} in {settings.bisect_max_iter} steps",
                         last_iterate=warm)


def solve_mfg(prob: MFGProblem, settings: SolverSettings | None = None, init: ScalarField | None = None) -> MFGSolution:
    settings = settings or SolverSettings()
    logger.info("solve", extra={"fields": dict(
        problem=prob.name, dim=prob.grid.dim, n=prob.grid.n, coupling=prob.coupling.name,
        stages=len(settings.schedule.stages()))})
    return normalize_hbar(prob, settings=settings, init=init)


async def _amass(prob: MFGProblem, hbar: float, settings: SolverSettings) -> tuple[float, float]:
    ev = await asyncio.to_thread(_evaluate, prob, hbar, settings, None)
    return hbar, ev.mass


async def _asweep(prob: MFGProblem, hbars: list[float], settings: SolverSettings) -> list[tuple[float, float]]:
    return list(await asyncio.gather(*(_amass(prob, hbar, settings) for hbar in hbars)))


def sweep_mass(prob: MFGProblem, hbars: list[float], settings: SolverSettings | None = None) -> list[tuple[float, float]]:
    """H(hbar) at each hbar without normalization; evaluations run concurrently."""
    return asyncio.run(_asweep(prob, list(hbars), settings or SolverSettings()))
