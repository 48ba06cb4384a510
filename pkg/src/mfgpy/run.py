import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from mfgpy import init
from mfgpy.bases.Problem import MFGProblem
from mfgpy.routines import diagnose, io
from mfgpy.routines.solve import MFGSolution, linf_bound_k0, solve_mfg, sweep_mass


logger = logging.getLogger(__name__)

MAX_PRINCIPLE_FACTOR = 10.0


def _principle_tol(prob: MFGProblem) -> float:
    return MAX_PRINCIPLE_FACTOR * prob.grid.h ** 2


def _solve(cfg: io.RunConfig, prob: MFGProblem) -> tuple[MFGSolution, diagnose.RegularityReport, dict]:
    solution = solve_mfg(prob, cfg.solver)
    residual, linf, _ = diagnose.hj_residual(solution.u, prob, solution.hbar)
    regularity = diagnose.regularity_report(
        solution.u, prob, solution.hbar, init.make_sampler(cfg, prob.grid),
        pair_budget=cfg.diagnostics.pair_budget, seed=cfg.seed)
    principle = diagnose.max_principle_check(solution.u, prob, solution.hbar, _principle_tol(prob))
    payload = io.summary_payload(solution, linf, {
        "morrey_Du": regularity.morrey_Du,
        "holder_alpha": regularity.holder_alpha,
        "caccioppoli_C": regularity.caccioppoli_ratio,
        "max_principle_margins": principle.margins,
    })
    io.write_fields(solution, residual, cfg.output_dir)
    io.write_summary(payload, cfg.output_dir)
    return solution, regularity, payload


def solve(cfg: io.RunConfig, prob: MFGProblem) -> dict:
    return _solve(cfg, prob)[2]


def verify(cfg: io.RunConfig, prob: MFGProblem) -> dict:
    """Fresh solve followed by every diagnostic; written to verify.json next to the summary."""
    solution, regularity, _ = _solve(cfg, prob)
    u, m, hbar = solution.u, solution.m, solution.hbar
    tol = _principle_tol(prob)

    _, hj_linf, hj_l2 = diagnose.hj_residual(u, prob, hbar)
    _, fp_linf, fp_l2 = diagnose.fp_residual(u, m, prob)
    principle = diagnose.max_principle_check(u, prob, hbar, tol)
    k0 = linf_bound_k0(prob, hbar)
    spread = diagnose.uniqueness_probe(prob, cfg.solver, [k0, 0.0, -k0])

    derivative = {}
    for k in range(prob.grid.dim):
        fields = diagnose.derivative_equation_fields(u, prob, hbar, k)
        derivative[f"x{k}"] = {"linf": fields.linf, "l2": fields.l2, "f1_min": float(np.min(fields.f1.values))}

    sampler = init.make_sampler(cfg, prob.grid)
    report = {
        "problem": prob.name,
        "hbar": hbar,
        "k0": k0,
        "hj_residual": {"linf": hj_linf, "l2": hj_l2},
        "fp_residual": {"linf": fp_linf, "l2": fp_l2},
        "max_principle": {"passed": principle.passed, "margins": principle.margins, "tol": tol},
        "uniqueness_spread": spread,
        "energy": asdict(diagnose.energy_estimates(u, prob, hbar)),
        "derivative_equation": derivative,
        "regularity": asdict(regularity),
        "embedding": asdict(diagnose.embedding_spot_check(u, regularity.morrey_lambda, sampler)),
    }
    io.write_json(report, Path(cfg.output_dir) / "verify.json")
    logger.info("verify", extra={"fields": dict(
        problem=prob.name, max_principle=principle.passed, uniqueness_spread=spread,
        hj_linf=hj_linf, fp_linf=fp_linf)})
    return report


def convergence(cfg: io.RunConfig, sizes: list[int]) -> list[dict]:
    rows = diagnose.convergence_study(
        cfg.problem.name, sizes, cfg.solver, dim=cfg.dim, coupling=cfg.problem.coupling,
        c_g=cfg.problem.c_g, **cfg.problem.params)
    table = [asdict(row) for row in rows]
    io.write_table(table, Path(cfg.output_dir) / "convergence.csv")
    return table


def sweep(cfg: io.RunConfig, prob: MFGProblem, hbars: list[float]) -> list[dict]:
    table = [{"hbar": hbar, "mass": mass} for hbar, mass in sweep_mass(prob, hbars, cfg.solver)]
    io.write_table(table, Path(cfg.output_dir) / "sweep.csv")
    for row in table:
        logger.info("sweep", extra={"fields": row})
    return table


def morrey(cfg: io.RunConfig, field_path: str | Path) -> dict:
    """Regularity quantities of the u column of a fields.csv file."""
    grid, fields = io.read_fields(field_path)
    u = fields["u"]
    sampler = init.make_sampler(cfg, grid)
    alpha = diagnose.fit_holder_exponent(u, sampler)
    lam = grid.dim - 2 + 2 * alpha
    report = {
        "field": str(field_path),
        "n": grid.n,
        "dim": grid.dim,
        "holder_alpha": alpha,
        "lambda": lam,
        "morrey_Du": diagnose.morrey_norm(diagnose.gradient_magnitude(u), 2, lam, sampler),
        "campanato_u": diagnose.campanato_norm(u, 2, lam + 2, sampler),
        "holder_seminorm": diagnose.holder_seminorm(u, alpha, cfg.diagnostics.pair_budget, cfg.seed),
    }
    io.write_json(report, Path(cfg.output_dir) / "morrey.json")
    return report
