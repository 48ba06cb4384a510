import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from mfgpy.bases.Grid import ScalarField, TorusGrid, make_grid
from mfgpy.bases.Hamiltonian import EpsSchedule
from mfgpy.common import template
from mfgpy.common.errors import ConfigError, ValidationError
from mfgpy.common.utils import config
from mfgpy.routines.solve import MFGSolution, NewtonOptions, SolverSettings


logger = logging.getLogger(__name__)

FIELDS_FILE = "fields.csv"
SUMMARY_FILE = "summary.json"
NUMBER_FORMAT = "%.17g"


@dataclass(frozen=True)
class ProblemConfig:
    name: str
    coupling: str = "linear"
    c_g: float | None = None
    params: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class DiagnosticsConfig:
    pair_budget: int = 20000
    max_level: int = 5
    max_centers: int = 256


@dataclass(frozen=True)
class RunConfig:
    dim: int
    n: int
    problem: ProblemConfig
    solver: SolverSettings = field(default_factory=SolverSettings)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    seed: int = 0
    output_dir: Path | None = None

    @property
    def grid(self) -> TorusGrid:
        return make_grid(self.dim, self.n)


def _with_defaults(doc: dict, schema: dict, root: dict) -> dict:
    """Fill schema defaults, descending into sub-objects (creating absent ones)."""
    if "$ref" in schema:
        name = schema["$ref"].rsplit("/", 1)[-1]
        schema = root["$defs"][name] | {k: v for k, v in schema.items() if k != "$ref"}
    out = dict(doc)
    for key, sub in schema.get("properties", {}).items():
        resolved = root["$defs"][sub["$ref"].rsplit("/", 1)[-1]] if "$ref" in sub else sub
        if resolved.get("type") == "object" and "properties" in resolved:
            out[key] = _with_defaults(out.get(key, {}), sub, root)
        elif key not in out and "default" in sub:
            out[key] = sub["default"]
        elif key not in out and "default" in resolved:
            out[key] = resolved["default"]
    return out


# first word of a range-check message -> config key
_MESSAGE_KEYS = {
    "unsupported": "dim", "n": "n",
    "eps0": "solver.eps0", "factor": "solver.eps_factor", "eps_min": "solver.eps_min",
    "eps_floor": "solver.eps_floor", "newton_tol": "solver.newton_tol",
    "newton_max_iter": "solver.newton_max_iter", "armijo_c": "solver.armijo_c",
    "min_step": "solver.min_step", "bisect_tol": "solver.bisect_tol",
    "bisect_max_iter": "solver.bisect_max_iter", "max_expansions": "solver.max_expansions",
}


def _checked(build):
    try:
        return build()
    except ConfigError:
        raise
    except ValidationError as e:
        raise ConfigError(str(e), key=_MESSAGE_KEYS.get(str(e).split(" ", 1)[0])) from e


def parse_config(text: str) -> RunConfig:
    doc = config.replace(config.parse_text(text))
    schema = template.check(doc)
    doc = _with_defaults(doc, schema, schema)

    _checked(lambda: make_grid(doc["dim"], doc["n"]))
    solver, diag, prob = doc["solver"], doc["diagnostics"], doc["problem"]

    schedule = _checked(lambda: EpsSchedule(
        eps0=solver["eps0"], factor=solver["eps_factor"], eps_min=solver["eps_min"], eps_floor=solver["eps_floor"]))
    newton = _checked(lambda: NewtonOptions(
        tol=solver["newton_tol"], max_iter=solver["newton_max_iter"],
        armijo_c=solver["armijo_c"], min_step=solver["min_step"]))
    settings = _checked(lambda: SolverSettings(
        schedule=schedule, newton=newton, bisect_tol=solver["bisect_tol"],
        bisect_max_iter=solver["bisect_max_iter"], max_expansions=solver["max_expansions"],
        truncate_coupling=solver["truncate_coupling"]))

    output_dir = doc.get("output_dir")
    return RunConfig(
        dim=doc["dim"],
        n=doc["n"],
        problem=ProblemConfig(name=prob["name"], coupling=prob["coupling"], c_g=prob.get("c_g"),
                              params=dict(prob.get("params", {}))),
        solver=settings,
        diagnostics=DiagnosticsConfig(**diag),
        seed=doc["seed"],
        output_dir=Path(output_dir) if output_dir else None,
    )


def load_config(path: str | Path) -> RunConfig:
    with Path(path).open("r", encoding="utf-8") as file:
        return parse_config(file.read())


def write_fields(solution: MFGSolution, hj_residual: ScalarField, out_dir: str | Path) -> Path:
    """fields.csv: one row per grid point in lexicographic index order."""
    grid = solution.u.grid
    path = Path(out_dir) / FIELDS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = [c.ravel() for c in grid.coordinates()]
    columns = coords + [solution.u.flat, solution.m.flat, hj_residual.flat]
    header = ",".join([f"x{k}" for k in range(grid.dim)] + ["u", "m", "hj_residual"])
    np.savetxt(path, np.column_stack(columns), delimiter=",", header=header, comments="", fmt=NUMBER_FORMAT)
    logger.info("fields written", extra={"fields": dict(path=str(path), rows=grid.size)})
    return path


def read_fields(path: str | Path) -> tuple[TorusGrid, dict[str, ScalarField]]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as file:
        header = file.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValidationError(f"{path}: header has {len(header)} columns, data has {data.shape[1]}")
    dim = sum(1 for name in header if name.startswith("x"))
    n = int(round(data.shape[0] ** (1.0 / dim))) if dim else 0
    grid = make_grid(dim, n)
    if grid.size != data.shape[0]:
        raise ValidationError(f"{path}: {data.shape[0]} rows do not form a {dim}-d grid")
    fields = {name: ScalarField(grid, data[:, i]) for i, name in enumerate(header) if not name.startswith("x")}
    return grid, fields


def write_json(payload: dict[str, Any], path: str | Path) -> Path:
    """floats are written by repr, the shortest text that reads back to the same double."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as file:
        json.dump(payload, file, indent=2, sort_keys=False)
        file.write("\n")
    return path


def summary_payload(solution: MFGSolution, residual_linf: float, diagnostics: dict[str, Any]) -> dict[str, Any]:
    return {
        "hbar": float(solution.hbar),
        "mass": float(solution.mass),
        "k0": float(solution.k0),
        "linf_u": float(np.max(np.abs(solution.u.values))),
        "newton_iters_total": int(solution.newton_iters_total),
        "eps_stages": int(solution.eps_stages),
        "bisect_iters": int(solution.bisect_iters),
        "residual_linf": float(residual_linf),
        "diagnostics": diagnostics,
    }


def write_summary(payload: dict[str, Any], out_dir: str | Path) -> Path:
    path = write_json(payload, Path(out_dir) / SUMMARY_FILE)
    logger.info("summary written", extra={"fields": dict(path=str(path))})
    return path


def write_table(rows: list[dict[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []

    def cell(value):
        if value is None:
            return ""
        if isinstance(value, float):
            return NUMBER_FORMAT % value
        return str(value)

    with path.open("w", encoding="utf-8") as file:
        file.write(",".join(keys) + "\n")
        for row in rows:
            file.write(",".join(cell(row[k]) for k in keys) + "\n")
    return path
