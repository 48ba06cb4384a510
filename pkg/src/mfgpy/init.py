from dataclasses import replace
from pathlib import Path

from mfgpy.bases.Grid import TorusGrid
from mfgpy.bases.Problem import MFGProblem, builtin_problem
from mfgpy.common.errors import ConfigError
from mfgpy.common.utils import logs
from mfgpy.routines.diagnose import BallSampler
from mfgpy.routines.io import RunConfig, load_config


DEFAULT_OUTPUT_DIR = Path("out")


def make_config(config_path: str | Path, output_dir: str | Path | None = None) -> RunConfig:
    try:
        cfg = load_config(config_path)
    except OSError as e:
        raise ConfigError(f"cannot read {config_path}: {e.strerror or e}") from e
    if output_dir is not None:
        cfg = replace(cfg, output_dir=Path(output_dir))
    elif cfg.output_dir is None:
        cfg = replace(cfg, output_dir=DEFAULT_OUTPUT_DIR)
    return cfg


def make_problem(cfg: RunConfig) -> MFGProblem:
    return builtin_problem(
        cfg.problem.name,
        cfg.n,
        dim=cfg.dim,
        coupling=cfg.problem.coupling,
        c_g=cfg.problem.c_g,
        **cfg.problem.params,
    )


def make_sampler(cfg: RunConfig, grid: TorusGrid) -> BallSampler:
    return BallSampler.dyadic(grid, max_level=cfg.diagnostics.max_level, max_centers=cfg.diagnostics.max_centers)


def init(config_path: str | Path, output_dir: str | Path | None = None) -> tuple[RunConfig, MFGProblem]:
    cfg = make_config(config_path, output_dir)
    logs.configure(cfg.output_dir)
    return cfg, make_problem(cfg)
