import argparse
import json
import logging
import sys

from mfgpy import init, run
from mfgpy.common.errors import NonConvergence, ValidationError
from mfgpy.common.utils import logs


logger = logging.getLogger("mfgpy.cli")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


def _csv(cast):
    def parse(text: str) -> list:
        try:
            return [cast(item) for item in text.split(",") if item.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgpy", description="Stationary mean-field games on the torus.")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, summary: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=summary)
        sub.add_argument("--config", required=True, help="run configuration (key=value lines)")
        sub.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        return sub

    command("solve", "solve and write fields.csv / summary.json")
    command("verify", "solve, then run every diagnostic")
    command("convergence", "error against the exact solution over grid sizes").add_argument(
        "--sizes", type=_csv(int), default=[64, 128, 256], help="e.g. 64,128,256")
    command("sweep", "mass of exp(-u) at fixed hbar values").add_argument(
        "--hbars", type=_csv(float), default=[-1.0, 0.0, 1.0], help="e.g. --hbars=-1,0,1")
    command("morrey", "regularity quantities of a stored field").add_argument(
        "--field", required=True, help="fields.csv written by solve")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logs.configure()
    try:
        cfg, prob = init.init(args.config, args.out)
        match args.command:
            case "solve":
                result = run.solve(cfg, prob)
            case "verify":
                result = run.verify(cfg, prob)
            case "convergence":
                result = run.convergence(cfg, args.sizes)
            case "sweep":
                result = run.sweep(cfg, prob, args.hbars)
            case "morrey":
                result = run.morrey(cfg, args.field)
    except ValidationError as e:
        logger.error("validation error", extra={"fields": dict(error=str(e))})
        return EXIT_VALIDATION
    except NonConvergence as e:
        logger.error("nonconvergence", extra={"fields": dict(error=str(e), kind=type(e).__name__)})
        return EXIT_NONCONVERGENCE
    print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
