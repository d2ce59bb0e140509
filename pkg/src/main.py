"""
Command-line entry point for the fading-MAC game solver.

    run.py run <config> --out <dir> [--threads N] [--tol X]
    run.py trace <config> --out <dir>

Exit status: 0 when every solver converged, 2 when a solver did not
converge (results are still written), 1 on configuration or run errors.
"""

import argparse
import asyncio
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config.settings import get_settings
from services.runner import RunnerConfig, get_scenario_runner
from services.scenario import ScenarioConfigError, load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def configure_logging() -> None:
    """Stdout handler plus a rotating file handler when LOG_FILE is set."""
    config = get_settings().logging
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if config.log_file:
        Path(config.log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(RotatingFileHandler(config.log_file, maxBytes=config.log_max_size,
                                            backupCount=config.log_backup_count))
    logging.basicConfig(level=config.log_level.upper(), format=config.log_format, handlers=handlers, force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macgame", description="Power and rate allocation games on fading MACs")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the task of a scenario file")
    run.add_argument("config", help="Scenario INI file")
    run.add_argument("--out", default=None, help="Output directory")
    run.add_argument("--threads", type=int, default=None, help="Concurrent fan-point evaluations")
    run.add_argument("--tol", type=float, default=None, help="Solver tolerance override")

    trace = commands.add_parser("trace", help="Trace boundary, Stackelberg, Nash and corner points")
    trace.add_argument("config", help="Scenario INI file")
    trace.add_argument("--out", default=None, help="Output directory")
    return parser


class MacGameApp:
    """Runs one CLI command and maps its outcome to an exit status."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.settings = get_settings()

    def _runner_config(self) -> RunnerConfig:
        threads = getattr(self.args, "threads", None) or self.settings.runner.threads
        tol = getattr(self.args, "tol", None)
        if tol is not None and tol <= 0:
            raise ScenarioConfigError(f"--tol must be positive, got {tol}")
        return RunnerConfig(threads=threads, tol=tol)

    async def start(self) -> int:
        output_dir = Path(self.args.out or self.settings.runner.output_dir)
        try:
            scenario = load_scenario(self.args.config)
            runner = await get_scenario_runner(self._runner_config())
            if self.args.command == "trace":
                artifacts = await runner.trace(scenario, output_dir)
            else:
                artifacts = await runner.run(scenario, output_dir)
        except (ScenarioConfigError, ValidationError) as e:
            logger.error(f"Configuration error: {e}")
            print(f"error: {e}", file=sys.stderr)
            return EXIT_ERROR
        except Exception as e:
            logger.error(f"Run failed: {e}")
            print(f"error: {e}", file=sys.stderr)
            return EXIT_ERROR

        if not artifacts.converged:
            logger.warning(f"Scenario '{scenario.name}' finished without convergence; results in {output_dir}")
            return EXIT_NOT_CONVERGED
        logger.info(f"Scenario '{scenario.name}' finished; results in {output_dir}")
        return EXIT_OK


async def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    configure_logging()
    app = MacGameApp(args)
    return await app.start()


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
