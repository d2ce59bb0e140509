"""
Report and CSV writers.

Numbers are written with 12 significant digits and '.' as decimal mark;
nothing time-dependent is written, so equal inputs give byte-identical
files. Artifacts are collected first and written together at the end.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from channel.grid import dump_grid_csv
from channel.models import ChannelGrid
from games.models import EquilibriumReport

logger = logging.getLogger(__name__)

Cell = Union[str, int, float, bool, None]

EQUILIBRIUM_HEADER = ["user", "lambda", "avg_power", "rate"]
SWEEP_HEADER = ["alpha", "lambda_1", "lambda_2", "rate_1", "rate_2", "converged"]
REGION_HEADER = ["mu_1", "mu_2", "rate_1", "rate_2"]
TRAJECTORY_HEADER = ["stage", "regime", "deviator", "rate_1", "rate_2", "cum_avg_1", "cum_avg_2"]
GAP_HEADER = ["scenario", "sum_nash_rates", "sp_sum_rate", "gap"]
AUDIT_HEADER = ["mu_1", "mu_2", "stackelberg_payoff", "oracle_payoff", "gap"]
TRACE_HEADER = ["source", "mu_1", "mu_2", "alpha", "rate_1", "rate_2"]


def fmt(value: Cell) -> str:
    """12 significant digits for floats; inf for the full-D1 threshold; empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    text = f"{value:.12g}"
    return "0" if text == "-0" else text


@dataclass
class Table:
    """A CSV artifact."""
    header: List[str]
    rows: List[List[Cell]] = field(default_factory=list)

    def add(self, *cells: Cell):
        if len(cells) != len(self.header):
            raise ValueError(f"Row has {len(cells)} cells, header has {len(self.header)}")
        self.rows.append(list(cells))


@dataclass
class Artifacts:
    """Everything a task produces; written in one go."""
    report_lines: List[str] = field(default_factory=list)
    tables: Dict[str, Table] = field(default_factory=dict)
    converged: bool = True
    grid_dump: Optional[ChannelGrid] = None

    def table(self, name: str, header: Sequence[str]) -> Table:
        if name not in self.tables:
            self.tables[name] = Table(header=list(header))
        return self.tables[name]

    def line(self, text: str = ""):
        self.report_lines.append(text)


def equilibrium_lines(report: EquilibriumReport) -> List[str]:
    """Human-readable block for one equilibrium report."""
    lines = [f"[{report.label}]"]
    lines.append(f"  converged: {'yes' if report.converged else 'NO'} after {report.iterations} iterations")
    lines.append(f"  relative budget residual: {fmt(report.residual)}")
    if report.kkt_residual is not None:
        lines.append(f"  kkt residual: {fmt(report.kkt_residual)}")
    if report.convention:
        lines.append(f"  convention: {report.convention}")
    lines.append(f"  tie mass: {fmt(report.tie_mass)}")
    for i, (level, rate) in enumerate(zip(report.levels.levels, report.rates.rates), start=1):
        lines.append(f"  user {i}: lambda={fmt(level)} rate={fmt(rate)}")
    lines.append(f"  sum rate: {fmt(report.rates.total)}")
    lines.extend(f"  note: {note}" for note in report.notes)
    return lines


def add_equilibrium_rows(table: Table, report: EquilibriumReport, weights) -> None:
    spent = report.policy.average_powers(weights)
    for i, (level, rate) in enumerate(zip(report.levels.levels, report.rates.rates), start=1):
        table.add(i, level, float(spent[i - 1]), rate)


def write_csv(path: Path, table: Table) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(table.header)
        for row in table.rows:
            writer.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return path


def write_artifacts(artifacts: Artifacts, output_dir: Union[str, Path]) -> List[Path]:
    """Write report.txt, every table and the optional grid dump; on failure remove what was written."""
    output_dir = Path(output_dir)
    written: List[Path] = []
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        report_path = output_dir / "report.txt"
        report_path.write_text("\n".join(artifacts.report_lines) + "\n", encoding="utf-8")
        written.append(report_path)
        for name, table in artifacts.tables.items():
            written.append(write_csv(output_dir / name, table))
        if artifacts.grid_dump is not None:
            written.append(dump_grid_csv(artifacts.grid_dump, output_dir / "grid.csv"))
    except Exception as e:
        logger.error(f"Error writing results to {output_dir}: {e}")
        remove_outputs(written)
        raise
    logger.info(f"Wrote {len(written)} files to {output_dir}")
    return written


def remove_outputs(paths: Sequence[Path]) -> None:
    for path in paths:
        try:
            Path(path).unlink()
        except FileNotFoundError:
            pass
        except OSError as e:
            logger.warning(f"Could not remove partial output {path}: {e}")
