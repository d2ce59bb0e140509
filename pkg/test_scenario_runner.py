#!/usr/bin/env python3
"""
Scenario parsing, the scenario runner and the command-line exit codes.
"""

import csv
import logging
import math
import sys
from pathlib import Path

import pytest

# Add project root and src to path
sys.path.insert(0, str(Path(__file__).parent))
sys.path.insert(0, str(Path(__file__).parent / "src"))

from config.settings import get_settings, reload_settings
from main import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main
from services.reports import fmt
from services.runner import RunnerConfig, ScenarioRunner, get_scenario_runner, spread_alphas
from services.scenario import ScenarioConfigError, TaskKind, load_scenario, parse_scenario

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)

logger = logging.getLogger(__name__)

SCENARIOS = Path(__file__).parent / "scenarios"

SYMMETRIC = """
[channel]
family = explicit
gains = 2 1; 1 2
weights = 0.5 0.5

[system]
noise_variance = 1.0
power_budgets = 1 1
"""


def scenario_text(task: str, channel: str = SYMMETRIC, solver: str = "") -> str:
    return channel + "\n[task]\n" + task + ("\n[solver]\n" + solver if solver else "")


def read_rows(path: Path):
    with open(path, newline="") as handle:
        return list(csv.reader(handle))


def write_scenario(tmp_path: Path, name: str, text: str) -> Path:
    path = tmp_path / f"{name}.ini"
    path.write_text(text, encoding="utf-8")
    return path


# Scenario parsing

def test_shipped_scenarios_parse():
    paths = sorted(SCENARIOS.glob("*.ini"))
    assert paths
    kinds = {load_scenario(p).task.kind for p in paths}
    assert TaskKind.NASH in kinds and TaskKind.VECTOR_GAP in kinds


def test_parse_lists_and_defaults():
    scenario = parse_scenario(scenario_text("kind = stackelberg-sweep\nalphas = 0, 1 inf"), name="sweep")
    assert scenario.channel.gains == [[2.0, 1.0], [1.0, 2.0]]
    assert scenario.task.alphas == [0.0, 1.0, math.inf]
    assert scenario.solver.tol is None
    grid = scenario.build_grid()
    assert grid.num_states == 2
    assert grid.label == "sweep"


def test_vector_blocks_parse():
    channel = """
[channel]
family = explicit
gain_vectors = 1 0, 0 1; 0.6 0.8, 1 0

[system]
power_budgets = 1 2
"""
    scenario = parse_scenario(scenario_text("kind = vector-nash", channel=channel))
    grid = scenario.build_grid()
    assert grid.is_vector
    assert grid.num_antennas == 2
    assert grid.weights.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("text, fragment", [
    (scenario_text("kind = nash").replace("family", "famly"), "famly"),
    (scenario_text("kind = teleport"), "task.kind"),
    (scenario_text("kind = epsilon-stackelberg"), "mu"),
    (scenario_text("kind = nash").replace("power_budgets = 1 1", "power_budgets = 1 1 1"), "power budgets"),
    (scenario_text("kind = vector-gap"), "vector channel"),
    (scenario_text("kind = nash") + "\n[extras]\nx = 1\n", "extras"),
    (scenario_text("kind = nash", solver="tol = -1"), "tol"),
])
def test_invalid_scenarios_name_the_problem(text, fragment):
    with pytest.raises(ScenarioConfigError) as excinfo:
        parse_scenario(text)
    assert fragment in str(excinfo.value)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ScenarioConfigError):
        load_scenario(tmp_path / "absent.ini")


def test_seed_override(monkeypatch):
    channel = """
[channel]
family = exponential
means = 1 1
resolution = 20
seed = 0

[system]
power_budgets = 1 1
"""
    scenario = parse_scenario(scenario_text("kind = nash", channel=channel))
    baseline = scenario.build_grid()
    monkeypatch.setenv("MACGAME_SEED", "5")
    try:
        reload_settings()
        assert get_settings().runner.scenario_seed == 5
        assert scenario.seed == 5
        overridden = scenario.build_grid()
        assert overridden.gains.tolist() != baseline.gains.tolist()
    finally:
        monkeypatch.delenv("MACGAME_SEED")
        reload_settings()
    assert scenario.seed == 0


# Runner

@pytest.mark.asyncio
async def test_nash_scenario_writes_equilibrium(tmp_path):
    runner = ScenarioRunner(RunnerConfig(threads=1))
    scenario = parse_scenario(scenario_text("kind = nash"), name="symmetric")
    artifacts = await runner.run(scenario, tmp_path)
    assert artifacts.converged

    rows = read_rows(tmp_path / "equilibrium.csv")
    assert rows[0] == ["user", "lambda", "avg_power", "rate"]
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([2.5, 2.5], rel=1e-9)
    assert [float(r[3]) for r in rows[1:]] == pytest.approx([0.25 * math.log2(5)] * 2, rel=1e-9)
    report = (tmp_path / "report.txt").read_text()
    assert "status: converged" in report


@pytest.mark.asyncio
async def test_sweep_rows_in_input_order(tmp_path):
    runner = ScenarioRunner(RunnerConfig(threads=3))
    scenario = parse_scenario(scenario_text("kind = stackelberg-sweep\nalphas = inf 1 0"))
    await runner.run(scenario, tmp_path)
    rows = read_rows(tmp_path / "sweep.csv")
    assert [r[0] for r in rows[1:]] == ["inf", "1", "0"]
    assert all(r[5] == "true" for r in rows[1:])


@pytest.mark.asyncio
async def test_thread_count_does_not_change_outputs(tmp_path):
    text = scenario_text("kind = capacity-boundary\nmu_count = 5")
    scenario = parse_scenario(text, name="fan")
    await ScenarioRunner(RunnerConfig(threads=1)).run(scenario, tmp_path / "one")
    await ScenarioRunner(RunnerConfig(threads=4)).run(scenario, tmp_path / "four")
    for name in ("report.txt", "region.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "four" / name).read_bytes()


@pytest.mark.asyncio
async def test_repeated_scenario_trajectory(tmp_path):
    task = "kind = repeated\nmu = 2 1\nhorizon = 10\ndeviator = 1\ndeviation_stages = 2"
    await ScenarioRunner().run(parse_scenario(scenario_text(task)), tmp_path)
    rows = read_rows(tmp_path / "trajectory.csv")
    assert len(rows) == 11
    stage_2, stage_3 = rows[2], rows[3]
    assert stage_2[1] == "cooperate" and stage_2[2] == "1"
    assert stage_3[1] == "punish" and stage_3[2] == ""


@pytest.mark.asyncio
async def test_vector_gap_scenario(tmp_path):
    await ScenarioRunner().run(load_scenario(SCENARIOS / "correlated_vector_gap.ini"), tmp_path)
    rows = read_rows(tmp_path / "gap.csv")
    assert rows[0] == ["scenario", "sum_nash_rates", "sp_sum_rate", "gap"]
    assert rows[1][0] == "correlated_vector_gap"
    assert float(rows[1][3]) > 1e-3


@pytest.mark.asyncio
async def test_boundary_restarts_are_reported(tmp_path):
    scenario = parse_scenario(scenario_text("kind = capacity-boundary\nmus = 2 1; 1 1\nrestarts = 2"))
    artifacts = await ScenarioRunner().run(scenario, tmp_path)
    restart_lines = [line for line in artifacts.report_lines if "restarts, payoff spread" in line]
    # The equal award is the sum-rate point and runs no restarts
    assert len(restart_lines) == 1
    assert restart_lines[0].strip().startswith("2 restarts")
    assert float(restart_lines[0].split()[-1]) <= 1e-6


@pytest.mark.asyncio
async def test_vector_gap_restarts_are_reported(tmp_path):
    scenario = load_scenario(SCENARIOS / "correlated_vector_gap.ini")
    scenario.task.restarts = 2
    artifacts = await ScenarioRunner().run(scenario, tmp_path)
    line = next(line for line in artifacts.report_lines if line.startswith("sum capacity optimum"))
    assert "(2 restarts" in line
    assert float(line.rstrip(")").split()[-1]) <= 1e-6


@pytest.mark.asyncio
async def test_grid_dump(tmp_path):
    text = scenario_text("kind = nash").replace("weights = 0.5 0.5", "weights = 0.5 0.5\ndump_grid = true")
    await ScenarioRunner().run(parse_scenario(text), tmp_path)
    rows = read_rows(tmp_path / "grid.csv")
    assert rows[0] == ["state_index", "weight", "h_1", "h_2"]
    assert len(rows) == 3


@pytest.mark.asyncio
async def test_trace_contains_every_source(tmp_path):
    scenario = parse_scenario(scenario_text("kind = capacity-boundary\nmu_count = 3\nalphas = 0 1 inf"))
    runner = await get_scenario_runner(RunnerConfig(threads=2))
    artifacts = await runner.trace(scenario, tmp_path)

    rows = read_rows(tmp_path / "trace.csv")
    sources = {r[0] for r in rows[1:]}
    assert sources == {"boundary", "stackelberg", "nash", "corner"}
    nash = next(r for r in rows[1:] if r[0] == "nash")
    equal_award = next(r for r in rows[1:] if r[0] == "boundary" and r[1] == "1" and r[2] == "1")
    assert nash[4:] == equal_award[4:]
    assert any(line.startswith("dominance audit") for line in artifacts.report_lines)


def test_spread_alphas_keeps_endpoints():
    scenario = parse_scenario(scenario_text("kind = nash"))
    grid = scenario.build_grid()
    assert spread_alphas(grid, 2) == [0.0, math.inf]
    assert spread_alphas(grid, 10) == [0.0, 0.5, 2.0, math.inf]


def test_runner_rejects_zero_threads():
    with pytest.raises(ValueError):
        ScenarioRunner(RunnerConfig(threads=0))


def test_number_formatting():
    assert fmt(math.inf) == "inf"
    assert fmt(None) == ""
    assert fmt(True) == "true"
    assert fmt(-0.0) == "0"
    assert fmt(1 / 3) == "0.333333333333"


# Command line

@pytest.mark.asyncio
async def test_cli_success(tmp_path):
    out = tmp_path / "out"
    code = await main(["run", str(SCENARIOS / "symmetric_nash.ini"), "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "equilibrium.csv").exists()


@pytest.mark.asyncio
async def test_cli_config_error(tmp_path, capsys):
    path = write_scenario(tmp_path, "broken", scenario_text("kind = nash").replace("family", "famly"))
    out = tmp_path / "out"
    code = await main(["run", str(path), "--out", str(out)])
    assert code == EXIT_ERROR
    assert "famly" in capsys.readouterr().err
    assert not (out / "report.txt").exists()


@pytest.mark.asyncio
async def test_cli_rejects_bad_tolerance(tmp_path):
    code = await main(["run", str(SCENARIOS / "symmetric_nash.ini"), "--out", str(tmp_path), "--tol", "-1"])
    assert code == EXIT_ERROR


@pytest.mark.asyncio
async def test_cli_not_converged(tmp_path):
    channel = """
[channel]
family = exponential
means = 1.0 0.5
resolution = 200
seed = 3

[system]
power_budgets = 1 1
"""
    text = scenario_text("kind = stackelberg-sweep\nalphas = 1", channel=channel, solver="max_iters = 1")
    path = write_scenario(tmp_path, "capped", text)
    out = tmp_path / "out"
    code = await main(["run", str(path), "--out", str(out)])
    assert code == EXIT_NOT_CONVERGED
    assert "NOT CONVERGED" in (out / "report.txt").read_text()
    rows = read_rows(out / "sweep.csv")
    assert rows[1][5] == "false"


@pytest.mark.asyncio
async def test_cli_runs_are_reproducible(tmp_path):
    config = str(SCENARIOS / "symmetric_sweep.ini")
    assert await main(["run", config, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert await main(["run", config, "--out", str(tmp_path / "b"), "--threads", "4"]) == EXIT_OK
    for name in ("report.txt", "sweep.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.asyncio
@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.ini")), ids=lambda p: p.stem)
async def test_cli_every_shipped_scenario_converges(path, tmp_path):
    out = tmp_path / path.stem
    code = await main(["run", str(path), "--out", str(out)])
    assert code == EXIT_OK
    assert "status: converged" in (out / "report.txt").read_text()
