"""
Scenario orchestration.

Solvers are synchronous; independent fan points (thresholds, rate awards)
run in worker threads under a semaphore and are gathered in input order,
so outputs do not depend on the thread count.
"""

import asyncio
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TypeVar, Union

import numpy as np

from channel.models import ChannelGrid, SystemParams
from config.settings import get_settings
from games.capacity import boundary_oracle, corner_point, dominates, mu_fan
from games.models import BoundaryPoint, SweepPoint, UserBehavior
from games.repeated import RepeatedGame, cumulative_averages, simulate
from games.scalar_game import nash_solve
from games.stackelberg import boundary_gap_audit, candidate_alphas, epsilon_stackelberg, sweep_point
from games.vector import vec_nash_gap, vec_nash_solve, vec_sum_capacity_optimize
from services.reports import (
    AUDIT_HEADER, EQUILIBRIUM_HEADER, GAP_HEADER, REGION_HEADER, SWEEP_HEADER, TRACE_HEADER,
    TRAJECTORY_HEADER, Artifacts, add_equilibrium_rows, equilibrium_lines, fmt, write_artifacts
)
from services.scenario import Scenario, TaskKind

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_FAN = 9


@dataclass
class RunnerConfig:
    """Configuration for the scenario runner."""
    threads: int = 1
    tol: Optional[float] = None


def spread_alphas(grid: ChannelGrid, count: int) -> List[float]:
    """`count` thresholds spread evenly over the distinct partitions, endpoints included."""
    candidates = candidate_alphas(grid)
    if count >= len(candidates):
        return candidates
    indices = sorted(set(np.linspace(0, len(candidates) - 1, max(count, 2)).round().astype(int).tolist()))
    return [candidates[i] for i in indices]


class ScenarioRunner:
    """Runs scenario tasks and turns their results into report artifacts."""

    def __init__(self, config: RunnerConfig = None):
        self.config = config or RunnerConfig(threads=get_settings().runner.threads)
        if self.config.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.config.threads}")

    async def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        semaphore = asyncio.Semaphore(self.config.threads)

        async def call(item: T) -> R:
            async with semaphore:
                return await asyncio.to_thread(fn, item)

        return list(await asyncio.gather(*(call(item) for item in items)))

    def _tol(self, scenario: Scenario) -> Optional[float]:
        return self.config.tol if self.config.tol is not None else scenario.tol

    def _mus(self, scenario: Scenario) -> List[List[float]]:
        if scenario.task.mus:
            return scenario.task.mus
        return mu_fan(scenario.task.mu_count or DEFAULT_FAN)

    async def execute(self, scenario: Scenario) -> Artifacts:
        """Compute every artifact of the scenario's task without touching the disk."""
        logger.info(f"Running scenario '{scenario.name}': {scenario.task.kind.value}")
        grid = await asyncio.to_thread(scenario.build_grid)
        params = scenario.params()

        artifacts = Artifacts()
        artifacts.line(f"scenario: {scenario.name}")
        artifacts.line(f"task: {scenario.task.kind.value}")
        artifacts.line(f"grid: {grid.num_states} states, {grid.num_users} users"
                       + (f", Nr={grid.num_antennas}" if grid.is_vector else ""))
        artifacts.line(f"seed: {scenario.seed}")
        artifacts.line(f"noise variance: {fmt(params.noise_variance)}")
        artifacts.line(f"power budgets: {' '.join(fmt(p) for p in params.power_budgets)}")
        artifacts.line()
        if scenario.channel.dump_grid:
            artifacts.grid_dump = grid

        handlers = {
            TaskKind.NASH: self._nash,
            TaskKind.STACKELBERG_SWEEP: self._sweep,
            TaskKind.EPSILON_STACKELBERG: self._epsilon,
            TaskKind.CAPACITY_BOUNDARY: self._boundary,
            TaskKind.REPEATED: self._repeated,
            TaskKind.VECTOR_NASH: self._vector_nash,
            TaskKind.VECTOR_GAP: self._vector_gap,
            TaskKind.AUDIT: self._audit,
        }
        try:
            await handlers[scenario.task.kind](scenario, grid, params, artifacts)
        except Exception as e:
            logger.error(f"Scenario '{scenario.name}' failed: {e}")
            raise

        artifacts.line()
        artifacts.line(f"status: {'converged' if artifacts.converged else 'NOT CONVERGED'}")
        return artifacts

    async def run(self, scenario: Scenario, output_dir: Union[str, Path]) -> Artifacts:
        artifacts = await self.execute(scenario)
        write_artifacts(artifacts, output_dir)
        return artifacts

    async def _nash(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams, artifacts: Artifacts):
        solver = scenario.solver
        report = await asyncio.to_thread(nash_solve, grid, params, self._tol(scenario), solver.max_iters,
                                         solver.tie_tol)
        artifacts.report_lines.extend(equilibrium_lines(report))
        add_equilibrium_rows(artifacts.table("equilibrium.csv", EQUILIBRIUM_HEADER), report, grid.weights)
        artifacts.converged = report.converged

    async def _sweep_points(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams,
                            alphas: Sequence[float]) -> List[SweepPoint]:
        tol = self._tol(scenario)
        return await self._map(lambda a: sweep_point(grid, params, a, tol, scenario.solver.max_iters), alphas)

    async def _sweep(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams, artifacts: Artifacts):
        alphas = scenario.task.alphas or spread_alphas(grid, scenario.task.alpha_count)
        points = await self._sweep_points(scenario, grid, params, alphas)
        table = artifacts.table("sweep.csv", SWEEP_HEADER)
        artifacts.line(f"threshold sweep over {len(points)} values")
        for point in points:
            if point.report is None:
                table.add(point.alpha, None, None, None, None, False)
                artifacts.line(f"  alpha={fmt(point.alpha)}: FAILED {point.error}")
                continue
            levels, rates = point.report.levels.levels, point.report.rates.rates
            table.add(point.alpha, levels[0], levels[1], rates[0], rates[1], point.converged)
            artifacts.line(f"  alpha={fmt(point.alpha)}: rates {fmt(rates[0])} {fmt(rates[1])}"
                           + ("" if point.converged else " (not converged)"))
        artifacts.converged = all(p.converged for p in points)

    async def _epsilon(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams, artifacts: Artifacts):
        task = scenario.task
        choice = await asyncio.to_thread(epsilon_stackelberg, grid, params, task.mu, task.epsilon,
                                         task.alpha_budget, self._tol(scenario))
        artifacts.line(f"epsilon-Stackelberg for mu={' '.join(fmt(m) for m in task.mu)}")
        artifacts.line(f"  alpha: {fmt(choice.alpha)}")
        artifacts.line(f"  payoff: {fmt(choice.payoff)}")
        artifacts.line(f"  single-user bound: {fmt(choice.upper_bound)}")
        artifacts.line(f"  evaluations: {choice.evaluations} of {choice.candidates} partitions")
        artifacts.line()
        artifacts.report_lines.extend(equilibrium_lines(choice.report))
        add_equilibrium_rows(artifacts.table("equilibrium.csv", EQUILIBRIUM_HEADER), choice.report, grid.weights)
        artifacts.converged = choice.report.converged

    async def _boundary_points(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams,
                               mus: Sequence[Sequence[float]]) -> List[BoundaryPoint]:
        tol = scenario.solver.oracle_tol
        restarts = scenario.task.restarts
        return await self._map(
            lambda mu: boundary_oracle(grid, params, mu, tol=tol, restarts=restarts, seed=scenario.seed), mus)

    async def _boundary(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams, artifacts: Artifacts):
        points = await self._boundary_points(scenario, grid, params, self._mus(scenario))
        table = artifacts.table("region.csv", REGION_HEADER)
        artifacts.line(f"capacity boundary over {len(points)} rate awards")
        for point in points:
            table.add(point.mu.mu[0], point.mu.mu[1], point.rates[0], point.rates[1])
            artifacts.line(f"  mu={fmt(point.mu.mu[0])} {fmt(point.mu.mu[1])}: rates "
                           f"{fmt(point.rates[0])} {fmt(point.rates[1])} payoff {fmt(point.payoff)} "
                           f"kkt {fmt(point.kkt_residual)} ({point.source})")
            if point.restart_payoffs:
                spread = max(abs(p - point.payoff) for p in point.restart_payoffs)
                artifacts.line(f"    {len(point.restart_payoffs)} restarts, payoff spread {fmt(spread)}")
        artifacts.converged = all(p.converged for p in points)

    async def _repeated(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams, artifacts: Artifacts):
        task = scenario.task
        game = await asyncio.to_thread(RepeatedGame, grid, params, task.mu, scenario.solver.oracle_tol)
        strategy = game.trigger_strategy()
        behaviors = [UserBehavior.comply() for _ in range(grid.num_users)]
        if task.deviator is not None:
            if not 1 <= task.deviator <= grid.num_users:
                raise ValueError(f"deviator must be between 1 and {grid.num_users}, got {task.deviator}")
            behaviors[task.deviator - 1] = UserBehavior.deviate_at(*(task.deviation_stages or [1]))
        result = await asyncio.to_thread(simulate, grid, params, strategy, behaviors, task.horizon,
                                         task.payoff_mode, task.discount, game)

        artifacts.line(f"trigger strategy at mu={' '.join(fmt(m) for m in task.mu)}")
        artifacts.line(f"  cooperative rates: {' '.join(fmt(r) for r in game.cooperative.rates.rates)}")
        for user in range(grid.num_users):
            plan = game.plan(user)
            artifacts.line(f"  user {user + 1}: punished {fmt(plan.punished_rate)}, deviation "
                           f"{fmt(plan.deviation_rate)}, corner {fmt(plan.corner_rate)}; T tight "
                           f"{plan.tight_length}, loose {plan.loose_length}, window {plan.window_length}")
        artifacts.line(f"  punishment lengths: {' '.join(str(t) for t in strategy.punishment_lengths)}")
        artifacts.line(f"simulation over {task.horizon} stages ({task.payoff_mode.value})")
        artifacts.line(f"  payoffs: {' '.join(fmt(p) for p in result.payoffs)}")

        averages = cumulative_averages(result)
        table = artifacts.table("trajectory.csv", TRAJECTORY_HEADER)
        for outcome, running in zip(result.outcomes, averages):
            table.add(outcome.stage_index, outcome.regime.value,
                      None if outcome.deviator is None else outcome.deviator + 1,
                      outcome.rates[0], outcome.rates[1], float(running[0]), float(running[1]))
        artifacts.converged = game.cooperative.converged

    async def _vector_nash(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams,
                           artifacts: Artifacts):
        report = await asyncio.to_thread(vec_nash_solve, grid, params, self._tol(scenario),
                                         scenario.solver.max_iters)
        artifacts.report_lines.extend(equilibrium_lines(report))
        add_equilibrium_rows(artifacts.table("equilibrium.csv", EQUILIBRIUM_HEADER), report, grid.weights)
        artifacts.converged = report.converged

    async def _vector_gap(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams,
                          artifacts: Artifacts):
        gap = await asyncio.to_thread(vec_nash_gap, grid, params, self._tol(scenario))
        artifacts.report_lines.extend(equilibrium_lines(gap.report))
        artifacts.line(f"sum of nash rates: {fmt(gap.nash_rates.total)}")
        artifacts.line(f"sum capacity of the nash policy: {fmt(gap.sp_sum_rate)}")
        artifacts.line(f"gap: {fmt(gap.gap)} bits")
        artifacts.line(f"sum-capacity kkt residual: {fmt(gap.kkt_residual)}")
        if scenario.task.restarts:
            optimum, restart_values = await asyncio.to_thread(
                vec_sum_capacity_optimize, grid, params, scenario.solver.oracle_tol, scenario.seed,
                scenario.task.restarts)
            spread = max(abs(v - optimum.value) for v in restart_values)
            artifacts.line(f"sum capacity optimum: {fmt(optimum.value)} ({len(restart_values)} restarts, "
                           f"spread {fmt(spread)})")
        artifacts.table("gap.csv", GAP_HEADER).add(scenario.name, gap.nash_rates.total, gap.sp_sum_rate, gap.gap)
        artifacts.converged = gap.report.converged

    async def _audit(self, scenario: Scenario, grid: ChannelGrid, params: SystemParams, artifacts: Artifacts):
        task = scenario.task
        tol = self._tol(scenario)
        rows = await self._map(
            lambda mu: boundary_gap_audit(grid, params, [mu], tol, task.alpha_budget, task.epsilon,
                                          task.partitions, task.partition_seed)[0],
            self._mus(scenario),
        )
        table = artifacts.table("audit.csv", AUDIT_HEADER)
        artifacts.line(f"boundary gap audit over {len(rows)} rate awards")
        if task.partitions:
            artifacts.line(f"  {task.partitions} random partitions per award: evidence, not proof, "
                           "that no partition reaches the boundary")
        for row in rows:
            table.add(row.mu.mu[0], row.mu.mu[1], row.stackelberg_payoff, row.oracle_payoff, row.gap)
            artifacts.line(f"  mu={fmt(row.mu.mu[0])} {fmt(row.mu.mu[1])}: stackelberg "
                           f"{fmt(row.stackelberg_payoff)} oracle {fmt(row.oracle_payoff)} gap {fmt(row.gap)} "
                           f"(alpha {fmt(row.alpha)})")
        artifacts.converged = all(r.oracle_converged for r in rows)

    async def trace(self, scenario: Scenario, output_dir: Union[str, Path]) -> Artifacts:
        """
        Boundary points over a rate-award fan, Stackelberg points over a
        threshold fan, the Nash point and both corners in one trace.csv.
        """
        grid = await asyncio.to_thread(scenario.build_grid)
        params = scenario.params()
        if grid.is_vector or grid.num_users != 2:
            raise ValueError("trace needs a 2-user scalar scenario")
        tol = self._tol(scenario)

        boundary = await self._boundary_points(scenario, grid, params, self._mus(scenario))
        alphas = scenario.task.alphas or spread_alphas(grid, scenario.task.alpha_count or DEFAULT_FAN)
        sweep = await self._sweep_points(scenario, grid, params, alphas)
        nash = await asyncio.to_thread(nash_solve, grid, params, tol)
        corners = await self._map(lambda order: corner_point(grid, params, order), [[1, 0], [0, 1]])

        artifacts = Artifacts()
        artifacts.line(f"scenario: {scenario.name}")
        artifacts.line(f"trace: {len(boundary)} boundary points, {len(sweep)} thresholds")
        table = artifacts.table("trace.csv", TRACE_HEADER)
        for point in boundary:
            table.add("boundary", point.mu.mu[0], point.mu.mu[1], None, point.rates[0], point.rates[1])
        checked = []
        for point in sweep:
            if point.report is None:
                artifacts.line(f"  alpha={fmt(point.alpha)}: FAILED {point.error}")
                continue
            table.add("stackelberg", None, None, point.alpha, point.rates[0], point.rates[1])
            checked.append(("stackelberg", point.rates))
        table.add("nash", None, None, None, nash.rates[0], nash.rates[1])
        checked.append(("nash", nash.rates))
        for corner in corners:
            table.add("corner", None, None, None, corner.rates[0], corner.rates[1])
            checked.append((corner.label, corner.rates))

        violations = [(name, rates, b) for name, rates in checked for b in boundary if not dominates(b, rates)]
        for name, rates, b in violations:
            artifacts.line(f"  outside the region: {name} rates {fmt(rates[0])} {fmt(rates[1])} "
                           f"beat mu={fmt(b.mu.mu[0])} {fmt(b.mu.mu[1])}")
        artifacts.line(f"dominance audit: {len(violations)} violations")
        artifacts.converged = (all(b.converged for b in boundary) and all(p.converged for p in sweep)
                               and nash.converged)
        artifacts.line(f"status: {'converged' if artifacts.converged else 'NOT CONVERGED'}")
        write_artifacts(artifacts, output_dir)
        return artifacts


# Global instance and factory function
_scenario_runner = None


async def get_scenario_runner(config: RunnerConfig = None) -> ScenarioRunner:
    """Get the global scenario runner, replacing it when a new config is given."""
    global _scenario_runner
    if _scenario_runner is None or config is not None:
        _scenario_runner = ScenarioRunner(config)
    return _scenario_runner
