#!/usr/bin/env python3
"""
Tests for the base-station led formulations: the Stackelberg decoding game,
the epsilon-Stackelberg search, the boundary gap audit and the repeated game
with punishment.
"""

import logging
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root and src to path
sys.path.insert(0, str(Path(__file__).parent))
sys.path.insert(0, str(Path(__file__).parent / "src"))

from channel.grid import build_grid, grid_from_arrays
from channel.models import ChannelSpec, FadingFamily, SystemParams
from games.capacity import corner_point
from games.models import (
    DecodingStrategy, PayoffMode, PowerPolicy, RateAward, RateVector, RegimeKind, TriggerStrategy, UserBehavior,
    WaterLevels
)
from games.repeated import (
    RepeatedGame, cumulative_averages, min_punishment_length, punishment_length, simulate, window_length
)
from games.scalar_game import nash_solve_2user
from games.stackelberg import (
    ADMISSIBLE, LAMBDA_ZERO_CONVENTION, PERTURBED_START, alpha_sweep, boundary_gap_audit, candidate_alphas,
    epsilon_stackelberg, is_admissible, is_monotone, low_level_solve, random_partitions, sp_alpha, sp_partition,
    stackelberg_rates, strategy_budget_residuals, successive_policy
)

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)

logger = logging.getLogger(__name__)


@pytest.fixture
def symmetric_grid():
    return grid_from_arrays([[2.0, 1.0], [1.0, 2.0]], [0.5, 0.5], label="symmetric")


@pytest.fixture
def unit_params():
    return SystemParams(noise_variance=1.0, power_budgets=[1.0, 1.0])


@pytest.fixture
def rayleigh_grid():
    spec = ChannelSpec(family=FadingFamily.EXPONENTIAL, means=[1.0, 0.7], label="rayleigh")
    return build_grid(spec, resolution=40, seed=7)


# Stackelberg decoding game

def test_rates_follow_the_decoding_order(unit_params):
    grid = grid_from_arrays([[1.0, 1.0]], [1.0])
    policy = PowerPolicy(powers=[[1.0, 1.0]])
    user_2_first = stackelberg_rates(grid, unit_params, DecodingStrategy.threshold(0.0), policy)
    assert user_2_first.rates == pytest.approx([0.5, 0.5 * math.log2(1.5)])
    user_1_first = stackelberg_rates(grid, unit_params, DecodingStrategy.threshold(math.inf), policy)
    assert user_1_first.rates == pytest.approx([0.5 * math.log2(1.5), 0.5])


def test_threshold_endpoints_are_the_corners(rayleigh_grid, unit_params):
    for alpha, order in ((0.0, [1, 0]), (math.inf, [0, 1])):
        report = low_level_solve(rayleigh_grid, unit_params, DecodingStrategy.threshold(alpha))
        corner = corner_point(rayleigh_grid, unit_params, order)
        assert report.converged
        assert report.convention == ADMISSIBLE
        assert report.levels.levels == pytest.approx(corner.levels.levels, rel=1e-7)
        assert report.rates.rates == pytest.approx(corner.rates.rates, abs=1e-8)


def test_unit_threshold_on_mirrored_states_is_the_sum_point(symmetric_grid, unit_params):
    report = low_level_solve(symmetric_grid, unit_params, DecodingStrategy.threshold(1.0))
    assert report.converged
    assert report.levels.levels == pytest.approx([2.5, 2.5], rel=1e-9)
    assert report.rates.total == pytest.approx(0.5 * math.log2(5), rel=1e-9)
    assert sp_alpha(report) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("family", [FadingFamily.EXPONENTIAL, FadingFamily.UNIFORM])
def test_split_partition_reproduces_the_sum_point(family, seed, unit_params):
    spec = ChannelSpec(family=family, means=[1.0, 0.7], low=[0.1, 0.2], high=[1.0, 1.5])
    grid = build_grid(spec, resolution=200, seed=seed)
    nash = nash_solve_2user(grid, unit_params)
    assert nash.converged

    split_grid, strategy = sp_partition(grid, nash)
    shared = int(np.sum(np.all(nash.policy.effective_powers() > 0, axis=1)))
    assert split_grid.num_states == grid.num_states + shared
    assert split_grid.weights.sum() == pytest.approx(1.0, abs=1e-12)

    levels = nash.levels.levels
    residuals = strategy_budget_residuals(split_grid, unit_params, strategy, levels)
    for residual, budget in zip(residuals, unit_params.power_budgets):
        assert residual <= 2e-8 * budget
    powers = successive_policy(split_grid.power_gains, np.asarray(levels), strategy.decoding_orders(split_grid),
                               unit_params.noise_variance)
    rates = stackelberg_rates(split_grid, unit_params, strategy, PowerPolicy(powers=powers))
    assert rates.rates == pytest.approx(nash.rates.rates, abs=1e-9)

    restarted = low_level_solve(split_grid, unit_params, strategy, initial_levels=levels)
    assert restarted.converged
    assert restarted.convention == PERTURBED_START
    assert restarted.rates.rates == pytest.approx(nash.rates.rates, abs=1e-6)


def test_split_partition_without_shared_states_is_the_threshold(symmetric_grid, unit_params):
    nash = nash_solve_2user(symmetric_grid, unit_params)
    split_grid, strategy = sp_partition(symmetric_grid, nash)
    assert nash.tie_mass == 0
    assert split_grid.num_states == symmetric_grid.num_states
    expected = DecodingStrategy.threshold(sp_alpha(nash)).decode_1_first_mask(symmetric_grid)
    assert strategy.decode_1_first == expected.tolist()


def test_random_partitions_converge_monotonically(rayleigh_grid, unit_params):
    logger.info("Solving low-level equilibria on 20 random partitions...")
    for strategy in random_partitions(rayleigh_grid, 20, seed=3):
        report = low_level_solve(rayleigh_grid, unit_params, strategy)
        assert report.converged
        assert is_monotone(report)
        for residual, budget in zip(report.budget_residuals, unit_params.power_budgets):
            assert residual <= 1e-8 * budget


def test_random_partitions_are_reproducible(rayleigh_grid):
    first = random_partitions(rayleigh_grid, 5, seed=9)
    again = random_partitions(rayleigh_grid, 5, seed=9)
    assert [s.decode_1_first for s in first] == [s.decode_1_first for s in again]


def test_many_users_use_the_zero_start_convention():
    grid = grid_from_arrays([[1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0]], [0.5, 0.5])
    params = SystemParams(noise_variance=1.0, power_budgets=[1.0, 1.0, 1.0, 1.0])
    report = low_level_solve(grid, params, DecodingStrategy.fixed_order([0, 1, 2, 3], 2))
    assert report.converged
    assert report.convention == LAMBDA_ZERO_CONVENTION
    assert report.convention == "lambda=0-convention equilibrium"
    assert report.convention.isascii()


def test_admissibility(rayleigh_grid, unit_params):
    strategy = DecodingStrategy.threshold(1.0)
    candidate = low_level_solve(rayleigh_grid, unit_params, strategy)
    assert is_admissible(rayleigh_grid, unit_params, strategy, candidate, candidate)

    better = candidate.model_copy(update={"rates": RateVector(rates=[r + 0.1 for r in candidate.rates.rates])})
    assert not is_admissible(rayleigh_grid, unit_params, strategy, candidate, better)

    off = candidate.model_copy(update={"levels": WaterLevels(levels=[1.5 * x for x in candidate.levels.levels])})
    with pytest.raises(ValueError):
        is_admissible(rayleigh_grid, unit_params, strategy, candidate, off)


def test_zero_start_dominates_perturbed_starts(rayleigh_grid, unit_params):
    rng = np.random.default_rng(11)
    found = 0
    for strategy in random_partitions(rayleigh_grid, 20, seed=4):
        zero = low_level_solve(rayleigh_grid, unit_params, strategy)
        assert zero.converged
        start = np.asarray(zero.levels.levels) * rng.uniform(0.25, 4.0, size=2)
        perturbed = low_level_solve(rayleigh_grid, unit_params, strategy, initial_levels=start)
        assert perturbed.convention == PERTURBED_START
        assert perturbed.history[0] == pytest.approx(start.tolist())
        if not perturbed.converged:
            continue
        found += 1
        assert np.all(zero.rates.as_array() >= perturbed.rates.as_array() - 1e-6)
        assert is_admissible(rayleigh_grid, unit_params, strategy, zero, perturbed, rate_tol=1e-6)
    assert found > 0


def test_initial_levels_validated(rayleigh_grid, unit_params):
    strategy = DecodingStrategy.threshold(1.0)
    with pytest.raises(ValueError):
        low_level_solve(rayleigh_grid, unit_params, strategy, initial_levels=[1.0])
    with pytest.raises(ValueError):
        low_level_solve(rayleigh_grid, unit_params, strategy, initial_levels=[1.0, -0.5])


def test_sweep_keeps_every_alpha(symmetric_grid, unit_params):
    points = alpha_sweep(symmetric_grid, unit_params, [0.0, 1.0, math.inf])
    assert [p.alpha for p in points] == [0.0, 1.0, math.inf]
    assert all(p.converged for p in points)
    with pytest.raises(ValueError):
        alpha_sweep(symmetric_grid, unit_params, [])


def test_candidate_alphas(symmetric_grid):
    assert candidate_alphas(symmetric_grid) == [0.0, 0.5, 2.0, math.inf]


# epsilon-Stackelberg

def test_epsilon_stackelberg_endpoints(symmetric_grid, unit_params):
    first = epsilon_stackelberg(symmetric_grid, unit_params, [1.0, 0.0], 1e-6, 64)
    assert first.alpha == 0.0
    assert first.payoff == pytest.approx(first.upper_bound, abs=1e-6)

    second = epsilon_stackelberg(symmetric_grid, unit_params, [0.0, 1.0], 1e-6, 64)
    corner = corner_point(symmetric_grid, unit_params, [0, 1])
    assert second.rates.rates == pytest.approx(corner.rates.rates, abs=1e-8)


def test_epsilon_stackelberg_equal_awards(symmetric_grid, unit_params):
    choice = epsilon_stackelberg(symmetric_grid, unit_params, [1.0, 1.0], 1e-6, 64)
    assert choice.payoff == pytest.approx(0.5 * math.log2(5), rel=1e-9)
    assert choice.candidates == 4
    assert choice.evaluations == 4
    assert choice.payoff < choice.upper_bound


def test_epsilon_stackelberg_respects_the_budget(rayleigh_grid, unit_params):
    choice = epsilon_stackelberg(rayleigh_grid, unit_params, [2.0, 1.0], 1e-9, 8)
    assert choice.evaluations <= 8
    assert choice.candidates == len(candidate_alphas(rayleigh_grid))
    with pytest.raises(ValueError):
        epsilon_stackelberg(rayleigh_grid, unit_params, [2.0, 1.0], 1e-9, 2)
    with pytest.raises(ValueError):
        epsilon_stackelberg(rayleigh_grid, unit_params, [2.0, 1.0], 0.0, 8)


def test_boundary_gap_audit(unit_params):
    spec = ChannelSpec(family=FadingFamily.EXPONENTIAL, means=[1.0, 1.0], label="audit")
    grid = build_grid(spec, resolution=80, seed=5)
    rows = boundary_gap_audit(grid, unit_params, [[2.0, 1.0], [1.0, 1.0], [1.0, 0.0]], alpha_budget=128)
    unequal, equal, single = rows
    assert unequal.gap > 1e-4
    assert abs(equal.gap) <= 1e-6
    assert abs(single.gap) <= 1e-6
    assert unequal.partition_payoff is None


@pytest.mark.parametrize("grid_name", ["symmetric", "rayleigh"])
def test_unequal_awards_stay_off_the_boundary(grid_name, symmetric_grid, unit_params):
    if grid_name == "symmetric":
        grid = symmetric_grid
    else:
        spec = ChannelSpec(family=FadingFamily.EXPONENTIAL, means=[1.0, 1.0], label="audit")
        grid = build_grid(spec, resolution=80, seed=5)
    mus = [[2.0, 1.0], [1.0, 2.0], [3.0, 1.0], [1.0, 3.0]]
    logger.info(f"Gap audit on '{grid.label}' with 200 random partitions...")
    rows = boundary_gap_audit(grid, unit_params, mus, alpha_budget=256, partitions=200, seed=1)
    for row in rows:
        assert row.oracle_converged
        assert row.partitions_checked == 200
        assert row.stackelberg_payoff >= row.partition_payoff
        assert row.gap > 1e-3


def test_gap_audit_with_partitions(symmetric_grid, unit_params):
    rows = boundary_gap_audit(symmetric_grid, unit_params, [[1.0, 1.0]], partitions=6, seed=2)
    assert rows[0].partitions_checked == 6
    assert rows[0].stackelberg_payoff >= rows[0].threshold_payoff


# Repeated game

def test_punishment_length_arithmetic():
    assert punishment_length(0.6, 0.9, 0.2) == 3
    assert window_length(0.6, 0.9, 0.2) == 1
    assert punishment_length(0.5, 1.5, 0.1) == 4
    assert window_length(0.5, 1.5, 0.1) == 3
    with pytest.raises(ValueError):
        punishment_length(0.5, 0.9, 0.5)


def test_window_length_is_minimal():
    for coop, dev, pun in ((0.6, 0.9, 0.2), (0.5, 1.5, 0.1), (1.0, 4.0, 0.7)):
        t = window_length(coop, dev, pun)
        assert dev + t * pun < (t + 1) * coop
        if t > 1:
            assert not dev + (t - 1) * pun < t * coop


def test_deviation_inequality_is_validated():
    with pytest.raises(ValueError):
        TriggerStrategy(target_mu=RateAward(mu=[1.0, 1.0]), punishment_lengths=[1, 1],
                        cooperative_rates=[0.6, 0.6], punished_rates=[0.2, 0.2], deviation_rates=[0.9, 0.9])


def test_compliance_earns_the_cooperative_rates(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [2.0, 1.0])
    strategy = game.trigger_strategy()
    behaviors = [UserBehavior.comply(), UserBehavior.comply()]

    result = simulate(symmetric_grid, unit_params, strategy, behaviors, 10, game=game)
    assert result.payoffs == pytest.approx(game.cooperative.rates.rates, rel=1e-12)
    assert all(o.regime == RegimeKind.COOPERATE for o in result.outcomes)

    discounted = simulate(symmetric_grid, unit_params, strategy, behaviors, 10,
                          payoff_mode=PayoffMode.DISCOUNTED, discount=0.9, game=game)
    expected = [r * (1 - 0.9 ** 10) for r in game.cooperative.rates.rates]
    assert discounted.payoffs == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("mu, deviator", [([2.0, 1.0], 0), ([1.0, 2.0], 1)])
def test_deviation_does_not_pay(symmetric_grid, unit_params, mu, deviator):
    game = RepeatedGame(symmetric_grid, unit_params, mu)
    strategy = game.trigger_strategy()
    length = strategy.punishment_lengths[deviator]
    behaviors = [UserBehavior.comply(), UserBehavior.comply()]
    behaviors[deviator] = UserBehavior.deviate_at(1)

    result = simulate(symmetric_grid, unit_params, strategy, behaviors, 1 + length, game=game)
    assert result.outcomes[0].deviator == deviator
    assert result.outcomes[0].rates[deviator] > game.cooperative.rates[deviator]
    assert result.payoffs[deviator] < game.cooperative.rates[deviator]


def test_punishment_schedule(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [2.0, 1.0])
    strategy = game.trigger_strategy()
    length = strategy.punishment_lengths[0]
    behaviors = [UserBehavior.deviate_at(1), UserBehavior.comply()]
    result = simulate(symmetric_grid, unit_params, strategy, behaviors, length + 2, game=game)

    punished = result.outcomes[1:length + 1]
    assert [o.remaining for o in punished] == list(range(length, 0, -1))
    for outcome in punished:
        assert outcome.regime == RegimeKind.PUNISH
        assert outcome.punished_user == 0
        assert outcome.rates[1] == pytest.approx(game.corners[0].rates[1], rel=1e-12)
        assert outcome.rates[0] == pytest.approx(game.corners[0].rates[0], rel=1e-12)
    assert result.outcomes[-1].regime == RegimeKind.COOPERATE

    averages = cumulative_averages(result)
    assert averages.shape == (length + 2, 2)
    assert averages[-1] == pytest.approx(result.payoffs)


def test_tight_length_matches_the_plan(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [2.0, 1.0])
    plan = game.plan(0)
    assert plan.deviation_rate > plan.cooperative_rate > plan.punished_rate
    assert plan.deviation_rate + plan.tight_length * plan.punished_rate < plan.tight_length * plan.cooperative_rate
    assert plan.window_length <= plan.tight_length <= plan.loose_length
    assert min_punishment_length(symmetric_grid, unit_params, [2.0, 1.0], 0) == plan.tight_length


@pytest.fixture(scope="module")
def small_rayleigh_grid():
    spec = ChannelSpec(family=FadingFamily.EXPONENTIAL, means=[1.0, 0.7], label="small rayleigh")
    return build_grid(spec, resolution=60, seed=3)


@pytest.mark.parametrize("mu", [[2.0, 1.0], [1.0, 2.0], [3.0, 1.0], [1.0, 3.0]])
@pytest.mark.parametrize("deviator", [0, 1])
def test_window_length_is_the_shortest_deterrent(small_rayleigh_grid, unit_params, mu, deviator):
    game = RepeatedGame(small_rayleigh_grid, unit_params, mu)
    plan = game.plan(deviator)
    assert plan.deviation_rate > plan.cooperative_rate
    assert plan.window_length <= plan.tight_length
    strategy = game.trigger_strategy()
    behaviors = [UserBehavior.comply(), UserBehavior.comply()]
    behaviors[deviator] = UserBehavior.deviate_at(1)
    coop = plan.cooperative_rate

    # Deviation stage followed by the whole punishment
    for length in (plan.window_length, plan.tight_length):
        result = simulate(small_rayleigh_grid, unit_params, strategy, behaviors, 1 + length, game=game)
        assert result.outcomes[0].deviator == deviator
        assert result.payoffs[deviator] < coop

    # One punishment stage short of the window, the deviation still pays
    short = simulate(small_rayleigh_grid, unit_params, strategy, behaviors, plan.window_length, game=game)
    assert short.payoffs[deviator] >= coop * (1 - 1e-12)

    # A strategy punishing for window_length - 1 stages loses to deviating every cycle
    if plan.window_length > 1:
        cycle = plan.window_length
        lengths = [cycle - 1, cycle - 1]
        weak = TriggerStrategy(target_mu=RateAward(mu=mu), punishment_lengths=lengths,
                               detection_tol=strategy.detection_tol)
        behaviors[deviator] = UserBehavior.deviate_at(*range(1, 5 * cycle, cycle))
        result = simulate(small_rayleigh_grid, unit_params, weak, behaviors, 5 * cycle, game=game)
        assert result.payoffs[deviator] >= coop * (1 - 1e-12)


def test_sum_point_deviation_is_invisible(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [1.0, 1.0])
    strategy = game.trigger_strategy()
    behaviors = [UserBehavior.deviate_at(1), UserBehavior.comply()]
    result = simulate(symmetric_grid, unit_params, strategy, behaviors, 4, game=game)
    assert result.outcomes[0].deviator is None
    assert result.payoffs == pytest.approx([0.25 * math.log2(5)] * 2, rel=1e-9)


def test_prescribed_explicit_powers_are_not_detected(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [2.0, 1.0])
    strategy = game.trigger_strategy()
    powers = game.prescribed(RegimeKind.COOPERATE, None)[0][:, 0]
    behaviors = [UserBehavior.deviate_at(1, powers=powers), UserBehavior.comply()]
    result = simulate(symmetric_grid, unit_params, strategy, behaviors, 3, game=game)
    assert all(o.deviator is None for o in result.outcomes)


def test_explicit_powers_over_budget_rejected(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [2.0, 1.0])
    strategy = game.trigger_strategy()
    behaviors = [UserBehavior.deviate_at(1, powers=[3.0, 3.0]), UserBehavior.comply()]
    with pytest.raises(ValueError):
        simulate(symmetric_grid, unit_params, strategy, behaviors, 3, game=game)


def test_simulation_arguments_validated(symmetric_grid, unit_params):
    strategy = TriggerStrategy(target_mu=RateAward(mu=[1.0, 1.0]), punishment_lengths=[1, 1])
    behaviors = [UserBehavior.comply(), UserBehavior.comply()]
    with pytest.raises(ValueError):
        simulate(symmetric_grid, unit_params, strategy, behaviors, 0)
    with pytest.raises(ValueError):
        simulate(symmetric_grid, unit_params, strategy, behaviors, 5, payoff_mode=PayoffMode.DISCOUNTED,
                 discount=1.0)
    with pytest.raises(ValueError):
        simulate(symmetric_grid, unit_params, strategy, behaviors[:1], 5)
    with pytest.raises(ValueError):
        UserBehavior.deviate_at(0)


def test_simultaneous_deviations_rejected(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [2.0, 1.0])
    strategy = game.trigger_strategy()
    behaviors = [UserBehavior.deviate_at(2), UserBehavior.deviate_at(2)]
    with pytest.raises(ValueError):
        simulate(symmetric_grid, unit_params, strategy, behaviors, 3, game=game)


def test_repeated_game_needs_two_users():
    grid = grid_from_arrays([[1.0, 2.0, 3.0]], [1.0])
    params = SystemParams(noise_variance=1.0, power_budgets=[1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        RepeatedGame(grid, params, [1.0, 1.0, 1.0])


def test_cooperative_orders_decode_the_owner_last(symmetric_grid, unit_params):
    game = RepeatedGame(symmetric_grid, unit_params, [1.0, 1.0])
    assert np.array_equal(game.cooperative_orders, np.array([[1, 0], [0, 1]]))
