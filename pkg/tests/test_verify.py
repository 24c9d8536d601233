"""
Unit Tests for the Independent Checks: Monte Carlo, Grid Search and Property Checks
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st
from pydantic import ValidationError

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / 'src'))

from designer.optimal import optimal_policy
from disclosure.equilibrium import solve_equilibrium
from disclosure.path import path_from_schedule
from disclosure.policy import DisclosurePolicy, Silent, Transparent
from disclosure.welfare import welfare
from model.errors import ConstraintViolationError, DegenerateRateError, ModelError
from model.loader import load_market
import verify.checks as checks
from verify.checks import (
    audit_bad_news_path,
    check_breakdown_bound,
    contraction_time,
    jensen_contraction_check,
    jensen_margin,
    observation_checks,
)
from verify.grid_search import (
    GridProblem,
    GridSpec,
    discrete_ic_report,
    grid_refinement,
    grid_search,
    grid_welfare,
    mass_levels,
)
from verify.simulate import SimConfig, simulate

CONFIG_DIR = Path(__file__).parent.parent / 'config'
SMALL_GRID = GridSpec(dt=0.02, horizon=0.12, mass_step=0.5)


@pytest.fixture
def two_cohort():
    return load_market(CONFIG_DIR / 'two_cohort_market.yaml')


@pytest.fixture
def homogeneous():
    return load_market(CONFIG_DIR / 'homogeneous_market.yaml')


def solved(market, policy):
    return policy, solve_equilibrium(market, policy)


class TestSimulation:
    """Test the Monte Carlo welfare estimate."""

    def test_no_evidence(self, two_cohort):
        """Test that without evidence everyone invests at once and payoffs are certain."""
        market = two_cohort.model_copy(update={"rate_good": 0.0, "rate_bad": 0.0})
        policy, path = solved(market, DisclosurePolicy.transparent())
        estimate = simulate(market, policy, path, SimConfig(n_paths=500, seed=3, condition_on_state=True))
        assert estimate.mean_total == pytest.approx(10.0, abs=1e-12)
        assert estimate.std_error == pytest.approx(0.0, abs=1e-12)
        assert estimate.good_disclosed_share == 0.0

    def test_certain_state(self, two_cohort):
        """Test a certain good state pays the good value to everyone."""
        market = two_cohort.model_copy(update={"prior": 1.0})
        policy, path = solved(market, DisclosurePolicy.transparent())
        estimate = simulate(market, policy, path, SimConfig(n_paths=200, seed=1))
        assert estimate.mean_total == pytest.approx(16.0)
        assert math.isnan(estimate.bad_disclosed_share)

    def test_reproducible(self, two_cohort):
        """Test identical seeds and blocks give identical estimates."""
        policy, path = solved(two_cohort, DisclosurePolicy.transparent())
        config = SimConfig(n_paths=3000, seed=42, block_size=1000)
        assert simulate(two_cohort, policy, path, config) == simulate(two_cohort, policy, path, config)

    def test_optimal_plan_estimate(self, two_cohort):
        """Test the estimate agrees with the analytic optimum."""
        plan = optimal_policy(two_cohort)
        policy, path = solved(two_cohort, plan.policy)
        estimate = simulate(two_cohort, policy, path, SimConfig(n_paths=40_000, seed=7))
        assert estimate.within(plan.welfare, sigmas=4.0)
        assert len(estimate.per_cohort_mean) == 2
        assert 0.0 < estimate.bad_disclosed_share < 1.0

    def test_transparent_estimate(self, two_cohort):
        policy, path = solved(two_cohort, DisclosurePolicy.transparent())
        estimate = simulate(two_cohort, policy, path, SimConfig(n_paths=40_000, seed=11))
        assert estimate.within(welfare(two_cohort, path).total, sigmas=4.0)

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            SimConfig(n_paths=0)
        with pytest.raises(ValidationError):
            SimConfig(time_step=0.0)


class TestGridSearch:
    """Test the discrete-time search."""

    def test_mass_levels(self, two_cohort):
        levels = mass_levels(two_cohort, 0.75)
        assert list(levels) == pytest.approx([0.0, 0.75, 1.0, 1.5, 2.0])

    def test_spec(self):
        assert SMALL_GRID.n_steps == 6
        with pytest.raises(ValidationError):
            GridSpec(dt=0.0, horizon=0.1, mass_step=0.5)

    def test_small_grid_optimum(self, two_cohort):
        """Test the small grid optimum: cohort 1 at once, cohort 2 once its bad news is out."""
        solution = grid_search(two_cohort, SMALL_GRID)
        expected = 5.0 + math.exp(-0.08) * (6.0 - math.exp(-2.0))
        assert solution.welfare == pytest.approx(expected, abs=1e-9)
        assert solution.exhaustive
        assert solution.ic_ok
        assert all(solution.shape_flags)
        q = solution.paths.q_grid
        assert q[0] == pytest.approx(1.0)
        assert q[4] == pytest.approx(2.0)
        assert solution.paths.zb_grid[4] == pytest.approx(1.0)
        assert np.all(solution.paths.zg_grid[:4] == 0.0)
        assert sum(solution.per_cohort) == pytest.approx(solution.welfare, abs=1e-9)

    def test_below_continuous_optimum(self, two_cohort):
        """Test a coarse grid cannot beat the continuous optimum."""
        solution = grid_search(two_cohort, SMALL_GRID)
        assert solution.welfare <= optimal_policy(two_cohort).welfare + 1e-9

    def test_single_cohort(self, homogeneous):
        solution = grid_search(homogeneous, GridSpec(dt=0.05, horizon=0.2, mass_step=0.25))
        assert solution.welfare == pytest.approx(5.0, abs=1e-9)

    def test_zero_horizon(self, two_cohort):
        """Test a single step leaves investing at once as the only choice."""
        solution = grid_search(two_cohort, GridSpec(dt=0.02, horizon=0.0, mass_step=0.5))
        assert list(solution.paths.q_grid) == [2.0]
        assert solution.welfare == pytest.approx(10.0)

    def test_label_budget(self, two_cohort):
        """Test a tiny budget switches to the beam and cannot beat the exhaustive optimum."""
        exact = grid_search(two_cohort, SMALL_GRID)
        beam = grid_search(two_cohort, SMALL_GRID, label_budget=4)
        assert not beam.exhaustive
        assert beam.welfare <= exact.welfare + 1e-12

    def test_infeasible_problem(self):
        """Test evidence cannot be revealed before it is generated."""
        with pytest.raises(ConstraintViolationError):
            GridProblem(dt=0.1, horizon=0.1, q_grid=np.array([1.0, 2.0]), zg_grid=np.array([0.5, 1.0]), zb_grid=np.zeros(2))
        with pytest.raises(ConstraintViolationError):
            GridProblem(dt=0.1, horizon=0.1, q_grid=np.array([1.0, 0.5]), zg_grid=np.zeros(2), zb_grid=np.zeros(2))

    def test_discrete_ic(self, two_cohort):
        """Test an atom at t=0 passes and a stalled second cohort is caught waiting."""
        rushed = GridProblem(
            dt=0.02,
            horizon=0.08,
            q_grid=np.array([2.0, 2.0, 2.0, 2.0, 2.0]),
            zg_grid=np.zeros(5),
            zb_grid=np.zeros(5),
        )
        assert grid_welfare(two_cohort, rushed) == pytest.approx((5.0, 5.0))
        assert discrete_ic_report(two_cohort, rushed).passed

        waiting = GridProblem(
            dt=0.02,
            horizon=0.08,
            q_grid=np.array([1.0, 1.0, 1.0, 1.0, 1.0]),
            zg_grid=np.zeros(5),
            zb_grid=np.array([0.0, 1.0, 1.0, 1.0, 1.0]),
        )
        report = discrete_ic_report(two_cohort, waiting)
        assert not report.passed
        assert report.worst(1)[0].kind == "wait"

    def test_frame(self, two_cohort):
        frame = grid_search(two_cohort, SMALL_GRID).paths.to_frame(two_cohort)
        assert list(frame.columns) == ["t", "q", "z_good", "z_bad", "x", "phase_index"]
        assert frame["t"].iloc[-1] == pytest.approx(0.12)

    def test_refinement(self, two_cohort):
        report = grid_refinement(two_cohort, [0.04, 0.02], horizon=0.12, mass_step=0.5)
        assert list(report.table["dt"]) == [0.04, 0.02]
        assert math.isfinite(report.extrapolated)
        assert (report.table["error_estimate"] >= 0).all()

    def test_complete_stock_freezes_disclosure(self, two_cohort):
        """Test a horizon running past the last investment costs nothing and releases nothing new."""
        short = grid_search(two_cohort, GridSpec(dt=0.02, horizon=0.10, mass_step=0.5))
        long = grid_search(two_cohort, GridSpec(dt=0.02, horizon=0.30, mass_step=0.5))
        assert long.welfare == pytest.approx(short.welfare, abs=1e-9)
        assert long.exhaustive
        paths = long.paths
        done = int(np.argmax(paths.q_grid >= two_cohort.total_mass - 1e-12))
        assert np.all(paths.zg_grid[done + 1:] == paths.zg_grid[done + 1])
        assert np.all(paths.zb_grid[done + 1:] == paths.zb_grid[done + 1])


class TestPropertyChecks:
    """Test the randomized and enumerated property checks."""

    def test_contraction_reference(self):
        """Test the certainty equivalent of a two-point release lottery."""
        t_hat = contraction_time(2.0, [0.1, 0.3], [0.5, 0.5])
        assert t_hat == pytest.approx(0.190066, abs=1e-6)
        assert jensen_margin(1.0, t_hat, [0.1, 0.3], [0.5, 0.5]) > 0
        assert jensen_margin(4.0, t_hat, [0.1, 0.3], [0.5, 0.5]) < 0
        assert jensen_margin(2.0, t_hat, [0.1, 0.3], [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)

    @given(
        times=st.lists(st.floats(min_value=0, max_value=2), min_size=2, max_size=2),
        weight=st.floats(min_value=0.01, max_value=0.99),
        r=st.floats(min_value=0.1, max_value=5),
        patience=st.floats(min_value=0.05, max_value=0.95),
    )
    @hyp_settings(max_examples=100, deadline=None)
    def test_contraction_favors_patient(self, times, weight, r, patience):
        """Test the certain release helps more patient cohorts."""
        probabilities = [weight, 1.0 - weight]
        t_hat = contraction_time(r, times, probabilities)
        assert min(times) - 1e-9 <= t_hat <= max(times) + 1e-9
        assert jensen_margin(r * patience, t_hat, times, probabilities) >= -1e-12

    def test_jensen_check(self, two_cohort):
        report = jensen_contraction_check(two_cohort, random_instances=200, seed=5)
        assert report.passed
        assert report.summary["min_patient_margin"] > 0
        assert report.summary["max_impatient_margin"] < 0
        assert len(report.to_frame()) == 200

    def test_jensen_needs_good_news(self, two_cohort):
        with pytest.raises(DegenerateRateError):
            jensen_contraction_check(two_cohort.model_copy(update={"rate_good": 0.0}), 10, 0)

    def test_breakdown_bound(self, two_cohort):
        """Test no sampled incentive-compatible schedule beats transparent bad news."""
        report = check_breakdown_bound(two_cohort, Silent(), samples=3, seed=2)
        assert report.passed
        assert report.summary["violations"] == 0
        assert len(report.rows) == 3

    def test_infeasible_path_flagged(self, two_cohort):
        """Test a rush at t=0 that discloses all bad news is rejected as IC-infeasible, not as a bound violation."""
        policy = DisclosurePolicy(good=Silent(), bad=Transparent())
        reference = solve_equilibrium(two_cohort, policy)
        rushed = path_from_schedule(two_cohort, policy, [0.0], [two_cohort.total_mass])
        grid = np.linspace(0.0, 0.3, 16)
        status, slack, gap = audit_bad_news_path(two_cohort, policy, rushed, reference, grid)
        assert status == "ic-infeasible"
        assert slack < 0
        assert gap > 1.0

    def test_infeasible_samples_not_counted(self, two_cohort, monkeypatch):
        """Test samples whose paths fail IC are tallied apart from violations."""
        solve = checks.solve_equilibrium

        def rushed(market, policy, horizon=None):
            if isinstance(policy.bad, Transparent):
                return solve(market, policy, horizon)
            disclosed = DisclosurePolicy(good=policy.good, bad=Transparent())
            return path_from_schedule(market, disclosed, [0.0], [market.total_mass])

        monkeypatch.setattr(checks, "solve_equilibrium", rushed)
        report = check_breakdown_bound(two_cohort, Silent(), samples=3, seed=2)
        assert report.summary["ic_infeasible"] == 3
        assert report.summary["violations"] == 0
        assert report.passed
        assert set(report.to_frame()["status"]) == {"ic-infeasible"}

    def test_observations(self, homogeneous):
        """Test the full-revelation checks on a single symmetric cohort."""
        report = observation_checks(homogeneous, n_steps=12)
        assert report.passed, report.to_frame()
        assert report.summary["t_star"] == pytest.approx(math.log((6 - math.exp(-1)) / 5), abs=1e-12)
        assert {row["check"] for row in report.rows} == {
            "good-news-delay",
            "breakdowns-dominate",
            "breakdowns-one-cell",
            "breakdowns-reach",
            "bad-news-timing",
            "below-bound-infeasible",
        }

    def test_observations_degenerate(self, homogeneous):
        market = homogeneous.model_copy(update={"rate_good": 0.0, "rate_bad": 0.0})
        report = observation_checks(market)
        assert report.passed
        assert report.summary["degenerate"]

    def test_observations_need_homogeneous(self, two_cohort):
        with pytest.raises(ModelError):
            observation_checks(two_cohort)


class TestPerformance:
    """Performance checks."""

    def test_small_grid_speed(self, two_cohort):
        """Test the small grid solves in a few seconds."""
        start = time.time()
        grid_search(two_cohort, SMALL_GRID)
        duration = time.time() - start
        assert duration < 10.0, f"Grid search took {duration:.2f}s, expected < 10s"

    def test_acceptance_grid(self, two_cohort):
        """Test the refined grids stay under the continuous optimum, approach it and keep the plan's shape."""
        optimum = optimal_policy(two_cohort).welfare
        start = time.time()
        solutions = [
            grid_search(two_cohort, GridSpec(dt=dt, horizon=0.15, mass_step=0.25))
            for dt in (0.02, 0.01, 0.005)
        ]
        duration = time.time() - start
        assert duration < 600.0, f"Grid refinement took {duration:.2f}s, expected < 600s"
        for solution in solutions:
            assert solution.welfare <= optimum + 1e-9
            assert solution.ic_ok
            assert all(solution.shape_flags)
        gaps = [optimum - solution.welfare for solution in solutions]
        assert gaps[1] <= gaps[0] + 1e-9
        assert gaps[2] <= gaps[1] + 1e-9

    def test_acceptance_monte_carlo(self, two_cohort):
        """Test 100,000 replications land within three standard errors of the analytic welfare."""
        plan = optimal_policy(two_cohort)
        start = time.time()
        policy, path = solved(two_cohort, plan.policy)
        estimate = simulate(two_cohort, policy, path, SimConfig(n_paths=100_000, seed=0))
        duration = time.time() - start
        assert estimate.n_paths == 100_000
        assert estimate.within(plan.welfare)
        assert duration < 120.0, f"Simulation took {duration:.2f}s, expected < 120s"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
