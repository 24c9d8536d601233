"""
Unit Tests for the Market Model and the Transparent Benchmark
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

from benchmark.flow import FlowSegment, flow_rate
from benchmark.transparent import dryout_level, integrate_transparent, phase_closed_form, solve_transparent
from model.belief import BeliefState, no_news_probability, no_news_value, posterior_no_news, transparency_belief
from model.errors import ConfigError, MarketValidationError, StepTooLargeError
from model.loader import dump_market, load_market
from model.market import Cohort, Market, expected_value, myopic_threshold, validate
from utils.config import get_settings, load_settings, reset_settings

CONFIG_DIR = Path(__file__).parent.parent / 'config'


@pytest.fixture
def two_cohort():
    """Two cohorts, bad news twice as fast as good news."""
    return load_market(CONFIG_DIR / 'two_cohort_market.yaml')


@pytest.fixture
def good_news_market():
    return load_market(CONFIG_DIR / 'good_news_market.yaml')


def make_market(**overrides):
    values = dict(
        v_good=8.0,
        v_bad=-4.0,
        prior=0.75,
        rate_good=1.0,
        rate_bad=2.0,
        cohorts=[Cohort(discount=2.0, mass=1.0), Cohort(discount=1.0, mass=1.0)],
    )
    values.update(overrides)
    return Market(**values)


class TestMarket:
    """Test market primitives and validation."""

    def test_cumulative_masses(self, two_cohort):
        """Test cumulative masses and the marginal cohort map."""
        assert two_cohort.cumulative_masses == (1.0, 2.0)
        assert two_cohort.cumulative_mass(0) == 0.0
        assert two_cohort.cohort_at(0.0) == 1
        assert two_cohort.cohort_at(0.5) == 1
        assert two_cohort.cohort_at(1.0) == 2
        assert two_cohort.cohort_at(2.0) == 2
        assert two_cohort.discount_at(1.5) == 1.0

    def test_myopic_threshold(self, two_cohort):
        """Test the belief at which investing breaks even."""
        assert myopic_threshold(two_cohort) == pytest.approx(1 / 3)
        assert expected_value(myopic_threshold(two_cohort), two_cohort) == pytest.approx(0.0)
        assert expected_value(0.75, two_cohort) == pytest.approx(5.0)

    @pytest.mark.parametrize(
        "overrides, kind",
        [
            ({"v_good": -1.0}, "payoff-sign"),
            ({"prior": 0.3}, "prior-range"),
            ({"prior": 1.2}, "prior-range"),
            ({"rate_bad": -1.0}, "negative-rate"),
            ({"cohorts": [Cohort(discount=1.0, mass=1.0), Cohort(discount=2.0, mass=1.0)]}, "cohort-order"),
        ],
    )
    def test_validation_kinds(self, overrides, kind):
        """Test each broken assumption is reported with its kind."""
        with pytest.raises(MarketValidationError) as info:
            validate(make_market(**overrides))
        assert info.value.kind == kind

    def test_nonpositive_mass_rejected(self):
        """Test cohorts need positive mass and discount."""
        with pytest.raises(ValidationError):
            Cohort(discount=1.0, mass=0.0)
        with pytest.raises(ValidationError):
            Cohort(discount=-1.0, mass=1.0)


class TestBeliefs:
    """Test no-news beliefs."""

    def test_reference_values(self, two_cohort, good_news_market):
        """Test posteriors against direct evaluation."""
        assert posterior_no_news(two_cohort, 1.0, 1.0) == pytest.approx(0.890768, abs=1e-6)
        assert posterior_no_news(two_cohort, 0.0, 1.0) == pytest.approx(0.956835, abs=1e-6)
        assert posterior_no_news(two_cohort, 0.0, 2.0) == pytest.approx(0.993932, abs=1e-6)
        assert transparency_belief(two_cohort, 2.0) == pytest.approx(0.956835, abs=1e-6)
        assert transparency_belief(good_news_market, 1.0) == pytest.approx(1 / (1 + math.e), abs=1e-9)

    def test_vectorized(self, two_cohort):
        """Test array inputs give array outputs."""
        beliefs = posterior_no_news(two_cohort, np.zeros(3), np.array([0.0, 1.0, 2.0]))
        assert beliefs.shape == (3,)
        assert np.all(np.diff(beliefs) > 0)

    def test_negative_amount_rejected(self, two_cohort):
        with pytest.raises(ValueError):
            posterior_no_news(two_cohort, -0.1, 0.0)

    def test_certain_prior(self):
        """Test a prior of one never moves."""
        market = make_market(prior=1.0)
        assert posterior_no_news(market, 3.0, 0.0) == 1.0

    @given(
        z_good=st.floats(min_value=0, max_value=5),
        z_bad=st.floats(min_value=0, max_value=5),
        step=st.floats(min_value=1e-3, max_value=1),
    )
    @hyp_settings(max_examples=60, deadline=None)
    def test_monotone_in_evidence(self, z_good, z_bad, step):
        """Test good-channel silence lowers and bad-channel silence raises the belief."""
        market = make_market()
        base = posterior_no_news(market, z_good, z_bad)
        assert posterior_no_news(market, z_good + step, z_bad) <= base
        assert posterior_no_news(market, z_good, z_bad + step) >= base

    @given(z=st.floats(min_value=0, max_value=10))
    @hyp_settings(max_examples=40, deadline=None)
    def test_equal_rates_neutral(self, z):
        """Test symmetric rates leave the belief at the prior under transparency."""
        market = make_market(rate_good=1.5, rate_bad=1.5)
        assert transparency_belief(market, z) == pytest.approx(market.prior, abs=1e-12)

    @given(z_good=st.floats(min_value=0, max_value=4), z_bad=st.floats(min_value=0, max_value=4))
    @hyp_settings(max_examples=40, deadline=None)
    def test_value_factorizes(self, z_good, z_bad):
        """Test unconditional value equals probability times conditional value."""
        market = make_market()
        x = posterior_no_news(market, z_good, z_bad)
        expected = no_news_probability(market, z_good, z_bad) * expected_value(x, market)
        assert no_news_value(market, z_good, z_bad) == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_belief_state(self, two_cohort):
        state = BeliefState.from_evidence(two_cohort, 1.0, 1.0)
        assert state.belief == pytest.approx(0.890768, abs=1e-6)
        assert state.revealed_good == 1.0


class TestLoader:
    """Test market files and settings."""

    def test_round_trip(self, two_cohort, tmp_path):
        """Test a dumped market loads back unchanged."""
        target = tmp_path / 'market.yaml'
        dump_market(two_cohort, target)
        assert load_market(target) == two_cohort

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_market(tmp_path / 'missing.yaml')

    def test_invalid_fields(self, tmp_path):
        """Test structural errors surface as ConfigError."""
        target = tmp_path / 'bad.yaml'
        target.write_text("v_good: 8\nv_bad: -4\nprior: 0.75\nrate_good: 1\nrate_bad: 2\ncohorts: []\n")
        with pytest.raises(ConfigError):
            load_market(target)

    def test_invalid_assumption(self, tmp_path):
        """Test a well-formed market violating an assumption keeps its kind."""
        target = tmp_path / 'prior.yaml'
        target.write_text(
            "v_good: 8\nv_bad: -4\nprior: 0.2\nrate_good: 1\nrate_bad: 2\ncohorts:\n  - {discount: 1, mass: 1}\n"
        )
        with pytest.raises(MarketValidationError) as info:
            load_market(target)
        assert info.value.kind == "prior-range"

    def test_env_overrides_yaml(self, monkeypatch):
        """Test DISCLOSURE_* variables win over config.yaml."""
        monkeypatch.setenv("DISCLOSURE_SEED", "11")
        reset_settings()
        try:
            assert get_settings().seed == 11
            assert get_settings().dt == pytest.approx(0.01)
        finally:
            reset_settings()

    def test_invalid_setting(self, monkeypatch):
        monkeypatch.setenv("DISCLOSURE_DT", "-1")
        with pytest.raises(ConfigError):
            load_settings()


class TestTransparentBenchmark:
    """Test the transparent equilibrium."""

    def test_phase_times(self, two_cohort):
        """Test phase boundaries of the two-cohort market."""
        path = solve_transparent(two_cohort)
        assert path.phase_times[0] == pytest.approx(math.log((6 - math.exp(-1)) / 5), abs=1e-9)
        assert path.phase_times[0] == pytest.approx(0.119048, abs=1e-6)
        assert path.phase_times[1] == pytest.approx(0.199961, abs=1e-4)
        assert path.dryout is None

    def test_phase_two_starts_from_updated_belief(self, two_cohort):
        path = solve_transparent(two_cohort)
        assert path.phases[1].x_start == pytest.approx(0.890768, abs=1e-6)

    def test_closed_form_matches_integration(self, two_cohort):
        """Test the ODE path agrees with the closed form in sup norm."""
        closed = solve_transparent(two_cohort)
        integrated = integrate_transparent(two_cohort, step=1e-3)
        times = closed.sample_times(n_points=400)
        gap = np.max(np.abs(np.asarray(closed.mass_at(times)) - np.asarray(integrated.mass_at(times))))
        assert gap <= 1e-6

    def test_closed_form_bounds(self, two_cohort):
        phase = solve_transparent(two_cohort).phases[0]
        assert phase_closed_form(phase, phase.t_end) == pytest.approx(1.0, abs=1e-9)
        with pytest.raises(ValueError):
            phase_closed_form(phase, phase.t_end + 1.0)

    def test_flow_rate_reference(self, two_cohort):
        """Test the cohort-2 flow at the phase-2 belief of the (1, 1) disclosure."""
        assert flow_rate(two_cohort, 2, 0.890768) == pytest.approx(7.6548, abs=1e-3)

    def test_coefficients(self, two_cohort):
        assert solve_transparent(two_cohort).phases[0].coefficients == pytest.approx(
            {"a": 1.0, "b": 6.0, "v0": 5.0, "exponent_ratio": 1.0}
        )

    def test_closed_form_solves_flow_equation(self, two_cohort):
        """Test the closed-form mass path differentiates to the indifference flow."""
        phase = solve_transparent(two_cohort).phases[0]
        h = 1e-6
        for t in np.linspace(0.01, phase.t_end - 0.01, 7):
            derivative = (phase.mass_at(t + h) - phase.mass_at(t - h)) / (2 * h)
            x = phase.segment.belief_at(t)
            assert derivative == pytest.approx(flow_rate(two_cohort, 1, x), rel=1e-6)
            assert phase.segment.rate_at(t) == pytest.approx(flow_rate(two_cohort, 1, x), rel=1e-9)

    def test_indifference_residual(self, two_cohort):
        """Test the marginal cohort's cost of waiting matches the bad news it expects to learn."""
        path = solve_transparent(two_cohort)
        for phase in path.phases:
            if phase.segment is None:
                continue
            cohort = two_cohort.cohort(phase.cohort_index)
            for t in np.linspace(phase.t_start, phase.t_start + 0.05, 6):
                x = phase.segment.belief_at(t)
                residual = cohort.discount * expected_value(x, two_cohort) - (
                    two_cohort.rate_bad * (1 - x) * -two_cohort.v_bad * phase.segment.rate_at(t)
                )
                assert residual == pytest.approx(0.0, abs=1e-9)

    def test_flow_drops_at_phase_change(self, two_cohort):
        """Test the flow falls by the discount ratio when the patient cohort takes over."""
        first, second = solve_transparent(two_cohort).phases[:2]
        t = first.t_end
        ratio = second.segment.rate_at(t) / first.segment.rate_at(t)
        assert ratio == pytest.approx(two_cohort.cohorts[1].discount / two_cohort.cohorts[0].discount, rel=1e-8)

    @pytest.mark.parametrize(
        "rate_good, rate_bad, direction",
        [(1.0, 2.0, 1), (2.0, 1.0, -1), (1.0, 1.0, 0)],
    )
    def test_flow_monotone_in_rates(self, rate_good, rate_bad, direction):
        """Test the flow rises when bad news is faster, falls when good news is and is flat otherwise."""
        market = make_market(prior=0.5, rate_good=rate_good, rate_bad=rate_bad)
        segment = FlowSegment.for_cohort(market, 1, 0.0, 0.0, market.prior)
        rates = np.asarray(segment.rate_at(np.linspace(0.0, 0.1, 11)))
        steps = np.diff(rates)
        if direction > 0:
            assert (steps > 0).all()
        elif direction < 0:
            assert (steps < 0).all()
        else:
            assert steps == pytest.approx(np.zeros_like(steps), abs=1e-12)

    def test_flow_segment_inverse(self, two_cohort):
        """Test time_to_mass inverts mass_at."""
        segment = FlowSegment.for_cohort(two_cohort, 1, 0.0, 0.0, two_cohort.prior)
        t = segment.time_to_mass(0.6)
        assert segment.mass_at(t) == pytest.approx(0.6, abs=1e-9)

    def test_dryout(self):
        """Test good news dominating caps the transparent stock."""
        market = make_market(prior=0.5, rate_good=2.0, rate_bad=1.0, cohorts=[Cohort(discount=1.0, mass=3.0)])
        assert dryout_level(market) == pytest.approx(math.log(2), abs=1e-12)
        path = solve_transparent(market)
        assert path.dryout == pytest.approx(math.log(2))
        assert math.isinf(path.terminal_time)

    def test_no_bad_news_means_atom(self):
        """Test that without bad news nobody waits."""
        market = make_market(rate_bad=0.0)
        path = solve_transparent(market)
        assert path.terminal_time == 0.0
        assert path.mass_at(0.0) == pytest.approx(2.0)

    def test_step_too_large(self, two_cohort):
        with pytest.raises(StepTooLargeError):
            integrate_transparent(two_cohort, step=10.0, span=5.0)

    def test_frame_columns(self, two_cohort):
        frame = solve_transparent(two_cohort).to_frame()
        assert list(frame.columns) == ["t", "q", "z_good", "z_bad", "x", "phase_index"]
        assert (frame["q"].diff().dropna() >= -1e-12).all()


class TestPerformance:
    """Performance checks."""

    def test_benchmark_speed(self, two_cohort):
        """Test the closed-form benchmark solves in under a second."""
        start = time.time()
        solve_transparent(two_cohort)
        duration = time.time() - start
        assert duration < 1.0, f"Benchmark took {duration:.2f}s, expected < 1s"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
