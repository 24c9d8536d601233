"""
Unit Tests for the Command Line
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / 'src'))

from cli.main import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, RunSpec, _grid_oracle, build_parser, main, verification_suite
from designer.optimal import optimal_policy
from disclosure.equilibrium import solve_equilibrium
from disclosure.policy import DelayUntil, load_policy
from disclosure.welfare import welfare
from model.loader import load_market
from utils.config import Settings
from utils.export import POLICY_FILE, PATH_FILE, REPORT_FILE, WELFARE_FILE

CONFIG_DIR = Path(__file__).parent.parent / 'config'
TWO_COHORT = str(CONFIG_DIR / 'two_cohort_market.yaml')


@pytest.fixture
def output_dir(tmp_path):
    return tmp_path / 'out'


def report_text(output_dir):
    return (output_dir / REPORT_FILE).read_text()


class TestCommands:
    """Test each subcommand end to end."""

    def test_benchmark(self, output_dir):
        """Test the benchmark report carries the first phase time."""
        assert main(["benchmark", TWO_COHORT, "--output-dir", str(output_dir), "--step", "1e-3"]) == EXIT_OK
        assert "0.119048" in report_text(output_dir)
        path = pd.read_csv(output_dir / PATH_FILE)
        assert list(path.columns) == ["t", "q", "z_good", "z_bad", "x", "phase_index"]
        assert (output_dir / WELFARE_FILE).exists()

    def test_optimal(self, output_dir):
        """Test the optimal plan report and the policy it writes."""
        assert main(["optimal", TWO_COHORT, "--output-dir", str(output_dir)]) == EXIT_OK
        text = report_text(output_dir)
        assert "T_1 = 0.079754" in text
        assert "welfare: 10.4151" in text
        policy = load_policy(output_dir / POLICY_FILE)
        assert isinstance(policy.good, DelayUntil)
        assert policy.good.release_time == pytest.approx(0.079754, abs=1e-6)
        table = pd.read_csv(output_dir / WELFARE_FILE)
        assert (table["optimal"] >= table["transparent"] - 1e-9).all()

    def test_equilibrium(self, output_dir):
        policy = str(CONFIG_DIR / 'transparent_policy.yaml')
        code = main(["equilibrium", TWO_COHORT, "--policy", policy, "--output-dir", str(output_dir), "--tolerance", "1e-6"])
        assert code == EXIT_OK
        assert "pass" in report_text(output_dir)

    def test_simulate(self, output_dir):
        policy = str(CONFIG_DIR / 'transparent_policy.yaml')
        code = main(
            ["simulate", TWO_COHORT, "--policy", policy, "--output-dir", str(output_dir), "--n-paths", "2000", "--seed", "3"]
        )
        assert code == EXIT_OK
        assert "over 2000 paths" in report_text(output_dir)

    def test_search(self, output_dir):
        code = main(
            ["search", TWO_COHORT, "--output-dir", str(output_dir), "--dt", "0.02", "--horizon", "0.12", "--mass-step", "0.5"]
        )
        assert code == EXIT_OK
        assert "(exhaustive)" in report_text(output_dir)

    def test_equilibrium_round_trip(self, output_dir):
        """Test the written path and welfare match a direct solve under the same policy file."""
        policy_file = CONFIG_DIR / 'transparent_policy.yaml'
        code = main(["equilibrium", TWO_COHORT, "--policy", str(policy_file), "--output-dir", str(output_dir), "--tolerance", "1e-6"])
        assert code == EXIT_OK
        market = load_market(TWO_COHORT)
        path = solve_equilibrium(market, load_policy(policy_file))
        table = pd.read_csv(output_dir / PATH_FILE)
        assert np.allclose(table["q"], path.mass_at(table["t"].to_numpy()), atol=1e-8)
        assert table["q"].iloc[-1] == pytest.approx(path.final_mass, abs=1e-9)
        totals = pd.read_csv(output_dir / WELFARE_FILE).set_index("cohort")["welfare"]
        assert totals["total"] == pytest.approx(welfare(market, path).total, abs=1e-9)


class TestExitCodes:
    """Test failures map to exit codes."""

    def test_missing_policy(self, output_dir):
        """Test commands that need a policy reject a run without one."""
        assert main(["equilibrium", TWO_COHORT, "--output-dir", str(output_dir)]) == EXIT_CONFIG

    def test_missing_market(self, tmp_path):
        assert main(["optimal", str(tmp_path / 'none.yaml'), "--output-dir", str(tmp_path)]) == EXIT_CONFIG

    def test_invalid_market(self, tmp_path):
        """Test a market violating its assumptions is a configuration error."""
        market = tmp_path / 'market.yaml'
        market.write_text("v_good: 8\nv_bad: -4\nprior: 0.2\nrate_good: 1\nrate_bad: 2\ncohorts:\n  - {discount: 1, mass: 1}\n")
        assert main(["benchmark", str(market), "--output-dir", str(tmp_path)]) == EXIT_CONFIG

    def test_unsupported_policy(self, tmp_path):
        """Test a silent bad-news channel is reported as unsupported."""
        policy = tmp_path / 'policy.yaml'
        policy.write_text("good: transparent\nbad: silent\n")
        code = main(["equilibrium", TWO_COHORT, "--policy", str(policy), "--output-dir", str(tmp_path)])
        assert code == EXIT_INFEASIBLE

    def test_invalid_argument(self, tmp_path):
        assert main(["simulate", TWO_COHORT, "--policy", "x.yaml", "--n-paths", "0"]) == EXIT_CONFIG

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["forecast", TWO_COHORT])


class TestVerificationSuite:
    """Test the bundled property checks."""

    def test_homogeneous_suite(self):
        """Test every check passes on a single symmetric cohort."""
        market = load_market(CONFIG_DIR / 'homogeneous_market.yaml')
        spec = RunSpec(command="verify", market_file=CONFIG_DIR / 'homogeneous_market.yaml', n_paths=20000, seed=4)
        settings = Settings(breakdown_samples=2, jensen_instances=50)
        reports = verification_suite(market, spec, settings)
        names = {r.name for r in reports}
        assert {"plan-equilibrium", "homogeneous-neutrality", "observations", "monte-carlo"} <= names
        assert all(r.passed for r in reports), [r.name for r in reports if not r.passed]

    def test_good_news_suite(self):
        """Test the release plan's checks when the last cohort never invests absent news."""
        market_file = CONFIG_DIR / 'good_news_market.yaml'
        market = load_market(market_file)
        spec = RunSpec(command="verify", market_file=market_file, n_paths=20000, seed=4)
        settings = Settings(breakdown_samples=2, jensen_instances=50)
        reports = {r.name: r for r in verification_suite(market, spec, settings)}
        assert optimal_policy(market).hat_i < market.n
        for name in ("plan-equilibrium", "single-crossing", "grid-oracle"):
            assert reports[name].passed, (name, reports[name].summary)
        assert "homogeneous-neutrality" not in reports

    def test_grid_oracle_modes(self):
        """Test the coarse default and the refinement flag."""
        market_file = CONFIG_DIR / 'two_cohort_market.yaml'
        market = load_market(market_file)
        settings = Settings()
        plan = optimal_policy(market)
        coarse = _grid_oracle(market, plan, RunSpec(command="verify", market_file=market_file), settings)
        assert coarse.passed, coarse.summary
        assert coarse.summary["dts"] == [0.02]
        assert coarse.summary["welfare"][0] <= plan.welfare
        assert RunSpec(command="verify", market_file=market_file, acceptance_grid=True).acceptance_grid
        assert build_parser().parse_args(["verify", TWO_COHORT, "--acceptance-grid"]).acceptance_grid


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
