"""
Command Line
Runs the solvers and verifiers on a market file and writes CSV tables and a text report
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

sys.path.append(str(Path(__file__).parent.parent))

from benchmark.transparent import integrate_transparent, solve_transparent
from designer.optimal import OptimalPlan, first_order_check, optimal_policy
from disclosure.equilibrium import solve_equilibrium
from disclosure.incentives import verify_ic
from disclosure.path import EquilibriumPath
from disclosure.policy import DisclosurePolicy, Silent, dump_policy, load_policy
from disclosure.welfare import welfare
from model.errors import ConfigError, MarketValidationError, ModelError
from model.loader import load_market
from model.market import Market, expected_value, myopic_threshold
from utils.config import Settings, get_settings
from utils.export import POLICY_FILE, PATH_FILE, REPORT_FILE, WELFARE_FILE, format_table, write_frame, write_report
from verify.checks import CheckReport, check_breakdown_bound, jensen_contraction_check, observation_checks
from verify.grid_search import GridSpec, grid_refinement, grid_search
from verify.simulate import SimConfig, simulate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_FAILED_CHECK = 4

COARSE_GRID_DT = 0.02
ACCEPTANCE_GRID_DTS = (0.02, 0.01, 0.005)

Command = Literal["benchmark", "equilibrium", "optimal", "simulate", "search", "verify"]


class RunSpec(BaseModel):
    """One command-line invocation."""

    model_config = ConfigDict(frozen=True)

    command: Command
    market_file: Path
    policy_file: Optional[Path] = None
    output_dir: Path = Path("output")
    step: Optional[float] = Field(default=None, gt=0)
    horizon: Optional[float] = Field(default=None, gt=0)
    n_paths: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)
    dt: Optional[float] = Field(default=None, gt=0)
    mass_step: Optional[float] = Field(default=None, gt=0)
    tolerance: Optional[float] = Field(default=None, gt=0)
    acceptance_grid: bool = False

    @model_validator(mode="after")
    def _policy_needed(self):
        if self.command in ("equilibrium", "simulate") and self.policy_file is None:
            raise ValueError(f"'{self.command}' needs a policy file")
        return self


def _deviation_grid(path: EquilibriumPath, points: int = 41) -> np.ndarray:
    return path.sample_times(n_points=points)


def _ic_lines(report) -> List[str]:
    lines = [f"IC min slack: {report.min_slack:.3e} ({'pass' if report.passed else 'FAIL'})"]
    for sample in report.worst(3):
        lines.append(
            f"  cohort {sample.cohort_index} at t={sample.decision_time:.6f} "
            f"vs stop {sample.deviation_stop_time:.6f}: {sample.slack:.3e} ({sample.kind})"
        )
    return lines


def _run_benchmark(spec: RunSpec, market: Market, settings: Settings) -> int:
    path = solve_transparent(market)
    integrated = integrate_transparent(market, spec.step or settings.integration_step)
    finite = [p.t_end for p in path.phases if math.isfinite(p.t_end)]
    times = path.sample_times()
    gap = float(np.max(np.abs(np.asarray(path.mass_at(times)) - np.asarray(integrated.mass_at(times)))))

    equilibrium = solve_equilibrium(market, DisclosurePolicy.transparent(), spec.horizon)
    report = welfare(market, equilibrium)
    phases = pd.DataFrame(
        [
            {"cohort": p.cohort_index, "t_start": p.t_start, "t_end": p.t_end, "q_end": p.q_end, **p.coefficients}
            for p in path.phases
        ]
    )
    write_frame(path.to_frame(), spec.output_dir / PATH_FILE)
    write_frame(report.to_frame(market), spec.output_dir / WELFARE_FILE)
    lines = [
        "Transparent benchmark",
        format_table(phases),
        f"dryout: {path.dryout if path.dryout is not None else 'none'}",
        f"last phase end: {max(finite, default=math.inf):.6f}",
        f"closed form vs integrated (sup norm): {gap:.3e}",
        f"welfare: {report.total:.6f}",
    ]
    write_report(lines, spec.output_dir / REPORT_FILE)
    return EXIT_OK


def _run_equilibrium(spec: RunSpec, market: Market, settings: Settings) -> int:
    policy = load_policy(spec.policy_file)
    path = solve_equilibrium(market, policy, spec.horizon)
    report = welfare(market, path)
    ic = verify_ic(market, policy, path, _deviation_grid(path), spec.tolerance)
    write_frame(path.to_frame(), spec.output_dir / PATH_FILE)
    write_frame(report.to_frame(market), spec.output_dir / WELFARE_FILE)
    lines = [
        f"Equilibrium under good={policy.good.kind}, bad={policy.bad.kind}",
        f"phase times: {[round(t, 6) for t in path.phase_times]}",
        f"last no-news cohort: {path.hat_i}",
        f"welfare: {report.total:.6f} {report.decomposition}",
        *_ic_lines(ic),
    ]
    write_report(lines, spec.output_dir / REPORT_FILE)
    return EXIT_OK if ic.passed else EXIT_FAILED_CHECK


def _run_optimal(spec: RunSpec, market: Market, settings: Settings) -> int:
    plan = optimal_policy(market)
    path = solve_equilibrium(market, plan.policy, spec.horizon)
    transparent = welfare(market, solve_equilibrium(market, DisclosurePolicy.transparent(), spec.horizon))
    comparison = pd.DataFrame(
        {
            "cohort": range(1, market.n + 1),
            "optimal": plan.per_cohort,
            "transparent": transparent.per_cohort,
        }
    )
    write_frame(path.to_frame(), spec.output_dir / PATH_FILE)
    write_frame(comparison, spec.output_dir / WELFARE_FILE)
    dump_policy(plan.policy, spec.output_dir / POLICY_FILE)
    lines = [
        "Optimal disclosure plan",
        f"last no-news cohort: {plan.hat_i}",
        *[f"T_{i} = {t:.6f}" for i, t in enumerate(plan.phase_times)],
        f"t_bar = {plan.t_bar:.6f}",
        f"release time: {plan.release_time if plan.release_time is None else round(plan.release_time, 6)}",
        f"welfare: {plan.welfare:.5f}",
        f"transparency: {transparent.total:.5f}",
        format_table(comparison),
    ]
    write_report(lines, spec.output_dir / REPORT_FILE)
    return EXIT_OK


def _run_simulate(spec: RunSpec, market: Market, settings: Settings) -> int:
    policy = load_policy(spec.policy_file)
    path = solve_equilibrium(market, policy, spec.horizon)
    exact = welfare(market, path)
    overrides = {k: v for k, v in (("n_paths", spec.n_paths), ("seed", spec.seed)) if v is not None}
    estimate = simulate(market, policy, path, SimConfig.from_settings(**overrides))
    table = pd.DataFrame(
        {
            "cohort": range(1, market.n + 1),
            "simulated": estimate.per_cohort_mean,
            "exact": exact.per_cohort,
        }
    )
    write_frame(path.to_frame(), spec.output_dir / PATH_FILE)
    write_frame(table, spec.output_dir / WELFARE_FILE)
    lines = [
        f"Monte Carlo estimate over {estimate.n_paths} paths",
        f"mean total: {estimate.mean_total:.6f} +/- {estimate.std_error:.6f}",
        f"exact welfare: {exact.total:.6f} (within 3 s.e.: {estimate.within(exact.total)})",
        f"good news disclosed in good state: {estimate.good_disclosed_share:.4f}",
        f"bad news disclosed in bad state: {estimate.bad_disclosed_share:.4f}",
    ]
    write_report(lines, spec.output_dir / REPORT_FILE)
    return EXIT_OK


def _run_search(spec: RunSpec, market: Market, settings: Settings) -> int:
    overrides = {k: v for k, v in (("dt", spec.dt), ("horizon", spec.horizon), ("mass_step", spec.mass_step)) if v}
    solution = grid_search(market, GridSpec.from_settings(**overrides))
    write_frame(solution.paths.to_frame(market), spec.output_dir / PATH_FILE)
    write_frame(
        pd.DataFrame({"cohort": range(1, market.n + 1), "welfare": solution.per_cohort}),
        spec.output_dir / WELFARE_FILE,
    )
    lines = [
        "Grid search",
        f"welfare: {solution.welfare:.6f} ({'exhaustive' if solution.exhaustive else 'beam, not exhaustive'})",
        f"IC on grid: {solution.ic_ok}",
        f"bad news out at cohort boundaries: {solution.shape_flags.bad_caps_slack_before_tbar}",
        f"no good news before last phase: {solution.shape_flags.good_caps_zero_before_tbar}",
    ]
    write_report(lines, spec.output_dir / REPORT_FILE)
    return EXIT_OK if solution.ic_ok else EXIT_FAILED_CHECK


def _single_crossing(market: Market, path: EquilibriumPath) -> bool:
    """The no-news belief crosses the myopic threshold at most once."""
    beliefs = np.asarray(path.belief_at(path.sample_times()), dtype=float)
    above = beliefs > myopic_threshold(market)
    return int(np.count_nonzero(np.diff(above.astype(int)))) <= 1


def _grid_oracle(market: Market, plan: OptimalPlan, spec: RunSpec, settings: Settings) -> CheckReport:
    """Discrete optimum below the continuous one, incentive compatible and shaped like the plan."""
    if spec.acceptance_grid:
        dts = ACCEPTANCE_GRID_DTS
    else:
        dts = (spec.dt or COARSE_GRID_DT,)
    refinement = grid_refinement(market, dts, settings.grid_horizon, spec.mass_step or settings.mass_step)
    table = refinement.table
    passed = bool(
        (table["welfare"] <= plan.welfare + 1e-9).all()
        and table["ic_ok"].all()
        and table["bad_shape"].all()
        and table["good_shape"].all()
        and refinement.monotone
    )
    summary = {
        "dts": list(dts),
        "welfare": [round(float(w), 9) for w in table["welfare"]],
        "optimum": plan.welfare,
        "extrapolated": refinement.extrapolated,
        "exhaustive": bool(table["exhaustive"].all()),
    }
    return CheckReport("grid-oracle", passed, summary, table.to_dict("records"))


def verification_suite(market: Market, spec: RunSpec, settings: Settings) -> List[CheckReport]:
    """Every property check that applies to the market."""
    tolerance = spec.tolerance or settings.tolerance
    seed = settings.seed if spec.seed is None else spec.seed
    reports: List[CheckReport] = []

    plan = optimal_policy(market)
    path = solve_equilibrium(market, plan.policy, spec.horizon)
    achieved = welfare(market, path)
    n_times = len(plan.phase_times)
    time_gap = max(abs(a - b) for a, b in zip(path.phase_times[:n_times], plan.phase_times))
    reports.append(
        CheckReport(
            "plan-equilibrium",
            time_gap <= 1e-8 and abs(achieved.total - plan.welfare) <= 1e-7,
            {"phase_time_gap": time_gap, "welfare_gap": achieved.total - plan.welfare},
        )
    )

    transparent_path = solve_equilibrium(market, DisclosurePolicy.transparent(), spec.horizon)
    for name, policy, candidate in (
        ("ic-optimal", plan.policy, path),
        ("ic-transparent", DisclosurePolicy.transparent(), transparent_path),
    ):
        ic = verify_ic(market, policy, candidate, _deviation_grid(candidate), tolerance)
        reports.append(CheckReport(name, ic.passed, {"min_slack": ic.min_slack}))

    first_order = first_order_check(market, plan)
    reports.append(CheckReport("first-order", first_order.passed, {"counterexamples": len(first_order.counterexamples)}))
    reports.append(CheckReport("single-crossing", _single_crossing(market, path), {}))

    transparent = welfare(market, transparent_path)
    dominance = all(a >= b - 1e-7 for a, b in zip(plan.per_cohort, transparent.per_cohort))
    reports.append(CheckReport("pareto-dominance", dominance, {"optimal": plan.welfare, "transparent": transparent.total}))

    if market.n == 1 and market.rate_good == market.rate_bad:
        neutral = market.total_mass * float(expected_value(market.prior, market))
        gaps = (plan.welfare - neutral, transparent.total - neutral)
        reports.append(CheckReport("homogeneous-neutrality", max(map(abs, gaps)) <= 1e-7, {"gaps": gaps}))
        reports.append(observation_checks(market))

    if market.rate_good > 0:
        reports.append(jensen_contraction_check(market, settings.jensen_instances, seed))
    reports.append(check_breakdown_bound(market, Silent(), settings.breakdown_samples, seed))
    reports.append(_grid_oracle(market, plan, spec, settings))

    config = SimConfig.from_settings(**({"n_paths": spec.n_paths} if spec.n_paths else {}), seed=seed)
    estimate = simulate(market, plan.policy, path, config)
    reports.append(
        CheckReport(
            "monte-carlo",
            estimate.within(achieved.total),
            {"mean": estimate.mean_total, "std_error": estimate.std_error, "exact": achieved.total},
        )
    )
    return reports


def _run_verify(spec: RunSpec, market: Market, settings: Settings) -> int:
    reports = verification_suite(market, spec, settings)
    table = pd.DataFrame([{"check": r.name, "passed": r.passed, **{k: str(v) for k, v in r.summary.items()}} for r in reports])
    write_frame(table, spec.output_dir / WELFARE_FILE)
    lines = ["Verification suite"]
    for r in reports:
        lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {r.summary}")
    write_report(lines, spec.output_dir / REPORT_FILE)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.error(f"Failed checks: {failed}")
        return EXIT_FAILED_CHECK
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunSpec, Market, Settings], int]] = {
    "benchmark": _run_benchmark,
    "equilibrium": _run_equilibrium,
    "optimal": _run_optimal,
    "simulate": _run_simulate,
    "search": _run_search,
    "verify": _run_verify,
}


def run(spec: RunSpec) -> int:
    """
    Execute one command.

    Returns:
        0 on success, 2 for configuration errors, 3 for unsupported or
        infeasible inputs and 4 when a check fails
    """
    try:
        settings = get_settings()
        market = load_market(spec.market_file)
        spec.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Running '{spec.command}' on {spec.market_file}")
        return COMMANDS[spec.command](spec, market, settings)
    except (ConfigError, MarketValidationError, ValidationError, OSError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except ModelError as e:
        logger.error(f"{e.kind}: {e}")
        return EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Evidence disclosure solver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = sub.add_parser(name)
        command.add_argument("market_file", type=Path, help="Market YAML file")
        command.add_argument("--policy", dest="policy_file", type=Path, help="Policy YAML file")
        command.add_argument("--output-dir", type=Path, default=Path("output"), help="Directory for outputs")
        command.add_argument("--step", type=float, help="ODE integration step")
        command.add_argument("--horizon", type=float, help="Time horizon")
        command.add_argument("--n-paths", type=int, help="Monte Carlo replications")
        command.add_argument("--seed", type=int, help="Random seed")
        command.add_argument("--dt", type=float, help="Grid time step")
        command.add_argument("--mass-step", type=float, help="Grid mass step")
        command.add_argument("--tolerance", type=float, help="Check tolerance")
        command.add_argument(
            "--acceptance-grid",
            action="store_true",
            default=None,
            help="Run the grid oracle at dt 0.02, 0.01 and 0.005 (verify only)",
        )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
    except ConfigError as e:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, settings.log_level.upper(), logging.INFO))

    values = {k: v for k, v in vars(args).items() if v is not None}
    try:
        spec = RunSpec(**values)
    except ValidationError as e:
        logger.error(f"Invalid arguments: {e}")
        return EXIT_CONFIG
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
