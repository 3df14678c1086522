import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hydrovalue.bundle import InflowBundle  # noqa: E402
from hydrovalue.ingest import SyntheticParams, synthesize_inflow  # noqa: E402
from hydrovalue.mdp import MDPModel, SystemConfig, build_model  # noqa: E402
from hydrovalue.policy_pricing import PolicySolution, ValueSolution, solve_dual, solve_primal  # noqa: E402
from hydrovalue.quantile_fit import enforce_noncrossing, fit_family  # noqa: E402
from hydrovalue.regime_chain import RegimeWarning, assign_regimes, fit_conditional_hist, fit_transition_mle  # noqa: E402

CASE_YEARS, CASE_SEED = 74, 1

# acceptance lines collected during the run and repeated in the terminal summary
ACCEPTANCE: list[str] = []


@dataclass
class CaseStudy:
    config: SystemConfig
    bundle: InflowBundle
    model: MDPModel
    primal: PolicySolution
    dual: ValueSolution
    build_seconds: float
    solve_seconds: float


def case_study_bundle() -> InflowBundle:
    series = synthesize_inflow(SyntheticParams(), CASE_YEARS, seed=CASE_SEED)
    fam = enforce_noncrossing(fit_family(series, [0.1, 0.5, 0.9]))
    regimes = assign_regimes(series, fam)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        return InflowBundle(fam, fit_transition_mle(regimes), fit_conditional_hist(regimes))


@pytest.fixture(scope="session")
def case_study() -> CaseStudy:
    """The full-scale default instance, solved once per session (a few minutes)."""
    cfg = SystemConfig()
    t0 = time.perf_counter()
    bundle = case_study_bundle()
    model = build_model(cfg, bundle)
    t1 = time.perf_counter()
    primal = solve_primal(model)
    dual = solve_dual(model, primal)
    t2 = time.perf_counter()
    return CaseStudy(cfg, bundle, model, primal, dual, t1 - t0, t2 - t1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
