"""Stream generators, metric estimators and the scenario harness."""

from .harness import ProcedureSpec, run_batch, run_trial
from .metrics import AggregateMetrics, TrialBatch, TrialResult, aggregate
from .scenarios import SCENARIOS, Scenario, scenario
from .streams import StreamConfig, empirical_pvalue, generate_batch, generate_stream, simulate_renewal

__all__ = [
    "AggregateMetrics",
    "ProcedureSpec",
    "SCENARIOS",
    "Scenario",
    "StreamConfig",
    "TrialBatch",
    "TrialResult",
    "aggregate",
    "empirical_pvalue",
    "generate_batch",
    "generate_stream",
    "run_batch",
    "run_trial",
    "scenario",
    "simulate_renewal",
]
