from fedfusion.orchestrator.config import METHODS, RunConfig, load_config, parse_config
from fedfusion.orchestrator.report import Comparison, Fairness, Report, compare, compare_reports, fairness
from fedfusion.orchestrator.runner import build_clients, execute, run, trace_path

__all__ = [
    "METHODS",
    "Comparison",
    "Fairness",
    "Report",
    "RunConfig",
    "build_clients",
    "compare",
    "compare_reports",
    "execute",
    "fairness",
    "load_config",
    "parse_config",
    "run",
    "trace_path",
]
