"""
Risk-utility evaluation toolkit for synthetic microdata
"""

__version__ = "1.0.0"

from .tabular import Schema, VariableSpec, Dataset, load_csv, infer_schema, write_csv, crosstab
from .risk_tcap import KeyTargetConfig, RiskConfig, tcap, tcap_matrix, baseline_cap
from .utility_metrics import UtilityConfig, roe, roe_suite, pmse, cio_suite, overall_utility, utility_report
from .synth_baseline import CartParams, DataRule, synth_marginal, synth_cart_sequential, order_variables, apply_rules
from .report import EvaluationReport, build_report, emit_ru_map, to_json
from .logging_config import setup_logging, get_logger, log_evaluation, log_synthesis, log_model_fit, log_error

__all__ = ["__version__",
            "Schema", "VariableSpec", "Dataset", "load_csv", "infer_schema", "write_csv", "crosstab",
            "KeyTargetConfig", "RiskConfig", "tcap", "tcap_matrix", "baseline_cap",
            "UtilityConfig", "roe", "roe_suite", "pmse", "cio_suite", "overall_utility", "utility_report",
            "CartParams", "DataRule", "synth_marginal", "synth_cart_sequential", "order_variables", "apply_rules",
            "EvaluationReport", "build_report", "emit_ru_map", "to_json",
            "setup_logging", "get_logger", "log_evaluation", "log_synthesis", "log_model_fit", "log_error"]
