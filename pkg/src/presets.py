"""Census-sample roster, intruder key sets, targets and data rules shipped with the toolkit"""

from typing import Dict, List

from src.risk_tcap import RiskConfig, nested_key_sets
from src.synth_baseline import DataRule
from src.tabular import Schema

MARITAL_STATUS = ("single", "married", "remarried", "divorced", "widowed")

SARS_VARIABLES: List[Dict] = [
    {"name": "AREAP", "kind": "categorical", "categories": [str(i) for i in range(1, 22)]},
    {"name": "AGE", "kind": "integer", "min": 0, "max": 95},
    {"name": "COBIRTH", "kind": "categorical", "categories": [str(i) for i in range(1, 14)]},
    {"name": "ECONPRIM", "kind": "categorical", "categories": [str(i) for i in range(1, 10)], "missing": True},
    {"name": "ETHGROUP", "kind": "categorical", "categories": [str(i) for i in range(1, 11)]},
    {"name": "FAMTYPE", "kind": "categorical", "categories": [str(i) for i in range(1, 10)]},
    {"name": "LTILL", "kind": "categorical", "categories": ["1", "2"]},
    {"name": "MSTATUS", "kind": "categorical", "categories": list(MARITAL_STATUS)},
    {"name": "QUALNUM", "kind": "categorical", "categories": ["0", "1", "2+"]},
    {"name": "SEX", "kind": "categorical", "categories": ["1", "2"]},
    {"name": "SOCLASS", "kind": "categorical", "categories": [str(i) for i in range(1, 9)], "missing": True},
    {"name": "TENURE", "kind": "categorical", "categories": [str(i) for i in range(1, 8)]},
]

# what an intruder is assumed to know, most to least
SARS_KEYS = ["AREAP", "AGE", "SEX", "MSTATUS", "ETHGROUP", "ECONPRIM"]
SARS_TARGETS = ["LTILL", "FAMTYPE", "TENURE"]

SYNTHESIS_FIRST = "AGE"

SARS_RULES: List[Dict] = [
    {"if": [{"var": "AGE", "op": "<=", "value": 15}], "then": {"var": "MSTATUS", "value": "single"}},
    {"if": [{"var": "AGE", "op": "<=", "value": 15}], "then": {"var": "ECONPRIM", "value": "NA"}},
    {"if": [{"var": "AGE", "op": "<=", "value": 15}], "then": {"var": "SOCLASS", "value": "NA"}},
    {"if": [{"var": "AGE", "op": "<=", "value": 15}], "then": {"var": "QUALNUM", "value": "0"}},
]


def sars_schema(dataset_name: str = "simsars") -> Schema:
    return Schema.model_validate({"dataset_name": dataset_name, "variables": SARS_VARIABLES})


def sars_risk_config() -> RiskConfig:
    return RiskConfig(targets=list(SARS_TARGETS), key_sets=nested_key_sets(SARS_KEYS, min_size=3))


def sars_rules() -> List[DataRule]:
    return [DataRule.model_validate(rule) for rule in SARS_RULES]
