"""
Attribution disclosure risk
WEAP within the synthetic data, TCAP of the riskiest synthetic records against
the original, the marginal baseline, and the key/target result matrix
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import ConfigError, EmptyDataset
from src.tabular import Dataset, Schema, read_text, require_same_schema

logger = logging.getLogger(__name__)


class KeyTargetConfig(BaseModel):
    """One experiment cell: key variables an intruder knows plus one target"""
    model_config = ConfigDict(frozen=True)

    keys: Tuple[str, ...] = Field(min_length=1)
    target: str = Field(min_length=1)
    label: str = ""

    @model_validator(mode="before")
    @classmethod
    def _default_label(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("label") and data.get("keys") is not None:
            data = {**data, "label": f"{data.get('target')}/{len(data['keys'])}"}
        return data

    @model_validator(mode="after")
    def _check(self) -> "KeyTargetConfig":
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("key variables must be distinct")
        if self.target in self.keys:
            raise ValueError(f"target {self.target} cannot also be a key")
        return self

    def validate_against(self, schema: Schema) -> None:
        schema.require(self.keys)
        schema.require([self.target])


class RiskConfig(BaseModel):
    """Key/target configuration file: every target crossed with every key set"""
    targets: List[str] = Field(min_length=1)
    key_sets: List[List[str]] = Field(min_length=1)
    weap_threshold: float = Field(default=1.0, gt=0.0, le=1.0)

    def configs(self) -> List[KeyTargetConfig]:
        cells = []
        for target in self.targets:
            for keys in self.key_sets:
                if target in keys:
                    logger.warning(f"Skipping key set {keys}: contains target {target}")
                    continue
                cells.append(KeyTargetConfig(keys=tuple(keys), target=target))
        return cells

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RiskConfig":
        text = read_text(path)
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError.from_validation(str(path), e) from e


def nested_key_sets(keys: Sequence[str], min_size: int = 3) -> List[List[str]]:
    """Drop the last key repeatedly: 6 keys down to `min_size` keys"""
    keys = list(keys)
    return [keys[:size] for size in range(len(keys), max(min_size, 1) - 1, -1)]


@dataclass(frozen=True)
class TcapResult:
    config: KeyTargetConfig
    tcap: float
    n_weap1: int
    n_matched: int
    n_undefined: int
    baseline: float
    warnings: Tuple[str, ...] = ()

    @property
    def match_rate(self) -> Optional[float]:
        if self.n_weap1 == 0:
            return None
        return self.n_matched / self.n_weap1


def _group_ids(datasets: Sequence[Dataset], names: Sequence[str]) -> List[np.ndarray]:
    """Shared equivalence-class ids over the given columns, exact tuple equality"""
    blocks = [
        np.column_stack([ds.column(name) for name in names]) if ds.n_rows else np.empty((0, len(names)), np.int64)
        for ds in datasets
    ]
    stacked = np.concatenate(blocks, axis=0)
    if stacked.shape[0] == 0:
        return [np.empty(0, dtype=np.int64) for _ in datasets]
    _, inverse = np.unique(stacked, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    bounds = np.cumsum([ds.n_rows for ds in datasets])[:-1]
    return np.split(inverse, bounds)


def weap_counts(synth: Dataset, cfg: KeyTargetConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Per record: (#same keys and target, #same keys) within the synthetic data"""
    cfg.validate_against(synth.schema)
    (key_ids,) = _group_ids([synth], cfg.keys)
    (kt_ids,) = _group_ids([synth], cfg.keys + (cfg.target,))
    denominators = np.bincount(key_ids)[key_ids]
    numerators = np.bincount(kt_ids)[kt_ids]
    return numerators, denominators


def weap_scores(synth: Dataset, cfg: KeyTargetConfig) -> np.ndarray:
    numerators, denominators = weap_counts(synth, cfg)
    return numerators / denominators


def attribution_counts(
    orig: Dataset,
    synth: Dataset,
    cfg: KeyTargetConfig,
    weap_threshold: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    For synthetic records with WEAP >= threshold: their row indices and the
    original-data counts (#same keys and target, #same keys)
    """
    if not 0.0 < weap_threshold <= 1.0:
        raise ValueError(f"weap_threshold must lie in (0, 1], got {weap_threshold}")
    require_same_schema(orig, synth)
    cfg.validate_against(orig.schema)

    numerators, denominators = weap_counts(synth, cfg)
    selected = np.flatnonzero(numerators >= weap_threshold * denominators)

    orig_keys, synth_keys = _group_ids([orig, synth], cfg.keys)
    orig_kt, synth_kt = _group_ids([orig, synth], cfg.keys + (cfg.target,))
    n_key_groups = int(max(orig_keys.max(initial=-1), synth_keys.max(initial=-1))) + 1
    n_kt_groups = int(max(orig_kt.max(initial=-1), synth_kt.max(initial=-1))) + 1

    key_counts = np.bincount(orig_keys, minlength=n_key_groups)
    kt_counts = np.bincount(orig_kt, minlength=n_kt_groups)
    return selected, kt_counts[synth_kt[selected]], key_counts[synth_keys[selected]]


def baseline_cap(orig: Dataset, target: str) -> float:
    """Sum of squared marginal proportions of the target in the original data"""
    col = orig.column(target)
    if orig.n_rows == 0:
        raise EmptyDataset("baseline needs a nonempty original dataset")
    _, counts = np.unique(col, return_counts=True)
    p = counts / orig.n_rows
    return float(np.sum(p * p))


def tcap(
    orig: Dataset,
    synth: Dataset,
    cfg: KeyTargetConfig,
    weap_threshold: float = 1.0,
) -> TcapResult:
    """
    Mean original-data attribution probability over the WEAP-filtered synthetic records

    Records whose keys never occur in the original are undefined and left
    out of the mean. With no defined record the baseline is reported.
    """
    selected, numerators, denominators = attribution_counts(orig, synth, cfg, weap_threshold)
    defined = denominators > 0
    n_weap1 = int(selected.size)
    n_matched = int(defined.sum())
    baseline = baseline_cap(orig, cfg.target)
    warnings: Tuple[str, ...] = ()

    if n_matched == 0:
        value = baseline
        warnings = (f"NoMatches: no synthetic WEAP record of {cfg.label} matches the original keys",)
        logger.warning(
            warnings[0],
            extra={"extra_data": {"event_type": "tcap_no_matches", "config": cfg.label, "n_weap1": n_weap1}},
        )
    else:
        value = float(np.mean(numerators[defined] / denominators[defined]))

    return TcapResult(
        config=cfg,
        tcap=value,
        n_weap1=n_weap1,
        n_matched=n_matched,
        n_undefined=n_weap1 - n_matched,
        baseline=baseline,
        warnings=warnings,
    )


def grand_average(values: Sequence[float]) -> float:
    """Unweighted mean of cell values"""
    if len(values) == 0:
        raise ValueError("no cells to average")
    return float(np.mean(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class TcapMatrix:
    configs: Tuple[KeyTargetConfig, ...]
    results: Mapping[str, Tuple[TcapResult, ...]]
    averages: Mapping[str, float]
    baselines: Mapping[str, float]
    baseline_average: float


def tcap_matrix(
    orig: Dataset,
    synths: Mapping[str, Dataset],
    configs: Sequence[KeyTargetConfig],
    weap_threshold: float = 1.0,
    jobs: int = 1,
) -> TcapMatrix:
    """One TcapResult per (synthesizer, config) plus unweighted grand averages"""
    configs = tuple(configs)
    if not configs:
        raise ValueError("tcap_matrix needs at least one key/target config")

    cells = [(label, cfg) for label in synths for cfg in configs]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        computed = list(pool.map(
            lambda cell: tcap(orig, synths[cell[0]], cell[1], weap_threshold), cells,
        ))

    results: Dict[str, Tuple[TcapResult, ...]] = {}
    for i, label in enumerate(synths):
        results[label] = tuple(computed[i * len(configs):(i + 1) * len(configs)])

    baselines: Dict[str, float] = {}
    for cfg in configs:
        if cfg.target not in baselines:
            baselines[cfg.target] = baseline_cap(orig, cfg.target)

    return TcapMatrix(
        configs=configs,
        results=results,
        averages={label: grand_average([r.tcap for r in rows]) for label, rows in results.items()},
        baselines=baselines,
        baseline_average=grand_average(list(baselines.values())),
    )
