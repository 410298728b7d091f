"""
Utility battery
Ratio of estimates over univariate and bivariate tables, propensity-score MSE
with its derived scalings, confidence-interval overlap and standardized
difference over a per-variable regression suite, and the overall aggregate
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.errors import NoComponents, NoConvergence, TableMismatch, ToolkitError
from src.logging_config import log_model_fit
from src.metrics import record_fit
from src.regress import INTERCEPT, DesignMatrix, RegressionFit, confint, fit_linear, fit_logistic, predict_proba
from src.tabular import (
    BinPolicy,
    ContingencyTable,
    Dataset,
    DesignTerm,
    ResponseSpec,
    concat,
    crosstab,
    design_layout,
    onehot_design,
    predictor_matrix,
    require_same_schema,
    response_rows,
)

logger = logging.getLogger(__name__)


class UtilityConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    bin_width: int = Field(default=5, ge=1)
    cio_floor_at_zero: bool = False
    jobs: int = Field(default=1, ge=1)

    @property
    def bin_policy(self) -> BinPolicy:
        return BinPolicy(width=self.bin_width)


# ============================================================
# RATIO OF ESTIMATES
# ============================================================

@dataclass(frozen=True)
class RoeResult:
    variables: Tuple[str, ...]
    per_category: Mapping[Tuple[str, ...], float]
    mean: float
    skipped_cells: int


def roe(orig_tab: ContingencyTable, synth_tab: ContingencyTable) -> RoeResult:
    """
    min/max count ratio per cell, averaged over cells

    A cell present on one side only scores 0; cells empty on both sides are skipped.
    """
    if orig_tab.variables != synth_tab.variables or orig_tab.levels != synth_tab.levels:
        raise TableMismatch(f"tables over {orig_tab.variables} and {synth_tab.variables} differ")

    ratios: Dict[Tuple[str, ...], float] = {}
    for cell in itertools.chain(orig_tab.cells, synth_tab.cells):
        if cell in ratios:
            continue
        o, s = orig_tab[cell], synth_tab[cell]
        ratios[cell] = min(o, s) / max(o, s)

    mean = float(np.mean(list(ratios.values()))) if ratios else 1.0
    return RoeResult(
        variables=orig_tab.variables,
        per_category=ratios,
        mean=mean,
        skipped_cells=orig_tab.space_size - len(ratios),
    )


def bivariate_pairs(names: Sequence[str]) -> List[Tuple[str, str]]:
    return list(itertools.combinations(names, 2))


def roe_suite(
    orig: Dataset,
    synth: Dataset,
    bin_policy: Optional[BinPolicy] = None,
    jobs: int = 1,
) -> Tuple[float, float]:
    """(mean univariate ROE, mean ROE over every pair of variables)"""
    schema = require_same_schema(orig, synth)
    policy = bin_policy or BinPolicy()

    def _one(variables: Tuple[str, ...]) -> float:
        return roe(crosstab(orig, variables, policy), crosstab(synth, variables, policy)).mean

    singles = [(name,) for name in schema.names]
    pairs = bivariate_pairs(schema.names)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        uni = list(pool.map(_one, singles))
        bi = list(pool.map(_one, pairs))

    roe_uni = float(np.mean(uni))
    roe_bi = float(np.mean(bi)) if bi else roe_uni
    return roe_uni, roe_bi


# ============================================================
# PROPENSITY SCORE MSE
# ============================================================

@dataclass(frozen=True)
class PmseResult:
    pmse: float
    c: float
    k: int
    expected_null: float
    ratio: float
    log_ratio: float
    scaled: float
    model_converged: bool


def pmse(orig: Dataset, synth: Dataset) -> PmseResult:
    """
    Stack both datasets, fit a main-effects logistic model of membership in
    the synthetic part, and measure the mean squared distance of the fitted
    propensities from the synthetic share c
    """
    stacked = concat(orig, synth)
    names, X, warnings = predictor_matrix(stacked)
    y = np.concatenate([np.zeros(orig.n_rows), np.ones(synth.n_rows)])
    dm = DesignMatrix(names=tuple(names), X=X, y=y, warnings=tuple(warnings))

    try:
        fit = fit_logistic(dm)
        converged = True
    except NoConvergence as e:
        fit = e.fit
        converged = False
        logger.warning(
            "Propensity model did not converge, using last iterate",
            extra={"extra_data": {"event_type": "pmse_no_convergence", "iterations": fit.iterations}},
        )

    N = dm.n
    c = synth.n_rows / N
    prob = predict_proba(fit, dm.X)
    score = float(np.mean((prob - c) ** 2))
    k = dm.p
    expected = (k - 1) * (1.0 - c) ** 2 * c / N
    ratio = score / expected if expected > 0 else float("nan")
    if ratio > 0:
        log_ratio = math.log(ratio)
    elif ratio == 0:
        log_ratio = float("-inf")
    else:
        log_ratio = float("nan")

    return PmseResult(
        pmse=score,
        c=c,
        k=k,
        expected_null=expected,
        ratio=ratio,
        log_ratio=log_ratio,
        scaled=1.0 - 4.0 * score,
        model_converged=converged,
    )


# ============================================================
# CONFIDENCE INTERVAL OVERLAP
# ============================================================

def interval_overlap(orig_ci: Tuple[float, float], synth_ci: Tuple[float, float]) -> float:
    """
    Average of the intersection length relative to each interval length

    Disjoint intervals give a negative value (intersection bounds L > U).
    A zero-width interval contributes 1 when its point lies in the other
    interval and 0 otherwise.
    """
    lo_o, hi_o = orig_ci
    lo_s, hi_s = synth_ci
    lower, upper = max(lo_o, lo_s), min(hi_o, hi_s)
    inter = upper - lower

    def _term(width: float) -> float:
        if width > 0:
            return inter / width
        return 1.0 if inter >= 0 else 0.0

    return 0.5 * (_term(hi_o - lo_o) + _term(hi_s - lo_s))


@dataclass(frozen=True)
class CioModel:
    target: str
    family: str
    positive: Optional[str]
    cio: Optional[float]
    std_diff: Optional[float]
    converged: bool
    n_coefficients: int = 0
    reason: Optional[str] = None


@dataclass(frozen=True)
class CioResult:
    per_model: Tuple[CioModel, ...]
    mean_cio: Optional[float]
    mean_std_diff: Optional[float]
    n_failed: int

    @property
    def available(self) -> bool:
        return self.mean_cio is not None


class _ModelFailure(ToolkitError):
    pass


def _response_policy(orig: Dataset, name: str) -> Tuple[str, ResponseSpec]:
    """Integer -> linear; binary -> indicator of the 2nd category; otherwise -> modal category"""
    spec = orig.schema[name]
    if not spec.is_categorical:
        return "linear", ResponseSpec.numeric()

    counts = np.bincount(orig.column(name), minlength=len(spec.categories))
    if spec.missing:
        counts[spec.missing_code] = 0
    observed = np.flatnonzero(counts)
    if observed.size < 2:
        raise _ModelFailure(f"{name} has fewer than two observed categories")
    if len(spec.categories) - int(spec.missing) == 2:
        return "logistic", ResponseSpec.indicator(spec.categories[observed[1]])
    modal = int(np.argmax(counts))
    return "logistic", ResponseSpec.indicator(spec.categories[modal])


def _fit_one(
    ds: Dataset,
    name: str,
    family: str,
    response: ResponseSpec,
    layout: Optional[Sequence[DesignTerm]] = None,
) -> Tuple[RegressionFit, Tuple[str, ...]]:
    dm = onehot_design(ds, name, response, layout=layout)
    try:
        fit = fit_linear(dm) if family == "linear" else fit_logistic(dm)
    except ToolkitError:
        record_fit(family, converged=False)
        raise
    record_fit(family, converged=fit.converged)
    log_model_fit(logger, family, name, fit.converged, fit.iterations, positive=response.positive)
    if fit.separation_detected:
        raise _ModelFailure(f"separation in logistic model of {name}")
    return fit, dm.incomparable


def _compare_model(
    orig: Dataset,
    synth: Dataset,
    name: str,
    level: float,
    floor_at_zero: bool,
) -> CioModel:
    family, positive = "logistic", None
    try:
        family, response = _response_policy(orig, name)
        positive = response.positive
        # the synthetic fit replays the original's levels and scaling
        layout, _ = design_layout(response_rows(orig, name), exclude=(name,))
        fit_o, _ = _fit_one(orig, name, family, response)
        fit_s, incomparable = _fit_one(synth, name, family, response, layout)
        ci_o = confint(fit_o, level)
        ci_s = confint(fit_s, level)
    except (ToolkitError, np.linalg.LinAlgError) as e:
        reason = f"{type(e).__name__}: {e}"
        logger.warning(
            f"CIO model for {name} excluded",
            extra={"extra_data": {"event_type": "cio_model_failed", "target": name, "reason": reason}},
        )
        return CioModel(target=name, family=family, positive=positive, cio=None, std_diff=None,
                        converged=False, reason=reason)

    coef_o, se_o = fit_o.coefficients(), fit_o.standard_errors()
    coef_s = fit_s.coefficients()
    skip = set(incomparable)
    if skip:
        logger.info(
            f"CIO model for {name}: {len(skip)} coefficients without a shared reference level",
            extra={"extra_data": {"event_type": "cio_incomparable", "target": name,
                                  "coefficients": sorted(skip)}},
        )
    common = [n for n in fit_o.names if n != INTERCEPT and n in coef_s and n not in skip]
    if not common:
        return CioModel(target=name, family=family, positive=positive, cio=None, std_diff=None,
                        converged=False, reason="no comparable coefficients")

    overlaps, diffs = [], []
    for coef in common:
        j = interval_overlap(ci_o[coef], ci_s[coef])
        overlaps.append(max(j, 0.0) if floor_at_zero else j)
        delta = abs(coef_o[coef] - coef_s[coef])
        if se_o[coef] > 0:
            diffs.append(delta / se_o[coef])
        elif delta == 0:
            diffs.append(0.0)

    return CioModel(
        target=name,
        family=family,
        positive=positive,
        cio=float(np.mean(overlaps)),
        std_diff=float(np.mean(diffs)) if diffs else None,
        converged=True,
        n_coefficients=len(common),
    )


def cio_suite(
    orig: Dataset,
    synth: Dataset,
    level: float = 0.95,
    floor_at_zero: bool = False,
    jobs: int = 1,
) -> CioResult:
    """One regression per variable as target, fitted on both datasets and compared"""
    schema = require_same_schema(orig, synth)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        models = tuple(pool.map(
            lambda name: _compare_model(orig, synth, name, level, floor_at_zero), schema.names,
        ))

    ok = [m for m in models if m.converged]
    diffs = [m.std_diff for m in ok if m.std_diff is not None]
    return CioResult(
        per_model=models,
        mean_cio=float(np.mean([m.cio for m in ok])) if ok else None,
        mean_std_diff=float(np.mean(diffs)) if diffs else None,
        n_failed=len(models) - len(ok),
    )


# ============================================================
# OVERALL
# ============================================================

def overall_utility(
    roe_uni: Optional[float],
    roe_bi: Optional[float],
    cio_mean: Optional[float],
    pmse_scaled: Optional[float],
) -> float:
    """Unweighted mean of the components that are present"""
    present = [v for v in (roe_uni, roe_bi, cio_mean, pmse_scaled) if v is not None]
    if not present:
        raise NoComponents("overall utility needs at least one component")
    return float(sum(present) / len(present))


@dataclass(frozen=True)
class UtilityReport:
    roe_uni: float
    roe_bi: float
    pmse: PmseResult
    cio: Optional[CioResult]
    overall: float
    components_used: Tuple[str, ...] = field(default=())


def utility_report(orig: Dataset, synth: Dataset, cfg: Optional[UtilityConfig] = None) -> UtilityReport:
    cfg = cfg or UtilityConfig()
    roe_uni, roe_bi = roe_suite(orig, synth, cfg.bin_policy, jobs=cfg.jobs)
    propensity = pmse(orig, synth)
    cio = cio_suite(orig, synth, level=cfg.level, floor_at_zero=cfg.cio_floor_at_zero, jobs=cfg.jobs)
    cio_mean = cio.mean_cio if cio.available else None

    components = {"roe_uni": roe_uni, "roe_bi": roe_bi, "cio": cio_mean, "pmse_scaled": propensity.scaled}
    return UtilityReport(
        roe_uni=roe_uni,
        roe_bi=roe_bi,
        pmse=propensity,
        cio=cio,
        overall=overall_utility(roe_uni, roe_bi, cio_mean, propensity.scaled),
        components_used=tuple(name for name, value in components.items() if value is not None),
    )
