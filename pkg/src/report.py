"""
Evaluation report
Per-synthesizer risk and utility results, R-U map points, and the JSON / CSV /
SVG artifacts written by the command line
"""

import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import pandas as pd

from src import __version__
from src.errors import NoSubjects
from src.logging_config import get_logger, log_evaluation
from src.metrics import record_evaluation
from src.resilience import run_isolated, timeout
from src.risk_tcap import KeyTargetConfig, RiskConfig, TcapResult, baseline_cap, grand_average, tcap_matrix
from src.tabular import BinPolicy, Dataset, content_hash, crosstab, require_same_schema
from src.utility_metrics import UtilityConfig, UtilityReport, utility_report

logger = logging.getLogger(__name__)

ORIGINAL_LABEL = "original"

DatasetSource = Union[Dataset, Callable[[], Dataset]]


@dataclass(frozen=True)
class SubjectResult:
    """Outcome for one synthesizer: results, or the error that stopped it"""
    label: str
    fingerprint: Optional[str] = None
    n_rows: Optional[int] = None
    tcap: Tuple[TcapResult, ...] = ()
    tcap_average: Optional[float] = None
    utility: Optional[UtilityReport] = None
    error: Optional[str] = None
    error_type: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class EvaluationReport:
    original_fingerprint: str
    original_rows: int
    dataset_name: str
    configs: Tuple[KeyTargetConfig, ...]
    baselines: Mapping[str, float]
    baseline_average: float
    subjects: Tuple[SubjectResult, ...]
    config_echo: Mapping[str, Any] = field(default_factory=dict)
    version: str = __version__
    started_at: Optional[str] = None
    finished_at: Optional[str] = None

    @property
    def per_synthesizer(self) -> Dict[str, SubjectResult]:
        return {s.label: s for s in self.subjects}

    @property
    def failed(self) -> List[str]:
        return [s.label for s in self.subjects if not s.ok]

    @property
    def partial(self) -> bool:
        return bool(self.failed)


@dataclass(frozen=True)
class RuMapPoint:
    label: str
    utility: float
    risk: float
    baseline_risk: float

    def __post_init__(self):
        if not (math.isfinite(self.utility) and math.isfinite(self.risk)):
            raise ValueError(f"R-U point {self.label} must be finite")


# ============================================================
# BUILD
# ============================================================

def _evaluate_one(
    label: str,
    orig: Dataset,
    source: DatasetSource,
    configs: Sequence[KeyTargetConfig],
    weap_threshold: float,
    utility_cfg: UtilityConfig,
    jobs: int,
) -> SubjectResult:
    synth = source() if callable(source) else source
    require_same_schema(orig, synth)
    matrix = tcap_matrix(orig, {label: synth}, configs, weap_threshold=weap_threshold, jobs=jobs)
    utility = utility_report(orig, synth, utility_cfg)
    return SubjectResult(
        label=label,
        fingerprint=content_hash(synth),
        n_rows=synth.n_rows,
        tcap=matrix.results[label],
        tcap_average=matrix.averages[label],
        utility=utility,
    )


def build_report(
    orig: Dataset,
    synths: Mapping[str, DatasetSource],
    risk_cfg: RiskConfig,
    utility_cfg: Optional[UtilityConfig] = None,
    jobs: int = 1,
    timeout_seconds: Optional[float] = None,
    config_echo: Optional[Mapping[str, Any]] = None,
) -> EvaluationReport:
    """
    TCAP matrix and utility battery for every synthesizer

    A synthesizer given as a loader is loaded inside its own isolation
    boundary, so an unreadable file becomes an error entry of the report.
    """
    if not synths:
        raise NoSubjects("report needs at least one synthetic dataset")
    utility_cfg = utility_cfg or UtilityConfig(jobs=jobs)
    configs = tuple(risk_cfg.configs())
    for cfg in configs:
        cfg.validate_against(orig.schema)

    started = datetime.now(timezone.utc).isoformat()
    subjects = []
    for label, source in synths.items():
        run = _evaluate_one
        if timeout_seconds:
            run = timeout(timeout_seconds)(_evaluate_one)
        log = get_logger(__name__, {"synthesizer": label})
        t0 = time.perf_counter()
        outcome = run_isolated(
            label, run, label, orig, source, configs, risk_cfg.weap_threshold, utility_cfg, jobs,
        )
        duration = time.perf_counter() - t0
        status = "success" if outcome.ok else "error"
        record_evaluation(status, duration)
        log_evaluation(log, label, status, duration)
        if outcome.ok:
            subjects.append(outcome.value)
        else:
            subjects.append(SubjectResult(label=label, error=outcome.error, error_type=outcome.error_type))

    baselines: Dict[str, float] = {}
    for cfg in configs:
        baselines.setdefault(cfg.target, baseline_cap(orig, cfg.target))

    return EvaluationReport(
        original_fingerprint=content_hash(orig),
        original_rows=orig.n_rows,
        dataset_name=orig.schema.dataset_name,
        configs=configs,
        baselines=baselines,
        baseline_average=grand_average(list(baselines.values())),
        subjects=tuple(subjects),
        config_echo=dict(config_echo or {}),
        started_at=started,
        finished_at=datetime.now(timezone.utc).isoformat(),
    )


# ============================================================
# NUMBER FORMATTING
# ============================================================

def round_sig(value: Optional[float], digits: int = 6) -> Optional[float]:
    """Round to `digits` significant digits, half-even; None for missing or non-finite"""
    if value is None:
        return None
    value = float(value)
    if not math.isfinite(value):
        return None
    if value == 0.0:
        return 0.0
    d = Decimal(repr(value))
    quantum = Decimal(1).scaleb(d.adjusted() - digits + 1)
    return float(d.quantize(quantum, rounding=ROUND_HALF_EVEN))


def format_number(value: Optional[float], digits: int = 6) -> str:
    rounded = round_sig(value, digits)
    return "" if rounded is None else repr(rounded)


# ============================================================
# R-U MAP
# ============================================================

def ru_points(report: EvaluationReport, include_original: bool = True) -> List[RuMapPoint]:
    """One point per evaluated synthesizer (overall utility, average TCAP), original at (1, 1)"""
    points = [
        RuMapPoint(label=s.label, utility=s.utility.overall, risk=s.tcap_average,
                   baseline_risk=report.baseline_average)
        for s in report.subjects if s.ok
    ]
    if include_original:
        points.append(RuMapPoint(label=ORIGINAL_LABEL, utility=1.0, risk=1.0,
                                 baseline_risk=report.baseline_average))
    return points


def render_ru_csv(points: Sequence[RuMapPoint], digits: int = 6) -> str:
    frame = pd.DataFrame(
        [[p.label, format_number(p.utility, digits), format_number(p.risk, digits),
          format_number(p.baseline_risk, digits)] for p in points],
        columns=["label", "utility", "risk", "baseline"],
    )
    return frame.to_csv(index=False, lineterminator="\n")


def parse_ru_csv(text: str) -> List[RuMapPoint]:
    frame = pd.read_csv(io.StringIO(text), dtype={"label": str}, keep_default_na=False)
    return [
        RuMapPoint(label=row.label, utility=float(row.utility), risk=float(row.risk),
                   baseline_risk=float(row.baseline))
        for row in frame.itertuples(index=False)
    ]


_SVG_SIZE = 480
_SVG_MARGIN = 60


def _svg_xy(risk: float, utility: float) -> Tuple[float, float]:
    span = _SVG_SIZE - 2 * _SVG_MARGIN
    x = _SVG_MARGIN + min(max(risk, 0.0), 1.0) * span
    y = _SVG_SIZE - _SVG_MARGIN - min(max(utility, 0.0), 1.0) * span
    return round(x, 2), round(y, 2)


def render_ru_svg(points: Sequence[RuMapPoint], baseline: Optional[float] = None) -> str:
    """Scatter of utility (y) against risk (x) on [0,1]x[0,1] with a vertical baseline line"""
    lo, hi = _SVG_MARGIN, _SVG_SIZE - _SVG_MARGIN
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_SVG_SIZE}" height="{_SVG_SIZE}" '
        f'viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
        f'<rect x="0" y="0" width="{_SVG_SIZE}" height="{_SVG_SIZE}" fill="white"/>',
        f'<line class="axis" x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}" stroke="black"/>',
        f'<line class="axis" x1="{lo}" y1="{lo}" x2="{lo}" y2="{hi}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, _ = _svg_xy(tick, 0.0)
        _, y = _svg_xy(0.0, tick)
        parts.append(f'<text x="{x}" y="{hi + 18}" font-size="11" text-anchor="middle">{tick:g}</text>')
        parts.append(f'<text x="{lo - 8}" y="{y + 4}" font-size="11" text-anchor="end">{tick:g}</text>')
    parts.append(f'<text x="{_SVG_SIZE / 2}" y="{_SVG_SIZE - 16}" font-size="12" text-anchor="middle">'
                 'Risk (average TCAP)</text>')
    parts.append(f'<text x="16" y="{_SVG_SIZE / 2}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 16 {_SVG_SIZE / 2})">Overall utility</text>')

    if baseline is not None and math.isfinite(baseline):
        x, _ = _svg_xy(baseline, 0.0)
        parts.append(f'<line class="baseline" x1="{x}" y1="{lo}" x2="{x}" y2="{hi}" '
                     'stroke="grey" stroke-dasharray="4 3"/>')

    for p in points:
        x, y = _svg_xy(p.risk, p.utility)
        parts.append(f'<circle class="point" cx="{x}" cy="{y}" r="4" fill="black"/>')
        parts.append(f'<text x="{x + 6}" y="{y - 6}" font-size="11">{escape(p.label)}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_ru_map(
    report: EvaluationReport,
    include_original: bool = True,
    format: Literal["csv", "svg"] = "csv",
) -> bytes:
    points = ru_points(report, include_original)
    if not points:
        raise NoSubjects("no evaluated synthesizer to plot")
    if format == "csv":
        return render_ru_csv(points).encode("utf-8")
    if format == "svg":
        return render_ru_svg(points, report.baseline_average).encode("utf-8")
    raise ValueError(f"unknown R-U map format: {format}")


# ============================================================
# TABLES
# ============================================================

def tcap_table_rows(report: EvaluationReport) -> List[Dict[str, Any]]:
    """Target x key-count rows, one column per synthesizer plus the target baseline; Average row last"""
    ok = [s for s in report.subjects if s.ok]
    rows = []
    for i, cfg in enumerate(report.configs):
        row: Dict[str, Any] = {"target": cfg.target, "keys": len(cfg.keys)}
        for s in ok:
            row[s.label] = s.tcap[i].tcap
        row["baseline"] = report.baselines[cfg.target]
        rows.append(row)
    average: Dict[str, Any] = {"target": "Average", "keys": None}
    for s in ok:
        average[s.label] = s.tcap_average
    average["baseline"] = report.baseline_average
    rows.append(average)
    return rows


UTILITY_METRICS = (
    ("pMSE", lambda u: u.pmse.pmse),
    ("log(pMSE ratio)", lambda u: u.pmse.log_ratio),
    ("1-4pMSE", lambda u: u.pmse.scaled),
    ("ROE univariate", lambda u: u.roe_uni),
    ("ROE bivariate", lambda u: u.roe_bi),
    ("CI overlap", lambda u: u.cio.mean_cio if u.cio else None),
    ("Standardized difference", lambda u: u.cio.mean_std_diff if u.cio else None),
    ("Overall utility", lambda u: u.overall),
)


def utility_table_rows(report: EvaluationReport) -> List[Dict[str, Any]]:
    ok = [s for s in report.subjects if s.ok]
    return [
        {"metric": name, **{s.label: getter(s.utility) for s in ok}}
        for name, getter in UTILITY_METRICS
    ]


def render_table_csv(rows: Sequence[Mapping[str, Any]], digits: int = 6) -> str:
    def _cell(value: Any) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return format_number(value, digits)
        return str(value)

    frame = pd.DataFrame([{k: _cell(v) for k, v in row.items()} for row in rows])
    return frame.to_csv(index=False, lineterminator="\n")


def crosstab_rows(
    orig: Dataset,
    synths: Mapping[str, Dataset],
    bin_policy: Optional[BinPolicy] = None,
) -> List[Dict[str, Any]]:
    """Univariate counts per category, original against every synthesizer"""
    policy = bin_policy or BinPolicy()
    rows = []
    for name in orig.schema.names:
        orig_tab = crosstab(orig, (name,), policy)
        synth_tabs = {label: crosstab(ds, (name,), policy) for label, ds in synths.items()}
        for level in orig_tab.levels[0]:
            row: Dict[str, Any] = {"variable": name, "category": level, ORIGINAL_LABEL: orig_tab[level]}
            for label, tab in synth_tabs.items():
                row[label] = tab[level]
            rows.append(row)
    return rows


# ============================================================
# JSON
# ============================================================

def _tcap_cell(result: TcapResult, digits: int) -> Dict[str, Any]:
    return {
        "label": result.config.label,
        "target": result.config.target,
        "keys": list(result.config.keys),
        "tcap": round_sig(result.tcap, digits),
        "n_weap1": result.n_weap1,
        "n_matched": result.n_matched,
        "n_undefined": result.n_undefined,
        "warnings": list(result.warnings),
    }


def _utility_block(u: UtilityReport, digits: int) -> Dict[str, Any]:
    r = lambda v: round_sig(v, digits)
    block: Dict[str, Any] = {
        "roe_uni": r(u.roe_uni),
        "roe_bi": r(u.roe_bi),
        "pmse": {
            "pmse": r(u.pmse.pmse),
            "c": r(u.pmse.c),
            "k": u.pmse.k,
            "expected_null": r(u.pmse.expected_null),
            "ratio": r(u.pmse.ratio),
            "log_ratio": r(u.pmse.log_ratio),
            "scaled": r(u.pmse.scaled),
            "model_converged": u.pmse.model_converged,
        },
        "cio": None,
        "overall": r(u.overall),
        "components_used": list(u.components_used),
    }
    if u.cio is not None:
        block["cio"] = {
            "mean_cio": r(u.cio.mean_cio),
            "mean_std_diff": r(u.cio.mean_std_diff),
            "n_failed": u.cio.n_failed,
            "models": [
                {
                    "target": m.target,
                    "family": m.family,
                    "positive": m.positive,
                    "cio": r(m.cio),
                    "std_diff": r(m.std_diff),
                    "converged": m.converged,
                    "n_coefficients": m.n_coefficients,
                    "reason": m.reason,
                }
                for m in u.cio.per_model
            ],
        }
    return block


def report_payload(report: EvaluationReport, digits: int = 6, include_timestamps: bool = False) -> Dict[str, Any]:
    """Plain-data view of the report, key order fixed"""
    subjects = []
    for s in report.subjects:
        if not s.ok:
            subjects.append({"label": s.label, "status": "error", "error_type": s.error_type, "error": s.error})
            continue
        subjects.append({
            "label": s.label,
            "status": "ok",
            "fingerprint": s.fingerprint,
            "rows": s.n_rows,
            "tcap": {
                "cells": [_tcap_cell(t, digits) for t in s.tcap],
                "average": round_sig(s.tcap_average, digits),
            },
            "utility": _utility_block(s.utility, digits),
        })

    payload: Dict[str, Any] = {
        "version": report.version,
        "original": {
            "dataset_name": report.dataset_name,
            "fingerprint": report.original_fingerprint,
            "rows": report.original_rows,
        },
        "config": dict(report.config_echo),
        "risk": {
            "configs": [{"label": c.label, "target": c.target, "keys": list(c.keys)} for c in report.configs],
            "baselines": {t: round_sig(v, digits) for t, v in report.baselines.items()},
            "baseline_average": round_sig(report.baseline_average, digits),
        },
        "synthesizers": subjects,
        "ru_map": [
            {"label": p.label, "utility": round_sig(p.utility, digits), "risk": round_sig(p.risk, digits),
             "baseline": round_sig(p.baseline_risk, digits)}
            for p in ru_points(report, include_original=bool(report.config_echo.get("include_original_point", True)))
        ],
    }
    if include_timestamps:
        payload["timestamps"] = {"started_at": report.started_at, "finished_at": report.finished_at}
    return payload


def to_json(report: EvaluationReport, digits: int = 6, include_timestamps: bool = False) -> str:
    """Canonical JSON; byte-identical for identical inputs unless timestamps are included"""
    payload = report_payload(report, digits, include_timestamps)
    return json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
