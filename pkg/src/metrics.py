"""
Prometheus metrics for evaluation and synthesis runs
Counters and histograms are collected in-process and dumped to a text file
"""

from prometheus_client import CollectorRegistry, Counter, Histogram, Gauge, generate_latest, write_to_textfile
from functools import wraps
from pathlib import Path
from typing import Callable, Union
import time
import logging

logger = logging.getLogger(__name__)

REGISTRY = CollectorRegistry()

# ============================================================
# EVALUATION METRICS
# ============================================================

evaluations_total = Counter(
    'evaluations_total',
    'Synthesizer evaluations',
    ['status'],
    registry=REGISTRY
)

evaluation_duration_seconds = Histogram(
    'evaluation_duration_seconds',
    'Duration of one synthesizer evaluation in seconds',
    buckets=[0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0, 900.0],
    registry=REGISTRY
)

# ============================================================
# SYNTHESIS METRICS
# ============================================================

syntheses_total = Counter(
    'syntheses_total',
    'Baseline syntheses',
    ['method', 'status'],
    registry=REGISTRY
)

synthesis_duration_seconds = Histogram(
    'synthesis_duration_seconds',
    'Baseline synthesis duration in seconds',
    ['method'],
    buckets=[0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0],
    registry=REGISTRY
)

# ============================================================
# MODEL METRICS
# ============================================================

regression_fits_total = Counter(
    'regression_fits_total',
    'Regression fits in the utility battery',
    ['kind', 'status'],
    registry=REGISTRY
)

# ============================================================
# DATA / ERROR METRICS
# ============================================================

rows_loaded = Gauge(
    'rows_loaded',
    'Rows in the most recently loaded dataset of each role',
    ['role'],
    registry=REGISTRY
)

errors_total = Counter(
    'errors_total',
    'Errors by type and pipeline stage',
    ['type', 'stage'],
    registry=REGISTRY
)


# ============================================================
# DECORATORS
# ============================================================

def track_stage(stage: str):
    """Count exceptions escaping the wrapped call under `stage`"""
    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except Exception as e:
                errors_total.labels(type=type(e).__name__, stage=stage).inc()
                raise
        return wrapper
    return decorator


def track_synthesis(method: str):
    """Decorator to track baseline synthesis runs"""
    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            status = "success"
            try:
                return func(*args, **kwargs)
            except Exception as e:
                status = "error"
                errors_total.labels(type=type(e).__name__, stage="synthesis").inc()
                raise
            finally:
                syntheses_total.labels(method=method, status=status).inc()
                synthesis_duration_seconds.labels(method=method).observe(time.perf_counter() - start_time)
        return wrapper
    return decorator


def record_evaluation(status: str, duration: float) -> None:
    evaluations_total.labels(status=status).inc()
    evaluation_duration_seconds.observe(duration)


def record_fit(kind: str, converged: bool) -> None:
    regression_fits_total.labels(kind=kind, status="converged" if converged else "failed").inc()


# ============================================================
# EXPORT
# ============================================================

def get_metrics() -> bytes:
    """Registry in the Prometheus text exposition format"""
    return generate_latest(REGISTRY)


def write_metrics(path: Union[str, Path]) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(out), REGISTRY)
    logger.info(f"Metrics written to {out}")
    return out
