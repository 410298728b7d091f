"""
Command line entry point

    python -m src.cli evaluate --config run_config.json
    python -m src.cli synth --config run_config.json --method cart --n 1000
    python -m src.cli schema --in data.csv --int-hint AGE --out schema.json
    python -m src.cli simulate --n 10000 --seed 0 --out simsars.csv

Exit codes: 0 success, 1 fatal error, 2 partial report, 64 usage error.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.config import settings
from src.errors import ConfigError, NoSubjects, ToolkitError
from src.logging_config import log_error, log_synthesis, setup_logging
from src.metrics import rows_loaded, track_stage, track_synthesis, write_metrics
from src.presets import SYNTHESIS_FIRST
from src.report import (
    build_report,
    crosstab_rows,
    emit_ru_map,
    render_table_csv,
    tcap_table_rows,
    to_json,
    utility_table_rows,
)
from src.resilience import RetryExhausted
from src.risk_tcap import RiskConfig
from src.simulate import simulate_sars
from src.synth_baseline import CartParams, load_rules, order_variables, synthesize
from src.tabular import Dataset, Schema, infer_schema, load_csv, read_text, write_csv
from src.utility_metrics import UtilityConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64


class SyntheticEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: str = Field(min_length=1)
    path: Path


class RunConfig(BaseModel):
    """Run configuration file; relative paths resolve against the file's directory"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    original: Path
    schema_path: Path = Field(alias="schema")
    synthetic: List[SyntheticEntry] = Field(default_factory=list)
    risk: Path
    rules: Optional[Path] = None
    seed: Optional[int] = None
    output_dir: Path = Path("out")
    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    cio_floor_at_zero: bool = False
    include_original_point: bool = True
    bin_width: int = Field(default=5, ge=1)
    export_crosstabs: bool = False
    timeout_seconds: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _unique_labels(self) -> "RunConfig":
        labels = [entry.label for entry in self.synthetic]
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        if duplicates:
            raise ValueError(f"synthetic labels must be unique, repeated: {duplicates}")
        return self

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        path = Path(path)
        try:
            cfg = cls.model_validate_json(read_text(path))
        except ValidationError as e:
            raise ConfigError.from_validation(str(path), e) from e
        return cfg.resolved(path.parent)

    def resolved(self, base: Path) -> "RunConfig":
        def _abs(p: Optional[Path]) -> Optional[Path]:
            return None if p is None or p.is_absolute() else base / p

        updates = {
            name: _abs(getattr(self, name)) or getattr(self, name)
            for name in ("original", "schema_path", "risk", "rules", "output_dir")
        }
        updates["synthetic"] = [
            SyntheticEntry(label=e.label, path=_abs(e.path) or e.path) for e in self.synthetic
        ]
        return self.model_copy(update=updates)

    def utility_config(self, jobs: int) -> UtilityConfig:
        return UtilityConfig(level=self.level, bin_width=self.bin_width,
                             cio_floor_at_zero=self.cio_floor_at_zero, jobs=jobs)


class _Parser(argparse.ArgumentParser):
    """argparse with the sysexits usage code"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(path: Path, data: bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def _load_original(cfg: RunConfig) -> Dataset:
    schema = Schema.load(cfg.schema_path)
    orig = load_csv(cfg.original, schema)
    rows_loaded.labels(role="original").set(orig.n_rows)
    return orig


# ============================================================
# COMMANDS
# ============================================================

@track_stage("evaluate")
def cmd_evaluate(cfg: RunConfig, jobs: int = 1) -> int:
    orig = _load_original(cfg)
    risk_cfg = RiskConfig.load(cfg.risk)
    loaded: Dict[str, Dataset] = {}

    def _loader(label: str, path: Path):
        def _load() -> Dataset:
            ds = load_csv(path, orig.schema)
            rows_loaded.labels(role="synthetic").set(ds.n_rows)
            loaded[label] = ds
            return ds
        return _load

    report = build_report(
        orig,
        {entry.label: _loader(entry.label, entry.path) for entry in cfg.synthetic},
        risk_cfg,
        cfg.utility_config(jobs),
        jobs=jobs,
        timeout_seconds=cfg.timeout_seconds,
        config_echo=cfg.model_dump(mode="json", by_alias=True),
    )

    # no artifact is written until the map is rendered
    try:
        ru_map = {
            "rumap.csv": emit_ru_map(report, cfg.include_original_point, "csv"),
            "rumap.svg": emit_ru_map(report, cfg.include_original_point, "svg"),
        }
    except NoSubjects:
        ru_map = {}
        logger.warning(
            "No point to plot, R-U map skipped",
            extra={"extra_data": {"event_type": "ru_map_skipped", "failed": report.failed}},
        )

    digits = settings.float_digits
    out = cfg.output_dir
    _write(out / "report.json", to_json(report, digits).encode("utf-8"))
    _write(out / "tcap.csv", render_table_csv(tcap_table_rows(report), digits).encode("utf-8"))
    _write(out / "utility.csv", render_table_csv(utility_table_rows(report), digits).encode("utf-8"))
    for name in ("rumap.csv", "rumap.svg"):
        if name in ru_map:
            _write(out / name, ru_map[name])
        else:
            (out / name).unlink(missing_ok=True)
    if cfg.export_crosstabs:
        # loaders under a timeout run in a worker process; their datasets are reloaded here
        paths = {entry.label: entry.path for entry in cfg.synthetic}
        synths = {
            s.label: loaded[s.label] if s.label in loaded else load_csv(paths[s.label], orig.schema)
            for s in report.subjects if s.ok
        }
        rows = crosstab_rows(orig, synths, cfg.utility_config(jobs).bin_policy)
        _write(out / "univariates.csv", render_table_csv(rows, digits).encode("utf-8"))

    for label in report.failed:
        print(f"failed: {label}: {report.per_synthesizer[label].error}", file=sys.stderr)
    print(f"report written to {out}")
    return EXIT_PARTIAL if report.partial else EXIT_OK


@track_stage("synth")
def cmd_synth(cfg: RunConfig, method: str, n: int, label: Optional[str] = None,
              params: Optional[CartParams] = None) -> int:
    if cfg.seed is None:
        raise ConfigError("run config", ["seed: required for synthesis"])
    orig = _load_original(cfg)
    rules = load_rules(cfg.rules) if cfg.rules else []
    first = SYNTHESIS_FIRST if SYNTHESIS_FIRST in orig.schema else None
    order = order_variables(orig.schema, "category_count", first=first, data=orig)

    t0 = time.perf_counter()
    result = track_synthesis(method)(synthesize)(method, orig, n, cfg.seed, rules, order, params)
    log_synthesis(logger, method, n, cfg.seed, result.violations_before, time.perf_counter() - t0)

    path = write_csv(result.dataset, cfg.output_dir / f"{label or method}.csv")
    print(f"rule violations before enforcement: {result.violations_before}")
    print(f"synthetic data written to {path}")
    return EXIT_OK


@track_stage("schema")
def cmd_schema(path: Path, hints: Sequence[str] = (), out: Optional[Path] = None) -> int:
    schema = infer_schema(path, hints)
    text = schema.to_json()
    if out is None:
        sys.stdout.write(text)
    else:
        _write(Path(out), text.encode("utf-8"))
        print(f"schema with {len(schema.variables)} variables written to {out}")
    return EXIT_OK


@track_stage("simulate")
def cmd_simulate(n: int, seed: int, out: Path, schema_out: Optional[Path] = None) -> int:
    ds = simulate_sars(n, seed)
    write_csv(ds, out)
    if schema_out is not None:
        _write(Path(schema_out), ds.schema.to_json().encode("utf-8"))
    print(f"{ds.n_rows} simulated records written to {out}")
    return EXIT_OK


# ============================================================
# ARGUMENTS
# ============================================================

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rueval", description="Risk-utility evaluation of synthetic microdata")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    evaluate = sub.add_parser("evaluate", help="Score synthetic datasets against the original")
    evaluate.add_argument("--config", type=Path, required=True, help="Run configuration JSON")
    evaluate.add_argument("--jobs", type=int, default=settings.default_jobs, help="Worker threads")
    evaluate.add_argument("--metrics-file", type=Path, default=settings.metrics_file,
                          help="Write Prometheus metrics here")

    synth = sub.add_parser("synth", help="Generate a baseline synthetic dataset")
    synth.add_argument("--config", type=Path, required=True, help="Run configuration JSON")
    synth.add_argument("--method", choices=["marginal", "cart"], required=True)
    synth.add_argument("--n", type=int, required=True, help="Rows to synthesize")
    synth.add_argument("--label", type=str, help="Output file stem (default: method)")
    synth.add_argument("--min-leaf", type=int, default=5, help="CART minimum leaf size")
    synth.add_argument("--max-depth", type=int, default=30, help="CART maximum depth")
    synth.add_argument("--metrics-file", type=Path, default=settings.metrics_file)

    schema = sub.add_parser("schema", help="Infer a schema from a CSV header and values")
    schema.add_argument("--in", dest="path", type=Path, required=True, help="Input CSV")
    schema.add_argument("--int-hint", dest="hints", action="append", default=[],
                        help="Column to treat as integer (repeatable)")
    schema.add_argument("--out", type=Path, help="Schema JSON path (default: stdout)")

    simulate = sub.add_parser("simulate", help="Write the simulated census-sample corpus")
    simulate.add_argument("--n", type=int, default=10000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", type=Path, default=Path("data/simsars.csv"))
    simulate.add_argument("--schema-out", type=Path)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(settings.log_level, settings.log_file, settings.log_json)

    try:
        if args.command == "evaluate":
            code = cmd_evaluate(RunConfig.load(args.config), jobs=max(1, args.jobs))
        elif args.command == "synth":
            params = CartParams(min_leaf=args.min_leaf, max_depth=args.max_depth)
            code = cmd_synth(RunConfig.load(args.config), args.method, args.n, args.label, params)
        elif args.command == "schema":
            code = cmd_schema(args.path, args.hints, args.out)
        else:
            code = cmd_simulate(args.n, args.seed, args.out, args.schema_out)
    except (ToolkitError, OSError, RetryExhausted, ValidationError) as e:
        log_error(logger, e, context=args.command)
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_FATAL

    metrics_file = getattr(args, "metrics_file", None)
    if metrics_file:
        write_metrics(metrics_file)
    return code


if __name__ == "__main__":
    sys.exit(main())
