"""
Typed tabular data model shared by every metric
Schema handling, CSV ingestion/writing, contingency tables and one-hot designs
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import (
    CategoryUnknown,
    ConfigError,
    DegenerateColumn,
    EmptyData,
    MissingColumn,
    ParseError,
    SchemaMismatch,
    UnknownVariable,
    ValueOutOfRange,
)
from src.regress import INTERCEPT, DesignMatrix
from src.resilience import retry

logger = logging.getLogger(__name__)

MISSING_LABEL = "NA"
_INTEGER_PATTERN = r"[+-]?\d+"

PathLike = Union[str, Path]


# ============================================================
# SCHEMA
# ============================================================

class VariableSpec(BaseModel):
    """One variable of the roster; categorical labels are stored as text"""
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    kind: Literal["categorical", "integer"]
    categories: Tuple[str, ...] = ()
    min: Optional[int] = None
    max: Optional[int] = None
    missing: bool = False
    missing_label: str = MISSING_LABEL

    @model_validator(mode="before")
    @classmethod
    def _normalise(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("kind") != "categorical":
            return data
        data = dict(data)
        label = str(data.get("missing_label", MISSING_LABEL))
        categories = [str(c) for c in data.get("categories") or ()]
        if data.get("missing") and label not in categories:
            categories.append(label)
        if label in categories:
            data["missing"] = True
        data["categories"] = tuple(categories)
        return data

    @model_validator(mode="after")
    def _check(self) -> "VariableSpec":
        if self.kind == "categorical":
            if not self.categories:
                raise ValueError(f"categorical variable {self.name} needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"categories of {self.name} must be unique")
            if self.min is not None or self.max is not None:
                raise ValueError(f"categorical variable {self.name} takes no min/max")
        else:
            if self.min is None or self.max is None:
                raise ValueError(f"integer variable {self.name} needs min and max")
            if self.min > self.max:
                raise ValueError(f"integer variable {self.name}: min > max")
            if self.categories:
                raise ValueError(f"integer variable {self.name} takes no categories")
        return self

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    @property
    def n_levels(self) -> int:
        """Category count, or the size of the integer range"""
        if self.is_categorical:
            return len(self.categories)
        return self.max - self.min + 1

    @property
    def missing_code(self) -> int:
        """Stored code of a missing cell"""
        if self.is_categorical:
            return self.categories.index(self.missing_label) if self.missing else -1
        return self.min - 1

    def code_of(self, value: Any) -> int:
        """Code of a label (categorical) or integer value, missing label allowed"""
        text = str(value)
        if self.is_categorical:
            if text not in self.categories:
                raise CategoryUnknown(0, self.name, text)
            return self.categories.index(text)
        if text in ("", self.missing_label):
            return self.missing_code
        return int(text)


class Schema(BaseModel):
    model_config = ConfigDict(frozen=True)

    dataset_name: str = "dataset"
    variables: Tuple[VariableSpec, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _unique_names(self) -> "Schema":
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        return self

    @property
    def names(self) -> List[str]:
        return [v.name for v in self.variables]

    def __contains__(self, name: str) -> bool:
        return any(v.name == name for v in self.variables)

    def __getitem__(self, name: str) -> VariableSpec:
        for spec in self.variables:
            if spec.name == name:
                return spec
        raise UnknownVariable(name)

    def require(self, names: Iterable[str]) -> None:
        for name in names:
            self[name]

    def compatible_with(self, other: "Schema") -> bool:
        return self.variables == other.variables

    def to_json(self) -> str:
        payload = {"dataset_name": self.dataset_name, "variables": []}
        for spec in self.variables:
            entry: Dict[str, Any] = {"name": spec.name, "kind": spec.kind}
            if spec.is_categorical:
                entry["categories"] = list(spec.categories)
            else:
                entry["min"] = spec.min
                entry["max"] = spec.max
            entry["missing"] = spec.missing
            if spec.missing_label != MISSING_LABEL:
                entry["missing_label"] = spec.missing_label
            payload["variables"].append(entry)
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def load(cls, path: PathLike) -> "Schema":
        text = read_text(path)
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError.from_validation(str(path), e) from e


# ============================================================
# DATASET
# ============================================================

@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable column store

    Categorical columns hold category indices; integer columns hold values,
    with missing stored as VariableSpec.missing_code (min - 1).
    """
    schema: Schema
    columns: Mapping[str, np.ndarray]
    n_rows: int

    @classmethod
    def from_codes(cls, schema: Schema, columns: Mapping[str, Any]) -> "Dataset":
        frozen: Dict[str, np.ndarray] = {}
        n_rows: Optional[int] = None
        for spec in schema.variables:
            if spec.name not in columns:
                raise MissingColumn(spec.name)
            col = np.array(columns[spec.name], dtype=np.int64, copy=True).reshape(-1)
            if n_rows is None:
                n_rows = col.shape[0]
            elif col.shape[0] != n_rows:
                raise ValueError(f"column {spec.name} has {col.shape[0]} rows, expected {n_rows}")
            _check_codes(spec, col)
            col.flags.writeable = False
            frozen[spec.name] = col
        return cls(schema=schema, columns=MappingProxyType(frozen), n_rows=int(n_rows or 0))

    @classmethod
    def from_labels(cls, schema: Schema, data: Mapping[str, Sequence[Any]]) -> "Dataset":
        """Build from raw labels/values, same parsing rules as load_csv"""
        frame = pd.DataFrame({name: [str(v) for v in values] for name, values in data.items()})
        return _encode_frame(frame, schema)

    def __len__(self) -> int:
        return self.n_rows

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise UnknownVariable(name)
        return self.columns[name]

    def missing_mask(self, name: str) -> np.ndarray:
        spec = self.schema[name]
        if not spec.missing:
            return np.zeros(self.n_rows, dtype=bool)
        return self.column(name) == spec.missing_code

    def labels(self, name: str) -> np.ndarray:
        """Cell values as text, missing rendered with the missing label"""
        spec = self.schema[name]
        col = self.column(name)
        if spec.is_categorical:
            return np.asarray(spec.categories, dtype=object)[col]
        out = col.astype(str).astype(object)
        out[col == spec.missing_code] = spec.missing_label
        return out

    def take(self, rows: Sequence[int]) -> "Dataset":
        idx = np.asarray(rows, dtype=np.int64)
        return Dataset.from_codes(self.schema, {n: c[idx] for n, c in self.columns.items()})

    def with_columns(self, updates: Mapping[str, np.ndarray]) -> "Dataset":
        merged = {name: updates.get(name, col) for name, col in self.columns.items()}
        return Dataset.from_codes(self.schema, merged)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: self.labels(name) for name in self.schema.names})


def _check_codes(spec: VariableSpec, col: np.ndarray) -> None:
    if col.size == 0:
        return
    if spec.is_categorical:
        bad = (col < 0) | (col >= len(spec.categories))
    else:
        bad = (col < spec.min) | (col > spec.max)
        if spec.missing:
            bad &= col != spec.missing_code
    if bad.any():
        raise ValueError(f"column {spec.name} holds codes outside the schema")


def concat(first: Dataset, second: Dataset) -> Dataset:
    """Row-wise stack of two datasets sharing a schema"""
    if not first.schema.compatible_with(second.schema):
        raise SchemaMismatch("datasets do not share a schema")
    return Dataset.from_codes(
        first.schema,
        {name: np.concatenate([first.column(name), second.column(name)]) for name in first.schema.names},
    )


def require_same_schema(*datasets: Dataset) -> Schema:
    schema = datasets[0].schema
    for ds in datasets[1:]:
        if not schema.compatible_with(ds.schema):
            raise SchemaMismatch(
                f"schema mismatch between {schema.dataset_name} and {ds.schema.dataset_name}"
            )
    return schema


# ============================================================
# CSV
# ============================================================

@retry(max_attempts=3, delay=0.2, exceptions=(OSError,), giveup=(FileNotFoundError, IsADirectoryError, PermissionError))
def read_text(path: PathLike) -> str:
    return Path(path).read_text(encoding="utf-8")


@retry(max_attempts=3, delay=0.2, exceptions=(OSError,), giveup=(FileNotFoundError, IsADirectoryError, PermissionError))
def _read_frame(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(
            path,
            sep=",",
            quotechar='"',
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as e:
        raise EmptyData(f"{path} has no header row") from e


def _encode_column(spec: VariableSpec, raw: np.ndarray) -> np.ndarray:
    # data rows start on file line 2 (line 1 is the header)
    is_missing = (raw == "") | (raw == spec.missing_label)
    if spec.is_categorical:
        lookup = {label: i for i, label in enumerate(spec.categories)}
        values = np.where(is_missing, spec.missing_label, raw)
        codes = pd.Series(values, dtype=object).map(lookup)
        unknown = codes.isna().to_numpy()
        if unknown.any():
            i = int(np.flatnonzero(unknown)[0])
            raise CategoryUnknown(i + 2, spec.name, str(raw[i]))
        return codes.to_numpy(dtype=np.int64)

    well_formed = pd.Series(raw, dtype=object).str.fullmatch(_INTEGER_PATTERN).fillna(False).to_numpy(dtype=bool)
    bad = ~(well_formed | is_missing)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(i + 2, spec.name, str(raw[i]))
    if is_missing.any() and not spec.missing:
        i = int(np.flatnonzero(is_missing)[0])
        raise ParseError(i + 2, spec.name, str(raw[i]), reason="missing value not permitted")

    values = np.full(raw.shape[0], spec.missing_code, dtype=np.int64)
    values[~is_missing] = raw[~is_missing].astype(np.int64)
    out_of_range = ~is_missing & ((values < spec.min) | (values > spec.max))
    if out_of_range.any():
        i = int(np.flatnonzero(out_of_range)[0])
        raise ValueOutOfRange(i + 2, spec.name, str(raw[i]))
    return values


def _encode_frame(frame: pd.DataFrame, schema: Schema) -> Dataset:
    columns = {}
    for spec in schema.variables:
        if spec.name not in frame.columns:
            raise MissingColumn(spec.name)
        raw = frame[spec.name].to_numpy(dtype=object).astype(str)
        columns[spec.name] = _encode_column(spec, raw)
    return Dataset.from_codes(schema, columns)


def load_csv(path: PathLike, schema: Schema) -> Dataset:
    """
    Load an RFC-4180 CSV against a schema

    Extra columns are ignored; empty cells and the missing label map to the
    missing category. Error rows are file line numbers (header = line 1).
    """
    frame = _read_frame(path)
    ds = _encode_frame(frame, schema)
    logger.info(
        f"Loaded {ds.n_rows} rows from {path}",
        extra={"extra_data": {"event_type": "load_csv", "path": str(path), "rows": ds.n_rows}},
    )
    return ds


def infer_schema(path: PathLike, integer_hints: Iterable[str] = ()) -> Schema:
    """Categorical columns get their sorted distinct values; hinted columns become integer"""
    frame = _read_frame(path)
    hints = set(integer_hints)
    for name in hints:
        if name not in frame.columns:
            raise UnknownVariable(name)
    if frame.shape[0] == 0:
        raise EmptyData(f"{path} has no data rows")

    variables = []
    for name in frame.columns:
        raw = frame[name].to_numpy(dtype=object).astype(str)
        is_missing = (raw == "") | (raw == MISSING_LABEL)
        if name in hints:
            present = raw[~is_missing]
            ok = pd.Series(present, dtype=object).str.fullmatch(_INTEGER_PATTERN).fillna(False).to_numpy(dtype=bool)
            if not ok.all():
                i = int(np.flatnonzero(~is_missing)[np.flatnonzero(~ok)[0]])
                raise ParseError(i + 2, name, str(raw[i]))
            if present.size == 0:
                raise EmptyData(f"integer column {name} has no values")
            values = present.astype(np.int64)
            variables.append(VariableSpec(
                name=name, kind="integer", min=int(values.min()), max=int(values.max()),
                missing=bool(is_missing.any()),
            ))
        else:
            labels = np.where(is_missing, MISSING_LABEL, raw)
            variables.append(VariableSpec(
                name=name, kind="categorical", categories=tuple(sorted(set(labels.tolist()))),
            ))
    return Schema(dataset_name=Path(path).stem, variables=tuple(variables))


def to_csv_text(ds: Dataset) -> str:
    return ds.to_frame().to_csv(index=False, lineterminator="\n")


def write_csv(ds: Dataset, path: PathLike) -> Path:
    """Canonical writer: comma separator, minimal quoting, UTF-8, LF line ends"""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv_text(ds))
    return out


def content_hash(ds: Dataset) -> str:
    return "sha256:" + hashlib.sha256(to_csv_text(ds).encode("utf-8")).hexdigest()


# ============================================================
# CONTINGENCY TABLES
# ============================================================

class BinPolicy(BaseModel):
    """Fixed-width bins for integer variables, anchored at the schema min"""
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=5, ge=1)

    def n_bins(self, spec: VariableSpec) -> int:
        return (spec.max - spec.min) // self.width + 1

    def bin_labels(self, spec: VariableSpec) -> List[str]:
        labels = []
        for b in range(self.n_bins(spec)):
            lo = spec.min + b * self.width
            labels.append(f"[{lo},{lo + self.width})")
        return labels


@dataclass(frozen=True)
class ContingencyTable:
    """
    Sparse counts over the category product of one or two variables

    `levels` is the full category space per variable; only cells with a
    positive count are stored in `cells`.
    """
    variables: Tuple[str, ...]
    levels: Tuple[Tuple[str, ...], ...]
    cells: Mapping[Tuple[str, ...], int]
    total: int

    def __post_init__(self):
        if sum(self.cells.values()) != self.total:
            raise ValueError("cell counts do not sum to total")

    def __getitem__(self, key: Union[str, Tuple[str, ...]]) -> int:
        if not isinstance(key, tuple):
            key = (key,)
        return self.cells.get(key, 0)

    @property
    def space_size(self) -> int:
        size = 1
        for lv in self.levels:
            size *= len(lv)
        return size


def _table_codes(ds: Dataset, name: str, policy: BinPolicy) -> Tuple[np.ndarray, List[str]]:
    spec = ds.schema[name]
    col = ds.column(name)
    if spec.is_categorical:
        return col, list(spec.categories)
    labels = policy.bin_labels(spec)
    codes = (col - spec.min) // policy.width
    if spec.missing:
        codes = np.where(col == spec.missing_code, len(labels), codes)
        labels.append(spec.missing_label)
    return codes, labels


def crosstab(ds: Dataset, variables: Sequence[str], integer_binning: Optional[BinPolicy] = None) -> ContingencyTable:
    """Counts over the (binned) category product; missing is its own category"""
    variables = tuple(variables)
    if len(variables) not in (1, 2) or len(set(variables)) != len(variables):
        raise ValueError("crosstab takes one or two distinct variables")
    policy = integer_binning or BinPolicy()
    ds.schema.require(variables)

    parts = [_table_codes(ds, name, policy) for name in variables]
    flat = np.zeros(ds.n_rows, dtype=np.int64)
    size = 1
    for codes, labels in parts:
        flat = flat * len(labels) + codes
        size *= len(labels)
    counts = np.bincount(flat, minlength=size)

    cells: Dict[Tuple[str, ...], int] = {}
    shape = tuple(len(labels) for _, labels in parts)
    for index in np.flatnonzero(counts):
        coords = np.unravel_index(index, shape)
        key = tuple(parts[k][1][c] for k, c in enumerate(coords))
        cells[key] = int(counts[index])

    return ContingencyTable(
        variables=variables,
        levels=tuple(tuple(labels) for _, labels in parts),
        cells=MappingProxyType(cells),
        total=int(ds.n_rows),
    )


# ============================================================
# DESIGN MATRICES
# ============================================================

class ResponseSpec(BaseModel):
    """How the response column is encoded: raw integer values, or an indicator of one category"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["numeric", "indicator"] = "numeric"
    positive: Optional[str] = None

    @classmethod
    def numeric(cls) -> "ResponseSpec":
        return cls(kind="numeric")

    @classmethod
    def indicator(cls, positive: str) -> "ResponseSpec":
        return cls(kind="indicator", positive=str(positive))


@dataclass(frozen=True)
class DesignTerm:
    """
    Columns one predictor contributes to a design

    Built on one dataset and replayed on another with the same schema, so
    that a coefficient name means the same contrast in both fits.
    Categorical terms keep the retained level codes with the reference
    first; integer terms keep the centring and scaling of their values.
    """
    variable: str
    levels: Tuple[int, ...] = ()
    center: float = 0.0
    scale: float = 1.0
    standardized: bool = False

    @property
    def reference(self) -> Optional[int]:
        return self.levels[0] if self.levels else None


def _observed_levels(col: np.ndarray, n_categories: int) -> np.ndarray:
    return np.flatnonzero(np.bincount(col, minlength=n_categories))


def design_layout(ds: Dataset, exclude: Iterable[str] = ()) -> Tuple[Tuple[DesignTerm, ...], List[str]]:
    """
    Term layout of every non-excluded, non-degenerate variable of `ds`

    Categorical variables retain their observed levels, the first observed
    level being the reference. Integer variables are standardised with the
    sample mean and sd (n - 1) of their present values.
    """
    skip = set(exclude)
    terms: List[DesignTerm] = []
    warnings: List[str] = []

    for spec in ds.schema.variables:
        if spec.name in skip:
            continue
        col = ds.column(spec.name)
        if spec.is_categorical:
            observed = _observed_levels(col, len(spec.categories))
            if observed.size < 2:
                warnings.append(str(DegenerateColumn(spec.name)))
                continue
            terms.append(DesignTerm(variable=spec.name, levels=tuple(int(c) for c in observed)))
            continue

        miss = ds.missing_mask(spec.name)
        present = col[~miss].astype(float)
        distinct = np.unique(present).size
        if distinct + int(miss.any()) < 2:
            warnings.append(str(DegenerateColumn(spec.name)))
            continue
        if distinct >= 2:
            terms.append(DesignTerm(variable=spec.name, center=float(present.mean()),
                                    scale=float(present.std(ddof=1)), standardized=True))
        else:
            terms.append(DesignTerm(variable=spec.name))
    return tuple(terms), warnings


def _layout_columns(
    ds: Dataset, terms: Sequence[DesignTerm]
) -> Tuple[List[str], List[np.ndarray], List[str], List[str]]:
    """Columns of `ds` under `terms`, with degenerate-term warnings and incomparable column names"""
    n = ds.n_rows
    names: List[str] = [INTERCEPT]
    cols: List[np.ndarray] = [np.ones(n)]
    warnings: List[str] = []
    incomparable: List[str] = []

    for term in terms:
        spec = ds.schema[term.variable]
        col = ds.column(term.variable)
        width = len(names)
        if spec.is_categorical:
            observed = set(_observed_levels(col, len(spec.categories)).tolist())
            ordered = [c for c in term.levels if c in observed] + sorted(observed.difference(term.levels))
            if term.reference not in observed:
                incomparable.extend(f"{spec.name}={spec.categories[c]}" for c in term.levels[1:])
            for level in ordered[1:]:
                names.append(f"{spec.name}={spec.categories[level]}")
                cols.append((col == level).astype(float))
        else:
            miss = ds.missing_mask(term.variable)
            present = col[~miss].astype(float)
            if term.standardized and np.unique(present).size >= 2:
                z = np.zeros(n)
                z[~miss] = (present - term.center) / term.scale
                names.append(spec.name)
                cols.append(z)
            if miss.any():
                names.append(f"{spec.name}={spec.missing_label}")
                cols.append(miss.astype(float))
        if len(names) == width:
            warnings.append(str(DegenerateColumn(spec.name)))
    return names, cols, warnings, incomparable


def _log_degenerate(warnings: Sequence[str]) -> None:
    for message in warnings:
        logger.warning(message, extra={"extra_data": {"event_type": "degenerate_column"}})


def predictor_matrix(ds: Dataset, exclude: Iterable[str] = ()) -> Tuple[List[str], np.ndarray, List[str]]:
    """
    Intercept plus every non-excluded variable

    Categorical variables expand to indicators of their observed levels,
    dropping the first observed level. Integer variables are standardised
    (sample sd, n - 1); a missing-value indicator is added when the column
    has missing cells, whose standardised value is 0.
    """
    layout, warnings = design_layout(ds, exclude)
    names, cols, extra, _ = _layout_columns(ds, layout)
    warnings = warnings + extra
    _log_degenerate(warnings)
    return names, np.column_stack(cols), warnings


def response_rows(ds: Dataset, response: str) -> Dataset:
    """Rows of `ds` whose `response` cell is present"""
    keep = ~ds.missing_mask(response)
    return ds if keep.all() else ds.take(np.flatnonzero(keep))


def onehot_design(
    ds: Dataset,
    response: str,
    response_encoding: Optional[ResponseSpec] = None,
    layout: Optional[Sequence[DesignTerm]] = None,
) -> DesignMatrix:
    """
    Design matrix of `response` on all other variables; rows with a missing response are dropped

    With a `layout` from a reference dataset, levels absent here are left
    out, levels the layout does not know get their own indicators, and a
    variable whose reference level is absent is re-referenced with its
    layout column names reported in `incomparable`.
    """
    spec = ds.schema[response]
    encoding = response_encoding or ResponseSpec.numeric()
    subset = response_rows(ds, response)
    col = subset.column(response)

    if encoding.kind == "indicator":
        if spec.is_categorical:
            y = (col == spec.code_of(encoding.positive)).astype(float)
        else:
            y = (col == int(encoding.positive)).astype(float)
    else:
        if spec.is_categorical:
            raise ValueError(f"categorical response {response} needs an indicator encoding")
        y = col.astype(float)

    warnings: List[str] = []
    if layout is None:
        layout, warnings = design_layout(subset, exclude=(response,))
    elif any(term.variable == response for term in layout):
        raise ValueError(f"layout includes the response {response}")
    names, cols, extra, incomparable = _layout_columns(subset, layout)
    warnings = warnings + extra
    _log_degenerate(warnings)
    return DesignMatrix(names=tuple(names), X=np.column_stack(cols), y=y,
                        warnings=tuple(warnings), incomparable=tuple(incomparable))
