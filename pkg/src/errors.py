"""
Exception hierarchy for the risk-utility toolkit
Every error raised on purpose by the package derives from ToolkitError
"""

from typing import Any, Optional, Sequence


class ToolkitError(Exception):
    """Base class for all toolkit errors"""
    pass


class ConfigError(ToolkitError):
    """Raised when a configuration file fails validation"""

    def __init__(self, path: str, problems: Sequence[str]):
        self.path = path
        self.problems = list(problems)
        detail = "; ".join(self.problems)
        super().__init__(f"Invalid configuration {path}: {detail}")

    @classmethod
    def from_validation(cls, path: str, exc: Any) -> "ConfigError":
        """Build from a pydantic ValidationError, one problem per field path"""
        problems = []
        for err in exc.errors():
            loc = ".".join(str(part) for part in err.get("loc", ())) or "<root>"
            problems.append(f"{loc}: {err.get('msg', 'invalid')}")
        return cls(path, problems)


# ============================================================
# TABULAR
# ============================================================

class MissingColumn(ToolkitError):
    """CSV header lacks a schema variable"""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Missing column: {name}")


class ParseError(ToolkitError):
    """A cell could not be parsed against its variable kind"""

    def __init__(self, row: int, column: str, value: str, reason: str = "not a base-10 integer"):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Row {row}, column {column}: {value!r} {reason}")


class ValueOutOfRange(ParseError):
    """Integer cell outside the schema [min, max] range"""

    def __init__(self, row: int, column: str, value: str):
        super().__init__(row, column, value, reason="outside schema range")


class CategoryUnknown(ToolkitError):
    """Categorical cell not listed in the schema"""

    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Row {row}, column {column}: unknown category {value!r}")


class EmptyData(ToolkitError):
    """CSV has a header but no data rows"""
    pass


class UnknownVariable(ToolkitError):
    """A variable name is not part of the schema"""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Unknown variable: {name}")


class SchemaMismatch(ToolkitError):
    """Two datasets that must share a schema do not"""
    pass


class DegenerateColumn(ToolkitError):
    """Predictor with a single observed level (recorded as a warning, not raised)"""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Degenerate predictor dropped: {name}")


# ============================================================
# REGRESSION
# ============================================================

class RankDeficient(ToolkitError):
    """Design matrix columns are collinear"""

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"Rank deficient design, collinear columns: {', '.join(self.columns)}")


class NotBinaryResponse(ToolkitError):
    """Logistic response contains values other than 0 and 1"""
    pass


class NoConvergence(ToolkitError):
    """Iterative fit stopped at max_iter; carries the last iterate"""

    def __init__(self, fit: Any):
        self.fit = fit
        super().__init__(f"No convergence after {fit.iterations} iterations")


class NotConverged(ToolkitError):
    """Inference requested on a fit that did not converge"""
    pass


class InvalidLevel(ToolkitError):
    """Confidence level outside (0, 1)"""
    pass


# ============================================================
# METRICS / SYNTHESIS / REPORT
# ============================================================

class TableMismatch(ToolkitError):
    """Contingency tables cover different variables"""
    pass


class NoComponents(ToolkitError):
    """Overall utility requested with no component present"""
    pass


class EmptyDataset(ToolkitError):
    """Synthesis requested from an empty dataset or for zero rows"""
    pass


class RuleConflict(ToolkitError):
    """Two data rules assign different values to one cell"""

    def __init__(self, variable: str, row: int, values: Optional[Sequence[str]] = None):
        self.variable = variable
        self.row = row
        self.values = list(values or [])
        super().__init__(f"Conflicting rules for {variable} on row {row}: {self.values}")


class NoSubjects(ToolkitError):
    """Report requested with no synthetic datasets"""
    pass
