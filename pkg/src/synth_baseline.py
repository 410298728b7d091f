"""
Baseline synthesizers
Independent-marginal sampling and sequential CART synthesis with leaf donor
sampling, variable ordering, and deterministic data rules
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from src.errors import ConfigError, EmptyDataset, RuleConflict, UnknownVariable
from src.tabular import Dataset, PathLike, Schema, read_text

logger = logging.getLogger(__name__)


# ============================================================
# MARGINAL SAMPLING
# ============================================================

def synth_marginal(orig: Dataset, n: int, seed: int) -> Dataset:
    """Every variable drawn i.i.d. from its own original marginal, independently of the others"""
    if n < 1:
        raise EmptyDataset(f"cannot synthesize {n} rows")
    if orig.n_rows == 0:
        raise EmptyDataset("original dataset has no rows")

    rng = np.random.default_rng(seed)
    columns = {}
    # one draw of n row indices per variable, in schema order
    for name in orig.schema.names:
        columns[name] = orig.column(name)[rng.integers(0, orig.n_rows, size=n)]
    return Dataset.from_codes(orig.schema, columns)


# ============================================================
# VARIABLE ORDER
# ============================================================

def order_variables(
    schema: Schema,
    policy: Literal["category_count", "as_given"] = "category_count",
    first: Optional[str] = None,
    data: Optional[Dataset] = None,
) -> List[str]:
    """
    Ascending category count (stable on schema order), `first` pinned to the front

    Integer variables count their observed distinct values when `data` is
    given, otherwise the size of their schema range.
    """
    if first is not None:
        schema[first]
    names = schema.names
    if policy == "category_count":
        def _count(name: str) -> int:
            spec = schema[name]
            if spec.is_categorical:
                return len(spec.categories)
            if data is not None:
                return int(np.unique(data.column(name)).size)
            return spec.n_levels

        names = sorted(names, key=_count)
    elif policy != "as_given":
        raise ValueError(f"unknown ordering policy: {policy}")

    if first is not None:
        names = [first] + [name for name in names if name != first]
    return names


# ============================================================
# CART
# ============================================================

class CartParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_leaf: int = Field(default=5, ge=1)
    max_depth: int = Field(default=30, ge=1)
    max_exhaustive_categories: int = Field(default=8, ge=2, le=12)


@dataclass(frozen=True)
class CartNode:
    depth: int
    variable: Optional[str] = None
    left_codes: Optional[Tuple[int, ...]] = None
    threshold: Optional[int] = None
    left: int = -1
    right: int = -1
    pool: Optional[np.ndarray] = None

    @property
    def is_leaf(self) -> bool:
        return self.variable is None

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        if self.threshold is not None:
            return x <= self.threshold
        return np.isin(x, self.left_codes)


@dataclass(frozen=True)
class CartModel:
    response: str
    predictors: Tuple[str, ...]
    nodes: Tuple[CartNode, ...]
    response_constant: bool
    n_train: int

    @property
    def leaves(self) -> List[int]:
        return [i for i, node in enumerate(self.nodes) if node.is_leaf]

    @property
    def depth(self) -> int:
        return max(node.depth for node in self.nodes)

    def route(self, columns: Mapping[str, np.ndarray], n_rows: int) -> np.ndarray:
        """Leaf node index reached by every row"""
        out = np.empty(n_rows, dtype=np.int64)
        stack = [(0, np.arange(n_rows))]
        while stack:
            node_id, rows = stack.pop()
            node = self.nodes[node_id]
            if node.is_leaf:
                out[rows] = node_id
                continue
            left = node.goes_left(columns[node.variable][rows])
            stack.append((node.right, rows[~left]))
            stack.append((node.left, rows[left]))
        return out


def _impurity(S: np.ndarray, categorical: bool) -> np.ndarray:
    # categorical: rows of class counts -> n * Gini; numeric: rows of (n, sum, sumsq) -> SSE
    if categorical:
        n = S.sum(axis=-1)
        sq = (S * S).sum(axis=-1)
        return n - np.divide(sq, n, out=np.zeros_like(n, dtype=float), where=n > 0)
    n, s, ss = S[..., 0], S[..., 1], S[..., 2]
    return ss - np.divide(s * s, n, out=np.zeros_like(n, dtype=float), where=n > 0)


def _sizes(S: np.ndarray, categorical: bool) -> np.ndarray:
    return S.sum(axis=-1) if categorical else S[..., 0]


def _level_stats(inv: np.ndarray, m: int, y: np.ndarray, categorical: bool, n_classes: int) -> np.ndarray:
    if categorical:
        return np.bincount(inv * n_classes + y, minlength=m * n_classes).reshape(m, n_classes).astype(float)
    return np.column_stack([
        np.bincount(inv, minlength=m).astype(float),
        np.bincount(inv, weights=y, minlength=m),
        np.bincount(inv, weights=y * y, minlength=m),
    ])


def _subset_masks(m: int) -> np.ndarray:
    # every two-way partition of m levels, level 0 fixed on the right
    codes = np.arange(1, 2 ** (m - 1))
    bits = (codes[:, None] >> np.arange(m - 1)) & 1
    return np.hstack([np.zeros((codes.size, 1), dtype=int), bits])


class _SplitSearch:
    def __init__(self, train: Dataset, response: str, predictors: Sequence[str], params: CartParams):
        spec = train.schema[response]
        self.categorical = spec.is_categorical
        self.n_classes = len(spec.categories) if self.categorical else 0
        raw = train.column(response)
        self.y = raw if self.categorical else raw.astype(float)
        self.X = {name: train.column(name) for name in predictors}
        self.integer_predictor = {name: not train.schema[name].is_categorical for name in predictors}
        self.params = params

    def node_stats(self, rows: np.ndarray) -> np.ndarray:
        y = self.y[rows]
        if self.categorical:
            return np.bincount(y, minlength=self.n_classes).astype(float)
        return np.array([rows.size, y.sum(), (y * y).sum()])

    def tolerance(self, parent: np.ndarray) -> float:
        scale = parent.sum() if self.categorical else parent[2]
        return 1e-9 * max(1.0, float(scale))

    def best(self, rows: np.ndarray, order: Sequence[str]):
        parent = self.node_stats(rows)
        parent_imp = float(_impurity(parent, self.categorical))
        tol = self.tolerance(parent)
        if parent_imp <= tol:
            return None

        y = self.y[rows]
        best_gain, best_split = tol, None
        for name in order:
            x = self.X[name][rows]
            levels, inv = np.unique(x, return_inverse=True)
            m = levels.size
            if m < 2:
                continue
            S = _level_stats(inv.reshape(-1), m, y, self.categorical, self.n_classes)

            if self.integer_predictor[name]:
                masks = None
                ordering = np.arange(m)
            elif m <= self.params.max_exhaustive_categories:
                masks = _subset_masks(m)
                ordering = None
            else:
                masks = None
                ordering = self._encoding_order(S, parent)

            if masks is not None:
                L = masks @ S
            else:
                L = np.cumsum(S[ordering], axis=0)[:-1]
            R = parent[None, :] - L
            n_left, n_right = _sizes(L, self.categorical), _sizes(R, self.categorical)
            valid = (n_left >= self.params.min_leaf) & (n_right >= self.params.min_leaf)
            if not valid.any():
                continue
            gain = parent_imp - _impurity(L, self.categorical) - _impurity(R, self.categorical)
            gain = np.where(valid, gain, -np.inf)
            j = int(np.argmax(gain))
            if gain[j] <= best_gain:
                continue
            best_gain = float(gain[j])
            if self.integer_predictor[name]:
                best_split = (name, None, int(levels[j]))
            elif masks is not None:
                best_split = (name, tuple(int(v) for v in levels[masks[j] == 1]), None)
            else:
                best_split = (name, tuple(sorted(int(v) for v in levels[ordering[: j + 1]])), None)
        return best_split

    def _encoding_order(self, S: np.ndarray, parent: np.ndarray) -> np.ndarray:
        # levels ordered by mean response: share of the node's majority class, or mean value
        if self.categorical:
            n = S.sum(axis=1)
            key = S[:, int(np.argmax(parent))] / n
        else:
            key = S[:, 1] / S[:, 0]
        return np.argsort(key, kind="stable")


def fit_cart(
    train: Dataset,
    response: str,
    predictors: Sequence[str],
    params: Optional[CartParams] = None,
    seed: Optional[int] = None,
) -> CartModel:
    """
    Greedy binary tree of `response` on `predictors` whose leaves keep donor rows

    Gini for a categorical response, variance for an integer one. Growth
    stops at min_leaf, max_depth or zero gain. With a seed, predictors are
    scanned in a seeded order, which only changes how equal-gain ties resolve.
    """
    params = params or CartParams()
    train.schema.require([response, *predictors])
    if response in predictors:
        raise ValueError(f"response {response} cannot be its own predictor")

    order = list(predictors)
    if seed is not None:
        order = [order[i] for i in np.random.default_rng(seed).permutation(len(order))]

    search = _SplitSearch(train, response, predictors, params)
    drafts: List[Dict[str, Any]] = [{"rows": np.arange(train.n_rows), "depth": 0}]
    i = 0
    while i < len(drafts):
        draft = drafts[i]
        rows = draft.pop("rows")
        split = None
        if draft["depth"] < params.max_depth and rows.size >= 2 * params.min_leaf and order:
            split = search.best(rows, order)
        if split is None:
            draft["pool"] = rows
        else:
            name, left_codes, threshold = split
            x = search.X[name][rows]
            go_left = x <= threshold if threshold is not None else np.isin(x, left_codes)
            draft.update(variable=name, left_codes=left_codes, threshold=threshold,
                         left=len(drafts), right=len(drafts) + 1)
            drafts.append({"rows": rows[go_left], "depth": draft["depth"] + 1})
            drafts.append({"rows": rows[~go_left], "depth": draft["depth"] + 1})
        i += 1

    constant = bool(np.unique(train.column(response)).size <= 1)
    if constant:
        logger.warning(
            f"ResponseConstant: {response} has a single value, tree is one leaf",
            extra={"extra_data": {"event_type": "cart_response_constant", "response": response}},
        )
    return CartModel(
        response=response,
        predictors=tuple(predictors),
        nodes=tuple(CartNode(**draft) for draft in drafts),
        response_constant=constant,
        n_train=train.n_rows,
    )


# ============================================================
# DATA RULES
# ============================================================

class RuleAtom(BaseModel):
    model_config = ConfigDict(frozen=True)

    var: str
    op: Literal["=", "<=", ">="]
    value: Union[int, str]

    def mask(self, ds: Dataset) -> np.ndarray:
        spec = ds.schema[self.var]
        col = ds.column(self.var)
        if spec.is_categorical:
            if self.op != "=":
                raise ValueError(f"operator {self.op} is undefined on categorical {self.var}")
            return col == spec.code_of(self.value)
        present = ~ds.missing_mask(self.var)
        value = int(self.value)
        if self.op == "=":
            return present & (col == value)
        if self.op == "<=":
            return present & (col <= value)
        return present & (col >= value)


class RuleAssignment(BaseModel):
    model_config = ConfigDict(frozen=True)

    var: str
    value: Union[int, str]


class DataRule(BaseModel):
    """if <all atoms hold> then <var> = <value>"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    condition: Tuple[RuleAtom, ...] = Field(alias="if", min_length=1)
    consequence: RuleAssignment = Field(alias="then")

    @model_validator(mode="after")
    def _check(self) -> "DataRule":
        if any(atom.var == self.consequence.var for atom in self.condition):
            raise ValueError(f"consequence variable {self.consequence.var} appears in its own condition")
        return self

    def condition_mask(self, ds: Dataset) -> np.ndarray:
        mask = np.ones(ds.n_rows, dtype=bool)
        for atom in self.condition:
            mask &= atom.mask(ds)
        return mask

    def target_code(self, schema: Schema) -> int:
        return schema[self.consequence.var].code_of(self.consequence.value)

    def violations(self, ds: Dataset) -> np.ndarray:
        return self.condition_mask(ds) & (ds.column(self.consequence.var) != self.target_code(ds.schema))

    def describe(self) -> str:
        cond = " and ".join(f"{a.var} {a.op} {a.value}" for a in self.condition)
        return f"if {cond} then {self.consequence.var} = {self.consequence.value}"


def _label(spec, code: int) -> str:
    if spec.is_categorical:
        return spec.categories[int(code)]
    return spec.missing_label if code == spec.missing_code else str(int(code))


_RULES = TypeAdapter(List[DataRule])


def load_rules(path: PathLike) -> List[DataRule]:
    try:
        return _RULES.validate_json(read_text(path))
    except ValidationError as e:
        raise ConfigError.from_validation(str(path), e) from e


def check_rules(ds: Dataset, rules: Sequence[DataRule]) -> List[int]:
    """Violation count per rule; usable as a validator on any dataset"""
    for rule in rules:
        ds.schema.require([a.var for a in rule.condition] + [rule.consequence.var])
    return [int(rule.violations(ds).sum()) for rule in rules]


def apply_rules(ds: Dataset, rules: Sequence[DataRule]) -> Tuple[Dataset, int]:
    """
    Overwrite consequence values wherever a condition holds

    Conditions are evaluated on the input dataset. Returns the enforced
    dataset and the total violation count before enforcement.
    """
    if not rules:
        return ds, 0
    before = sum(check_rules(ds, rules))

    assigned: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for rule in rules:
        name = rule.consequence.var
        mask = rule.condition_mask(ds)
        code = rule.target_code(ds.schema)
        values, written = assigned.get(name, (ds.column(name).copy(), np.zeros(ds.n_rows, dtype=bool)))
        clash = written & mask & (values != code)
        if clash.any():
            row = int(np.flatnonzero(clash)[0])
            raise RuleConflict(name, row + 2, [_label(ds.schema[name], values[row]), _label(ds.schema[name], code)])
        values[mask] = code
        assigned[name] = (values, written | mask)

    enforced = ds.with_columns({name: values for name, (values, _) in assigned.items()})
    if before:
        logger.info(
            f"Enforced {len(rules)} data rules, {before} violations overwritten",
            extra={"extra_data": {"event_type": "rules_enforced", "violations_before": before}},
        )
    return enforced, before


# ============================================================
# SEQUENTIAL CART SYNTHESIS
# ============================================================

def _draw_cart_sequential(orig: Dataset, order: Sequence[str], params: CartParams, n: int, seed: int) -> Dataset:
    names = list(order)
    if sorted(names) != sorted(orig.schema.names) or len(set(names)) != len(names):
        missing = set(orig.schema.names) ^ set(names)
        if missing - set(orig.schema.names):
            raise UnknownVariable(sorted(missing - set(orig.schema.names))[0])
        raise ValueError("order must be a permutation of the schema variables")
    if n < 1:
        raise EmptyDataset(f"cannot synthesize {n} rows")
    if orig.n_rows == 0:
        raise EmptyDataset("original dataset has no rows")

    # call order on the generator: first-variable row draw, then one donor
    # draw per leaf (ascending node index) for each later variable
    rng = np.random.default_rng(seed)
    columns: Dict[str, np.ndarray] = {names[0]: orig.column(names[0])[rng.integers(0, orig.n_rows, size=n)]}

    for position in range(1, len(names)):
        name = names[position]
        model = fit_cart(orig, name, names[:position], params)
        leaf_of = model.route(columns, n)
        donor_values = orig.column(name)
        values = np.empty(n, dtype=np.int64)

        sort = np.argsort(leaf_of, kind="stable")
        leaves, starts = np.unique(leaf_of[sort], return_index=True)
        ends = np.append(starts[1:], n)
        for leaf, start, end in zip(leaves, starts, ends):
            rows = sort[start:end]
            pool = model.nodes[int(leaf)].pool
            values[rows] = donor_values[pool[rng.integers(0, pool.size, size=rows.size)]]
        columns[name] = values

        logger.debug(
            f"Synthesized {name} from {len(model.leaves)} leaves",
            extra={"extra_data": {"event_type": "cart_variable", "variable": name, "leaves": len(model.leaves)}},
        )

    return Dataset.from_codes(orig.schema, columns)


def synth_cart_sequential(
    orig: Dataset,
    order: Sequence[str],
    rules: Sequence[DataRule] = (),
    params: Optional[CartParams] = None,
    n: Optional[int] = None,
    seed: int = 0,
) -> Dataset:
    """
    First variable resampled from its marginal, every later variable drawn
    from the donor pool of the leaf its synthetic row reaches in a CART fit
    on the preceding variables; data rules enforced afterwards
    """
    n = orig.n_rows if n is None else n
    drawn = _draw_cart_sequential(orig, order, params or CartParams(), n, seed)
    enforced, _ = apply_rules(drawn, rules)
    return enforced


@dataclass(frozen=True)
class Synthesis:
    dataset: Dataset
    method: str
    seed: int
    violations_before: int


def synthesize(
    method: Literal["marginal", "cart"],
    orig: Dataset,
    n: int,
    seed: int,
    rules: Sequence[DataRule] = (),
    order: Optional[Sequence[str]] = None,
    params: Optional[CartParams] = None,
) -> Synthesis:
    """Run one baseline synthesizer and enforce rules, keeping the pre-enforcement violation count"""
    if method == "marginal":
        drawn = synth_marginal(orig, n, seed)
    elif method == "cart":
        order = order or order_variables(orig.schema, "category_count", data=orig)
        drawn = _draw_cart_sequential(orig, order, params or CartParams(), n, seed)
    else:
        raise ValueError(f"unknown synthesis method: {method}")
    enforced, before = apply_rules(drawn, rules)
    return Synthesis(dataset=enforced, method=method, seed=seed, violations_before=before)
