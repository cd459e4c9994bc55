"""Dataset ingestion, model formulas, and partitioned design matrices.

The outcome design is kept as the concatenation (X_y0 | X_y1), where the
X_y1 block collects the mediator-involving columns. Each X_y1 column is
the elementwise product of the mediator with some X_y0 column; the
injective ``expand_map`` records which one. That map is what lets a
short mediator coefficient vector be zero-expanded to the X_y0
dimension, which every correction formula downstream relies on.

Column order is deterministic: intercept, stratum indicators, then term
columns in formula order, with mediator-involving columns moved to the
end of the outcome design. Categorical covariates are corner-point
coded against their first (sorted) level.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import DataError, FormulaError

INTERCEPT = "(Intercept)"


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Validated rectangular sample of outcome, mediator, stratum, covariates.

    y, m: {0,1} integer vectors. stratum: integers 1..n_strata.
    covariates: name -> column; float arrays for numeric columns, string
    arrays for categorical ones. categorical: name -> ordered level tuple.
    """

    y: np.ndarray
    m: np.ndarray
    stratum: np.ndarray
    covariates: dict
    categorical: dict
    stratum_labels: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=int)
        m = np.asarray(self.m, dtype=int)
        n = y.shape[0]
        if n < 1:
            raise DataError("dataset has no rows")
        if not np.isin(y, (0, 1)).all():
            raise DataError("outcome values outside {0,1}")
        if not np.isin(m, (0, 1)).all():
            raise DataError("mediator values outside {0,1}")
        stratum = (np.ones(n, dtype=int) if self.stratum is None
                   else np.asarray(self.stratum, dtype=int))
        labels = np.unique(stratum)
        if labels[0] != 1 or labels[-1] != labels.size:
            raise DataError("stratum labels must be contiguous 1..N_b")
        for name, col in self.covariates.items():
            if len(col) != n:
                raise DataError(f"column '{name}' has length {len(col)}, expected {n}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "stratum", stratum)
        if not self.stratum_labels:
            object.__setattr__(self, "stratum_labels",
                               tuple(str(b) for b in labels))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def n_strata(self):
        return int(self.stratum.max())

    def case_control_counts(self):
        """Per-stratum (case, control) counts, ordered by stratum label."""
        cases = np.bincount(self.stratum, weights=self.y,
                            minlength=self.n_strata + 1)[1:]
        totals = np.bincount(self.stratum, minlength=self.n_strata + 1)[1:]
        return cases.astype(int), (totals - cases).astype(int)


def _is_missing(value):
    return value is None or value == "" or (isinstance(value, float) and np.isnan(value))


def load_csv(path, schema):
    """Read a CSV file into a validated Dataset.

    ``schema`` declares column roles: {"outcome": name, "mediator": name,
    "stratum": name (optional), "categorical": [names] (optional)}.
    Undeclared columns become covariates; a column is categorical when
    declared so or when any cell fails to parse as a number. Row/column
    positions are reported on validation failures (rows are 1-based data
    rows, excluding the header).
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"empty CSV file: {path}") from None
    if frame.shape[0] == 0:
        raise DataError(f"CSV file has a header but no data rows: {path}")

    for role in ("outcome", "mediator"):
        if role not in schema:
            raise DataError(f"schema is missing the '{role}' role")
        if schema[role] not in frame.columns:
            raise DataError(f"declared {role} column '{schema[role]}' not in file")
    stratum_col = schema.get("stratum")
    if stratum_col is not None and stratum_col not in frame.columns:
        raise DataError(f"declared stratum column '{stratum_col}' not in file")
    declared_cat = set(schema.get("categorical", ()))

    def binary_column(name):
        raw = frame[name].to_numpy()
        out = np.empty(raw.shape[0], dtype=int)
        for i, v in enumerate(raw):
            if _is_missing(v):
                raise DataError(f"missing value in column '{name}', row {i + 1}")
            if v not in ("0", "1"):
                raise DataError(
                    f"non-binary value '{v}' in column '{name}', row {i + 1}")
            out[i] = int(v)
        return out

    y = binary_column(schema["outcome"])
    m = binary_column(schema["mediator"])

    stratum = None
    stratum_labels = ()
    if stratum_col is not None:
        raw = frame[stratum_col].to_numpy()
        for i, v in enumerate(raw):
            if _is_missing(v):
                raise DataError(f"missing value in column '{stratum_col}', row {i + 1}")
        labels = sorted(set(raw), key=_level_sort_key)
        code = {lab: b + 1 for b, lab in enumerate(labels)}
        stratum = np.array([code[v] for v in raw], dtype=int)
        stratum_labels = tuple(labels)

    covariates = {}
    categorical = {}
    role_cols = {schema["outcome"], schema["mediator"], stratum_col}
    for name in frame.columns:
        if name in role_cols:
            continue
        raw = frame[name].to_numpy()
        for i, v in enumerate(raw):
            if _is_missing(v):
                raise DataError(f"missing value in column '{name}', row {i + 1}")
        as_cat = name in declared_cat
        values = None
        if not as_cat:
            try:
                values = raw.astype(float)
            except ValueError:
                as_cat = True
        if as_cat:
            covariates[name] = raw.astype(str)
            categorical[name] = tuple(sorted(set(raw), key=_level_sort_key))
        else:
            covariates[name] = values
    return Dataset(y=y, m=m, stratum=stratum, covariates=covariates,
                   categorical=categorical, stratum_labels=stratum_labels)


def _level_sort_key(value):
    try:
        return (0, float(value), "")
    except ValueError:
        return (1, 0.0, value)


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelFormula:
    """Parsed outcome/mediator term lists. Terms are variable-name tuples."""

    outcome_terms: tuple
    mediator_terms: tuple
    mediator: str


def _parse_terms(spec, what):
    terms = []
    if spec.strip() == "":
        return tuple(terms)
    for chunk in spec.split("+"):
        chunk = chunk.strip()
        if chunk == "":
            raise FormulaError(f"empty term in {what} formula")
        parts = tuple(p.strip() for p in chunk.split(":"))
        if any(p == "" for p in parts):
            raise FormulaError(f"malformed interaction '{chunk}' in {what} formula")
        if len(parts) > 2:
            raise FormulaError(
                f"only pairwise ':' interactions are supported, got '{chunk}'")
        for p in parts:
            if not p.replace("_", "").replace(".", "").isalnum():
                raise FormulaError(f"unknown token '{p}' in {what} formula")
        if parts in terms:
            raise FormulaError(f"duplicate term '{chunk}' in {what} formula")
        terms.append(parts)
    return tuple(terms)


def _check_hierarchy(terms, what):
    mains = {t[0] for t in terms if len(t) == 1}
    for t in terms:
        if len(t) == 2:
            for p in t:
                if p not in mains:
                    raise FormulaError(
                        f"non-hierarchical {what} formula: interaction "
                        f"'{':'.join(t)}' lacks main effect '{p}'")


def parse_formula(outcome_spec, mediator_spec, mediator):
    """Parse the '+'/':' formula mini-language into a ModelFormula.

    The mediator symbol must appear in at least one outcome term and in
    no mediator-model term. Interaction terms require their constituent
    main effects (hierarchical models only). The intercept is implicit.
    """
    if not outcome_spec or not outcome_spec.strip():
        raise FormulaError("empty outcome formula")
    outcome_terms = _parse_terms(outcome_spec, "outcome")
    mediator_terms = _parse_terms(mediator_spec or "", "mediator")
    _check_hierarchy(outcome_terms, "outcome")
    _check_hierarchy(mediator_terms, "mediator")
    if not any(mediator in t for t in outcome_terms):
        raise FormulaError(
            f"mediator '{mediator}' does not appear in the outcome formula")
    if any(mediator in t for t in mediator_terms):
        raise FormulaError(
            f"mediator '{mediator}' cannot appear in its own model formula")
    return ModelFormula(outcome_terms=outcome_terms,
                        mediator_terms=mediator_terms, mediator=mediator)


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignInfo:
    """Everything needed to rebuild design rows without the data.

    Serialized into fit artifacts so that contrasts and effect
    decompositions can be computed from a saved fit alone.
    """

    mediator: str
    n_strata: int
    categorical: dict
    numeric: tuple
    outcome_terms: tuple
    mediator_terms: tuple
    y0_labels: tuple
    y1_labels: tuple
    m_labels: tuple

    @property
    def y_labels(self):
        return self.y0_labels + self.y1_labels

    def to_dict(self):
        return {
            "mediator": self.mediator,
            "n_strata": self.n_strata,
            "categorical": {k: list(v) for k, v in self.categorical.items()},
            "numeric": list(self.numeric),
            "outcome_terms": [list(t) for t in self.outcome_terms],
            "mediator_terms": [list(t) for t in self.mediator_terms],
            "y0_labels": list(self.y0_labels),
            "y1_labels": list(self.y1_labels),
            "m_labels": list(self.m_labels),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mediator=d["mediator"],
            n_strata=int(d["n_strata"]),
            categorical={k: tuple(v) for k, v in d["categorical"].items()},
            numeric=tuple(d["numeric"]),
            outcome_terms=tuple(tuple(t) for t in d["outcome_terms"]),
            mediator_terms=tuple(tuple(t) for t in d["mediator_terms"]),
            y0_labels=tuple(d["y0_labels"]),
            y1_labels=tuple(d["y1_labels"]),
            m_labels=tuple(d["m_labels"]),
        )


@dataclass(frozen=True)
class DesignPartition:
    """Outcome/mediator design matrices with the mediator-column split.

    X_y = (X_y0 | X_y1) columnwise; X_y1[:, j] = m * X_y0[:, expand_map[j]].
    Xbar_y0 is X_y0 restricted to the image of expand_map.
    """

    X_y0: np.ndarray
    X_y1: np.ndarray
    X_m: np.ndarray
    expand_map: np.ndarray
    info: DesignInfo

    @property
    def X_y(self):
        return np.hstack([self.X_y0, self.X_y1])

    @property
    def Xbar_y0(self):
        return self.X_y0[:, self.expand_map]

    @property
    def d_beta0(self):
        return self.X_y0.shape[1]

    @property
    def d_beta1(self):
        return self.X_y1.shape[1]

    @property
    def d_beta(self):
        return self.d_beta0 + self.d_beta1

    @property
    def d_delta(self):
        return self.X_m.shape[1]

    @property
    def d_theta(self):
        return self.d_beta + self.d_delta

    @property
    def beta_labels(self):
        return self.info.y_labels

    @property
    def delta_labels(self):
        return self.info.m_labels

    @property
    def theta_labels(self):
        return tuple(f"y:{l}" for l in self.beta_labels) + \
            tuple(f"m:{l}" for l in self.delta_labels)


def _variable_columns(name, value, info_cat):
    """Columns and labels for one variable. ``value`` is a 1-d array."""
    if name in info_cat:
        levels = info_cat[name]
        cols = [(np.asarray(value == lev, dtype=float), f"{name}[{lev}]")
                for lev in levels[1:]]
        return cols
    return [(np.asarray(value, dtype=float), name)]


def _term_columns(term, env, info_cat):
    """Columns for a main effect or pairwise interaction term."""
    first = _variable_columns(term[0], env(term[0]), info_cat)
    if len(term) == 1:
        return first
    second = _variable_columns(term[1], env(term[1]), info_cat)
    return [(c1 * c2, f"{l1}:{l2}") for c1, l1 in first for c2, l2 in second]


def _base_columns(n, stratum, n_strata, stratum_labels):
    cols = [(np.ones(n), INTERCEPT)]
    for b in range(2, n_strata + 1):
        lab = stratum_labels[b - 1] if stratum_labels else str(b)
        cols.append((np.asarray(stratum == b, dtype=float), f"stratum[{lab}]"))
    return cols


def build_design(data, formula):
    """Build the partitioned designs for a dataset under a formula.

    Both designs start with an intercept column and the N_b - 1 stratum
    indicators, followed by term columns in formula order. Outcome-model
    columns involving the mediator are moved to the trailing X_y1 block,
    each one recorded as mediator times some X_y0 column.
    """
    med = formula.mediator
    info_cat = dict(data.categorical)
    used = set()
    for term in formula.outcome_terms + formula.mediator_terms:
        for v in term:
            if v == med:
                continue
            if v not in data.covariates:
                raise DataError(f"formula references unknown column '{v}'")
            used.add(v)

    def env(name):
        if name == med:
            return data.m
        return data.covariates[name]

    base = _base_columns(data.n, data.stratum, data.n_strata,
                         data.stratum_labels)

    # outcome design: mediator-free columns first, mediator columns last
    y0_cols = list(base)
    y1_specs = []  # (factor label in y0, y1 label)
    for term in formula.outcome_terms:
        if med not in term:
            y0_cols.extend(_term_columns(term, env, info_cat))
            continue
        if len(term) == 1:
            y1_specs.append((INTERCEPT, med))
        else:
            other = term[0] if term[1] == med else term[1]
            for _, lab in _variable_columns(other, env(other), info_cat):
                y1_specs.append((lab, f"{med}:{lab}"))

    y0_labels = [lab for _, lab in y0_cols]
    expand_map = []
    y1_labels = []
    for factor_lab, lab in y1_specs:
        if factor_lab not in y0_labels:
            raise FormulaError(
                f"mediator interaction needs '{factor_lab}' among the "
                "mediator-free outcome columns (hierarchical model)")
        expand_map.append(y0_labels.index(factor_lab))
        y1_labels.append(lab)
    if len(set(expand_map)) != len(expand_map):
        raise FormulaError("duplicate mediator-involving columns")

    X_y0 = np.column_stack([c for c, _ in y0_cols])
    m_col = data.m.astype(float)
    if expand_map:
        X_y1 = X_y0[:, expand_map] * m_col[:, None]
    else:
        X_y1 = np.empty((data.n, 0))

    m_cols = list(base)
    for term in formula.mediator_terms:
        m_cols.extend(_term_columns(term, env, info_cat))
    X_m = np.column_stack([c for c, _ in m_cols])

    info = DesignInfo(
        mediator=med,
        n_strata=data.n_strata,
        categorical={k: tuple(v) for k, v in info_cat.items() if k in used},
        numeric=tuple(sorted(v for v in used if v not in info_cat)),
        outcome_terms=formula.outcome_terms,
        mediator_terms=formula.mediator_terms,
        y0_labels=tuple(y0_labels),
        y1_labels=tuple(y1_labels),
        m_labels=tuple(lab for _, lab in m_cols),
    )
    return DesignPartition(X_y0=X_y0, X_y1=X_y1, X_m=X_m,
                           expand_map=np.asarray(expand_map, dtype=int),
                           info=info)


def design_row(info, assignments=None, mediator=0.0, stratum=1):
    """Single design row from variable assignments, without a dataset.

    Unassigned categorical variables sit at their reference level and
    unassigned numeric variables at zero. Returns (x_y0, x_m); the full
    outcome row is x_y0 followed by mediator * x_y0[expand_map].
    """
    assignments = assignments or {}
    for name in assignments:
        if name not in info.categorical and name not in info.numeric \
                and name != info.mediator:
            raise DataError(f"unknown variable '{name}' in covariate pattern")

    def env(name):
        if name == info.mediator:
            return np.array([float(mediator)])
        if name in info.categorical:
            levels = info.categorical[name]
            val = str(assignments.get(name, levels[0]))
            if val not in levels:
                raise DataError(f"unknown level '{val}' for '{name}'")
            return np.array([val], dtype=object)
        return np.array([float(assignments.get(name, 0.0))])

    n_strata = info.n_strata
    base = _base_columns(1, np.array([int(stratum)]), n_strata, ())
    y0 = list(base)
    for term in info.outcome_terms:
        if info.mediator not in term:
            y0.extend(_term_columns(term, env, info.categorical))
    x_y0 = np.array([c[0] for c, _ in y0])

    m_cols = list(base)
    for term in info.mediator_terms:
        m_cols.extend(_term_columns(term, env, info.categorical))
    x_m = np.array([c[0] for c, _ in m_cols])
    return x_y0, x_m


def expand_beta(beta1, part):
    """Zero-expand the mediator-block coefficients to the X_y0 dimension."""
    beta1 = np.asarray(beta1, dtype=float)
    if beta1.shape != (part.d_beta1,):
        raise ValueError(
            f"expected length {part.d_beta1}, got {beta1.shape}")
    out = np.zeros(part.d_beta0)
    out[part.expand_map] = beta1
    return out
