"""Crossover-design data model: validated long-format frames, carry-over
indicator construction and design-matrix encoding.

A DesignFrame wraps a pandas DataFrame sorted by (unit, period, time) plus
the role mapping that says which column plays which part.  All downstream
modules consume clusters through ``cluster_index`` (contiguous row blocks
per unit).
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple
import warnings

import numpy as np
import pandas as pd
from scipy import linalg as sla

from .errors import DataValidationError, SpecificationError

__all__ = [
    "DesignFrame",
    "CarrySet",
    "load_design",
    "create_carry",
    "encode_design_matrix",
    "cluster_index",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DesignFrame:
    """Long-format crossover observations with role metadata.

    Rows are grouped contiguously by unit and ordered by (period, time)
    within each unit; every (unit, period) pair carries a single treatment;
    period labels per unit form a prefix 1..P_i.
    """

    data: pd.DataFrame
    unit_col: str
    period_col: str
    treatment_col: str
    response_col: Optional[str] = None
    time_col: Optional[str] = None
    covariate_cols: Tuple[str, ...] = ()

    @property
    def n_rows(self) -> int:
        return len(self.data)

    @property
    def n_units(self) -> int:
        return self.data[self.unit_col].nunique()

    @property
    def n_periods(self) -> int:
        return int(self.data[self.period_col].max())

    @property
    def treatments(self) -> Tuple:
        return tuple(sorted(self.data[self.treatment_col].unique(), key=str))

    def counts(self) -> dict:
        return {"rows": self.n_rows, "units": self.n_units,
                "periods": self.n_periods}

    def response(self) -> np.ndarray:
        if self.response_col is None:
            raise SpecificationError("no response column was mapped")
        return self.data[self.response_col].to_numpy(float)


@dataclass(frozen=True)
class CarrySet:
    """A DesignFrame augmented with 0/1 carry-over indicator columns."""

    frame: DesignFrame
    carry_names: Tuple[str, ...]
    mode: str = "simple"

    @property
    def data(self) -> pd.DataFrame:
        return self.frame.data

    @property
    def n_rows(self) -> int:
        return self.frame.n_rows

    def response(self) -> np.ndarray:
        return self.frame.response()


def _sorted_and_validated(df: pd.DataFrame, unit: str, period: str,
                          treatment: str, response: str,
                          time: Optional[str]) -> pd.DataFrame:
    if df.empty:
        raise DataValidationError("input table has no rows")

    for col, label in ((response, "response"), (time, "time")):
        if col is None:
            continue
        if pd.api.types.is_numeric_dtype(df[col]):
            if df[col].isna().any():
                raise DataValidationError(
                    f"missing {label} value in column {col!r}")
            continue
        values = pd.to_numeric(df[col], errors="coerce")
        if values.isna().any():
            bad = df.loc[values.isna(), col].iloc[0]
            raise DataValidationError(
                f"non-numeric {label} value {bad!r} in column {col!r}")
        df[col] = values.astype(float)

    periods = pd.to_numeric(df[period], errors="coerce")
    if periods.isna().any() or (periods != periods.round()).any():
        raise DataValidationError(f"period column {period!r} must hold integers")
    df[period] = periods.astype(int)
    if df[period].min() < 1:
        raise DataValidationError("period labels must start at 1")

    sort_cols = [unit, period] + ([time] if time else [])
    if not df[sort_cols].equals(df[sort_cols].sort_values(sort_cols, kind="stable")
                                .reset_index(drop=True)):
        log.info("input rows were not sorted by (unit, period%s); re-sorting",
                 ", time" if time else "")
    df = df.sort_values(sort_cols, kind="stable").reset_index(drop=True)

    if time:
        key_cols = [unit, period, time]
        dup = df.duplicated(key_cols)
        if dup.any():
            row = df.loc[dup, key_cols].iloc[0].tolist()
            raise DataValidationError(
                f"duplicate observation for {key_cols} = {row}")

    per_pair = df.groupby([unit, period], sort=False)[treatment].nunique()
    if (per_pair > 1).any():
        bad = per_pair[per_pair > 1].index[0]
        raise DataValidationError(
            f"treatment varies within unit {bad[0]!r}, period {bad[1]}")

    for u, sub in df.groupby(unit, sort=False):
        labels = np.sort(sub[period].unique())
        if labels[0] != 1 or np.any(np.diff(labels) != 1):
            raise DataValidationError(
                f"unit {u!r} has period labels {labels.tolist()}; "
                "expected a contiguous prefix 1..P")
    return df


def load_design(path, schema: dict) -> DesignFrame:
    """Read a delimited table and return a validated, sorted DesignFrame.

    ``schema`` maps roles to column names: required keys unit/period/
    treatment, optional response, time and covariates (list).  A response
    is only needed for fitting, not for carry-over construction.
    """
    required = ("unit", "period", "treatment")
    missing_roles = [k for k in required if not schema.get(k)]
    if missing_roles:
        raise SpecificationError(f"schema is missing roles: {missing_roles}")

    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"input file {path} is empty") from None

    time = schema.get("time")
    response = schema.get("response")
    covariates = tuple(schema.get("covariates") or ())
    needed = ([schema[k] for k in required]
              + [c for c in (response, time) if c] + list(covariates))
    absent = [c for c in needed if c not in df.columns]
    if absent:
        raise DataValidationError(
            f"missing columns {absent}; file has {list(df.columns)}")

    df = _sorted_and_validated(df.copy(), schema["unit"], schema["period"],
                               schema["treatment"], response, time)
    frame = DesignFrame(
        data=df,
        unit_col=schema["unit"],
        period_col=schema["period"],
        treatment_col=schema["treatment"],
        response_col=response,
        time_col=time,
        covariate_cols=covariates,
    )
    c = frame.counts()
    log.info("loaded %d rows, %d units, %d periods from %s",
             c["rows"], c["units"], c["periods"], path)
    return frame


def _carry_columns(frame: DesignFrame, mode: str) -> pd.DataFrame:
    df = frame.data
    unit, period, treat = frame.unit_col, frame.period_col, frame.treatment_col

    prev_map = {}
    for (u, p), sub in df.groupby([unit, period], sort=False):
        prev_map[(u, p + 1)] = sub[treat].iloc[0]
    prev = pd.Series(
        [prev_map.get((u, p)) for u, p in zip(df[unit], df[period])],
        index=df.index, dtype=object)

    treatments = [str(t) for t in frame.treatments]
    cur = df[treat].astype(str)
    prev_str = prev.astype(object).map(lambda v: None if v is None else str(v))

    cols = {}
    if mode == "simple":
        reference = treatments[0]
        for t in treatments:
            if t == reference:
                continue
            cols[f"Carry_{t}"] = (prev_str == t).astype(int)
    else:
        for s in treatments:
            for t in treatments:
                if s == t:
                    continue
                name = f"Carry_{s}_over_{t}"
                col = ((prev_str == s) & (cur == t)).astype(int)
                if col.sum() == 0:
                    warnings.warn(
                        f"complex carry column {name} never occurs; dropped",
                        UserWarning, stacklevel=3)
                    continue
                cols[name] = col
    return pd.DataFrame(cols, index=df.index)


def create_carry(frame: DesignFrame, mode: str = "simple") -> CarrySet:
    """Add first-order carry-over indicator columns to the frame.

    Simple mode adds one 0/1 column per non-reference treatment (reference =
    lexicographically first label), set when that treatment was applied in
    the immediately preceding period.  Complex mode adds one column per
    ordered pair of distinct treatments (previous, current); pairs that
    never occur are dropped with a warning.  Indicators are all zero in
    period 1.
    """
    if isinstance(frame, CarrySet):
        frame = frame.frame
    if mode not in ("simple", "complex"):
        raise SpecificationError(f"carry mode must be simple or complex, got {mode!r}")
    if frame.n_periods < 2:
        raise DataValidationError(
            "carry-over indicators need at least two periods")

    cols = _carry_columns(frame, mode)
    names = tuple(sorted(cols.columns))
    data = frame.data.copy()
    for name in names:
        data[name] = cols[name].to_numpy()
    return CarrySet(frame=replace(frame, data=data), carry_names=names, mode=mode)


def cluster_index(frame) -> Tuple[np.ndarray, np.ndarray]:
    """Row offsets and sizes of the contiguous unit blocks."""
    df = frame.data if hasattr(frame, "data") else frame
    unit_col = frame.unit_col if hasattr(frame, "unit_col") else frame.frame.unit_col
    codes = pd.factorize(df[unit_col])[0]
    change = np.flatnonzero(np.diff(codes) != 0) + 1
    starts = np.concatenate(([0], change)).astype(np.int64)
    counts = np.diff(np.concatenate((starts, [len(df)]))).astype(np.int64)
    return starts, counts


def _expand_term(df: pd.DataFrame, term: str, categorical: set) -> Tuple[list, list]:
    """Columns and names a single term contributes to the design matrix."""
    series = df[term]
    is_cat = term in categorical or not pd.api.types.is_numeric_dtype(series)
    if not is_cat:
        return [series.to_numpy(float)], [term]
    levels = sorted(series.unique(), key=str)
    cols, names = [], []
    for level in levels[1:]:
        cols.append((series == level).to_numpy(float))
        names.append(f"{term}{level}")
    return cols, names


def _rank_check(X: np.ndarray, names: Sequence[str]) -> None:
    q, r, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        offending = [names[i] for i in sorted(piv[rank:])]
        raise SpecificationError(
            f"design matrix is rank deficient; dependent columns: {offending}")


def encode_design_matrix(frame, terms=None,
                         covariates: Sequence[str] = ()) -> Tuple[np.ndarray, list]:
    """Build the model matrix and coefficient names.

    Default terms are period + treatment + carry indicators + covariates,
    in that order after the intercept.  Categorical terms are dummy coded
    against the lexicographically first level.  ``terms`` may override with
    an explicit list of column names (order preserved).
    """
    if isinstance(frame, CarrySet):
        base, carry = frame.frame, list(frame.carry_names)
    else:
        base, carry = frame, []
    df = base.data
    categorical = {base.period_col, base.treatment_col}

    if terms is None:
        terms = [base.period_col, base.treatment_col] + carry + list(covariates)
    unknown = [t for t in terms if t not in df.columns]
    if unknown:
        raise SpecificationError(f"unknown model terms: {unknown}")

    cols = [np.ones(len(df))]
    names = ["(Intercept)"]
    for term in terms:
        c, n = _expand_term(df, term, categorical)
        cols.extend(c)
        names.extend(n)

    X = np.ascontiguousarray(np.column_stack(cols), dtype=float)
    _rank_check(X, names)
    return X, names
