from __future__ import annotations

from typing import List, Tuple

import numpy as np
import pandas as pd
import pandera as pa

from nvsim.errors import DataValidationError

# Fit input: two numeric columns. Named x,y when the file has a header, else the first two.
FIT_COLUMNS = ["x", "y"]


def _finite(s: pd.Series) -> pd.Series:
    return pd.Series(np.isfinite(s.to_numpy(dtype=float)), index=s.index)


def fit_schema(min_rows: int) -> pa.DataFrameSchema:
    return pa.DataFrameSchema(
        {
            "x": pa.Column(float, checks=pa.Check(_finite, error="x must be finite"), nullable=False, coerce=True),
            "y": pa.Column(float, checks=pa.Check(_finite, error="y must be finite"), nullable=False, coerce=True),
        },
        checks=[
            pa.Check(lambda df: len(df) >= min_rows, error=f"need at least {min_rows} rows"),
            pa.Check(lambda df: bool(df["x"].diff().dropna().gt(0).all()), error="x must be strictly increasing"),
        ],
        strict=False,
    )


def _select_columns(raw: pd.DataFrame) -> pd.DataFrame:
    cols = {str(c).strip().lower(): c for c in raw.columns}
    if all(c in cols for c in FIT_COLUMNS):
        return pd.DataFrame({"x": raw[cols["x"]], "y": raw[cols["y"]]})
    if raw.shape[1] < 2:
        raise DataValidationError(f"fit data needs two columns (x, y), found {raw.shape[1]}")
    return pd.DataFrame({"x": raw.iloc[:, 0], "y": raw.iloc[:, 1]})


def validate_frame(raw: pd.DataFrame, min_rows: int) -> Tuple[bool, List[str], pd.DataFrame]:
    """
    Validate + normalize a fit table.
    Returns (is_valid, errors, normalized) where normalized has float columns x, y.
    """
    try:
        df = _select_columns(raw)
    except DataValidationError as e:
        return False, [str(e)], raw
    try:
        out = fit_schema(min_rows).validate(df, lazy=True)
    except pa.errors.SchemaErrors as e:
        cases = e.failure_cases
        errors = []
        for (column, check), _ in cases.groupby(["column", "check"], dropna=False, sort=False):
            where = "table" if column is None or (isinstance(column, float) and np.isnan(column)) else column
            errors.append(f"{where}: {check}")
        return False, errors, df
    return True, [], out.reset_index(drop=True)


def _looks_numeric(values: List[object]) -> bool:
    try:
        [float(v) for v in values]
        return True
    except (TypeError, ValueError):
        return False


def read_table(path: str) -> pd.DataFrame:
    """CSV / whitespace table, '#' comments, optional header row."""
    try:
        raw = pd.read_csv(path, sep=None, engine="python", comment="#", header=None, skip_blank_lines=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataValidationError(f"cannot read fit data {path!r}: {e}") from e
    if len(raw) and not _looks_numeric(list(raw.iloc[0])):
        raw.columns = [str(c).strip() for c in raw.iloc[0]]
        raw = raw.iloc[1:].reset_index(drop=True)
    return raw


def load_fit_data(path: str, min_rows: int) -> Tuple[np.ndarray, np.ndarray]:
    ok, errors, df = validate_frame(read_table(path), min_rows)
    if not ok:
        raise DataValidationError(f"{path}: " + "; ".join(errors))
    return df["x"].to_numpy(dtype=float), df["y"].to_numpy(dtype=float)
