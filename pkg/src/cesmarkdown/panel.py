"""Panel table schema, validation and lag bookkeeping.

Estimators work on a wide ``pandas.DataFrame`` with one row per plant-year.
Columns whose names start with ``z_`` are treated as extra instruments.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np
import pandas as pd

from .core import PanelObservation
from .errors import ValidationError

ID_COLUMNS = ("plant_id", "year", "market_id")
POSITIVE_COLUMNS = ("Q_obs", "P", "K", "M", "P_M", "H", "W_H", "C", "W_C", "D", "W_D")
REQUIRED_COLUMNS = ID_COLUMNS + POSITIVE_COLUMNS + ("IDA", "Imp_lag")
OPTIONAL_COLUMNS = ("strike_intensity", "outside_mandays_C", "outside_mandays_D")
INSTRUMENT_PREFIX = "z_"


def instrument_columns(frame: pd.DataFrame) -> list[str]:
    return [c for c in frame.columns if str(c).startswith(INSTRUMENT_PREFIX)]


def validate_panel(frame: pd.DataFrame, *, row_offset: int = 2) -> pd.DataFrame:
    """Check the schema and content of a panel table and return a sorted copy.

    Parameters
    ----------
    frame : DataFrame
        Raw table.
    row_offset : int
        Added to the positional row index in diagnostics.  The default maps
        row 0 to line 2 of a CSV file with a header.

    Raises
    ------
    ValidationError
        Missing column, non-numeric cell, non-positive quantity, invalid
        ``Imp_lag`` or duplicate (plant_id, year).
    """
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"missing required column(s): {', '.join(missing)}")
    frame = frame.reset_index(drop=True).copy()
    numeric = [c for c in POSITIVE_COLUMNS + ("IDA", "Imp_lag", "year")
               + tuple(c for c in OPTIONAL_COLUMNS if c in frame.columns)
               + tuple(instrument_columns(frame))]
    for col in numeric:
        converted = pd.to_numeric(frame[col], errors="coerce")
        bad = converted.isna() & frame[col].notna()
        if col in POSITIVE_COLUMNS or col in ("IDA", "Imp_lag", "year"):
            bad |= converted.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ValidationError(f"non-numeric or empty value in column '{col}' at line {row + row_offset}: "
                                  f"{frame[col].iloc[row]!r}")
        frame[col] = converted.astype(float)
    for col in POSITIVE_COLUMNS:
        bad = ~(frame[col].to_numpy() > 0) | ~np.isfinite(frame[col].to_numpy())
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"non-positive value in column '{col}' at line {row + row_offset}: "
                                  f"{frame[col].iloc[row]!r}")
    imp = frame["Imp_lag"].to_numpy()
    bad = ~np.isin(imp, (0.0, 1.0))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"Imp_lag must be 0 or 1 at line {row + row_offset}")
    if "strike_intensity" in frame.columns:
        s = frame["strike_intensity"].to_numpy()
        bad = s < 0
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"negative strike_intensity at line {row + row_offset}")
    years = frame["year"].to_numpy()
    if np.any(years != np.round(years)):
        raise ValidationError("year must be integer valued")
    frame["year"] = frame["year"].astype(np.int64)
    frame["Imp_lag"] = frame["Imp_lag"].astype(np.int64)
    dup = frame.duplicated(subset=["plant_id", "year"], keep="first")
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise ValidationError(f"duplicate (plant_id, year) = ({frame['plant_id'].iloc[row]!r}, "
                              f"{int(frame['year'].iloc[row])}) at line {row + row_offset}")
    return sort_panel(frame)


def sort_panel(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.sort_values(["plant_id", "year"], kind="mergesort").reset_index(drop=True)


def lag_index(frame: pd.DataFrame) -> np.ndarray:
    """Row position of the same plant's previous-year observation, or -1.

    The frame must be sorted by ``(plant_id, year)``.
    """
    plant = frame["plant_id"].to_numpy()
    year = frame["year"].to_numpy()
    idx = np.full(len(frame), -1, dtype=np.int64)
    if len(frame) > 1:
        same = (plant[1:] == plant[:-1]) & (year[1:] - year[:-1] == 1)
        idx[1:][same] = np.arange(len(frame) - 1)[same]
    return idx


def lagged(values, lag_idx: np.ndarray) -> np.ndarray:
    """Previous-year values aligned with rows; NaN where no lag exists."""
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    ok = lag_idx >= 0
    out[ok] = values[lag_idx[ok]]
    return out


def frame_from_observations(observations: Iterable[PanelObservation]) -> pd.DataFrame:
    rows = []
    for obs in observations:
        row = {k: getattr(obs, k) for k in REQUIRED_COLUMNS + OPTIONAL_COLUMNS}
        row.update(obs.extra_instruments)
        rows.append(row)
    return validate_panel(pd.DataFrame(rows))


def observations_from_frame(frame: pd.DataFrame) -> list[PanelObservation]:
    extra = instrument_columns(frame)
    out = []
    for rec in frame.to_dict("records"):
        kwargs = {k: rec[k] for k in REQUIRED_COLUMNS}
        kwargs["year"] = int(kwargs["year"])
        kwargs["Imp_lag"] = int(kwargs["Imp_lag"])
        for k in OPTIONAL_COLUMNS:
            if k in rec:
                kwargs[k] = float(rec[k])
        kwargs["extra_instruments"] = {k: float(rec[k]) for k in extra}
        out.append(PanelObservation(**kwargs))
    return out


def as_frame(panel) -> pd.DataFrame:
    """Accept either a DataFrame or a sequence of observations."""
    if isinstance(panel, pd.DataFrame):
        return panel
    return frame_from_observations(panel)
