"""
Dataset ingestion and the trimming set.

A Dataset holds one outcome ``y``, one scalar treatment ``x``, one or more
instruments/covariates ``z*`` and one or more proxies ``w*``. Column roles are
recognised by case-insensitive name prefix.
"""
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from config import Config
from ..utils.errors import ConfigError, EmptyAfterFiltering, EmptyTrim, MissingColumn, UnparsableCell

logger = logging.getLogger(__name__)

DISCRETE_LEVELS_MAX = 20


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray
    z_names: tuple[str, ...]
    w_names: tuple[str, ...]
    x_discrete: bool = False
    dropped_rows: int = 0

    def __post_init__(self):
        n = self.y.shape[0]
        for name in ("x", "z", "w"):
            if getattr(self, name).shape[0] != n:
                raise ConfigError(f"column block {name!r} has {getattr(self, name).shape[0]} rows, y has {n}")
        if self.z.shape[1] != len(self.z_names) or self.w.shape[1] != len(self.w_names):
            raise ConfigError("column names do not match the column blocks")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    def columns(self, x_override=None) -> dict[str, np.ndarray]:
        """Named columns for basis-term evaluation (``x`` optionally replaced by a constant)."""
        x = self.x if x_override is None else np.full(self.n, float(x_override))
        cols = {"x": x, "y": self.y}
        cols.update({name: self.z[:, k] for k, name in enumerate(self.z_names)})
        cols.update({name: self.w[:, k] for k, name in enumerate(self.w_names)})
        return cols

    def proxy(self, name: str | None = None) -> np.ndarray:
        if name is None:
            return self.w[:, 0]
        try:
            return self.w[:, self.w_names.index(name.lower())]
        except ValueError as exc:
            raise MissingColumn(name) from exc

    def levels(self) -> np.ndarray:
        return np.unique(self.x)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            y=self.y[rows], x=self.x[rows], z=self.z[rows], w=self.w[rows],
            z_names=self.z_names, w_names=self.w_names, x_discrete=self.x_discrete,
        )

    def with_outcome(self, y) -> "Dataset":
        return Dataset(
            y=np.asarray(y, dtype=float), x=self.x, z=self.z, w=self.w,
            z_names=self.z_names, w_names=self.w_names, x_discrete=self.x_discrete,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"y": self.y, "x": self.x})
        for k, name in enumerate(self.z_names):
            frame[name] = self.z[:, k]
        for k, name in enumerate(self.w_names):
            frame[name] = self.w[:, k]
        return frame


def _role_columns(names, prefix):
    return [c for c in names if c.lower().startswith(prefix)]


def dataset_from_columns(columns: Mapping[str, object], x_discrete: bool | None = None) -> Dataset:
    """Build a Dataset from a mapping of column name to values (CSV frame or JSON body)."""
    frame = pd.DataFrame({str(k): v for k, v in columns.items()})
    return _dataset_from_frame(frame, x_discrete)


def _dataset_from_frame(frame: pd.DataFrame, x_discrete):
    names = list(frame.columns)
    roles = {}
    for role in ("y", "x"):
        found = _role_columns(names, role)
        if not found:
            raise MissingColumn(role)
        roles[role] = [found[0]]
    for role in ("z", "w"):
        found = _role_columns(names, role)
        if not found:
            raise MissingColumn(role)
        roles[role] = found
    required = roles["y"] + roles["x"] + roles["z"] + roles["w"]

    parsed = {}
    for column in required:
        raw = frame[column]
        text = raw.astype(str).str.strip()
        blank = raw.isna() | text.eq("") | text.str.lower().isin(["nan", "na", "null", "none"])
        numeric = pd.to_numeric(raw.where(~blank), errors="coerce")
        bad = numeric.isna() & ~blank
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise UnparsableCell(row=row + 1, column=column, value=raw.iloc[row])
        parsed[column] = numeric.to_numpy(dtype=float)

    block = np.column_stack([parsed[c] for c in required])
    keep = np.all(np.isfinite(block), axis=1)
    dropped = int((~keep).sum())
    if dropped:
        logger.warning("dropped %d rows with missing required fields", dropped)
    if not keep.any():
        raise EmptyAfterFiltering("no complete rows remain after dropping missing values")

    x = parsed[roles["x"][0]][keep]
    if x_discrete is None:
        x_discrete = np.unique(x).size <= DISCRETE_LEVELS_MAX
    return Dataset(
        y=parsed[roles["y"][0]][keep],
        x=x,
        z=np.column_stack([parsed[c][keep] for c in roles["z"]]),
        w=np.column_stack([parsed[c][keep] for c in roles["w"]]),
        z_names=tuple(c.lower() for c in roles["z"]),
        w_names=tuple(c.lower() for c in roles["w"]),
        x_discrete=bool(x_discrete),
        dropped_rows=dropped,
    )


def ingest_csv(path, x_discrete: bool | None = None) -> Dataset:
    """
    Read a CSV with a header row into a Dataset.

    Rows missing any required field are dropped (count kept in
    ``dropped_rows``); X is treated as discrete when it has at most 20
    distinct values unless ``x_discrete`` says otherwise.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as exc:
        raise ConfigError(f"data file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise EmptyAfterFiltering(f"data file {path} is empty") from exc
    logger.info("read %d rows and %d columns from %s", len(frame), frame.shape[1], path)
    return _dataset_from_frame(frame, x_discrete)


def write_csv(data: Dataset, path) -> None:
    data.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class TrimmingSet:
    """
    Conditioning region for the conditional ASF.

    Either a per-column quantile box over (x, z*) or an explicit rectangle
    ``{column: (low, high)}``; columns missing from the rectangle are
    unrestricted.
    """
    quantiles: tuple[float, float] | None = field(default_factory=lambda: tuple(Config.TRIM_QUANTILES))
    box: Mapping[str, tuple[float, float]] | None = None

    def __post_init__(self):
        if self.box is None and self.quantiles is None:
            raise ConfigError("a trimming set needs quantiles or an explicit box")
        if self.box is None:
            lo, hi = self.quantiles
            if not 0.0 <= lo < hi <= 1.0:
                raise ConfigError(f"trimming quantiles must satisfy 0 <= low < high <= 1, got {self.quantiles}")

    @classmethod
    def full(cls) -> "TrimmingSet":
        return cls(quantiles=(0.0, 1.0))

    def bounds(self, data: Dataset) -> dict[str, tuple[float, float]]:
        cols = data.columns()
        if self.box is not None:
            return {name.lower(): (float(lo), float(hi)) for name, (lo, hi) in self.box.items()}
        lo_q, hi_q = self.quantiles
        return {
            name: (float(np.quantile(cols[name], lo_q)), float(np.quantile(cols[name], hi_q)))
            for name in ("x",) + data.z_names
        }

    def indicator(self, data: Dataset) -> np.ndarray:
        cols = data.columns()
        inside = np.ones(data.n, dtype=bool)
        for name, (lo, hi) in self.bounds(data).items():
            if name not in cols:
                raise ConfigError(f"trimming box refers to unknown column {name!r}")
            inside &= (cols[name] >= lo) & (cols[name] <= hi)
        return inside


def trimming_share(indicator: np.ndarray) -> float:
    tau = float(np.mean(indicator))
    if tau <= 0:
        raise EmptyTrim("no observation falls inside the trimming set")
    return tau
