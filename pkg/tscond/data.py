"""Loading, splitting and windowing of multichannel time series.

All matrices are ``T x C`` float64 numpy arrays: rows are time steps and
columns are channels. Containers are immutable once built; their arrays are
flagged read-only.
"""
from dataclasses import dataclass
import enum
import logging
import math
from pathlib import Path
import re
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import (
    ConstantChannel,
    EmptyFile,
    MalformedFile,
    MissingColumn,
    ParseError,
    SeriesTooShort,
    SplitTooShort,
    TrainTooShort,
)
from .utils import PathLike, write_csv

logger = logging.getLogger(__name__)

#: Synthetic lengths per dataset family for the one-shot, standard and
#: three-times-standard condensation settings.
DISTILLED_LENGTHS: Dict[str, Dict[str, int]] = {
    "one_shot": {
        "ettm": 48,
        "etth": 48,
        "exchange_rate": 48,
        "weather": 48,
        "electricity": 48,
        "traffic": 48,
    },
    "standard": {
        "ettm": 115,
        "etth": 57,
        "exchange_rate": 75,
        "weather": 105,
        "electricity": 78,
        "traffic": 70,
    },
    "standard_x3": {
        "ettm": 345,
        "etth": 172,
        "exchange_rate": 227,
        "weather": 316,
        "electricity": 236,
        "traffic": 210,
    },
}


def _freeze(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _parse_float(cell) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        return math.nan


# Elementwise over an object array of cells; unparsable cells become NaN.
_to_float = np.frompyfunc(_parse_float, 1, 1)


def _as_matrix(series) -> np.ndarray:
    values = getattr(series, "values", series)
    return np.asarray(values, dtype=np.float64)


@dataclass(frozen=True)
class WindowSpec:
    """Lookback/horizon geometry of a forecasting pair."""

    #: Number of input time steps (m).
    lookback: int = 24

    #: Number of predicted time steps (n).
    horizon: int = 24

    #: Distance between consecutive window starts.
    stride: int = 1

    def __post_init__(self):
        for name in ("lookback", "horizon", "stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def span(self) -> int:
        return self.lookback + self.horizon

    def with_stride(self, stride: int) -> "WindowSpec":
        return WindowSpec(self.lookback, self.horizon, stride)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """A raw or normalized ``T x C`` series."""

    values: np.ndarray
    channel_names: Tuple[str, ...]
    source_id: str = ""

    def __post_init__(self):
        values = _freeze(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"time series must be a non-empty T x C matrix, got {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("time series contains NaN or Inf values")
        names = tuple(str(c) for c in self.channel_names)
        if len(names) != values.shape[1]:
            raise ValueError(f"{len(names)} channel names for {values.shape[1]} channels")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", names)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.length


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Chronological train/test split normalized with train statistics."""

    train: TimeSeries
    test: TimeSeries
    channel_mean: np.ndarray
    channel_std: np.ndarray
    split_ratio: float

    def __post_init__(self):
        object.__setattr__(self, "channel_mean", _freeze(self.channel_mean))
        object.__setattr__(self, "channel_std", _freeze(self.channel_std))


class Origin(enum.Enum):
    RANDOM_SEGMENT = "random_segment"
    DISTILLED = "distilled"


@dataclass(frozen=True, eq=False)
class SyntheticSeries:
    """The learnable ``L x C`` series s."""

    values: np.ndarray
    origin: Origin = Origin.DISTILLED
    seed: int = 0

    def __post_init__(self):
        values = _freeze(self.values)
        if values.ndim != 2:
            raise ValueError(f"synthetic series must be L x C, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("synthetic series contains NaN or Inf values")
        object.__setattr__(self, "values", values)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def replace(self, values, origin: Optional[Origin] = None) -> "SyntheticSeries":
        return SyntheticSeries(values, origin or self.origin, self.seed)


class Window(NamedTuple):
    input: np.ndarray
    target: np.ndarray
    start: int


def load_csv(
    path: PathLike,
    has_header: bool = True,
    date_column: Optional[Union[str, int]] = None,
) -> TimeSeries:
    """Read a comma separated file into a :class:`TimeSeries`.

    :param path: the csv file
    :param has_header: if the first line holds channel names
    :param date_column: name (or position without header) of a column to drop

    Rows in :class:`ParseError` are counted from 1 over data rows, so the
    header line is not counted.

    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such data file: {path}")

    try:
        df = pd.read_csv(
            path,
            header=0 if has_header else None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"{path} is empty")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise MalformedFile(f"{path}: {e}")

    if df.empty:
        raise EmptyFile(f"{path} holds no data rows")

    if not has_header:
        df.columns = [f"ch{i}" for i in range(df.shape[1])]
        if isinstance(date_column, int):
            date_column = f"ch{date_column}"
    if date_column is not None:
        if str(date_column) not in df.columns:
            raise MissingColumn(str(date_column), str(path))
        df = df.drop(columns=[str(date_column)])

    if df.shape[1] == 0:
        raise EmptyFile(f"{path} holds no channel columns")

    values = _to_float(df.to_numpy(dtype=object)).astype(np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ParseError(int(row) + 1, str(df.columns[col]), df.iat[row, col])

    logger.debug("loaded %s: %d rows x %d channels", path, *values.shape)
    return TimeSeries(values, tuple(str(c) for c in df.columns), path.stem)


def split_normalize(
    ts: TimeSeries,
    ratio: float = 0.7,
    spec: Optional[WindowSpec] = None,
    strict: bool = False,
) -> SplitDataset:
    """Split chronologically and z-score both parts with train statistics.

    The standard deviation is the population one. A constant train channel
    gets std 1 (with a warning) unless `strict` is set.

    """
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    spec = spec or WindowSpec()

    n_train = int(math.floor(ratio * ts.length))
    n_test = ts.length - n_train
    if n_train < spec.span or n_test < spec.span:
        raise SplitTooShort(
            f"split of {ts.length} rows at {ratio} gives train={n_train}, test={n_test}; "
            f"each needs at least {spec.span}"
        )

    train = ts.values[:n_train]
    test = ts.values[n_train:]
    mean = train.mean(axis=0)
    std = train.std(axis=0)

    # Range, not std: the std of a constant column can round to a tiny non-zero value.
    for c in np.flatnonzero(np.ptp(train, axis=0) == 0):
        name = ts.channel_names[c]
        if strict:
            raise ConstantChannel(name)
        logger.warning("channel %r is constant on the train split, using std=1", name)
        mean[c] = train[0, c]
        std[c] = 1.0

    logger.info("split %s: train=%d test=%d rows", ts.source_id or "<series>", n_train, n_test)
    return SplitDataset(
        train=TimeSeries((train - mean) / std, ts.channel_names, ts.source_id),
        test=TimeSeries((test - mean) / std, ts.channel_names, ts.source_id),
        channel_mean=mean,
        channel_std=std,
        split_ratio=ratio,
    )


def denormalize(split: SplitDataset, values) -> np.ndarray:
    """Map normalized values back to the raw scale of `split`."""
    return _as_matrix(values) * split.channel_std + split.channel_mean


def window_starts(length: int, spec: WindowSpec) -> List[int]:
    """Start indices ``0, stride, 2*stride, ...`` plus the anchored tail start."""
    if length < spec.span:
        raise SeriesTooShort(f"series of length {length} is shorter than {spec.span}")

    last = length - spec.span
    starts = list(range(0, last + 1, spec.stride))
    if starts[-1] != last:
        starts.append(last)
    return starts


def windows(series, spec: WindowSpec) -> List[Window]:
    """All ``(input, target, start)`` pairs of a series."""
    values = _as_matrix(series)
    m = spec.lookback
    return [
        Window(values[t : t + m], values[t + m : t + spec.span], t)
        for t in window_starts(values.shape[0], spec)
    ]


def window_arrays(series, spec: WindowSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked window inputs ``(W, m, C)`` and targets ``(W, n, C)``."""
    pairs = windows(series, spec)
    return (
        np.stack([w.input for w in pairs]),
        np.stack([w.target for w in pairs]),
    )


def sample_init_synthetic(train: TimeSeries, length: int, rng_seed: int) -> SyntheticSeries:
    """A uniformly drawn contiguous segment of the train series."""
    values = _as_matrix(train)
    if length < 1 or values.shape[0] < length:
        raise TrainTooShort(
            f"cannot take a segment of length {length} from {values.shape[0]} train rows"
        )

    rng = np.random.default_rng(rng_seed)
    start = int(rng.integers(0, values.shape[0] - length + 1))
    logger.debug("synthetic init: train rows %d..%d", start, start + length - 1)
    return SyntheticSeries(values[start : start + length], Origin.RANDOM_SEGMENT, rng_seed)


def save_synthetic_csv(s: SyntheticSeries, path: PathLike, channel_names: Sequence[str] = ()):
    """Write ``t,<channel names>`` rows with 17 significant digits."""
    names = list(channel_names) or [f"ch{i}" for i in range(s.values.shape[1])]
    if len(names) != s.values.shape[1]:
        raise ValueError(f"{len(names)} channel names for {s.values.shape[1]} channels")
    write_csv(
        path,
        ["t", *names],
        ([t, *(float(v) for v in row)] for t, row in enumerate(s.values)),
    )


def load_synthetic_csv(
    path: PathLike, origin: Origin = Origin.DISTILLED, seed: int = 0
) -> Tuple[SyntheticSeries, Tuple[str, ...]]:
    """Read a file written by :func:`save_synthetic_csv`."""
    ts = load_csv(path, has_header=True, date_column="t")
    return SyntheticSeries(ts.values, origin, seed), ts.channel_names


def _dataset_family(dataset: str) -> str:
    key = re.sub(r"[^a-z0-9]", "", dataset.lower())
    if key.startswith("ettm"):
        return "ettm"
    if key.startswith("etth"):
        return "etth"
    if key.startswith("exchange"):
        return "exchange_rate"
    for family in ("weather", "electricity", "traffic"):
        if key.startswith(family):
            return family
    raise ValueError(f"no distilled length known for dataset {dataset!r}")


def distilled_length(dataset: str, preset: str = "one_shot") -> int:
    """Synthetic length for a dataset under a condensation preset."""
    if preset not in DISTILLED_LENGTHS:
        raise ValueError(f"unknown preset {preset!r}, use one of {sorted(DISTILLED_LENGTHS)}")
    return DISTILLED_LENGTHS[preset][_dataset_family(dataset)]


def condensing_ratio(synthetic_length: int, train_length: int) -> float:
    return synthetic_length / train_length
