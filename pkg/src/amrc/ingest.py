"""Loading, validation, normalization, splitting and windowing of
multivariate time-series data.

Conventions used throughout the package:

* a series is a float64 matrix of shape (T, D): T timesteps by D channels,
  row 0 is the oldest observation;
* a supervised sample pairs a lookback block x (L, D) with the horizon
  block y (H, D) that immediately follows it;
* normalization is a per-channel z-score fitted on the train rows only and
  applied to every split; all reported metrics live on the normalized scale.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

REGIONS = ("train", "val", "test")


@dataclass
class SeriesDataset:
    """Raw multivariate series with channel metadata.

    values is (T, D) float64 with no missing entries; channel_names has
    length D; timestamps, when present, has length T and is carried along
    untouched (the method itself never reads it).
    """

    values: np.ndarray
    channel_names: list[str]
    timestamps: list[str] | None = None
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {self.values.shape}")
        t, d = self.values.shape
        if t < 1 or d < 1:
            raise ValidationError(f"need at least 1 row and 1 channel, got {t}x{d}")
        if len(self.channel_names) != d:
            raise ValidationError(
                f"{len(self.channel_names)} channel names for {d} channels"
            )
        if self.timestamps is not None and len(self.timestamps) != t:
            raise ValidationError(
                f"{len(self.timestamps)} timestamps for {t} rows"
            )
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ValidationError(
                f"non-finite value at row {bad[0] + 1}, channel "
                f"{self.channel_names[bad[1]]!r}"
            )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    """Row boundaries of the train/val/test regions (end-exclusive)."""

    train_end: int
    val_end: int
    test_end: int

    def __post_init__(self):
        if not (0 < self.train_end <= self.val_end <= self.test_end):
            raise ValidationError(
                f"split boundaries must satisfy 0 < train_end <= val_end <= "
                f"test_end, got ({self.train_end}, {self.val_end}, {self.test_end})"
            )

    def validate_against(self, dataset: SeriesDataset) -> None:
        if self.test_end > dataset.n_rows:
            raise ValidationError(
                f"test_end {self.test_end} exceeds dataset length {dataset.n_rows}"
            )


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and standard deviation (population formula)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValidationError("mean/std must be 1-D vectors of equal length")
        if not (self.std > 0).all():
            raise ValidationError("std must be strictly positive for every channel")

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        doc = json.loads(text)
        return cls(np.array(doc["mean"]), np.array(doc["std"]))


@dataclass
class WindowSample:
    """One supervised pair: x holds the L rows ending at `origin`, y the H
    rows starting at origin + 1 (absolute row indices)."""

    x: np.ndarray
    y: np.ndarray
    origin: int


def load_csv(path: str | Path, name: str | None = None) -> SeriesDataset:
    """Load a CSV series: header row, optional leading 'date' column,
    remaining columns numeric.

    Errors name the offending 1-based data row (header excluded) and column
    so malformed files can be fixed without guessing.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if not header:
            raise ValidationError(f"{path}: empty header row")
        has_date = header[0].strip().lower() == "date"
        channel_names = [h.strip() for h in (header[1:] if has_date else header)]
        if not channel_names:
            raise ValidationError(f"{path}: no data columns after the date column")
        rows: list[list[float]] = []
        timestamps: list[str] | None = [] if has_date else None
        for rownum, cells in enumerate(reader, start=1):
            if not cells:
                continue  # tolerate blank trailing lines
            if len(cells) != len(header):
                raise ValidationError(
                    f"{path}: row {rownum} has {len(cells)} cells, expected "
                    f"{len(header)}"
                )
            if has_date:
                timestamps.append(cells[0])
                cells = cells[1:]
            parsed = []
            for col, cell in zip(channel_names, cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValidationError(
                        f"{path}: non-numeric cell at row {rownum}, "
                        f"column {col!r}: {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return SeriesDataset(
        values=np.array(rows, dtype=np.float64),
        channel_names=channel_names,
        timestamps=timestamps,
        name=name if name is not None else path.stem,
    )


def fit_norm(
    dataset: SeriesDataset, split: SplitSpec, clamp_zero_std: bool = False
) -> NormStats:
    """Per-channel mean/std over the train rows [0, train_end) only.

    std uses the population formula (divide by n). A constant channel is a
    hard error unless clamp_zero_std is set, in which case its std is
    clamped to 1.
    """
    if split.train_end < 2:
        raise ValidationError("need at least 2 train rows to fit normalization")
    split.validate_against(dataset)
    train = dataset.values[: split.train_end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)  # ddof=0
    zero = std == 0.0
    if zero.any():
        if not clamp_zero_std:
            names = [dataset.channel_names[i] for i in np.flatnonzero(zero)]
            raise ValidationError(f"zero variance in channel(s) {names}")
        std = np.where(zero, 1.0, std)
    return NormStats(mean=mean, std=std)


def apply_norm(dataset: SeriesDataset, stats: NormStats) -> SeriesDataset:
    """z-score every value: v -> (v - mean[c]) / std[c]."""
    if stats.mean.shape[0] != dataset.n_channels:
        raise ValidationError(
            f"stats cover {stats.mean.shape[0]} channels, dataset has "
            f"{dataset.n_channels}"
        )
    return SeriesDataset(
        values=(dataset.values - stats.mean) / stats.std,
        channel_names=list(dataset.channel_names),
        timestamps=dataset.timestamps,
        name=dataset.name,
    )


def invert_norm(dataset: SeriesDataset, stats: NormStats) -> SeriesDataset:
    """Inverse of apply_norm: v -> v * std[c] + mean[c]."""
    if stats.mean.shape[0] != dataset.n_channels:
        raise ValidationError(
            f"stats cover {stats.mean.shape[0]} channels, dataset has "
            f"{dataset.n_channels}"
        )
    return SeriesDataset(
        values=dataset.values * stats.std + stats.mean,
        channel_names=list(dataset.channel_names),
        timestamps=dataset.timestamps,
        name=dataset.name,
    )


def region_bounds(
    split: SplitSpec, region: str, L: int, H: int, n_rows: int
) -> tuple[int, int]:
    """Row range [start, end) that windows of a region may touch.

    The train region is exactly [0, train_end). Val and test extend L rows
    back into the preceding region for lookback context and H rows forward
    for horizon context (clipped to the data), the convention under which
    the standard hourly electricity benchmark yields window counts
    (8545, 2881, 2881) at L = H = 48.
    """
    if region not in REGIONS:
        raise ValidationError(f"unknown region {region!r}, expected one of {REGIONS}")
    if region == "train":
        return 0, split.train_end
    if region == "val":
        start, end = split.train_end, split.val_end
    else:
        start, end = split.val_end, split.test_end
    return max(0, start - L), min(n_rows, end + H)


def windows(
    dataset: SeriesDataset, split: SplitSpec, region: str, L: int, H: int
) -> list[WindowSample]:
    """Stride-1 sliding windows fully contained in the region's row range.

    Count equals region_len - L - H + 1 where region_len is the length of
    the (context-extended) range from region_bounds. Samples are ordered by
    origin; x and y are read-only views into the dataset.
    """
    if L < 1 or H < 1:
        raise ValidationError(f"L and H must be >= 1, got L={L}, H={H}")
    split.validate_against(dataset)
    start, end = region_bounds(split, region, L, H, dataset.n_rows)
    region_len = end - start
    if region_len < L + H:
        raise ValidationError(
            f"region {region!r} has {region_len} rows, need at least {L + H}"
        )
    values = dataset.values
    out = []
    for t in range(start + L - 1, end - H):
        out.append(
            WindowSample(
                x=values[t - L + 1 : t + 1],
                y=values[t + 1 : t + 1 + H],
                origin=t,
            )
        )
    return out


def stack_windows(samples: list[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a window list into contiguous (n, L, D) and (n, H, D) arrays."""
    if not samples:
        raise ValidationError("empty window set")
    x = np.stack([s.x for s in samples]).astype(np.float64)
    y = np.stack([s.y for s in samples]).astype(np.float64)
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def make_synthetic_redundant(
    seed: int,
    T: int,
    D: int,
    prefix_len: int,
    snr: float,
    lookback: int = 48,
) -> SeriesDataset:
    """Series whose forecastable content makes the oldest `prefix_len` rows
    of any lookback window redundant.

    Each channel is a seasonal AR(1) with period (lookback - prefix_len):
    v[t] = rho * v[t - period] + innovation. The process is Markov across
    seasonal lags, so given the most recent `period` rows the older rows of
    a window are conditionally independent of every horizon row; they
    duplicate signal the suffix already carries while contributing fresh
    observation noise. The unit-variance signal carries i.i.d. noise of
    amplitude 1/snr on top, so the injected noise (prefix included)
    vanishes as snr grows. Generation is fully determined by the seed.
    """
    if snr <= 0:
        raise ValidationError(f"snr must be > 0, got {snr}")
    if not (0 <= prefix_len < lookback):
        raise ValidationError(
            f"need 0 <= prefix_len < lookback, got prefix_len={prefix_len}, "
            f"lookback={lookback}"
        )
    if T < 2 * lookback:
        raise ValidationError(f"T={T} too short for lookback={lookback}")
    period = lookback - prefix_len
    rho = 0.9  # seasonal persistence: copies drift enough that old rows
    # cannot be averaged against fresh ones for denoising
    rng = np.random.default_rng(seed)
    signal = np.empty((T, D))
    signal[:period] = rng.standard_normal((period, D))  # stationary start
    innov_sd = np.sqrt(1.0 - rho * rho)
    for t in range(period, T):
        signal[t] = rho * signal[t - period] + innov_sd * rng.standard_normal(D)
    noise = rng.standard_normal((T, D)) / snr
    values = signal + noise
    start = np.datetime64("2020-01-01T00:00")
    stamps = [str(start + np.timedelta64(i, "h")).replace("T", " ") for i in range(T)]
    return SeriesDataset(
        values=values,
        channel_names=[f"s{c}" for c in range(D)],
        timestamps=stamps,
        name=f"synthetic-p{prefix_len}",
    )
