"""Raw series, standardization, sliding windows and contrastive augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from ..errors import DataError, ShapeError
from ..rng import stream

STD_GUARD = 1e-8


@dataclass
class RawSeries:
    """``H x L`` multivariate series: one row per process variable."""

    variables: list
    values: np.ndarray
    label: Optional[int] = None
    series_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"series values must be H x L, got shape {self.values.shape}")
        if len(self.variables) != self.values.shape[0]:
            raise ShapeError(f"{len(self.variables)} variable names for {self.values.shape[0]} rows")
        if not np.all(np.isfinite(self.values)):
            r, c = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"series {self.series_id!r}: missing or non-finite value at variable {r}, step {c}")

    @property
    def n_vars(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class StandardizerState:
    mean: np.ndarray
    std: np.ndarray
    guard: float = STD_GUARD

    @property
    def applied_std(self) -> np.ndarray:
        return np.maximum(self.std, self.guard)


def standardize_fit(train: Union[RawSeries, Sequence[RawSeries], np.ndarray]) -> StandardizerState:
    """Per-variable population mean and standard deviation over all training timesteps."""
    if isinstance(train, RawSeries):
        values = train.values
    elif isinstance(train, np.ndarray):
        values = np.asarray(train, dtype=np.float64)
    else:
        if len(train) == 0:
            raise DataError("standardize_fit: no training series given")
        values = np.concatenate([s.values for s in train], axis=1)
    if values.ndim != 2 or values.size == 0:
        raise DataError("standardize_fit: empty series")
    if values.shape[1] < 2:
        raise DataError(f"standardize_fit: need at least 2 timesteps, got {values.shape[1]}")
    return StandardizerState(values.mean(axis=1), values.std(axis=1))


def fit_windows(windows: "WindowSet") -> StandardizerState:
    """Fit on the timesteps covered by a set of training windows (``N x H x W``)."""
    if len(windows) == 0:
        raise DataError("standardize_fit: no training windows")
    h = windows.data.shape[1]
    return standardize_fit(windows.data.transpose(1, 0, 2).reshape(h, -1))


def _check_h(h: int, state: StandardizerState) -> None:
    if h != state.mean.shape[0]:
        raise ShapeError(f"standardizer fitted on {state.mean.shape[0]} variables, got {h}")


def standardize_apply(series: RawSeries, state: StandardizerState) -> RawSeries:
    _check_h(series.n_vars, state)
    out = (series.values - state.mean[:, None]) / state.applied_std[:, None]
    return RawSeries(list(series.variables), out, series.label, series.series_id, dict(series.meta))


def standardize_array(values: np.ndarray, state: StandardizerState) -> np.ndarray:
    """Standardize ``... x H x W`` windows (variables on the second-to-last axis)."""
    _check_h(values.shape[-2], state)
    return (values - state.mean[:, None]) / state.applied_std[:, None]


@dataclass
class WindowedSample:
    data: np.ndarray  # H x W
    label: int
    origin: tuple     # (series id, start index)


@dataclass
class WindowSet:
    """A batch of windows stored as arrays: ``data`` is ``N x H x W``."""

    data: np.ndarray
    labels: np.ndarray
    origins: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 3 or self.labels.shape != (self.data.shape[0],):
            raise ShapeError(f"WindowSet: data {self.data.shape} and labels {self.labels.shape} disagree")
        if not self.origins:
            self.origins = [("", -1)] * len(self.labels)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int) -> WindowedSample:
        return WindowedSample(self.data[i], int(self.labels[i]), self.origins[i])

    def __iter__(self) -> Iterator[WindowedSample]:
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.data[idx], self.labels[idx], [self.origins[i] for i in idx])

    def class_counts(self, n_classes: Optional[int] = None) -> np.ndarray:
        return np.bincount(self.labels, minlength=n_classes or 0)

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        return cls(np.concatenate([p.data for p in parts]), np.concatenate([p.labels for p in parts]),
                   [o for p in parts for o in p.origins])


def window_count(length: int, window: int, stride: int) -> int:
    return (length - window) // stride + 1


def sliding_window(series: RawSeries, window: int, stride: Optional[int] = None,
                   label: Optional[int] = None) -> WindowSet:
    """Cut ``H x window`` slices starting at 0, stride, 2*stride, ...; the tail is dropped.

    ``stride`` defaults to ``window`` (non-overlapping).
    """
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise DataError(f"window and stride must be >= 1, got {window}, {stride}")
    if window > series.length:
        raise DataError(f"window {window} longer than series {series.series_id!r} of length {series.length}")
    lab = series.label if label is None else label
    if lab is None:
        raise DataError(f"series {series.series_id!r} carries no class label")
    n = window_count(series.length, window, stride)
    starts = np.arange(n) * stride
    view = np.lib.stride_tricks.sliding_window_view(series.values, window, axis=1)
    data = view[:, starts, :].transpose(1, 0, 2).copy()
    return WindowSet(data, np.full(n, lab), [(series.series_id, int(s)) for s in starts])


def augment_pairs(samples: WindowSet, noise_scale: float = 1.0, seed: int = 0,
                  rng: Optional[np.random.Generator] = None) -> WindowSet:
    """Interleave originals and noisy copies: ``[x1, x1+e1, x2, x2+e2, ...]``.

    Noise is ``noise_scale * N(0, 1)`` per entry; labels are duplicated.
    """
    n = len(samples)
    if n < 1:
        raise DataError("augment_pairs: no samples")
    gen = rng if rng is not None else stream(seed)
    noisy = samples.data + noise_scale * gen.standard_normal(samples.data.shape)
    data = np.empty((2 * n,) + samples.data.shape[1:])
    data[0::2] = samples.data
    data[1::2] = noisy
    origins = [o for o in samples.origins for _ in (0, 1)]
    return WindowSet(data, np.repeat(samples.labels, 2), origins)
