"""Uniformly sampled, time-aligned multichannel records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class MultiChannelRecord:
    """A block of time-aligned channels sharing one sample rate.

    Attributes:
        sample_rate_hz: Sampling frequency in Hz.
        labels: One label per channel, in channel order.
        data: Array of shape ``(n_channels, n_samples)``.
    """

    sample_rate_hz: float
    labels: tuple[str, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise ValueError(f"record data must be 2-D, got shape {data.shape}")
        labels = tuple(str(label) for label in self.labels)
        if len(labels) != data.shape[0]:
            raise ValueError(
                f"{len(labels)} labels for {data.shape[0]} channels"
            )
        if data.shape[1] < 1:
            raise ValueError("record must hold at least one sample")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @classmethod
    def from_channels(
        cls, sample_rate_hz: float, channels: Iterable[tuple[str, Sequence[float]]]
    ) -> "MultiChannelRecord":
        pairs = list(channels)
        if not pairs:
            raise ValueError("at least one channel is required")
        lengths = {len(samples) for _, samples in pairs}
        if len(lengths) != 1:
            raise ValueError(f"channel lengths differ: {sorted(lengths)}")
        return cls(
            sample_rate_hz,
            tuple(label for label, _ in pairs),
            np.array([np.asarray(s, dtype=np.float64) for _, s in pairs]),
        )

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def times_s(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate_hz

    def channel(self, key: int | str) -> np.ndarray:
        """Samples of one channel, by index or label."""
        if isinstance(key, str):
            try:
                key = self.labels.index(key)
            except ValueError:
                raise KeyError(f"no channel labelled {key!r}") from None
        return self.data[key]

    def with_data(
        self, data: np.ndarray, sample_rate_hz: float | None = None
    ) -> "MultiChannelRecord":
        """Copy of this record with new samples (same labels)."""
        rate = self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
        return MultiChannelRecord(rate, self.labels, data)

    def select(self, keys: Sequence[int | str]) -> "MultiChannelRecord":
        idx = [self.labels.index(k) if isinstance(k, str) else k for k in keys]
        return MultiChannelRecord(
            self.sample_rate_hz, tuple(self.labels[i] for i in idx), self.data[idx]
        )

    def slice_samples(self, start: int, stop: int) -> "MultiChannelRecord":
        return self.with_data(self.data[:, start:stop])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MultiChannelRecord):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.labels == other.labels
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None  # type: ignore[assignment]


# Ground-truth sources share the record layout.
SourceSet = MultiChannelRecord
