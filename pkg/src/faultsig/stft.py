"""Short-time Fourier analysis.

Conventions: frames are taken without padding, starting at sample 0 and
advancing by ``hop``; the spectrum of each frame is the plain (unnormalized)
DFT of the windowed segment, one-sided with bins ``0 .. window_len // 2``.
Bin 0 and the Nyquist bin are stored once, not doubled. Frame times refer
to the centre of each frame.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Window(str, enum.Enum):
    RECTANGULAR = "rectangular"
    HANN = "hann"
    HAMMING = "hamming"

    def samples(self, n: int) -> np.ndarray:
        """Periodic (DFT-even) window of length ``n``."""
        k = np.arange(n)
        if self is Window.RECTANGULAR:
            return np.ones(n)
        if self is Window.HANN:
            return 0.5 - 0.5 * np.cos(2 * np.pi * k / n)
        return 0.54 - 0.46 * np.cos(2 * np.pi * k / n)


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 1024
    hop: int | None = None
    window: Window = Window.HANN
    zero_pad_to: int | None = None

    def __post_init__(self) -> None:
        n = self.window_len
        if n < 8 or n & (n - 1):
            raise ValueError(f"window_len must be a power of two >= 8, got {n}")
        hop = n // 2 if self.hop is None else self.hop
        if not 1 <= hop <= n:
            raise ValueError(f"hop must lie in [1, window_len], got {hop}")
        object.__setattr__(self, "hop", hop)
        object.__setattr__(self, "window", Window(self.window))
        if self.zero_pad_to is not None and self.zero_pad_to < n:
            raise ValueError("zero_pad_to must be at least window_len")

    @property
    def n_fft(self) -> int:
        return self.zero_pad_to or self.window_len


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude/phase time-frequency matrix of one channel.

    Attributes:
        sample_rate_hz: Rate of the analysed signal.
        frame_times_s: Centre time of every frame.
        bin_freqs_hz: Frequency of every one-sided bin.
        magnitudes: ``(n_frames, n_bins)`` array of ``|X|``.
        phases: ``(n_frames, n_bins)`` array of ``angle(X)``.
        window: The analysis window samples.
    """

    sample_rate_hz: float
    frame_times_s: np.ndarray = field(repr=False)
    bin_freqs_hz: np.ndarray = field(repr=False)
    magnitudes: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)
    window: np.ndarray = field(repr=False)

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def n_fft(self) -> int:
        return 2 * (self.n_bins - 1)

    @property
    def bin_spacing_hz(self) -> float:
        return self.sample_rate_hz / self.n_fft

    @property
    def complex(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phases)

    def frame_energy(self) -> np.ndarray:
        """Two-sided spectral energy per frame, ``sum_k |X[k]|^2`` over all n_fft bins."""
        p = self.magnitudes**2
        return 2 * p.sum(axis=1) - p[:, 0] - p[:, -1]


def stft(x: np.ndarray, sample_rate_hz: float, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Spectrogram of a single channel.

    Args:
        x: 1-D signal.
        sample_rate_hz: Its sampling rate.
        cfg: Window length, hop and window shape.

    Raises:
        ValueError: If the signal is shorter than one window.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft takes a single channel")
    n = cfg.window_len
    if x.size < n:
        raise ValueError(f"signal of {x.size} samples is shorter than the window ({n})")
    n_frames = (x.size - n) // cfg.hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: cfg.hop][:n_frames]
    w = cfg.window.samples(n)
    spec = np.fft.rfft(frames * w, n=cfg.n_fft, axis=1)
    times = (np.arange(n_frames) * cfg.hop + n / 2) / sample_rate_hz
    freqs = np.arange(cfg.n_fft // 2 + 1) * (sample_rate_hz / cfg.n_fft)
    return Spectrogram(sample_rate_hz, times, freqs, np.abs(spec), np.angle(spec), w)


def band_energy(s: Spectrogram, f_lo_hz: float, f_hi_hz: float) -> np.ndarray:
    """Per-frame sum of ``|X|^2`` over one-sided bins with ``f_lo <= f <= f_hi``."""
    nyquist = s.sample_rate_hz / 2
    if not 0 <= f_lo_hz < f_hi_hz <= nyquist:
        raise ValueError(
            f"band [{f_lo_hz}, {f_hi_hz}] Hz must satisfy 0 <= lo < hi <= {nyquist}"
        )
    mask = (s.bin_freqs_hz >= f_lo_hz) & (s.bin_freqs_hz <= f_hi_hz)
    return (s.magnitudes[:, mask] ** 2).sum(axis=1)


def spectral_peaks(
    s: Spectrogram, frame: int, k: int, pad: bool = False
) -> list[tuple[float, float]]:
    """Largest local maxima of one frame's magnitude spectrum.

    A bin is a local maximum when it is strictly above its left neighbour and
    not below its right neighbour (end bins compare with their one neighbour).
    Peaks are ordered by magnitude, ties going to the lower frequency.

    Returns at most ``k`` maxima. With ``pad=True`` and fewer than ``k``
    maxima available, the list is topped up with the remaining bins in the
    same order, so its length is exactly ``k``.
    """
    if not -s.n_frames <= frame < s.n_frames:
        raise IndexError(f"frame {frame} out of range for {s.n_frames} frames")
    if not 1 <= k <= s.n_bins:
        raise ValueError(f"k must lie in [1, {s.n_bins}]")
    mag = s.magnitudes[frame]
    left = np.concatenate(([-np.inf], mag[:-1]))
    right = np.concatenate((mag[1:], [-np.inf]))
    is_peak = (mag > left) & (mag >= right)
    order = np.lexsort((np.arange(mag.size), -mag))  # magnitude desc, then index asc
    chosen = [i for i in order if is_peak[i]][:k]
    if pad and len(chosen) < k:
        taken = set(chosen)
        chosen += [i for i in order if i not in taken][: k - len(chosen)]
    return [(float(s.bin_freqs_hz[i]), float(mag[i])) for i in chosen]


def dominant_frequency(s: Spectrogram, min_hz: float = 0.0) -> float:
    """Frequency of the largest bin of the frame-averaged magnitude spectrum."""
    mean = s.magnitudes.mean(axis=0)
    mean = np.where(s.bin_freqs_hz >= min_hz, mean, -np.inf)
    return float(s.bin_freqs_hz[int(np.argmax(mean))])
