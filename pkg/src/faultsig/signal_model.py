"""Synthetic BLDC drive observations with controllable faults and noise.

Phase currents follow a trapezoidal back-EMF approximation: the fundamental
plus 5th and 7th harmonics at fixed relative amplitudes. Faults are added as
balanced three-phase components so they share the phase rotation of the
drive currents.

Random streams are PCG64 generators seeded through ``numpy.random.SeedSequence``
with a spawn key of ``(stream, channel)``. Adding channels therefore never
changes the samples of the channels that came before.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .records import MultiChannelRecord, SourceSet

NOMINAL_SUPPLY_V = 28.0
COMMUTATION_HARMONICS = {5: 0.2, 7: 0.14}
VALVE_RESONANCE_HZ = 700.0
VALVE_DECAY_S = 0.005
PHASE_LABELS = ("ia", "ib", "ic")
AUX_LABELS = ("pressure", "temperature")

# spawn-key streams
_NOISE_STREAM = 0
_FAULT_STREAM = 1
_SOURCE_STREAM = 2
_MIXING_STREAM = 3

MIN_SAMPLES = 64
MAX_CONDITION = 1e6


@dataclass(frozen=True)
class OperatingPoint:
    """Electrical operating point of the drive.

    The defaults are the 50 Hz, 28 V, zero-phase validation case; 3000 rpm
    on a single pole pair gives the same 50 Hz electrical frequency.
    """

    line_frequency_hz: float = 50.0
    supply_voltage_v: float = 28.0
    phase_shift_rad: float = 0.0
    speed_rpm: float = 3000.0

    def __post_init__(self) -> None:
        if not self.line_frequency_hz > 0:
            raise ValueError("line_frequency_hz must be > 0")
        if not self.supply_voltage_v > 0:
            raise ValueError("supply_voltage_v must be > 0")
        if not self.speed_rpm > 0:
            raise ValueError("speed_rpm must be > 0")

    @property
    def current_amplitude(self) -> float:
        """Per-unit phase current amplitude (1.0 at the nominal 28 V)."""
        return self.supply_voltage_v / NOMINAL_SUPPLY_V


# -- fault modes ------------------------------------------------------------


@dataclass(frozen=True)
class Healthy:
    label = "healthy"


@dataclass(frozen=True)
class HarmonicInjection:
    order: int
    relative_amplitude: float
    label = "harmonic"

    def __post_init__(self) -> None:
        if int(self.order) != self.order or self.order < 1:
            raise ValueError("order must be a positive integer")
        if not 0 < self.relative_amplitude <= 1:
            raise ValueError("relative_amplitude must lie in (0, 1]")


@dataclass(frozen=True)
class Sideband:
    carrier_hz: float
    offset_hz: float
    depth: float
    label = "sideband"

    def __post_init__(self) -> None:
        if not (self.carrier_hz > 0 and self.offset_hz > 0):
            raise ValueError("carrier_hz and offset_hz must be > 0")
        if not 0 < self.depth <= 1:
            raise ValueError("depth must lie in (0, 1]")


@dataclass(frozen=True)
class StochasticValveNoise:
    """Poisson bursts of a damped resonance, as produced by a chattering valve."""

    burst_rate_hz: float
    burst_amplitude: float
    label = "valve"

    def __post_init__(self) -> None:
        if not (self.burst_rate_hz > 0 and self.burst_amplitude > 0):
            raise ValueError("burst_rate_hz and burst_amplitude must be > 0")


FaultMode = Union[Healthy, HarmonicInjection, Sideband, StochasticValveNoise]


# -- noise kinds ------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    sigma: float

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class UniformWhite:
    half_range: float

    def __post_init__(self) -> None:
        if not self.half_range > 0:
            raise ValueError("half_range must be > 0")


@dataclass(frozen=True)
class RandomImpulsive:
    """Poisson train of one-sample impulses of random sign."""

    rate_hz: float
    amplitude: float

    def __post_init__(self) -> None:
        if not (self.rate_hz > 0 and self.amplitude > 0):
            raise ValueError("rate_hz and amplitude must be > 0")


NoiseKind = Union[Gaussian, UniformWhite, RandomImpulsive]


def _rng(seed: int, stream: int, channel: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, channel))
    return np.random.Generator(np.random.PCG64(ss))


def healthy_signal_power(op: OperatingPoint = OperatingPoint()) -> float:
    """Mean-square value of one healthy phase current."""
    rel = 1.0 + sum(a * a for a in COMMUTATION_HARMONICS.values())
    return op.current_amplitude**2 * rel / 2.0


def noise_for_snr(
    kind: str,
    snr_db: float,
    signal_power: float,
    sample_rate_hz: float,
    impulse_rate_hz: float = 100.0,
) -> NoiseKind:
    """Noise model whose mean-square power sits ``snr_db`` below ``signal_power``.

    ``kind`` is one of ``"gaussian"``, ``"uniform"`` or ``"impulsive"``.
    """
    power = signal_power / 10.0 ** (snr_db / 10.0)
    if kind == "gaussian":
        return Gaussian(math.sqrt(power))
    if kind == "uniform":
        return UniformWhite(math.sqrt(3.0 * power))
    if kind == "impulsive":
        return RandomImpulsive(
            impulse_rate_hz, math.sqrt(power * sample_rate_hz / impulse_rate_hz)
        )
    raise ValueError(f"unknown noise kind {kind!r}")


def _noise_samples(noise: NoiseKind, n: int, fs: float, rng: np.random.Generator):
    if isinstance(noise, Gaussian):
        return noise.sigma * rng.standard_normal(n)
    if isinstance(noise, UniformWhite):
        return rng.uniform(-noise.half_range, noise.half_range, n)
    if isinstance(noise, RandomImpulsive):
        out = np.zeros(n)
        count = rng.poisson(noise.rate_hz * n / fs)
        where = rng.integers(0, n, count)
        signs = rng.choice((-1.0, 1.0), count)
        np.add.at(out, where, noise.amplitude * signs)
        return out
    raise TypeError(f"not a noise kind: {noise!r}")


def add_noise(x: MultiChannelRecord, noise: NoiseKind, seed: int) -> MultiChannelRecord:
    """Add independent noise to every channel; channel ``c`` uses stream ``(0, c)``."""
    out = np.array(x.data, copy=True)
    for c in range(x.n_channels):
        out[c] += _noise_samples(noise, x.n_samples, x.sample_rate_hz, _rng(seed, _NOISE_STREAM, c))
    return x.with_data(out)


def _valve_bursts(
    fault: StochasticValveNoise, t: np.ndarray, rng: np.random.Generator
) -> list[tuple[float, float]]:
    duration = t[-1] + (t[1] - t[0] if len(t) > 1 else 0.0)
    count = rng.poisson(fault.burst_rate_hz * duration)
    starts = np.sort(rng.uniform(0.0, duration, count))
    phases = rng.uniform(0.0, 2 * np.pi, count)
    return list(zip(starts.tolist(), phases.tolist()))


def _fault_component(
    fault: FaultMode,
    op: OperatingPoint,
    t: np.ndarray,
    shift: float,
    bursts: list[tuple[float, float]] | None,
) -> np.ndarray:
    amp = op.current_amplitude
    theta = 2 * np.pi * op.line_frequency_hz * t + op.phase_shift_rad + shift
    if isinstance(fault, HarmonicInjection):
        return fault.relative_amplitude * amp * np.sin(fault.order * theta)
    if isinstance(fault, Sideband):
        base = op.phase_shift_rad + shift
        lo = np.sin(2 * np.pi * (fault.carrier_hz - fault.offset_hz) * t + base)
        hi = np.sin(2 * np.pi * (fault.carrier_hz + fault.offset_hz) * t + base)
        return fault.depth * amp * (lo + hi)
    if isinstance(fault, StochasticValveNoise):
        out = np.zeros_like(t)
        dt = t[1] - t[0]
        span = int(np.ceil(8 * VALVE_DECAY_S / dt))
        for start, phase in bursts or ():
            i0 = int(np.ceil(start / dt))
            seg = t[i0 : i0 + span] - start
            out[i0 : i0 + span] += (
                fault.burst_amplitude
                * np.exp(-seg / VALVE_DECAY_S)
                * np.sin(2 * np.pi * VALVE_RESONANCE_HZ * seg + phase + shift)
            )
        return out
    return np.zeros_like(t)


def _aux_channel(index: int, t: np.ndarray) -> np.ndarray:
    # slow process variables; shapes chosen to be clearly non-Gaussian
    if index % 2 == 0:
        return 0.3 * (2.0 * ((1.5 * t) % 1.0) - 1.0)
    return 0.3 * (2.0 * np.abs(2.0 * ((0.7 * t) % 1.0) - 1.0) - 1.0)


def _check_faults(faults: Sequence[FaultMode]) -> list[FaultMode]:
    active = [f for f in faults if not isinstance(f, Healthy)]
    if len(active) > 2:
        raise ValueError(f"at most two simultaneous faults, got {len(active)}")
    return active


def generate_phase_currents(
    op: OperatingPoint,
    faults: Sequence[FaultMode],
    noise: NoiseKind | None,
    sample_rate_hz: float,
    duration_s: float,
    seed: int,
    fault_onset_s: float = 0.0,
    aux_channels: int = 0,
) -> MultiChannelRecord:
    """Three phase currents (plus optional auxiliary sensors) of a BLDC drive.

    Args:
        op: Operating point; sets the fundamental, amplitude and phase.
        faults: Up to two non-healthy fault modes.
        noise: Additive noise applied to every channel; ``None`` for a clean record.
        sample_rate_hz: Sampling rate.
        duration_s: Record length in seconds.
        seed: Seed for every random stream of the record.
        fault_onset_s: Faults are present from this time on.
        aux_channels: Number of slow auxiliary channels (pressure, temperature)
            appended after the phases.

    Returns:
        Record with channels ``ia, ib, ic`` followed by the auxiliary channels.
    """
    if not (sample_rate_hz > 0 and duration_s > 0):
        raise ValueError("sample_rate_hz and duration_s must be > 0")
    n = int(round(duration_s * sample_rate_hz))
    if n < MIN_SAMPLES:
        raise ValueError(f"record needs at least {MIN_SAMPLES} samples, got {n}")
    if not 0 <= aux_channels <= len(AUX_LABELS):
        raise ValueError(f"aux_channels must lie in [0, {len(AUX_LABELS)}]")
    active = _check_faults(faults)

    t = np.arange(n) / sample_rate_hz
    amp = op.current_amplitude
    onset_mask = (t >= fault_onset_s).astype(float)
    bursts = {
        i: _valve_bursts(f, t, _rng(seed, _FAULT_STREAM, i))
        for i, f in enumerate(active)
        if isinstance(f, StochasticValveNoise)
    }

    rows = []
    for p in range(3):
        shift = -2 * np.pi * p / 3
        theta = 2 * np.pi * op.line_frequency_hz * t + op.phase_shift_rad + shift
        current = amp * np.sin(theta)
        for order, rel in COMMUTATION_HARMONICS.items():
            current += rel * amp * np.sin(order * theta)
        for i, fault in enumerate(active):
            current += onset_mask * _fault_component(fault, op, t, shift, bursts.get(i))
        rows.append(current)
    for k in range(aux_channels):
        rows.append(_aux_channel(k, t))

    labels = PHASE_LABELS + AUX_LABELS[:aux_channels]
    clean = MultiChannelRecord(sample_rate_hz, labels, np.array(rows))
    return clean if noise is None else add_noise(clean, noise, seed)


# -- ground-truth sources and mixing ----------------------------------------

SOURCE_KINDS = ("laplace", "uniform", "sine", "sawtooth", "square", "gaussian")


def generate_sources(
    kinds: Sequence[str], n_samples: int, sample_rate_hz: float, seed: int
) -> SourceSet:
    """Unit-variance, zero-mean independent sources of the requested kinds.

    At most one ``"gaussian"`` source is allowed, which keeps the set
    separable by ICA.
    """
    if list(kinds).count("gaussian") > 1:
        raise ValueError("at most one Gaussian source is allowed")
    t = np.arange(n_samples) / sample_rate_hz
    rows = []
    for c, kind in enumerate(kinds):
        rng = _rng(seed, _SOURCE_STREAM, c)
        freq = rng.uniform(3.0, 40.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        if kind == "laplace":
            row = rng.laplace(size=n_samples)
        elif kind == "uniform":
            row = rng.uniform(-1.0, 1.0, n_samples)
        elif kind == "sine":
            row = np.sin(2 * np.pi * freq * t + phase)
        elif kind == "sawtooth":
            row = 2.0 * ((freq * t + phase / (2 * np.pi)) % 1.0) - 1.0
        elif kind == "square":
            row = np.sign(np.sin(2 * np.pi * freq * t + phase) + 1e-12)
        elif kind == "gaussian":
            row = rng.standard_normal(n_samples)
        else:
            raise ValueError(f"unknown source kind {kind!r}")
        row = row - row.mean()
        rows.append(row / row.std())
    return SourceSet(sample_rate_hz, tuple(f"s{i}" for i in range(len(rows))), np.array(rows))


def random_mixing_matrix(
    n_rows: int, n_cols: int, seed: int, max_condition: float = MAX_CONDITION
) -> np.ndarray:
    """Standard-normal mixing matrix, redrawn until ``cond(A) <= max_condition``."""
    if max_condition > MAX_CONDITION:
        raise ValueError(f"max_condition may not exceed {MAX_CONDITION:g}")
    rng = _rng(seed, _MIXING_STREAM)
    for _ in range(10_000):
        a = rng.standard_normal((n_rows, n_cols))
        if np.linalg.cond(a) <= max_condition:
            return a
    raise RuntimeError("could not draw a well-conditioned mixing matrix")


def mix_sources(a: np.ndarray, s: SourceSet) -> MultiChannelRecord:
    """Observations ``x = A s``, accumulated over sources in index order."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != s.n_channels:
        raise ValueError(
            f"mixing matrix of shape {a.shape} cannot mix {s.n_channels} sources"
        )
    if a.shape[0] == a.shape[1] and np.linalg.cond(a) > MAX_CONDITION:
        raise ValueError("square mixing matrix is too ill-conditioned")
    x = np.zeros((a.shape[0], s.n_samples))
    for j in range(s.n_channels):
        x += a[:, j, np.newaxis] * s.data[j]
    return MultiChannelRecord(
        s.sample_rate_hz, tuple(f"x{i}" for i in range(a.shape[0])), x
    )
