"""Seeded synthetic scenarios with known ground truth.

Every scenario is a healthy drive at the nominal operating point, up to two
faults switched on at ``onset_s``, and one of three noise regimes at a fixed
SNR relative to the healthy phase-current power. Seeds of the calibration
corpus (1000 and up) never overlap the evaluation seeds (0 to 999).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

from .pipeline import LabelledRecord
from .records import MultiChannelRecord
from .signal_model import (
    FaultMode,
    HarmonicInjection,
    OperatingPoint,
    Sideband,
    StochasticValveNoise,
    generate_phase_currents,
    healthy_signal_power,
    noise_for_snr,
)

NOISE_REGIMES = ("gaussian", "uniform", "impulsive")
FAULTS: dict[str, FaultMode] = {
    "harmonic": HarmonicInjection(order=2, relative_amplitude=0.1),
    "sideband": Sideband(carrier_hz=50.0, offset_hz=10.0, depth=0.1),
    "valve": StochasticValveNoise(burst_rate_hz=20.0, burst_amplitude=1.0),
}
FAULT_PAIRS = tuple(itertools.combinations(sorted(FAULTS), 2))
CALIBRATION_SEED_BASE = 1000


@dataclass(frozen=True)
class Scenario:
    faults: tuple[str, ...]
    noise: str
    seed: int
    snr_db: float = 10.0
    duration_s: float = 8.0
    onset_s: float = 2.0
    sample_rate_hz: float = 10_000.0
    aux_channels: int = 0

    def __post_init__(self) -> None:
        unknown = [f for f in self.faults if f not in FAULTS]
        if unknown:
            raise ValueError(f"unknown fault names {unknown}; known: {sorted(FAULTS)}")
        if self.noise not in NOISE_REGIMES and self.noise != "none":
            raise ValueError(f"unknown noise regime {self.noise!r}")

    @property
    def name(self) -> str:
        return f"{'+'.join(self.faults) or 'healthy'}/{self.noise}/{self.seed}"

    @property
    def labels(self) -> frozenset[str]:
        return frozenset(self.faults)

    def record(self, op: OperatingPoint = OperatingPoint()) -> MultiChannelRecord:
        noise = None
        if self.noise != "none":
            noise = noise_for_snr(
                self.noise, self.snr_db, healthy_signal_power(op), self.sample_rate_hz
            )
        return generate_phase_currents(
            op,
            [FAULTS[f] for f in self.faults],
            noise,
            self.sample_rate_hz,
            self.duration_s,
            self.seed,
            fault_onset_s=self.onset_s,
            aux_channels=self.aux_channels,
        )

    def labelled(self, op: OperatingPoint = OperatingPoint()) -> LabelledRecord:
        return LabelledRecord(self.record(op), self.labels, self.onset_s)


def suite(
    fault_sets: Iterable[Sequence[str]],
    regimes: Iterable[str] = NOISE_REGIMES,
    seeds: Iterable[int] = range(20),
    **kwargs,
) -> list[Scenario]:
    """Cartesian product of fault sets, noise regimes and seeds."""
    fault_sets = [tuple(f) for f in fault_sets]
    seeds = list(seeds)
    return [
        Scenario(faults, regime, seed, **kwargs)
        for regime in regimes
        for faults in fault_sets
        for seed in seeds
    ]


def single_fault_sets() -> list[tuple[str, ...]]:
    return [(f,) for f in sorted(FAULTS)]


def calibration_suite(
    healthy_seeds: int = 80,
    single_seeds: int = 1,
    pair_seeds: int = 2,
    **kwargs,
) -> list[Scenario]:
    """Healthy, single-fault and two-fault records in every regime.

    The corpus is deliberately healthy-heavy. A binary fault feature's
    normalized contribution to the distance shrinks as the share of corpus
    windows carrying it falls, and the radius choice sees far more healthy
    than faulty distances. Pair runs dominate the templates so a window with
    two faults lands inside both radii.
    """
    base = CALIBRATION_SEED_BASE
    out = suite([()], NOISE_REGIMES, range(base, base + healthy_seeds), **kwargs)
    out += suite(single_fault_sets(), NOISE_REGIMES, range(base, base + single_seeds), **kwargs)
    out += suite(FAULT_PAIRS, NOISE_REGIMES, range(base, base + pair_seeds), **kwargs)
    return out


def detection_suite(seeds: Iterable[int] = range(20), **kwargs) -> list[Scenario]:
    return suite(single_fault_sets(), NOISE_REGIMES, seeds, **kwargs)


def healthy_suite(seeds: Iterable[int] = range(20), **kwargs) -> list[Scenario]:
    return suite([()], NOISE_REGIMES, seeds, **kwargs)


def two_fault_suite(seeds: Iterable[int] = range(10), **kwargs) -> list[Scenario]:
    return suite(FAULT_PAIRS, NOISE_REGIMES, seeds, **kwargs)


def valve_suite(seeds: Iterable[int] = range(10), **kwargs) -> list[Scenario]:
    """Valve-noise fault on the impulsive regime: the hybrid-vs-single-method comparison."""
    return suite([("valve",)], ("impulsive",), seeds, **kwargs)


SUITES = {
    "calibration": calibration_suite,
    "detection": detection_suite,
    "healthy": healthy_suite,
    "two_fault": two_fault_suite,
    "valve": valve_suite,
}
