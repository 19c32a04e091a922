"""Fault-signature features, multi-channel fusion, template matching and CUSUM.

Spectral amplitudes are read from the energy of the window main lobe around
the target frequency, which makes them insensitive to where the tone falls
between bins: for a tone ``A cos(2 pi f t)`` the lobe holds
``A^2 / 4 * n_fft * sum(w^2)`` of the one-sided ``|X|^2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .signal_model import OperatingPoint
from .stft import Spectrogram

HARMONIC_ORDERS = tuple(range(2, 8))
# Narrow bands around the default 50 Hz operating point: second harmonic,
# the two 10 Hz sidebands, and a quiet stretch where valve bursts dominate.
# Wide bands drown these in fundamental and noise energy.
DEFAULT_BANDS: tuple[tuple[float, float], ...] = (
    (90.0, 110.0),
    (35.0, 45.0),
    (55.0, 65.0),
    (600.0, 800.0),
)
DEFAULT_SIDEBAND_OFFSET_HZ = 10.0
LOBE_HALF_WIDTH_BINS = 2
LIBRARY_FORMAT = "faultsig.signature-library"
LIBRARY_VERSION = 1
NORMALIZATION_FLOOR = 1e-9
# distance at which exp(-d^2) = 1/2
ACCEPT_DISTANCE = math.sqrt(math.log(2.0))


def feature_names(band_list: Sequence[tuple[float, float]] = DEFAULT_BANDS) -> tuple[str, ...]:
    bands = tuple(f"band_energy_{lo:g}_{hi:g}" for lo, hi in band_list)
    harmonics = tuple(f"harmonic_{k}" for k in HARMONIC_ORDERS)
    return bands + ("fundamental_amplitude",) + harmonics + (
        "sideband_ratio",
        "excess_kurtosis",
        "crest_factor",
    )


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.names),):
            raise ValueError(f"{len(self.names)} names for {values.shape} values")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


# -- extraction ---------------------------------------------------------------


def _lobe_amplitude(spec: Spectrogram, freq_hz: float, mean_power: np.ndarray) -> float:
    if freq_hz <= 0 or freq_hz >= spec.sample_rate_hz / 2:
        return 0.0
    df = spec.bin_spacing_hz
    mask = np.abs(spec.bin_freqs_hz - freq_hz) <= LOBE_HALF_WIDTH_BINS * df
    energy = float(mean_power[mask].sum())
    norm = spec.n_fft * float(np.sum(spec.window**2))
    return 2.0 * math.sqrt(energy / norm)


def time_statistics(x: np.ndarray) -> tuple[float, float]:
    """Excess kurtosis and crest factor; both 0 for a zero-variance signal."""
    x = np.asarray(x, dtype=np.float64)
    centred = x - x.mean()
    m2 = float(np.mean(centred**2))
    if m2 <= 0:
        return 0.0, 0.0
    kurt = float(np.mean(centred**4)) / m2**2 - 3.0
    crest = float(np.max(np.abs(x)) / math.sqrt(np.mean(x**2)))
    return kurt, crest


def extract_features(
    source: np.ndarray,
    spec: Spectrogram,
    op: OperatingPoint = OperatingPoint(),
    band_list: Sequence[tuple[float, float]] = DEFAULT_BANDS,
    sideband_offset_hz: float = DEFAULT_SIDEBAND_OFFSET_HZ,
) -> FeatureVector:
    """Feature vector of one channel.

    Spectral entries come from the frame-averaged power of ``spec``:

    * band energies are mean-square powers (a tone of amplitude ``A``
      contributes ``A^2 / 2``);
    * fundamental and harmonic entries are amplitudes at multiples of
      ``op.line_frequency_hz``;
    * the sideband ratio is the mean amplitude at ``f0 +/- offset`` over the
      fundamental amplitude (0 when the fundamental is absent).

    Kurtosis and crest factor are taken from ``source`` directly.
    """
    nyquist = spec.sample_rate_hz / 2
    for lo, hi in band_list:
        if not 0 <= lo < hi <= nyquist:
            raise ValueError(f"band [{lo}, {hi}] Hz is not inside [0, {nyquist}] Hz")
    power = (spec.magnitudes**2).mean(axis=0)
    norm = spec.n_fft * float(np.sum(spec.window**2))
    bands = []
    for lo, hi in band_list:
        mask = (spec.bin_freqs_hz >= lo) & (spec.bin_freqs_hz <= hi)
        bands.append(2.0 * float(power[mask].sum()) / norm)
    f0 = op.line_frequency_hz
    fundamental = _lobe_amplitude(spec, f0, power)
    harmonics = [_lobe_amplitude(spec, k * f0, power) for k in HARMONIC_ORDERS]
    sidebands = 0.5 * (
        _lobe_amplitude(spec, f0 - sideband_offset_hz, power)
        + _lobe_amplitude(spec, f0 + sideband_offset_hz, power)
    )
    ratio = sidebands / fundamental if fundamental > 0 else 0.0
    kurt, crest = time_statistics(source)
    values = bands + [fundamental] + harmonics + [ratio, kurt, crest]
    return FeatureVector(feature_names(band_list), np.array(values))


# -- fusion -------------------------------------------------------------------


def fuse(features: Sequence[FeatureVector], weights: Sequence[float]) -> FeatureVector:
    """Convex combination of per-channel feature vectors."""
    if not features:
        raise ValueError("nothing to fuse")
    if len(weights) != len(features):
        raise ValueError(f"{len(weights)} weights for {len(features)} feature vectors")
    names = features[0].names
    if any(f.names != names for f in features):
        raise ValueError("feature vectors have different schemas")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be non-negative and sum to 1, got {w.tolist()}")
    out = np.zeros(len(names))
    for wi, f in zip(w, features):
        out += wi * f.values
    return FeatureVector(names, out)


# -- library and classification ----------------------------------------------


@dataclass(frozen=True)
class FaultSignature:
    label: str
    template: np.ndarray = field(repr=False)
    tolerance_radius: float = 1.0

    def __post_init__(self) -> None:
        if not self.tolerance_radius > 0:
            raise ValueError("tolerance_radius must be > 0")
        object.__setattr__(self, "template", np.asarray(self.template, dtype=np.float64))


@dataclass(frozen=True)
class SignatureLibrary:
    """Templates plus the per-feature scale used to compare against them."""

    names: tuple[str, ...]
    normalization: np.ndarray = field(repr=False)
    entries: tuple[FaultSignature, ...] = ()

    def __post_init__(self) -> None:
        norm = np.asarray(self.normalization, dtype=np.float64)
        if norm.shape != (len(self.names),) or np.any(norm <= 0):
            raise ValueError("normalization must be one positive scale per feature")
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in library: {labels}")
        for e in self.entries:
            if e.template.shape != norm.shape:
                raise ValueError(f"template for {e.label!r} has the wrong length")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "normalization", norm)
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.label for e in self.entries)

    def distance(self, v: FeatureVector, label: str) -> float:
        entry = self.entries[self.labels.index(label)]
        return float(np.linalg.norm((v.values - entry.template) / self.normalization))

    def to_json(self) -> dict:
        return {
            "format": LIBRARY_FORMAT,
            "version": LIBRARY_VERSION,
            "schema": list(self.names),
            "normalization": self.normalization.tolist(),
            "entries": [
                {
                    "label": e.label,
                    "template": e.template.tolist(),
                    "tolerance_radius": e.tolerance_radius,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SignatureLibrary":
        if doc.get("format") != LIBRARY_FORMAT:
            raise ValueError(f"not a signature library (format={doc.get('format')!r})")
        if doc.get("version") != LIBRARY_VERSION:
            raise ValueError(f"unsupported library version {doc.get('version')!r}")
        entries = tuple(
            FaultSignature(e["label"], np.array(e["template"]), float(e["tolerance_radius"]))
            for e in doc["entries"]
        )
        return cls(tuple(doc["schema"]), np.array(doc["normalization"]), entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "SignatureLibrary":
        return cls.from_json(json.loads(Path(path).read_text()))


def classify(
    v: FeatureVector, lib: SignatureLibrary, max_labels: int = 2
) -> list[tuple[str, float]]:
    """Templates within their tolerance radius, best first.

    Score is ``exp(-d^2)`` with ``d`` the normalized Euclidean distance.
    Ties in score are broken by label. An empty list means no known fault.
    """
    if v.names != lib.names:
        raise ValueError("feature schema does not match the library")
    hits = []
    for e in lib.entries:
        d = float(np.linalg.norm((v.values - e.template) / lib.normalization))
        if d <= e.tolerance_radius:
            hits.append((e.label, math.exp(-d * d)))
    hits.sort(key=lambda h: (-h[1], h[0]))
    return hits[:max_labels]


def _pick_radius(inside: np.ndarray, outside: np.ndarray) -> float:
    """Threshold with the fewest errors; among equals, the midpoint of the widest gap."""
    values = np.unique(np.concatenate([[0.0], inside, outside]))
    # one candidate past the largest distance accepts everything
    values = np.append(values, 2.0 * values[-1] + 1e-9)
    best_key, best_r = None, 1e-9
    for lo, hi in zip(values[:-1], values[1:]):
        r = 0.5 * (lo + hi)
        key = (int(np.sum(inside > r) + np.sum(outside <= r)), -(hi - lo))
        if best_key is None or key < best_key:
            best_key, best_r = key, r
    return max(float(best_r), 1e-9)


def calibrate(
    corpus: Iterable[tuple[FeatureVector, frozenset[str] | set[str]]],
    normalization_scale: float | None = None,
) -> SignatureLibrary:
    """Build a library from feature vectors with known fault labels.

    * template of a label: mean of every vector whose label set contains it;
    * normalization: per-feature standard deviation over the whole corpus
      (floored at 1e-9), times one common factor;
    * tolerance radius of a label: the distance threshold that best separates
      vectors carrying the label from those that do not.

    The common factor is ``normalization_scale`` when given. By default it
    is chosen so the largest tolerance radius sits at distance
    ``sqrt(ln 2)``: every accepted label then scores at least 1/2, which
    puts the score scale in the range the alarm thresholds expect. A
    common factor never changes which vectors fall inside a radius.

    Vectors with an empty label set are healthy examples; they only enter the
    normalization and the radius choice.
    """
    items = [(v, frozenset(labels)) for v, labels in corpus]
    if not items:
        raise ValueError("calibration corpus is empty")
    names = items[0][0].names
    if any(v.names != names for v, _ in items):
        raise ValueError("calibration vectors have different schemas")
    matrix = np.array([v.values for v, _ in items])
    spread = np.maximum(matrix.std(axis=0), NORMALIZATION_FLOOR)
    labels = sorted(set().union(*(lbl for _, lbl in items)))
    masks = [np.array([label in lbl for _, lbl in items]) for label in labels]
    templates = [matrix[has].mean(axis=0) for has in masks]

    def radii(norm: np.ndarray) -> list[float]:
        out = []
        for template, has in zip(templates, masks):
            d = np.linalg.norm((matrix - template) / norm, axis=1)
            out.append(_pick_radius(d[has], d[~has]))
        return out

    if normalization_scale is not None:
        norm = spread * normalization_scale
    else:
        norm = spread
        if labels:
            norm = spread * (max(radii(spread)) / ACCEPT_DISTANCE)
    entries = tuple(FaultSignature(label, t, r) for label, t, r in zip(labels, templates, radii(norm)))
    return SignatureLibrary(names, norm, entries)


# -- change detection -----------------------------------------------------------


@dataclass
class ChangeDetectorState:
    """Two-sided CUSUM with a learned reference level.

    The first ``warmup`` values after construction (and after every
    detection) only estimate ``reference_mean``; detection runs afterwards.
    """

    drift: float
    threshold: float
    warmup: int = 10
    reference_mean: float = 0.0
    cumulative_sum_pos: float = 0.0
    cumulative_sum_neg: float = 0.0
    _seen: int = 0
    _acc: float = 0.0

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError("threshold h must be > 0")
        if self.drift < 0:
            raise ValueError("drift k must be >= 0")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")

    def update(self, value: float) -> bool:
        """Feed one value; True when a change is detected at this value."""
        if self._seen < self.warmup:
            self._seen += 1
            self._acc += value
            self.reference_mean = self._acc / self._seen
            return False
        dev = value - self.reference_mean
        self.cumulative_sum_pos = max(0.0, self.cumulative_sum_pos + dev - self.drift)
        self.cumulative_sum_neg = max(0.0, self.cumulative_sum_neg - dev - self.drift)
        if self.cumulative_sum_pos > self.threshold or self.cumulative_sum_neg > self.threshold:
            self.reset()
            return True
        return False

    def reset(self) -> None:
        self.cumulative_sum_pos = self.cumulative_sum_neg = 0.0
        self._seen = 0
        self._acc = 0.0


def detect_change(series: Sequence[float], k: float, h: float, warmup: int = 10) -> list[int]:
    """Indices at which a two-sided CUSUM crosses ``h``.

    The reference level is the mean of the first ``warmup`` values and is
    re-learned from the ``warmup`` values following every detection.
    """
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        raise ValueError("series is empty")
    state = ChangeDetectorState(drift=k, threshold=h, warmup=warmup)
    return [i for i, x in enumerate(values.tolist()) if state.update(x)]
