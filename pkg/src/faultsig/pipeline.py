"""End-to-end analysis: windows of a record through every processing stage.

Stage order per record: decimate, optional smoothing, then per window
projection onto the principal subspace, centre/whiten + ICA + separation, per-source STFT, feature extraction,
fusion, classification, and finally the alarm fold over windows.

Separated sources are rescaled so their spectral amplitudes are comparable
with the phase currents: each source gets unit variance times the RMS level
of the observed channels. A balanced three-phase tone then reads the same
amplitude whatever rotation ICA settles on inside the two-dimensional
subspace the tone spans. Fusion weights default to the share of observed
power each source explains (back-projection through the estimated mixing
matrix), so the sources carrying the machine signal dominate the fused
vector and the residual noise component does not.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import alarm as alarm_mod
from .alarm import AlarmConfig, AlarmEvent
from .bss import (
    MIN_EIG_RATIO,
    IcaConfig,
    Prior,
    UnmixingMatrix,
    center_whiten,
    ica_fit,
    separate,
)
from .multirate import decimate, smooth
from .records import MultiChannelRecord
from .signal_model import OperatingPoint
from .signature import (
    DEFAULT_BANDS,
    DEFAULT_SIDEBAND_OFFSET_HZ,
    FeatureVector,
    SignatureLibrary,
    calibrate,
    classify,
    detect_change,
    extract_features,
    fuse,
)
from .stft import Spectrogram, StftConfig, Window, dominant_frequency, stft

MODES = ("hybrid", "stft_only", "fusion_only")
STAGES = ("decimate", "smooth", "bss", "stft", "features", "fuse", "classify", "alarm")
RATE_TOLERANCE = 1e-6


class ConfigError(ValueError):
    """Configuration inconsistent with itself or with the input record."""


def _default_ica() -> IcaConfig:
    # The balanced phase tone spans a plane in which any rotation is equally
    # likely, so the fit rarely converges there; a short budget is enough.
    return IcaConfig(max_iterations=50, tolerance=1e-4)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the analysis chain.

    Attributes:
        sample_rate_hz: Expected rate of input records.
        decimation: Integer rate reduction before separation (1 disables it).
        smooth_window: Odd moving-average length at the analysis rate; 1 disables it.
        stft: Spectrogram settings at the analysis rate.
        ica: Separation settings. Its seed is replaced by ``seed``.
        band_list: Band-energy feature bands in Hz.
        sideband_offset_hz: Offset of the sideband pair around the fundamental.
        fusion_weights: Explicit weights for the separated sources ordered by
            explained power. ``None`` uses the explained-power shares.
        alarm: Alarm state machine settings.
        library_path: Signature library for classification.
        seed: Seed of the ICA initialization.
        window_s: Length of one analysis window.
        operating_point: Nominal drive operating point.
        change_drift: CUSUM drift in library-normalized units.
        change_threshold: CUSUM threshold in library-normalized units.
        change_warmup: Windows used to learn the CUSUM reference.
        subspace_min_fraction: Principal components carrying less than this
            share of the window's variance are dropped before ICA.
    """

    sample_rate_hz: float = 10_000.0
    decimation: int = 4
    smooth_window: int = 1
    stft: StftConfig = StftConfig(window_len=1024, hop=512)
    ica: IcaConfig = field(default_factory=_default_ica)
    band_list: tuple[tuple[float, float], ...] = DEFAULT_BANDS
    sideband_offset_hz: float = DEFAULT_SIDEBAND_OFFSET_HZ
    fusion_weights: tuple[float, ...] | None = None
    alarm: AlarmConfig = AlarmConfig()
    library_path: str | None = None
    seed: int = 0
    window_s: float = 2.0
    operating_point: OperatingPoint = OperatingPoint()
    change_drift: float = 0.5
    change_threshold: float = 5.0
    change_warmup: int = 3
    subspace_min_fraction: float = 0.01

    def __post_init__(self) -> None:
        object.__setattr__(self, "band_list", tuple((float(lo), float(hi)) for lo, hi in self.band_list))
        if self.fusion_weights is not None:
            object.__setattr__(self, "fusion_weights", tuple(float(w) for w in self.fusion_weights))
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be > 0")
        if int(self.decimation) != self.decimation or self.decimation < 1:
            raise ConfigError("decimation must be a positive integer")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigError("smooth_window must be a positive odd integer")
        if not 0 <= self.subspace_min_fraction < 1:
            raise ConfigError("subspace_min_fraction must lie in [0, 1)")
        if not self.window_s > 0:
            raise ConfigError("window_s must be > 0")
        nyquist = self.analysis_rate_hz / 2
        top = max(hi for _, hi in self.band_list)
        if top > nyquist:
            raise ConfigError(
                f"decimated Nyquist {nyquist:g} Hz is below the highest band edge {top:g} Hz"
            )
        if self.window_samples < self.stft.window_len:
            raise ConfigError("window_s is shorter than one STFT window at the analysis rate")
        w = self.fusion_weights
        if w is not None and (min(w) < 0 or abs(sum(w) - 1.0) > 1e-9):
            raise ConfigError("fusion_weights must be non-negative and sum to 1")

    @property
    def analysis_rate_hz(self) -> float:
        return self.sample_rate_hz / self.decimation

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.analysis_rate_hz))

    def ica_config(self) -> IcaConfig:
        return dataclasses.replace(self.ica, seed=self.seed)

    def to_dict(self) -> dict:
        ica = self.ica
        prior = ica.prior.value if isinstance(ica.prior, Prior) else [p.value for p in ica.prior]
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "decimation": self.decimation,
            "smooth_window": self.smooth_window,
            "stft": {
                "window_len": self.stft.window_len,
                "hop": self.stft.hop,
                "window": self.stft.window.value,
                "zero_pad_to": self.stft.zero_pad_to,
            },
            "ica": {
                "learning_rate": ica.learning_rate,
                "max_iterations": ica.max_iterations,
                "tolerance": ica.tolerance,
                "prior": prior,
                "switch_rule": ica.switch_rule,
            },
            "band_list": [list(b) for b in self.band_list],
            "sideband_offset_hz": self.sideband_offset_hz,
            "fusion_weights": None if self.fusion_weights is None else list(self.fusion_weights),
            "alarm": dataclasses.asdict(self.alarm),
            "library_path": self.library_path,
            "seed": self.seed,
            "window_s": self.window_s,
            "operating_point": dataclasses.asdict(self.operating_point),
            "change_drift": self.change_drift,
            "change_threshold": self.change_threshold,
            "change_warmup": self.change_warmup,
            "subspace_min_fraction": self.subspace_min_fraction,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PipelineConfig":
        """Build from a (possibly partial) mapping shaped like :meth:`to_dict`."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        try:
            if "stft" in kwargs:
                kwargs["stft"] = StftConfig(**kwargs["stft"])
            if "ica" in kwargs:
                ica = dict(kwargs["ica"])
                ica.pop("seed", None)
                kwargs["ica"] = dataclasses.replace(_default_ica(), **ica)
            if "alarm" in kwargs:
                kwargs["alarm"] = AlarmConfig(**kwargs["alarm"])
            if "operating_point" in kwargs:
                kwargs["operating_point"] = OperatingPoint(**kwargs["operating_point"])
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- stages -------------------------------------------------------------------


def precondition(x: MultiChannelRecord, cfg: PipelineConfig) -> MultiChannelRecord:
    """Decimate then (optionally) smooth a whole record."""
    return smooth(decimate(x, cfg.decimation), cfg.smooth_window)


def principal_subspace(x: MultiChannelRecord, min_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal projection onto the principal components worth separating.

    Components whose variance is below ``min_fraction`` of the total are
    dropped; so are numerically null directions, e.g. the zero-sequence
    direction of a noiseless balanced three-phase record.

    Returns:
        ``(mean, projection)`` with ``projection`` of shape ``(k, n_channels)``,
        rows ordered by decreasing variance, signs fixed so the largest
        loading of each row is positive.
    """
    mean = x.data.mean(axis=1)
    xc = x.data - mean[:, np.newaxis]
    eigval, eigvec = np.linalg.eigh(xc @ xc.T / x.n_samples)
    eigval, eigvec = eigval[::-1], eigvec[:, ::-1]
    total = float(eigval.sum())
    if total <= 0:
        keep = 1
    else:
        floor = max(min_fraction * total, MIN_EIG_RATIO * float(eigval[0]))
        keep = max(1, int(np.sum(eigval > floor)))
    proj = eigvec[:, :keep].T
    signs = np.sign(proj[np.arange(keep), np.argmax(np.abs(proj), axis=1)])
    return mean, proj * signs[:, np.newaxis]


@dataclass(frozen=True)
class Separation:
    """Output of the separation stage for one window.

    Sources are ``scale * W V P (x - mean)``: a projection ``P`` onto the
    principal subspace, the whitening ``V`` and ICA rotation ``W`` held by
    ``unmixing``, and a per-source scale.

    Attributes:
        mean: Channel means removed before projection.
        projection: ``(k, n_channels)`` principal-subspace projection.
        unmixing: Fitted unmixing on the projected data; ``None`` when the
            subspace is one-dimensional.
        sources: Rescaled sources, ordered by explained power.
        power_share: Fraction of observed power each source explains.
    """

    mean: np.ndarray
    projection: np.ndarray
    unmixing: UnmixingMatrix | None
    sources: MultiChannelRecord
    power_share: np.ndarray


def separate_sources(
    x: MultiChannelRecord, ica: IcaConfig, min_fraction: float = 0.01
) -> Separation:
    """Project, whiten, fit ICA, separate, then rescale and order the sources.

    Each source is scaled to unit variance times the RMS level of the
    observed channels and sources are ordered by the share of observed power
    they explain (ties by index).
    """
    mean, proj = principal_subspace(x, min_fraction)
    xc = x.data - mean[:, np.newaxis]
    level = math.sqrt(float(np.mean(xc * xc)))
    k = proj.shape[0]
    projected = MultiChannelRecord(x.sample_rate_hz, tuple(f"pc{i}" for i in range(k)), proj @ xc)
    if k < 2:
        u = projected.data
        std = float(u.std())
        rows = u * (level / std) if std > 0 else u
        return Separation(mean, proj, None, projected.with_data(rows), np.ones(1))

    z, wh = center_whiten(projected)
    unmixing = ica_fit(z, ica, wh)
    u = separate(unmixing, projected).data
    mixing = proj.T @ np.linalg.inv(unmixing.full)
    explained = (mixing * mixing).sum(axis=0) * u.var(axis=1)
    share = explained / explained.sum()
    order = sorted(range(k), key=lambda i: (-share[i], i))
    std = u.std(axis=1)
    scale = np.where(std > 0, level / np.where(std > 0, std, 1.0), 0.0)
    rows = (u * scale[:, np.newaxis])[order]
    sources = MultiChannelRecord(x.sample_rate_hz, tuple(f"u{i}" for i in range(k)), rows)
    return Separation(mean, proj, unmixing, sources, share[order])


def source_spectrograms(sources: MultiChannelRecord, cfg: StftConfig) -> list[Spectrogram]:
    return [stft(row, sources.sample_rate_hz, cfg) for row in sources.data]


def source_features(
    sources: MultiChannelRecord, spectrograms: Sequence[Spectrogram], cfg: PipelineConfig
) -> list[FeatureVector]:
    return [
        extract_features(row, s, cfg.operating_point, cfg.band_list, cfg.sideband_offset_hz)
        for row, s in zip(sources.data, spectrograms)
    ]


def fusion_weights(cfg: PipelineConfig, power_share: np.ndarray) -> np.ndarray:
    """Explicit weights (truncated and renormalized to the source count) or power shares."""
    n = len(power_share)
    if cfg.fusion_weights is None:
        return np.asarray(power_share, dtype=np.float64)
    w = np.asarray(cfg.fusion_weights[:n], dtype=np.float64)
    if len(w) < n:
        raise ConfigError(f"{len(cfg.fusion_weights)} fusion weights for {n} sources")
    total = w.sum()
    if total <= 0:
        raise ConfigError("fusion weights for the retained sources are all zero")
    return w / total


# -- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class WindowResult:
    start_s: float
    end_s: float
    separation: Separation
    spectrograms: tuple[Spectrogram, ...]
    features: tuple[FeatureVector, ...]
    weights: np.ndarray
    fused: FeatureVector
    classification: tuple[tuple[str, float], ...]
    dominant_hz: float

    def summary(self) -> dict:
        unmixing = self.separation.unmixing
        return {
            "start_s": self.start_s,
            "end_s": self.end_s,
            "components": int(self.separation.projection.shape[0]),
            "ica_iterations": None if unmixing is None else unmixing.fit_iterations,
            "ica_converged": None if unmixing is None else unmixing.converged,
            "weights": self.weights.tolist(),
            "features": self.fused.as_dict(),
            "classification": [[label, score] for label, score in self.classification],
            "dominant_hz": self.dominant_hz,
        }


@dataclass
class AnalysisReport:
    mode: str
    analysis_rate_hz: float
    windows: list[WindowResult]
    events: list[AlarmEvent]
    changes: list[int]
    timings_s: dict[str, float]

    @property
    def total_time_s(self) -> float:
        return float(sum(self.timings_s.values()))

    @property
    def dominant_hz(self) -> float:
        """Most common per-window dominant frequency (lowest on ties)."""
        values, counts = np.unique([w.dominant_hz for w in self.windows], return_counts=True)
        return float(values[np.argmax(counts)])

    def to_json(self, include_timing: bool = True) -> dict:
        doc = {
            "mode": self.mode,
            "analysis_rate_hz": self.analysis_rate_hz,
            "windows": [w.summary() for w in self.windows],
            "events": [json.loads(e.to_json()) for e in self.events],
            "changes": self.changes,
        }
        if include_timing:
            doc["timings_s"] = dict(self.timings_s)
            doc["total_time_s"] = self.total_time_s
        return doc


class _Clock:
    def __init__(self) -> None:
        self.totals = {name: 0.0 for name in STAGES}

    def run(self, stage: str, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.totals[stage] += time.perf_counter() - t0
        return out


def _scaled_stft(cfg: StftConfig, factor: int) -> StftConfig:
    """Same frequency resolution at a ``factor`` times higher rate."""
    n = 1 << math.ceil(math.log2(cfg.window_len * factor))
    return StftConfig(n, max(1, cfg.hop * n // cfg.window_len), cfg.window,
                      None if cfg.zero_pad_to is None else cfg.zero_pad_to * n // cfg.window_len)


def check_record(cfg: PipelineConfig, x: MultiChannelRecord) -> None:
    if abs(x.sample_rate_hz - cfg.sample_rate_hz) > RATE_TOLERANCE * cfg.sample_rate_hz:
        raise ConfigError(
            f"record rate {x.sample_rate_hz:g} Hz does not match sample_rate_hz "
            f"{cfg.sample_rate_hz:g} Hz"
        )
    need = int(math.ceil(cfg.window_s * cfg.sample_rate_hz))
    if x.n_samples < need:
        raise ConfigError(
            f"record holds {x.n_samples} samples, fewer than one window_s "
            f"({need} samples)"
        )
    if cfg.fusion_weights is not None and len(cfg.fusion_weights) != x.n_channels:
        raise ConfigError(
            f"{len(cfg.fusion_weights)} fusion weights for a {x.n_channels}-channel record"
        )


def analyze_window(
    x: MultiChannelRecord,
    cfg: PipelineConfig,
    library: SignatureLibrary | None,
    mode: str = "hybrid",
    start_s: float = 0.0,
    clock: _Clock | None = None,
) -> WindowResult:
    """Separation through classification for one preconditioned window."""
    clock = clock or _Clock()
    if mode == "hybrid":
        sep = clock.run("bss", separate_sources, x, cfg.ica_config(), cfg.subspace_min_fraction)
        weights = fusion_weights(cfg, sep.power_share)
        stft_cfg = cfg.stft
    elif mode == "fusion_only":
        mean = x.data.mean(axis=1)
        n = x.n_channels
        sep = Separation(mean, np.eye(n), None, x.with_data(x.data - mean[:, np.newaxis]),
                         np.full(n, 1.0 / n))
        weights = sep.power_share
        stft_cfg = _scaled_stft(cfg.stft, cfg.decimation)
    elif mode == "stft_only":
        first = x.select([0])
        mean = first.data.mean(axis=1)
        sep = Separation(mean, np.eye(x.n_channels)[:1], None,
                         first.with_data(first.data - mean[:, np.newaxis]), np.ones(1))
        weights = sep.power_share
        stft_cfg = _scaled_stft(cfg.stft, cfg.decimation)
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    specs = clock.run("stft", source_spectrograms, sep.sources, stft_cfg)
    feats = clock.run("features", source_features, sep.sources, specs, cfg)
    fused = clock.run("fuse", fuse, feats, weights.tolist())
    if library is None:
        ranked: list[tuple[str, float]] = []
    else:
        ranked = clock.run("classify", classify, fused, library)
    lead = int(np.argmax(weights))
    dominant = dominant_frequency(specs[lead], min_hz=1.0)
    end_s = start_s + x.n_samples / x.sample_rate_hz
    return WindowResult(start_s, end_s, sep, tuple(specs), tuple(feats), weights, fused,
                        tuple(ranked), dominant)


def window_bounds(n_samples: int, window_len: int) -> list[tuple[int, int]]:
    """Consecutive non-overlapping windows; a trailing partial window is dropped."""
    return [(k * window_len, (k + 1) * window_len) for k in range(n_samples // window_len)]


def run_analyze(
    cfg: PipelineConfig,
    x: MultiChannelRecord,
    library: SignatureLibrary | None = None,
    mode: str = "hybrid",
) -> AnalysisReport:
    """Analyze a whole record window by window.

    Args:
        cfg: Pipeline configuration.
        x: Input record at ``cfg.sample_rate_hz``.
        library: Signatures to classify against; loaded from
            ``cfg.library_path`` when omitted. Without any library every
            classification is empty.
        mode: ``hybrid`` (full chain), ``fusion_only`` (raw channels fused
            with equal weights, no multirate or separation) or ``stft_only``
            (first raw channel only).

    Raises:
        ConfigError: If the record does not fit the configuration.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    check_record(cfg, x)
    if library is None and cfg.library_path:
        library = SignatureLibrary.load(cfg.library_path)
    clock = _Clock()
    if mode == "hybrid":
        y = clock.run("decimate", decimate, x, cfg.decimation)
        y = clock.run("smooth", smooth, y, cfg.smooth_window)
        win = cfg.window_samples
    else:
        y = x
        win = int(round(cfg.window_s * x.sample_rate_hz))
    windows = [
        analyze_window(y.slice_samples(a, b), cfg, library, mode, a / y.sample_rate_hz, clock)
        for a, b in window_bounds(y.n_samples, win)
    ]
    t0 = time.perf_counter()
    events = alarm_mod.run_monitor(((w.start_s, w.classification) for w in windows), cfg.alarm)
    clock.totals["alarm"] += time.perf_counter() - t0
    return AnalysisReport(mode, y.sample_rate_hz, windows, events,
                          _changes(windows, library, cfg), clock.totals)


def _changes(windows: Sequence[WindowResult], library: SignatureLibrary | None,
             cfg: PipelineConfig) -> list[int]:
    """CUSUM over the leading fused feature, in library-normalized units."""
    if library is None or len(windows) <= cfg.change_warmup:
        return []
    series = np.array([w.fused.values[0] for w in windows]) / library.normalization[0]
    return detect_change(series, cfg.change_drift, cfg.change_threshold, cfg.change_warmup)


# -- calibration and comparison -----------------------------------------------


@dataclass(frozen=True)
class LabelledRecord:
    """A record with its fault labels, present from ``onset_s`` on."""

    record: MultiChannelRecord
    labels: frozenset[str]
    onset_s: float = 0.0

    def window_truth(self, start_s: float) -> frozenset[str]:
        return self.labels if start_s >= self.onset_s - 1e-9 else frozenset()


def window_corpus(
    cfg: PipelineConfig, records: Iterable[LabelledRecord], mode: str = "hybrid"
) -> list[tuple[FeatureVector, frozenset[str]]]:
    """Fused feature vector and ground truth of every window."""
    corpus = []
    for item in records:
        report = run_analyze(cfg, item.record, library=None, mode=mode)
        corpus += [(w.fused, item.window_truth(w.start_s)) for w in report.windows]
    return corpus


def calibrate_library(
    cfg: PipelineConfig, records: Iterable[LabelledRecord], mode: str = "hybrid"
) -> SignatureLibrary:
    return calibrate(window_corpus(cfg, records, mode))


@dataclass(frozen=True)
class ModeScore:
    """Window-level detection statistics of one mode over a scenario list.

    Attributes:
        windows: Windows analysed.
        fault_windows: Windows whose ground truth holds at least one fault.
        true_positives: Fault windows whose classification names a true fault.
        false_positives: Windows whose classification names a label absent
            from the ground truth.
        detection_latency_windows: Per faulty record, windows from the first
            fault window to the first detection (``None`` if never detected).
    """

    mode: str
    windows: int
    fault_windows: int
    true_positives: int
    false_positives: int
    detection_latency_windows: tuple[int | None, ...]

    @property
    def detection_rate(self) -> float:
        return self.true_positives / self.fault_windows if self.fault_windows else 0.0

    def as_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["detection_latency_windows"] = list(self.detection_latency_windows)
        doc["detection_rate"] = self.detection_rate
        return doc


def score_mode(
    cfg: PipelineConfig,
    records: Sequence[LabelledRecord],
    library: SignatureLibrary,
    mode: str,
) -> ModeScore:
    windows = fault_windows = tp = fp = 0
    latencies: list[int | None] = []
    for item in records:
        report = run_analyze(cfg, item.record, library, mode)
        first_fault = first_hit = None
        for k, w in enumerate(report.windows):
            truth = item.window_truth(w.start_s)
            found = {label for label, _ in w.classification}
            windows += 1
            fp += bool(found - truth)
            if truth:
                fault_windows += 1
                first_fault = k if first_fault is None else first_fault
                if found & truth:
                    tp += 1
                    first_hit = k if first_hit is None else first_hit
        if item.labels:
            latencies.append(None if first_hit is None else first_hit - first_fault)
    return ModeScore(mode, windows, fault_windows, tp, fp, tuple(latencies))


def run_compare(
    cfg: PipelineConfig,
    records: Sequence[LabelledRecord],
    modes: Sequence[str],
    libraries: Mapping[str, SignatureLibrary],
) -> list[ModeScore]:
    """Score each mode, with its own library, on the same labelled records."""
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode not in libraries:
            raise ValueError(f"no signature library for mode {mode!r}")
    if not records:
        return []
    return [score_mode(cfg, records, libraries[m], m) for m in modes]
