"""On-disk formats: records, spectrogram exports and unmixing matrices.

A record is two files. ``<path>`` holds the samples and ``<path>.json`` is the
header::

    {"format_version": 1, "sample_rate_hz": 10000.0,
     "labels": ["ia", "ib", "ic"], "sample_count": 80000, "encoding": "f32le"}

``f32le`` payloads are little-endian float32 samples, channel-interleaved
(all channels of sample 0, then sample 1, ...). ``csv`` payloads have a
header row of labels and one row per sample, written with 17 significant
digits.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .bss import UnmixingMatrix, Whitener
from .records import MultiChannelRecord
from .stft import Spectrogram

FORMAT_VERSION = 1
ENCODINGS = ("f32le", "csv")
_HEADER_KEYS = ("format_version", "sample_rate_hz", "labels", "sample_count", "encoding")


class RecordFormatError(ValueError):
    """Base class for unreadable record files."""


class MalformedHeaderError(RecordFormatError):
    pass


class UnsupportedVersionError(RecordFormatError):
    pass


class TruncatedPayloadError(RecordFormatError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"payload truncated: expected {expected} bytes, found {actual}")
        self.expected = expected
        self.actual = actual


class CsvParseError(RecordFormatError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def header_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_record(r: MultiChannelRecord, path: str | Path, encoding: str = "f32le") -> None:
    """Write payload and header sidecar.

    ``f32le`` stores float32, so only float32-representable samples survive
    bit-exactly; ``csv`` keeps full double precision.
    """
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding!r}; expected one of {ENCODINGS}")
    path = Path(path)
    if encoding == "f32le":
        path.write_bytes(np.ascontiguousarray(r.data.T, dtype="<f4").tobytes())
    else:
        buf = _io.StringIO()
        buf.write(",".join(r.labels) + "\n")
        np.savetxt(buf, r.data.T, fmt="%.17g", delimiter=",")
        path.write_text(buf.getvalue())
    header = {
        "format_version": FORMAT_VERSION,
        "sample_rate_hz": float(r.sample_rate_hz),
        "labels": list(r.labels),
        "sample_count": r.n_samples,
        "encoding": encoding,
    }
    header_path(path).write_text(json.dumps(header, indent=2) + "\n")


def read_header(path: str | Path) -> dict:
    hp = header_path(path)
    try:
        doc = json.loads(hp.read_text())
    except FileNotFoundError:
        raise MalformedHeaderError(f"missing header file {hp}") from None
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"header {hp} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedHeaderError(f"header {hp} is not a JSON object")
    missing = [k for k in _HEADER_KEYS if k not in doc]
    if missing:
        raise MalformedHeaderError(f"header {hp} lacks {', '.join(missing)}")
    if doc["format_version"] != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"record format version {doc['format_version']!r} is not supported "
            f"(this build reads version {FORMAT_VERSION})"
        )
    labels = doc["labels"]
    if (
        not isinstance(labels, list)
        or not labels
        or not all(isinstance(s, str) for s in labels)
        or not isinstance(doc["sample_count"], int)
        or doc["sample_count"] < 0
        or not isinstance(doc["sample_rate_hz"], (int, float))
        or not doc["sample_rate_hz"] > 0
        or doc["encoding"] not in ENCODINGS
    ):
        raise MalformedHeaderError(f"header {hp} has invalid field values")
    return doc


def read_record(path: str | Path) -> MultiChannelRecord:
    path = Path(path)
    header = read_header(path)
    n_ch = len(header["labels"])
    n = header["sample_count"]
    if header["encoding"] == "f32le":
        payload = path.read_bytes()
        expected = 4 * n_ch * n
        if len(payload) < expected:
            raise TruncatedPayloadError(expected, len(payload))
        if len(payload) > expected:
            raise RecordFormatError(
                f"payload has {len(payload) - expected} trailing bytes beyond {expected}"
            )
        data = np.frombuffer(payload, dtype="<f4").reshape(n, n_ch).T.astype(np.float64)
    else:
        data = _read_csv(path, header["labels"], n)
    return MultiChannelRecord(float(header["sample_rate_hz"]), tuple(header["labels"]), data)


def _read_csv(path: Path, labels: list[str], n: int) -> np.ndarray:
    with path.open(newline="") as fh:
        rows = csv.reader(fh)
        head = next(rows, None)
        if head != labels:
            raise CsvParseError(1, f"column header {head} does not match labels {labels}")
        values = []
        for row in rows:
            line = rows.line_num
            if len(row) != len(labels):
                raise CsvParseError(line, f"expected {len(labels)} columns, found {len(row)}")
            try:
                values.append([float(v) for v in row])
            except ValueError as exc:
                raise CsvParseError(line, str(exc)) from None
    if len(values) != n:
        raise CsvParseError(
            len(values) + 1, f"expected {n} sample rows, found {len(values)}"
        )
    return np.array(values, dtype=np.float64).reshape(n, len(labels)).T


def write_spectrogram_csv(s: Spectrogram, path: str | Path) -> None:
    """Rows are frames: centre time, then one magnitude per frequency bin."""
    table = np.column_stack([s.frame_times_s, s.magnitudes])
    header = ",".join(["time_s"] + [f"{f:.17g}" for f in s.bin_freqs_hz])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="")


def write_timeseries_csv(r: MultiChannelRecord, path: str | Path) -> None:
    table = np.column_stack([r.times_s, r.data.T])
    header = ",".join(("time_s",) + r.labels)
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="")


def unmixing_to_json(w: UnmixingMatrix) -> dict:
    return {
        "w": w.w.tolist(),
        "whitener": {"mean": w.whitener.mean.tolist(), "transform": w.whitener.transform.tolist()},
        "fit_iterations": w.fit_iterations,
        "final_objective": w.final_objective,
        "converged": w.converged,
    }


def unmixing_from_json(doc: dict) -> UnmixingMatrix:
    wh = Whitener(np.array(doc["whitener"]["mean"]), np.array(doc["whitener"]["transform"]))
    return UnmixingMatrix(
        np.array(doc["w"]),
        wh,
        int(doc["fit_iterations"]),
        float(doc["final_objective"]),
        bool(doc["converged"]),
    )
