"""Command-line interface: ``faultsig <subcommand>``.

Subcommands: generate, calibrate, analyze, monitor, compare, bench. Results
go to stdout (or ``--output``) as JSON; failures exit nonzero with a JSON
object ``{"error": <type>, "message": <text>}`` on stderr.

Configuration precedence: built-in defaults, then ``--config`` (a JSON
document shaped like :meth:`PipelineConfig.to_dict`), then flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
import time
from pathlib import Path
from typing import Sequence

from . import io as rio
from . import scenarios as sc
from .pipeline import (
    MODES,
    AnalysisReport,
    ConfigError,
    LabelledRecord,
    PipelineConfig,
    calibrate_library,
    run_analyze,
    run_compare,
)
from .signature import SignatureLibrary

BENCH_SAMPLE_RATE_HZ = 50_000.0
BENCH_DECIMATION = 20
LATENCY_BUDGET_S = 2.0


class CliError(Exception):
    """Bad invocation detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        _fail("UsageError", f"{self.prog}: {message}", code=2)


def _fail(kind: str, message: str, code: int = 1) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    raise SystemExit(code)


# -- config -------------------------------------------------------------------


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="pipeline config JSON")
    g.add_argument("--sample-rate", type=float, dest="sample_rate_hz", help="input rate in Hz")
    g.add_argument("--decimation", type=int, help="integer rate reduction before separation")
    g.add_argument("--smooth-window", type=int, help="odd moving-average length, 1 disables")
    g.add_argument("--window-s", type=float, help="analysis window length in seconds")
    g.add_argument("--seed", type=int, help="ICA initialization seed")
    g.add_argument("--library", dest="library_path", help="signature library JSON")


_OVERRIDES = ("sample_rate_hz", "decimation", "smooth_window", "window_s", "seed", "library_path")


def load_config(args: argparse.Namespace) -> PipelineConfig:
    doc = PipelineConfig().to_dict()
    if args.config is not None:
        try:
            doc.update(json.loads(args.config.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
    for key in _OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    return PipelineConfig.from_dict(doc)


def _write_json(doc, output: Path | None) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if output is None:
        sys.stdout.write(text)
    else:
        output.write_text(text)


def _library(cfg: PipelineConfig) -> SignatureLibrary | None:
    return SignatureLibrary.load(cfg.library_path) if cfg.library_path else None


# -- generate -------------------------------------------------------------------


def _scenario(args: argparse.Namespace, cfg: PipelineConfig) -> sc.Scenario:
    faults = tuple(f for f in args.faults.split(",") if f)
    return sc.Scenario(
        faults,
        args.noise,
        args.scenario_seed,
        snr_db=args.snr_db,
        duration_s=args.duration_s,
        onset_s=args.onset_s,
        sample_rate_hz=cfg.sample_rate_hz,
        aux_channels=args.aux_channels,
    )


def cmd_generate(args: argparse.Namespace) -> None:
    cfg = load_config(args)
    s = _scenario(args, cfg)
    record = s.record(cfg.operating_point)
    rio.write_record(record, args.output, args.encoding)
    _write_json(
        {
            "path": str(args.output),
            "header": str(rio.header_path(args.output)),
            "scenario": s.name,
            "labels": sorted(s.labels),
            "onset_s": s.onset_s,
            "channels": list(record.labels),
            "sample_count": record.n_samples,
        },
        None,
    )


# -- calibrate ------------------------------------------------------------------


def _manifest(path: Path) -> list[LabelledRecord]:
    """``[{"path": ..., "labels": [...], "onset_s": ...}, ...]``; paths relative to the manifest."""
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"manifest {path} is not valid JSON: {exc}") from None
    out = []
    for k, e in enumerate(entries):
        try:
            rec = rio.read_record(path.parent / e["path"])
            out.append(LabelledRecord(rec, frozenset(e.get("labels", [])), float(e.get("onset_s", 0.0))))
        except (KeyError, TypeError) as exc:
            raise CliError(f"manifest entry {k} is malformed: {exc!r}") from None
    return out


def _calibration_records(args: argparse.Namespace, cfg: PipelineConfig) -> list[LabelledRecord]:
    if getattr(args, "manifest", None) is not None:
        return _manifest(args.manifest)
    suite = sc.calibration_suite(
        args.healthy_seeds, args.single_seeds, args.pair_seeds, sample_rate_hz=cfg.sample_rate_hz
    )
    return [s.labelled(cfg.operating_point) for s in suite]


def _calibration_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("built-in calibration suite")
    g.add_argument("--healthy-seeds", type=int, default=80, help="healthy records per regime")
    g.add_argument("--single-seeds", type=int, default=1, help="records per single fault and regime")
    g.add_argument("--pair-seeds", type=int, default=2, help="records per fault pair and regime")


def cmd_calibrate(args: argparse.Namespace) -> None:
    cfg = load_config(args)
    records = _calibration_records(args, cfg)
    if not records:
        raise CliError("calibration corpus is empty")
    lib = calibrate_library(cfg, records, args.mode)
    lib.save(args.output)
    _write_json(
        {
            "path": str(args.output),
            "mode": args.mode,
            "records": len(records),
            "labels": list(lib.labels),
            "tolerance_radius": {e.label: e.tolerance_radius for e in lib.entries},
        },
        None,
    )


# -- analyze / monitor ------------------------------------------------------------


def export_report(report: AnalysisReport, directory: Path) -> None:
    """Plot data: per-window source time series and spectrograms, events, report."""
    directory.mkdir(parents=True, exist_ok=True)
    for k, w in enumerate(report.windows):
        stem = f"window_{k:03d}"
        rio.write_timeseries_csv(w.separation.sources, directory / f"{stem}_sources.csv")
        for j, spec in enumerate(w.spectrograms):
            rio.write_spectrogram_csv(spec, directory / f"{stem}_source_{j}_spectrogram.csv")
        if w.separation.unmixing is not None:
            doc = {
                "projection": w.separation.projection.tolist(),
                "unmixing": rio.unmixing_to_json(w.separation.unmixing),
            }
            (directory / f"{stem}_unmixing.json").write_text(json.dumps(doc) + "\n")
    (directory / "events.jsonl").write_text("".join(e.to_json() + "\n" for e in report.events))
    (directory / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")


def cmd_analyze(args: argparse.Namespace) -> None:
    cfg = load_config(args)
    record = rio.read_record(args.record)
    report = run_analyze(cfg, record, _library(cfg), args.mode)
    if args.export_dir is not None:
        export_report(report, args.export_dir)
    doc = report.to_json(include_timing=not args.no_timing)
    doc["dominant_hz"] = report.dominant_hz
    _write_json(doc, args.output)


def cmd_monitor(args: argparse.Namespace) -> None:
    cfg = load_config(args)
    lib = _library(cfg)
    if lib is None:
        raise CliError("monitor needs a signature library (--library or library_path)")
    record = rio.read_record(args.record)
    report = run_analyze(cfg, record, lib, args.mode)
    text = "".join(e.to_json() + "\n" for e in report.events)
    if args.output is None:
        sys.stdout.write(text)
    else:
        args.output.write_text(text)


# -- compare --------------------------------------------------------------------


def _library_specs(specs: Sequence[str]) -> dict[str, Path]:
    out = {}
    for spec in specs:
        mode, sep, path = spec.partition("=")
        if not sep or mode not in MODES:
            raise CliError(f"--mode-library expects MODE=PATH with MODE in {MODES}, got {spec!r}")
        out[mode] = Path(path)
    return out


def cmd_compare(args: argparse.Namespace) -> None:
    cfg = load_config(args)
    modes = [m for m in args.modes.split(",") if m]
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise CliError(f"unknown modes {unknown}; expected some of {MODES}")
    given = _library_specs(args.mode_library)
    libraries = {m: SignatureLibrary.load(p) for m, p in given.items()}
    missing = [m for m in modes if m not in libraries]
    if missing:
        cal = _calibration_records(args, cfg)
        for m in missing:
            libraries[m] = calibrate_library(cfg, cal, m)
    seeds = range(args.first_seed, args.first_seed + args.seeds)
    scenarios = sc.SUITES[args.suite](seeds, sample_rate_hz=cfg.sample_rate_hz)
    records = [s.labelled(cfg.operating_point) for s in scenarios]
    scores = run_compare(cfg, records, modes, libraries)
    _write_json(
        {
            "suite": args.suite,
            "scenarios": [s.name for s in scenarios],
            "modes": [s.as_dict() for s in scores],
        },
        args.output,
    )


# -- bench ----------------------------------------------------------------------


def cmd_bench(args: argparse.Namespace) -> None:
    if args.sample_rate_hz is None:
        args.sample_rate_hz = BENCH_SAMPLE_RATE_HZ
    if args.decimation is None:
        args.decimation = BENCH_DECIMATION
    cfg = load_config(args)
    cfg = dataclasses.replace(cfg, window_s=args.unit_s)
    s = sc.Scenario(
        ("valve",), "gaussian", cfg.seed, duration_s=args.unit_s, onset_s=0.0,
        sample_rate_hz=cfg.sample_rate_hz, aux_channels=args.aux_channels,
    )
    record = s.record(cfg.operating_point)
    lib = _library(cfg)
    runs, stages = [], []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        report = run_analyze(cfg, record, lib)
        runs.append(time.perf_counter() - t0)
        stages.append(report.timings_s)
    best = min(range(len(runs)), key=runs.__getitem__)
    _write_json(
        {
            "unit_s": args.unit_s,
            "channels": record.n_channels,
            "sample_rate_hz": cfg.sample_rate_hz,
            "decimation": cfg.decimation,
            "classified": lib is not None,
            "runs_s": runs,
            "best_s": runs[best],
            "median_s": statistics.median(runs),
            "stage_s": stages[best],
            "budget_s": LATENCY_BUDGET_S,
            "within_budget": runs[best] <= LATENCY_BUDGET_S,
        },
        args.output,
    )


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faultsig", description="Motor-current fault signature toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a seeded synthetic record")
    _config_flags(p)
    p.add_argument("-o", "--output", type=Path, required=True, help="payload path")
    p.add_argument("--faults", default="", help=f"comma-separated subset of {sorted(sc.FAULTS)}")
    p.add_argument("--noise", default="gaussian", choices=sc.NOISE_REGIMES + ("none",))
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--scenario-seed", type=int, default=0, help="noise and fault seed")
    p.add_argument("--duration", type=float, default=8.0, dest="duration_s")
    p.add_argument("--onset", type=float, default=2.0, dest="onset_s", help="fault onset in s")
    p.add_argument("--aux-channels", type=int, default=0, choices=(0, 1, 2))
    p.add_argument("--encoding", default="f32le", choices=rio.ENCODINGS)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("calibrate", help="build a signature library")
    _config_flags(p)
    p.add_argument("-o", "--output", type=Path, required=True, help="library JSON path")
    p.add_argument("--mode", default="hybrid", choices=MODES)
    p.add_argument("--manifest", type=Path,
                   help="JSON list of {path, labels, onset_s}; replaces the built-in suite")
    _calibration_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", help="analyze a record and print the report")
    _config_flags(p)
    p.add_argument("record", type=Path)
    p.add_argument("--mode", default="hybrid", choices=MODES)
    p.add_argument("-o", "--output", type=Path, help="report path (default stdout)")
    p.add_argument("--export-dir", type=Path, help="write spectrogram, time-series and event files")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("monitor", help="window-by-window alarm events as JSON lines")
    _config_flags(p)
    p.add_argument("record", type=Path)
    p.add_argument("--mode", default="hybrid", choices=MODES)
    p.add_argument("-o", "--output", type=Path, help="events path (default stdout)")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("compare", help="score processing modes on a scenario suite")
    _config_flags(p)
    p.add_argument("--suite", default="valve", choices=sorted(k for k in sc.SUITES if k != "calibration"))
    p.add_argument("--modes", default=",".join(MODES), help="comma-separated modes")
    p.add_argument("--seeds", type=int, default=10, help="seeds per scenario case")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--mode-library", action="append", default=[], metavar="MODE=PATH",
                   help="library for one mode; other modes are calibrated on the built-in suite")
    _calibration_flags(p)
    p.add_argument("-o", "--output", type=Path, help="table path (default stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="time the full pipeline over one analysis unit")
    _config_flags(p)
    p.add_argument("--unit-s", type=float, default=2.0, help="record length analysed per run")
    p.add_argument("--aux-channels", type=int, default=1, choices=(0, 1, 2),
                   help="auxiliary channels beyond the three phases")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("-o", "--output", type=Path, help="result path (default stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, rio.RecordFormatError, CliError, ValueError, OSError) as exc:
        _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
