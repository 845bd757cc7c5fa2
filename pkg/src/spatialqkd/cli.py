"""Command-line interface.

Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

from .analytic import UnusableModesWarning
from .config import ConfigError, load_config
from .events.estimate import InconsistentInputsError, estimate_parameters
from .events.histograms import NoPeakError, amplitude_width, build_histograms, fit_gaussian, histograms_csv
from .events.matching import CoincidenceSet
from .events.matrix import matrix_from_events
from .events.stream import DETECTORS, EventFormatError, read_stream
from .layouts import ModeGrid
from .physics import OpticsParams
from .qkd import (
    DEFAULT_SPACINGS,
    NEXT_GEN_SPACINGS,
    QkdMetrics,
    ThresholdError,
    dimension_sweep,
    qder,
    security_threshold,
    sweep_csv,
)
from .simulate import run_simulation, stream_path

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PLANE_OF = {"pos": "position", "mom": "momentum"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EXIT_RUNTIME) from exc


def _load(path: str):
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except OSError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from exc


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out)
    try:
        summary = run_simulation(cfg.sim, out, workers=args.workers or cfg.workers)
    except OSError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from exc
    text = summary.to_json() + "\n"
    _write_text(out / "summary.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def _read_streams(in_dir: Path) -> dict[str, object]:
    streams = {}
    for name in DETECTORS:
        path = stream_path(in_dir, name)
        try:
            _, rec = read_stream(path)
        except FileNotFoundError as exc:
            raise CliError(f"missing event stream {path}", EXIT_RUNTIME) from exc
        except EventFormatError as exc:
            raise CliError(f"{path}: {exc}", EXIT_RUNTIME) from exc
        except OSError as exc:
            raise CliError(f"{path}: {exc.strerror or exc}", EXIT_RUNTIME) from exc
        streams[name] = rec
    return streams


def _duration(in_dir: Path, streams: dict) -> float:
    summary = in_dir / "summary.json"
    if summary.exists():
        try:
            return float(json.loads(summary.read_text())["duration_s"])
        except (OSError, ValueError, KeyError, TypeError):
            pass
    ts = [int(r["t"][-1]) for r in streams.values() if len(r)]
    return max(ts) * 1e-12 if ts else 0.0


def _coincidence_sets(streams: dict, tau: float, shift_ps: int = 0) -> list[CoincidenceSet]:
    out = []
    for a in ("alice_pos", "alice_mom"):
        for b in ("bob_pos", "bob_mom"):
            out.append(
                CoincidenceSet.from_records(
                    PLANE_OF[a[-3:]], streams[a], PLANE_OF[b[-3:]], streams[b], tau, shift_ps
                )
            )
    return out


def _widths_csv(hists: dict, optics: OpticsParams) -> tuple[str, list[dict]]:
    rows = []
    for key, h in hists.items():
        row = {"kind": h.kind, "coord": h.coord, "plane": h.plane, "role": "narrow" if h.narrow else "broad"}
        try:
            fit = fit_gaussian(h)
            row.update(
                width_px=fit.width_px,
                amplitude_width=amplitude_width(fit.width_px, h.plane, optics),
                unit="um" if h.plane == "position" else "1/um",
                under_resolved=fit.under_resolved,
            )
        except (NoPeakError, ValueError):
            row.update(width_px=None, amplitude_width=None, unit=None, under_resolved=None)
        rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["kind", "coord", "plane", "role", "width_px", "amplitude_width", "unit",
                                        "under_resolved"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)) for k, v in r.items()})
    return buf.getvalue(), rows


def cmd_analyze(args) -> int:
    in_dir, out = Path(args.input), Path(args.out)
    try:
        grid = ModeGrid.from_json(Path(args.grid).read_text())
    except OSError as exc:
        raise CliError(f"cannot read grid {args.grid}: {exc.strerror or exc}", EXIT_RUNTIME) from exc
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(f"invalid grid {args.grid}: {exc}", EXIT_USAGE) from exc
    if args.tau < 0 or not 0 < args.eta <= 1:
        raise CliError("--tau must be >= 0 and --eta in (0, 1]", EXIT_USAGE)
    streams = _read_streams(in_dir)
    T = _duration(in_dir, streams)
    shift_ps = int(max(1e6, 50_000 * args.tau))
    prompt = _coincidence_sets(streams, args.tau)
    delayed = _coincidence_sets(streams, args.tau, shift_ps)

    hists = build_histograms(prompt, grid.region.center, accidentals=delayed)
    _write_text(out / "histograms.csv", histograms_csv(hists))
    widths_text, width_rows = _widths_csv(hists, OpticsParams())
    _write_text(out / "widths.csv", widths_text)

    rate = (lambda n: n / T) if T > 0 else (lambda n: 0.0)
    matched = [(p, d) for p, d in zip(prompt, delayed) if p.matched_basis]
    singles = [rate(len(streams[n])) for n in DETECTORS]
    S = sum(singles) / len(singles)
    ctime = sum(rate(len(p)) for p, _ in matched) / max(len(matched), 1)
    cst = max(0.0, sum(rate(len(p) - len(d)) for p, d in matched) / max(len(matched), 1))
    try:
        est = asdict(estimate_parameters(S, cst, args.eta, args.tau, ctime))
    except InconsistentInputsError as exc:
        est = {"error": str(exc)}

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnusableModesWarning)
        matrix, tally = matrix_from_events(prompt, grid)
    _write_text(out / "matrix.csv", matrix.to_csv())
    sifted = rate(tally.binned)
    if matrix.effective_d:
        m = QkdMetrics.from_error(grid.d, qder(matrix), sifted)
        qkd = asdict(m)
    else:
        qkd = {"d": grid.d, "qder_e": None, "threshold_e": security_threshold(grid.d),
               "bits_per_photon": None, "sifted_rate": 0.0, "bit_rate": 0.0}
    qkd["effective_d"] = matrix.effective_d
    report = {
        "duration_s": T,
        "tau_ns": args.tau,
        "singles_rate": dict(zip(DETECTORS, singles)),
        "widths": width_rows,
        "estimate": est,
        "qkd": qkd,
        "tally": {"binned": tally.binned, "off_mode": tally.off_mode, "sifted_out": tally.sifted_out},
        "warnings": [str(w.message) for w in caught],
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    _write_text(out / "metrics.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    next_gen = args.next_gen or cfg.next_gen
    if next_gen and not cfg.next_gen:
        cfg = replace(cfg, next_gen=True)
    spacings = cfg.spacings or (NEXT_GEN_SPACINGS if next_gen else DEFAULT_SPACINGS)
    rows = dimension_sweep(cfg.model(), cfg.layouts, spacings, cfg.d_max)
    text = sweep_csv(rows)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        _write_text(Path(args.out), text)
    return EXIT_OK


def cmd_threshold(args) -> int:
    if args.d < 2:
        raise CliError(f"d must be >= 2, got {args.d}", EXIT_USAGE)
    try:
        print(f"{security_threshold(args.d):.6f}")
    except ThresholdError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from exc
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatialqkd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate four event streams")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="event streams to widths, rates and QKD metrics")
    a.add_argument("-i", "--input", required=True, help="directory holding the four streams")
    a.add_argument("-g", "--grid", required=True, help="mode grid JSON")
    a.add_argument("--tau", type=float, required=True, help="coincidence gate (ns)")
    a.add_argument("--eta", type=float, default=0.02, help="per-beam efficiency for rate estimation")
    a.add_argument("-o", "--out", required=True)
    a.set_defaults(func=cmd_analyze)

    w = sub.add_parser("sweep", help="analytic dimension sweep as CSV")
    w.add_argument("-c", "--config", required=True)
    w.add_argument("--next-gen", action="store_true")
    w.add_argument("-o", "--out", required=True, help="CSV path or - for stdout")
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("threshold", help="security threshold QDER for dimension d")
    t.add_argument("-d", type=int, required=True)
    t.set_defaults(func=cmd_threshold)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
