"""Command-line front end.

All flags are in lab units (kHz, uW/cm^2, MHz/ms, us); conversion to rad/s
happens through the helpers in ``params``.  Exit codes: 0 success, 1 sweep
finished with failed rows, 2 usage/configuration error, 3 numerical
blowup, 4 file I/O error, 5 no gain feature found.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import protocols as proto
from .dynamics import SolverOptions
from .errors import (ConfigurationError, DomainError, NotFoundError, NumericalBlowupError,
                     ResourceError)
from .fileio import RunManifest, write_json, write_table_csv, write_trace_csv
from .grid import FULL_GRID, REDUCED_GRID, build_grid, write_snapshot_csv
from .params import RunConfig, default_params, khz, load_config, mhz_per_ms, to_khz
from .perturbative import NORMALIZATION

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_BLOWUP = 3
EXIT_IO = 4
EXIT_NOT_FOUND = 5

WORKERS_ENV = "RIRSIM_WORKERS"

SCAN_COLUMNS = ["rate_mhz_ms", "chirp", "intensity_uw_cm2", "mode", "peak_gain",
                "peak_delta_khz", "fwhm_khz", "g_ratio", "delta_nu_max_khz", "status"]
QUENCH_COLUMNS = ["i_high_uw_cm2", "i_low_uw_cm2", "delta_khz", "d_hole",
                  "recovery_time_us", "steady_gain", "status"]


class UsageError(Exception):
    pass


# -- setup -------------------------------------------------------------------

def _load(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig(params=default_params(), dp=REDUCED_GRID[0], p_max=REDUCED_GRID[1])
    dp, p_max = cfg.dp, cfg.p_max
    if args.grid == "full":
        dp, p_max = FULL_GRID
    elif args.grid == "reduced":
        dp, p_max = REDUCED_GRID
    if args.dp is not None:
        dp = args.dp
    if args.p_max is not None:
        p_max = args.p_max
    grid = build_grid(dp, p_max)
    opts = SolverOptions.from_strings(cfg.solver)
    return cfg.params, grid, opts


def _outputs(prefix, *suffixes):
    prefix = Path(prefix)
    parent = prefix.parent
    if not parent.is_dir():
        raise OSError(f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK):
        raise OSError(f"output directory is not writable: {parent}")
    return [parent / f"{prefix.name}{s}" for s in suffixes]


def _manifest(command, params, grid, opts, schedule, **extra):
    return RunManifest(command=command, params=params.to_dict(), grid=grid.to_dict(),
                       solver=opts.to_dict(), schedule=schedule.to_dict() if schedule else {},
                       extra=extra)


def _check_positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise UsageError(f"{name} must be positive, got {value}")


def _check_intensity(name, value):
    if not (value >= 0 and math.isfinite(value)):
        raise UsageError(f"{name} must be >= 0, got {value}")


# -- commands ----------------------------------------------------------------

def cmd_step(args):
    _check_intensity("--intensity", args.intensity)
    _check_positive("--duration-us", args.duration_us)
    params, grid, opts = _load(args)
    csv_path, man_path, met_path = _outputs(args.out, ".csv", ".manifest.json", ".metrics.json")
    delta = khz(args.delta_khz)
    duration = args.duration_us * 1e-6
    schedule = proto.scenario_step_on(args.intensity, delta, duration, params)
    if args.snapshot_every:
        opts = replace(opts, momentum_stride=args.snapshot_every)
    trace, first = proto.run_step_on(params, grid, args.intensity, delta, duration,
                                     opts=_step_opts(opts))
    metrics = {"t_max_s": None, "gain_at_max": None, "pi_over_delta_s": math.pi / abs(delta)
               if delta else None, **trace.flags}
    if first is not None:
        metrics.update(t_max_s=first[0], gain_at_max=first[1])
    manifest = _manifest("step", params, grid, _step_opts(opts), schedule,
                         intensity_uw_cm2=args.intensity)
    write_trace_csv(csv_path, trace)
    manifest.write(man_path)
    write_json(met_path, {"manifest_hash": manifest.content_hash, **metrics})
    for k, (t, (pops, eta)) in enumerate(sorted(trace.snapshots.items())):
        write_snapshot_csv(Path(f"{args.out}.snap{k:04d}.csv"), grid, pops, eta)
    print(f"wrote {csv_path}")
    return EXIT_OK


def _step_opts(opts):
    # step-on runs resolve the first maximum, so record every step
    return replace(opts, snapshot_stride=1)


def cmd_quench(args):
    _check_intensity("--i-high", args.i_high)
    _check_intensity("--i-low", args.i_low)
    _check_positive("--t-low-us", args.t_low_us)
    if args.delta_khz == 0:
        raise UsageError("--delta-khz must be nonzero")
    params, grid, opts = _load(args)
    csv_path, man_path, met_path = _outputs(args.out, ".csv", ".manifest.json", ".metrics.json")
    delta = khz(args.delta_khz)
    burn_in = args.burn_in_us * 1e-6 if args.burn_in_us else None
    res = proto.run_quench(params, grid, args.i_high, args.i_low, delta,
                           t_low=args.t_low_us * 1e-6, burn_in=burn_in, opts=opts,
                           check_saturation=args.check_burn_in)
    schedule = proto.scenario_quench(args.i_high, res.burn_in, args.i_low,
                                     args.t_low_us * 1e-6, delta, params)
    manifest = _manifest("quench", params, grid, opts, schedule,
                         i_high_uw_cm2=args.i_high, i_low_uw_cm2=args.i_low)
    write_trace_csv(csv_path, res.trace)
    manifest.write(man_path)
    write_json(met_path, {"manifest_hash": manifest.content_hash, **res.metrics.to_dict(),
                          "burn_in_s": res.burn_in, **res.info})
    print(f"d_hole = {res.metrics.d_hole:.4f}, recovery = {res.metrics.recovery_time * 1e6:.1f} us")
    return EXIT_OK


def cmd_scan(args):
    _check_intensity("--intensity", args.intensity)
    _check_positive("--rate-mhz-ms", args.rate_mhz_ms)
    _check_positive("--span-khz", args.span_khz)
    params, grid, opts = _load(args)
    rate = mhz_per_ms(args.rate_mhz_ms)
    span = khz(args.span_khz)
    signs = ["+", "-"] if args.both_chirps else [args.chirp]
    suffixes = []
    for s in signs:
        tag = ".plus" if s == "+" else ".minus"
        suffixes += [f"{tag}.csv", f"{tag}.manifest.json", f"{tag}.metrics.json"]
    paths = _outputs(args.out, *suffixes, ".compare.json")

    results = {}
    for s in signs:
        r = rate if s == "+" else -rate
        trace, metrics = proto.run_scan(params, grid, args.intensity, r, span, args.mode, opts)
        schedule = proto.symmetric_scan(args.intensity, r, span, params)
        extra = {"normalization": NORMALIZATION} if args.mode == "perturbative" else {}
        manifest = _manifest("scan", params, grid, opts, schedule, mode=args.mode,
                             intensity_uw_cm2=args.intensity, **extra)
        results[s] = (trace, metrics, manifest)

    for k, s in enumerate(signs):
        trace, metrics, manifest = results[s]
        csv_path, man_path, met_path = paths[3 * k:3 * k + 3]
        write_trace_csv(csv_path, trace)
        manifest.write(man_path)
        write_json(met_path, {"manifest_hash": manifest.content_hash, **_lab_metrics(metrics),
                              **trace.flags})
        print(f"chirp {s}: peak {metrics.peak_gain:.5f} at {to_khz(metrics.peak_delta):.2f} kHz, "
              f"fwhm {to_khz(metrics.fwhm):.2f} kHz")
    if args.both_chirps:
        g_ratio, dnu = proto.chirp_compare(results["-"][1], results["+"][1])
        write_json(paths[-1], {"g_ratio": g_ratio, "delta_nu_max_khz": to_khz(dnu),
                               "manifest_hashes": [results[s][2].content_hash for s in signs]})
        print(f"g_-/g_+ = {g_ratio:.5f}, delta_nu_max = {to_khz(dnu):.2f} kHz")
    return EXIT_OK


def _lab_metrics(m):
    return {**m.to_dict(), "peak_delta_khz": to_khz(m.peak_delta), "fwhm_khz": to_khz(m.fwhm)}


# -- sweeps ------------------------------------------------------------------

def _parse_sweep(path):
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"sweep spec not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"sweep spec is not valid JSON: {exc}") from exc
    if not isinstance(spec, dict):
        raise UsageError("sweep spec must be a JSON object")
    kind = spec.get("kind", "scan")
    tasks = []
    if kind == "scan":
        rates = spec.get("rates_mhz_ms", [])
        intens = spec.get("intensities", [0.5])
        chirps = spec.get("chirps", ["+", "-"])
        mode = spec.get("mode", "full")
        span = spec.get("span_khz", to_khz(proto.DEFAULT_SPAN))
        if mode not in ("full", "tel", "perturbative") or any(c not in "+-" for c in chirps):
            raise UsageError("bad mode or chirp list in sweep spec")
        for i in intens:
            for r in rates:
                for c in chirps:
                    tasks.append(("scan", {"intensity": float(i), "rate_mhz_ms": float(r),
                                           "chirp": c, "mode": mode, "span_khz": float(span)}))
    elif kind == "quench":
        i_low = float(spec.get("i_low", 1.0))
        delta = float(spec.get("delta_khz", -140.0))
        t_low = float(spec.get("t_low_us", 300.0))
        for i in spec.get("intensities", []):
            tasks.append(("quench", {"i_high": float(i), "i_low": i_low, "delta_khz": delta,
                                     "t_low_us": t_low}))
    else:
        raise UsageError(f"unknown sweep kind {kind!r}")
    if not tasks:
        raise UsageError("sweep spec lists no runs")
    return kind, tasks


def _run_task(task, params, grid_spec, opts):
    kind, p = task
    grid = build_grid(*grid_spec)
    try:
        if kind == "scan":
            rate = mhz_per_ms(p["rate_mhz_ms"]) * (1 if p["chirp"] == "+" else -1)
            _, m = proto.run_scan(params, grid, p["intensity"], rate, khz(p["span_khz"]),
                                  p["mode"], opts)
            return {"ok": True, "metrics": m}
        res = proto.run_quench(params, grid, p["i_high"], p["i_low"], khz(p["delta_khz"]),
                               t_low=p["t_low_us"] * 1e-6, opts=opts)
        return {"ok": True, "metrics": res.metrics}
    except (NumericalBlowupError, NotFoundError, DomainError, ConfigurationError) as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _workers(n_tasks):
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
        if n < 1:
            raise UsageError(f"{WORKERS_ENV} must be >= 1")
    else:
        n = os.cpu_count() or 1
    return min(n, n_tasks)


def cmd_sweep(args):
    kind, tasks = _parse_sweep(args.spec)
    n_workers = _workers(len(tasks))
    params, grid, opts = _load(args)
    (csv_path,) = _outputs(args.out, "")
    grid_spec = (grid.dp, grid.p_max)
    if n_workers == 1:
        results = [_run_task(t, params, grid_spec, opts) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_run_task, t, params, grid_spec, opts) for t in tasks]
            results = [f.result() for f in futures]

    rows = []
    if kind == "scan":
        by_key = {}
        for (_, p), r in zip(tasks, results):
            by_key[(p["intensity"], p["rate_mhz_ms"], p["chirp"])] = r
        for (_, p), r in zip(tasks, results):
            g_ratio = dnu = ""
            pair = [by_key.get((p["intensity"], p["rate_mhz_ms"], c)) for c in "-+"]
            if all(x is not None and x["ok"] for x in pair):
                g_ratio, d = proto.chirp_compare(pair[0]["metrics"], pair[1]["metrics"])
                dnu = to_khz(d)
            if r["ok"]:
                m = r["metrics"]
                rows.append([p["rate_mhz_ms"], p["chirp"], p["intensity"], p["mode"], m.peak_gain,
                             to_khz(m.peak_delta), to_khz(m.fwhm), g_ratio, dnu, "ok"])
            else:
                rows.append([p["rate_mhz_ms"], p["chirp"], p["intensity"], p["mode"],
                             "", "", "", "", "", "failed: " + r["error"]])
        header = SCAN_COLUMNS
    else:
        for (_, p), r in zip(tasks, results):
            if r["ok"]:
                m = r["metrics"]
                rows.append([p["i_high"], p["i_low"], p["delta_khz"], m.d_hole,
                             m.recovery_time * 1e6, m.steady_gain, "ok"])
            else:
                rows.append([p["i_high"], p["i_low"], p["delta_khz"], "", "", "",
                             "failed: " + r["error"]])
        header = QUENCH_COLUMNS
    write_table_csv(csv_path, header, rows)
    failed = sum(not r["ok"] for r in results)
    print(f"wrote {csv_path}: {len(rows)} rows, {failed} failed")
    return EXIT_PARTIAL if failed else EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [physics], [grid], [solver] sections")
    common.add_argument("--grid", choices=["reduced", "full"],
                        help="momentum grid preset (reduced: dp=0.05, p_max=25; "
                             "full: dp=0.01, p_max=35)")
    common.add_argument("--dp", type=float, help="grid spacing in units of 2 hbar k0")
    common.add_argument("--p-max", type=float, help="grid half-width in units of 2 hbar k0")
    common.add_argument("--out", required=True, help="output path prefix")

    parser = argparse.ArgumentParser(prog="rirsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("step", parents=[common], help="probe switched on at fixed detuning")
    p.add_argument("--intensity", type=float, required=True, help="uW/cm^2")
    p.add_argument("--delta-khz", type=float, required=True)
    p.add_argument("--duration-us", type=float, default=30.0)
    p.add_argument("--snapshot-every", type=int, default=0,
                   help="write momentum snapshots every N steps")
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("quench", parents=[common], help="strong-to-weak intensity step")
    p.add_argument("--i-high", type=float, required=True, help="uW/cm^2")
    p.add_argument("--i-low", type=float, default=1.0, help="uW/cm^2")
    p.add_argument("--delta-khz", type=float, default=-140.0)
    p.add_argument("--t-low-us", type=float, default=300.0)
    p.add_argument("--burn-in-us", type=float, default=None,
                   help="strong-probe duration (default 10*max(t_pump, 1/gamma_pop))")
    p.add_argument("--check-burn-in", action="store_true",
                   help="verify saturation against a run twice as long")
    p.set_defaults(func=cmd_quench)

    p = sub.add_parser("scan", parents=[common], help="linear detuning scan")
    p.add_argument("--intensity", type=float, required=True, help="uW/cm^2")
    p.add_argument("--rate-mhz-ms", type=float, default=8.0, help="|R| in MHz/ms")
    p.add_argument("--chirp", choices=["+", "-"], default="+")
    p.add_argument("--both-chirps", action="store_true")
    p.add_argument("--span-khz", type=float, default=600.0, help="scan covers +/- span")
    p.add_argument("--mode", choices=["full", "tel", "perturbative"], default="full")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("sweep", parents=[common], help="run a JSON-described batch")
    p.add_argument("--spec", required=True, help="JSON sweep description")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, DomainError, ResourceError) as exc:
        print(f"rirsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalBlowupError as exc:
        print(f"rirsim: numerical blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except NotFoundError as exc:
        print(f"rirsim: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except OSError as exc:
        print(f"rirsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
