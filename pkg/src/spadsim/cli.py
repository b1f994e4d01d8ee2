"""Command-line experiment drivers.

    spadsim simulate    --config base.cfg --set mu=0 --duration-s 60 --out dark.tags
    spadsim bias-sweep  --v-ex 0.1,0.3,0.5 --out sweep.csv
    spadsim delay-scan  --range -400:400 --step 10 --out scan.csv
    spadsim afterpulse  --duration-s 60 --out afterpulse.txt
    spadsim jitter      --out jitter.txt
    spadsim stability   --hours 75 --feedback --out stability.csv

Every command writes ``<out>.manifest.json`` holding the resolved
configuration; passing that file back as ``--config`` reproduces the run.
Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import FitError, StatisticsError
from .config import RunConfig, load_config
from .control import run_stability
from .engine import RNG_ALGORITHM, simulate
from .experiments import afterpulse_experiment, bias_sweep, delay_range, delay_scan, detrap_tau, jitter_experiment
from .model import BiasPoint, ConfigError
from .tagio import FORMAT_VERSION, write_tags, write_truth

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs: list[Path], derived: dict | None = None):
    manifest = {
        "command": command,
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "rng": RNG_ALGORITHM,
        "seed": cfg["seed"],
        "config": cfg.snapshot(),
        "derived": derived or {},
        "outputs": [str(p) for p in outputs],
    }
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_record(path: Path, record: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in record.items():
            f.write(f"{key} = {_fmt(value)}\n")


def write_csv(path: Path, header: list[str], rows, trailer: list[str] = ()):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        for line in trailer:
            f.write(f"# {line}\n")


def cmd_simulate(args, cfg: RunConfig) -> int:
    sim = cfg.sim_config(emit_truth_labels=args.truth)
    stream = simulate(sim)
    out = Path(args.out or "out.tags")
    write_tags(out, stream)
    outputs = [out]
    if args.truth:
        truth_path = Path(str(out) + ".truth")
        write_truth(truth_path, stream)
        outputs.append(truth_path)
    t = stream.truth
    derived = {
        "gate_period_ps": sim.model.gate.period_ps,
        "deadtime_gates": sim.deadtime_gates,
        "n_tags": len(stream),
        "n_photon": t.n_photon,
        "n_dark": t.n_dark,
        "n_afterpulse": t.n_afterpulse,
        "n_suppressed": t.n_suppressed,
        "n_gates": t.n_gates,
        "n_laser_pulses": t.n_laser_pulses,
    }
    write_manifest(out, "simulate", cfg, outputs, derived)
    print(f"wrote {len(stream)} tags to {out} (deadtime {sim.deadtime_gates} gates)")
    return EXIT_OK


def cmd_bias_sweep(args, cfg: RunConfig) -> int:
    values = cfg["sweep_v_ex"]
    if not values:
        raise UsageError("bias list is empty")
    for v in values:
        BiasPoint(v)
    ps = 10**12
    rows = bias_sweep(cfg.sim_config(), values, mu=cfg["sweep_mu"],
                      duration_ps=int(round(cfg["sweep_duration"] * ps)),
                      dark_duration_ps=int(round(cfg["sweep_dark_duration"] * ps)),
                      dark_deadtime_ps=int(round(cfg["sweep_dark_deadtime"] * 10**6)))
    out = Path(args.out or "bias_sweep.csv")
    write_csv(out, ["v_ex", "eta", "p_dc", "dark_hz"], [(r.v_ex, r.eta, r.p_dc, r.dark_hz) for r in rows])
    write_manifest(out, "bias-sweep", cfg, [out])
    for r in rows:
        print(f"v_ex={r.v_ex:.3f} eta={r.eta:.4f} p_dc={r.p_dc:.3e} dark_hz={r.dark_hz:.1f}")
    return EXIT_OK


def cmd_delay_scan(args, cfg: RunConfig) -> int:
    if not cfg["scan_step"] > 0:
        raise UsageError("scan step must be positive")
    if not cfg["scan_dwell"] > 0:
        raise UsageError("scan dwell must be positive")
    delays = delay_range(cfg["scan_start"], cfg["scan_stop"], cfg["scan_step"])
    dwell_ps = int(round(cfg["scan_dwell"] * 10**12))
    if dwell_ps <= 0:
        raise UsageError("scan dwell rounds to zero picoseconds")
    result = delay_scan(cfg.sim_config(), delays, dwell_ps, mu=cfg["scan_mu"])
    out = Path(args.out or "delay_scan.csv")
    summary = (f"fitted_fwhm_ps={result.fitted_fwhm_ps!r} fitted_center_ps={result.fitted_center_ps!r} "
               f"fitted_amplitude={result.fitted_amplitude!r} method={result.method}")
    write_csv(out, ["delay_ps", "counts", "eta"],
              zip(result.delays_ps.tolist(), result.counts.tolist(), result.response.tolist()), [summary])
    write_manifest(out, "delay-scan", cfg, [out], {"fitted_fwhm_ps": result.fitted_fwhm_ps})
    print(summary)
    return EXIT_OK


def cmd_afterpulse(args, cfg: RunConfig) -> int:
    run = afterpulse_experiment(cfg.sim_config(), cfg["main_peak_half_window"])
    record = run.report.as_record()
    try:
        record["tau_detrap_ps"] = detrap_tau(run, int(round(cfg["tau_fit_window"] * 10**6)))
    except FitError as exc:
        record["tau_detrap_ps"] = "nan"
        print(f"warning: detrapping fit failed: {exc}", file=sys.stderr)
    out = Path(args.out or "afterpulse.txt")
    write_record(out, record)
    write_manifest(out, "afterpulse", cfg, [out])
    r = run.report
    print(f"P_ap = {100 * r.p_ap:.3f} % +- {100 * r.p_ap_stderr:.3f}; per gate {r.p_ap_per_gate:.3e}; "
          f"per ns {r.p_ap_per_ns:.3e}")
    return EXIT_OK


def cmd_jitter(args, cfg: RunConfig) -> int:
    report = jitter_experiment(cfg.sim_config(), mu=cfg["jitter_mu"],
                               duration_ps=int(round(cfg["jitter_duration"] * 10**12)))
    out = Path(args.out or "jitter.txt")
    write_record(out, report.as_record())
    write_manifest(out, "jitter", cfg, [out])
    print(f"total {report.total_fwhm_ps:.1f} ps, reference {report.reference_fwhm_ps:.1f} ps, "
          f"device {report.device_fwhm_ps:.1f} ps")
    return EXIT_OK


def cmd_stability(args, cfg: RunConfig) -> int:
    hours = cfg["stability_duration"]
    if not hours > 0:
        raise UsageError("hours must be positive")
    trace = run_stability(hours, cfg["feedback"], drift=cfg.drift(), policy=cfg.policy(), model=cfg.model(),
                          bias=BiasPoint(cfg["stability_v_ex"]), mu=cfg["stability_mu"], seed=cfg["seed"])
    out = Path(args.out or "stability.csv")
    write_csv(out, ["time_min", "eta", "delay_ps", "in_scan"],
              ((s.time_min, s.eta, s.delay_ps, int(s.in_scan)) for s in trace.samples))
    ops = trace.operating_etas()
    derived = {"duty_factor": trace.duty_factor, "min_eta": float(ops.min()) if ops.size else None,
               "failed_scans": trace.failed_scans}
    write_manifest(out, "stability", cfg, [out], derived)
    print(f"{len(trace.samples)} samples; duty factor {trace.duty_factor:.4f}; "
          f"min operating eta {derived['min_eta']}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "bias-sweep": cmd_bias_sweep,
    "delay-scan": cmd_delay_scan,
    "afterpulse": cmd_afterpulse,
    "jitter": cmd_jitter,
    "stability": cmd_stability,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file, or a run manifest (JSON)")
    common.add_argument("--seed", type=int, help="64-bit RNG seed (overrides the config)")
    common.add_argument("--out", help="output path")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--truth", action="store_true", help="also write a truth-label sidecar")
    common.add_argument("--duration-s", type=float, help="simulated duration in seconds")

    parser = argparse.ArgumentParser(prog="spadsim", description="Sine-gated SPAD simulator and characterization")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a binary tag file")
    p = sub.add_parser("bias-sweep", parents=[common], help="efficiency and dark probability versus bias")
    p.add_argument("--v-ex", help="comma-separated excess-bias values")
    p = sub.add_parser("delay-scan", parents=[common], help="efficiency versus laser delay")
    p.add_argument("--range", dest="scan_range", metavar="START:STOP", help="delay range in ps")
    p.add_argument("--step", type=float, help="delay step in ps")
    p.add_argument("--dwell-s", type=float, help="integration time per delay point")
    sub.add_parser("afterpulse", parents=[common], help="paired illuminated/dark afterpulse estimate")
    sub.add_parser("jitter", parents=[common], help="system, reference and device timing jitter")
    p = sub.add_parser("stability", parents=[common], help="efficiency trace under phase drift")
    p.add_argument("--hours", type=float)
    p.add_argument("--feedback", action=argparse.BooleanOptionalAction, default=None)
    return parser


def resolve_config(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.duration_s is not None:
        overrides.append(f"duration_s={args.duration_s!r}")
    if getattr(args, "v_ex", None) is not None:
        overrides.append(f"sweep_v_ex={args.v_ex}")
    if getattr(args, "scan_range", None) is not None:
        start, sep, stop = args.scan_range.partition(":")
        if not sep:
            raise UsageError("--range expects START:STOP")
        overrides += [f"scan_start_ps={start}", f"scan_stop_ps={stop}"]
    if getattr(args, "step", None) is not None:
        overrides.append(f"scan_step_ps={args.step!r}")
    if getattr(args, "dwell_s", None) is not None:
        overrides.append(f"scan_dwell_s={args.dwell_s!r}")
    if getattr(args, "hours", None) is not None:
        overrides.append(f"stability_duration_h={args.hours!r}")
    if getattr(args, "feedback", None) is not None:
        overrides.append(f"feedback={args.feedback}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            cfg.sim_config()
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"spadsim {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StatisticsError, FitError, OSError) as exc:
        print(f"spadsim {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
