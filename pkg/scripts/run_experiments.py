"""Run the reference experiments at nominal settings and print a summary.

    python scripts/run_experiments.py            # about a minute
    python scripts/run_experiments.py --quick    # shorter runs, noisier numbers
"""

import argparse
import dataclasses

from spadsim.analysis import per_ns
from spadsim.control import DriftModel, run_stability
from spadsim.engine import SimConfig
from spadsim.experiments import (
    afterpulse_experiment,
    bias_sweep,
    delay_range,
    delay_scan,
    detrap_tau,
    jitter_experiment,
)

S = 10**12


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    scale = 0.1 if args.quick else 1.0
    base = SimConfig(seed=args.seed)

    print("bias sweep (v_ex, eta, P_dc, dark Hz)")
    for row in bias_sweep(base, [0.1, 0.3, 0.5, 0.7], duration_ps=int(1e11 * scale),
                          dark_duration_ps=int(1e13 * scale)):
        print(f"  {row.v_ex:.1f}  {100 * row.eta:6.2f} %  {row.p_dc:.3e}  {row.dark_hz:8.1f}")

    scan = delay_scan(base, delay_range(-400, 400, 10), dwell_ps=int(1e10 * scale))
    print(f"delay scan: FWHM {scan.fitted_fwhm_ps:.1f} ps, center {scan.fitted_center_ps:+.1f} ps ({scan.method})")

    jit = jitter_experiment(base, duration_ps=int(1e11 * scale))
    print(f"jitter: total {jit.total_fwhm_ps:.1f}, reference {jit.reference_fwhm_ps:.1f}, "
          f"device {jit.device_fwhm_ps:.1f} ps")

    run = afterpulse_experiment(dataclasses.replace(base, duration_ps=int(60 * S * scale)))
    r = run.report
    tau = detrap_tau(run, 12 * 10**6)
    print(f"afterpulsing: P_ap {100 * r.p_ap:.2f} +- {100 * r.p_ap_stderr:.2f} %, "
          f"per gate {r.p_ap_per_gate:.3e}, per ns {per_ns(r.p_ap_per_gate, 189.0):.3e}, "
          f"tau {tau / 1e6:.3f} us")

    for td_us in (1, 5, 20):
        cfg = dataclasses.replace(base, duration_ps=int(60 * S * scale), logic_deadtime_ps=td_us * 10**6,
                                  emit_truth_labels=False)
        print(f"  logic deadtime {td_us:2d} us: P_ap {100 * afterpulse_experiment(cfg).report.p_ap:.2f} %")

    quiet = DriftModel(efficiency_noise=0.0)
    free = run_stability(3, False, drift=quiet, seed=args.seed)
    print(f"stability, no feedback: 10 % crossing at {free.crossing_time(0.10):.1f} min")
    locked = run_stability(75 * scale, True, drift=quiet, seed=args.seed)
    print(f"stability, feedback: min eta {100 * locked.operating_etas().min():.2f} %, "
          f"duty {locked.duty_factor:.3f}, failed scans {locked.failed_scans}")


if __name__ == "__main__":
    main()
