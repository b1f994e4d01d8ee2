"""Fit the trap-filling constant k_ap so the paired estimator returns P_ap = 11.7 %.

Runs the reference afterpulse experiment (mu = 0.1, eta = 10 %, no logic
deadtime) at a few k_ap values, averages over seeds, and solves the
locally linear relation for the target.  Prints the value to freeze into
``spadsim.model.DEFAULT_K_AP``.

    python scripts/calibrate_traps.py --seconds 60 --seeds 5
"""

import argparse
import dataclasses

import numpy as np

from spadsim.analysis import estimate_afterpulse
from spadsim.engine import SimConfig, simulate
from spadsim.model import DiodeModel, TrapModel, capture_window_ps

TARGET = 0.117


def mean_p_ap(k_ap, seconds, seeds):
    model = DiodeModel(traps=TrapModel(k_ap=k_ap))
    values = []
    for seed in range(seeds):
        cfg = SimConfig(model=model, mu=0.1, duration_ps=int(seconds * 1e12), seed=1000 + seed)
        illum = simulate(cfg)
        dark = simulate(dataclasses.replace(cfg, mu=0.0, seed=2000 + seed))
        values.append(estimate_afterpulse(illum, dark, model.gate).p_ap)
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(len(values)))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seconds", type=float, default=60.0)
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args()

    gate = DiodeModel().gate
    capture = capture_window_ps(gate) / gate.period_ps
    # cascade r/(1-r) = target with r = nbar * capture, nbar = 0.5 k_ap
    r = TARGET / (1 + TARGET)
    k0 = r / capture / 0.5
    print(f"capture fraction w_cap/T_g = {capture:.5f}; analytic first guess k_ap = {k0:.5f}")

    ks = [k0 * 0.98, k0 * 1.02]
    ps = []
    for k in ks:
        p, se = mean_p_ap(k, args.seconds, args.seeds)
        ps.append(p)
        print(f"k_ap = {k:.5f}: P_ap = {p:.5f} +- {se:.5f}")
    slope = (ps[1] - ps[0]) / (ks[1] - ks[0])
    k_fit = ks[0] + (TARGET - ps[0]) / slope
    p, se = mean_p_ap(k_fit, args.seconds, args.seeds)
    print(f"k_ap = {k_fit:.5f}: P_ap = {p:.5f} +- {se:.5f}")
    print(f"DEFAULT_K_AP = {k_fit:.4f}")


if __name__ == "__main__":
    main()
