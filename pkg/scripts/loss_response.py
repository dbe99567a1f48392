"""Photon numbers, mode numbers and g2 versus equal internal losses.

    python scripts/loss_response.py --out loss_response.csv
    python scripts/loss_response.py --n-points 64 --steps 256   # quick look
"""

import argparse

import numpy as np

from lossy_pdc.config import PhysicsConfig
from lossy_pdc.gaussian import mode_numbers
from lossy_pdc.inversion import calibrate_gamma
from lossy_pdc.measurement import g2_click_value
from lossy_pdc.output import write_csv
from lossy_pdc.propagation import IntegratorConfig, propagate

COLUMNS = ["alpha_db_cm", "N_total", "mu_ab", "mu_a", "g2_s_click", "g2_i_click"]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--alphas", type=float, nargs="+", default=[0, 0.5, 1, 2, 5, 10, 20, 30])
    p.add_argument("--n-points", type=int, default=192)
    p.add_argument("--steps", type=int, default=512)
    p.add_argument("--target", type=float, default=2.1e-4, help="lossless photon number")
    p.add_argument("--out", default="loss_response.csv")
    args = p.parse_args()

    phys = PhysicsConfig().with_grid(args.n_points)
    integ = IntegratorConfig(args.steps)
    gamma = calibrate_gamma(phys, integ, args.target)
    rows = []
    for a in args.alphas:
        state = propagate(phys.with_losses(a, a).build_setup(gamma), integ)
        mu = mode_numbers(state)
        row = [a, state.total_photons(), mu.mu_ab, mu.mu_a,
               g2_click_value(state, "signal"), g2_click_value(state, "idler")]
        rows.append(row)
        print("  ".join(f"{x:10.5g}" for x in row), flush=True)
    write_csv(args.out, COLUMNS, rows, {"gamma_per_m": gamma, "n_points": args.n_points, "steps": args.steps})
    mu = np.array([r[2] for r in rows])
    print(f"mu_ab relative change: {np.round(100 * (mu / mu[0] - 1), 2)} %")


if __name__ == "__main__":
    main()
