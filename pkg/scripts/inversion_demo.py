"""Estimate (alpha_bar, r) from three example g2 readings of the reference waveguide.

A coarse forward grid seeds Newton refinement on the full model. The grid is
cached under --cache, so repeated runs only pay for the refinement.

    python scripts/inversion_demo.py
    python scripts/inversion_demo.py --n-points 64 --steps 256 --grid-n-points 32 --grid-steps 128
"""

import argparse
import json

from lossy_pdc.config import PhysicsConfig
from lossy_pdc.inversion import (
    ForwardModel,
    InversionError,
    build_forward_grid,
    calibrate_gamma,
    invert_losses,
)
from lossy_pdc.propagation import IntegratorConfig

READINGS = {
    "s1": (1.6, 1.86, -0.225),
    "s2": (1.85, 1.86, None),
    "s3": (1.6, 1.7, None),
}


def model_at(n_points, steps, target):
    phys, integ = PhysicsConfig().with_grid(n_points), IntegratorConfig(steps)
    return ForwardModel(phys, integ, calibrate_gamma(phys, integ, target))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-points", type=int, default=192)
    p.add_argument("--steps", type=int, default=512)
    p.add_argument("--grid-n-points", type=int, default=64)
    p.add_argument("--grid-steps", type=int, default=128)
    p.add_argument("--grid-shape", type=int, nargs=2, default=[21, 19])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--target", type=float, default=2.1e-4)
    p.add_argument("--cache", default=".cache")
    args = p.parse_args()

    coarse = model_at(args.grid_n_points, args.grid_steps, args.target)
    fine = model_at(args.n_points, args.steps, args.target)
    grid = build_forward_grid(coarse, (0.0, 30.0), (-0.9, 0.9), tuple(args.grid_shape),
                              jobs=args.jobs, cache_dir=args.cache)
    for name, (g2_s, g2_i, r_n) in READINGS.items():
        try:
            est = invert_losses(fine, grid, g2_s, g2_i, r_n=r_n)
        except InversionError as exc:
            print(f"{name}: {type(exc).__name__}: {exc}")
            continue
        print(name, json.dumps(est.to_json(), indent=1))


if __name__ == "__main__":
    main()
