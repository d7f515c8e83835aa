"""Compare propagation-matrix normalizations on the single-user orderings.

For each normalization, reports mean sum-rate of the SIM optimizers, the
matched filter and both digital arrays at one layer count, and the
quasi-Newton layer curve.  This is the evidence behind the harness default
(``geometry.propagation_normalization: passive``).

    python3 scripts/normalization_study.py --trials 20
"""
import argparse
import dataclasses

from simuplink.config import config_from_dict
from simuplink.geometry import NORMALIZATIONS
from simuplink.harness import run_experiment, sweep_layers


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=20, help="realizations per normalization (one placement each)")
    ap.add_argument("--layers", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for norm in NORMALIZATIONS:
        base = config_from_dict({
            "users": 1,
            "layers": [5],
            "placements": args.trials,
            "realizations_per_placement": 1,
            "master_seed": args.seed,
            "geometry": {"propagation_normalization": norm},
        })
        res = run_experiment(base)
        print(f"== {norm}")
        for a in res.aggregates:
            print(f"   {a.method:20s} L=5  R = {a.mean_sum_rate:.4e} +/- {a.ci95:.1e}")
        sweep = sweep_layers(dataclasses.replace(base, methods=["sim_qn"], layers=args.layers))
        curve = "  ".join(f"L={L}: {sweep.mean('sim_qn', L):.3e}" for L in args.layers)
        print(f"   quasi-Newton layer curve: {curve}")


if __name__ == "__main__":
    main()
