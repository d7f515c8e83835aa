"""Mean sum-rate vs. transmit power flux density, one column per method.

    python3 scripts/power_sweep.py --config configs/single_user.yaml --out results/single_user
    python3 scripts/power_sweep.py --config configs/two_user.yaml --out results/two_user
"""
import argparse

from simuplink.config import load_config
from simuplink.harness import sweep_power, write_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/single_user.yaml")
    ap.add_argument("--out", default="results/power_sweep")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    config = load_config(args.config)
    results = sweep_power(config, args.workers)
    write_outputs(results, config, args.out, plot_name="sweep_power")

    L = config.layers[0]
    print(f"K = {config.users}, L = {L}; mean sum-rate [bits/s/Hz]")
    print("P_T  " + "".join(f"{m:>22s}" for m in config.methods))
    for p in config.pt_dbm_per_m2:
        print(f"{p:<5g}" + "".join(f"{results.mean(m, L, p):22.4e}" for m in config.methods))


if __name__ == "__main__":
    main()
