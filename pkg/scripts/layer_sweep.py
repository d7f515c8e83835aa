"""Mean sum-rate vs. number of SIM layers.

    python3 scripts/layer_sweep.py --config configs/layer_sweep.yaml --out results/layers
"""
import argparse

from simuplink.config import load_config
from simuplink.harness import sweep_layers, write_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/layer_sweep.yaml")
    ap.add_argument("--out", default="results/layer_sweep")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    config = load_config(args.config)
    results = sweep_layers(config, args.workers)
    write_outputs(results, config, args.out, plot_name="sweep_layers")

    methods = list(config.methods)
    print("L   " + "".join(f"{m:>22s}" for m in methods))
    for L in config.layers:
        row = "".join(f"{results.mean(m, L):22.4e}" for m in methods)
        print(f"{L:<4d}{row}")
    qn = [results.mean("sim_qn", L) for L in config.layers] if "sim_qn" in methods else None
    if qn:
        best = config.layers[max(range(len(qn)), key=qn.__getitem__)]
        print(f"quasi-Newton sweet spot: L = {best}")


if __name__ == "__main__":
    main()
