"""Train both GP variants on the ACC benchmark and compare all four controllers.

    python scripts/run_acc_comparison.py --out runs/acc --seed 0
"""

import argparse
import json
import logging
import time

from gpsocp.harness import ExperimentConfig, compare_controllers, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/acc")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    config = load_config(args.config) if args.config else ExperimentConfig()
    from dataclasses import replace

    config = replace(config, seed=args.seed, out_dir=args.out)
    start = time.perf_counter()
    summary, episodes, training = compare_controllers(config)
    print(json.dumps(summary, indent=2))
    for name, tr in training.items():
        print(f"{name}: {len(tr.episodes)} episodes, {tr.initial_samples} initial samples, "
              f"{len(tr.samples)} total, converged={tr.converged}")
    print(f"wall time {time.perf_counter() - start:.1f} s; outputs in {args.out}")


if __name__ == "__main__":
    main()
