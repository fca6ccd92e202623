"""Where does the ACC episode spend time near the barrier, and in which region?

Runs the trained comparison (or loads a previous one from --run) and prints,
per controller, the region the vehicle is in when h is smallest and the
time spent in each region. Useful for judging whether a one-region residual
model is ever stressed where the regions differ.

    python scripts/single_gp_probe.py --run runs/acc
"""

import argparse
import os

import numpy as np

from gpsocp.harness import read_trajectory


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--run", default="runs/acc")
    args = ap.parse_args()
    for name in ("nominal_qp", "single_gp_socp", "mogp_socp", "true_oracle"):
        path = os.path.join(args.run, f"trajectory_{name}.csv")
        if not os.path.exists(path):
            continue
        rows = read_trajectory(path)
        t = np.array([r["t"] for r in rows])
        h = np.array([r["h"] for r in rows])
        reg = np.array([r["region"] for r in rows])
        k = int(np.argmin(h))
        visits = {int(r): round(float(np.sum(reg == r) * (t[1] - t[0])), 2) for r in sorted(set(reg))}
        in2 = t[reg == 2]
        span = f"{in2.min():.2f}-{in2.max():.2f} s" if in2.size else "never"
        print(f"{name:15s} min h {h[k]:9.4f} at t={t[k]:6.2f} s in region {reg[k]}; "
              f"time per region {visits}; region 2 visited {span}")


if __name__ == "__main__":
    main()
