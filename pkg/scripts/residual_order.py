"""Empirical order of the finite-difference residual on nominal-model trajectories.

Integrates the nominal ACC model under several inputs at a sequence of
sampling periods and reports the peak residual and the ratio between
consecutive halvings. A ratio near 2 means first order, near 4 second order.

    python scripts/residual_order.py
"""

import numpy as np

from gpsocp.plant import AccConfig, acc_benchmark, step
from gpsocp.residuals import measure_residuals

INPUTS = {
    "sine": lambda t: 3000.0 * np.sin(t),
    "constant": lambda t: 1500.0,
    "chirp": lambda t: 2000.0 * np.sin(0.2 * t * t) + 500.0,
}


def peak(dt, u_of_t, T=10.0, midpoint=True):
    cfg = AccConfig()
    _, nominal, certs, _ = acc_benchmark(cfg)
    n = int(round(T / dt))
    t = np.arange(n + 1) * dt
    u = np.array([[u_of_t(tk)] for tk in t[:-1]])
    xs = [cfg.initial_state]
    for k in range(n):
        xs.append(step(nominal.dynamics, xs[-1], u[k], dt))
    xs = np.array(xs)
    if midpoint:
        s = measure_residuals(t, xs, u, nominal, certs)
        return max(max(abs(q.omega_V), abs(q.omega_h)) for q in s)
    # left-endpoint variant, for comparison only
    out = 0.0
    for k in range(n):
        xdot = nominal.dynamics(xs[k], u[k])
        wV = (certs.V(xs[k + 1]) - certs.V(xs[k])) / dt - certs.grad_V(xs[k]) @ xdot
        wh = (certs.h(xs[k + 1]) - certs.h(xs[k])) / dt - certs.grad_h(xs[k]) @ xdot
        out = max(out, abs(wV), abs(wh))
    return out


def main():
    dts = [0.1, 0.05, 0.025, 0.0125]
    for midpoint in (True, False):
        print("midpoint state" if midpoint else "left endpoint state")
        for name, f in INPUTS.items():
            peaks = [peak(dt, f, midpoint=midpoint) for dt in dts]
            ratios = [a / b for a, b in zip(peaks, peaks[1:])]
            cells = "  ".join(f"dt={dt:<7g}{p:.3e}" for dt, p in zip(dts, peaks))
            print(f"  {name:9s} {cells}  ratios {' '.join(f'{r:.2f}' for r in ratios)}")


if __name__ == "__main__":
    main()
