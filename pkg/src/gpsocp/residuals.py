"""Finite-difference residual targets and the per-region batch of GP models.

The residual of a certificate ``W`` (``V`` or ``h``) over one sampling
interval is the measured rate of change minus the nominal prediction at the
interval midpoint::

    omega = (W(x_{k+1}) - W(x_k)) / dt - grad W(x_j) (f_hat(x_j) + g_hat(x_j) u_k)

with ``x_j = (x_k + x_{k+1}) / 2`` and ``u_k`` the input held over the
interval. Each region gets two independent composite-kernel GPs, one per
certificate.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .gp import AffinePosterior, FittedGP, HyperOptConfig, affine_posterior, fit, optimize_hyperparams
from .kernels import CompositeKernel, augment, se_composite
from .plant import CoverageError, RegionPartition, region_of

log = logging.getLogger(__name__)

TARGETS = ("V", "h")


class InvalidTrajectory(ValueError):
    """Trajectory cannot be differenced (too short or non-uniform sampling)."""


class ResidualFitError(RuntimeError):
    def __init__(self, region: int, target: str, cause: Exception):
        super().__init__(f"fit failed for region {region}, target {target}: {cause}")
        self.region = region
        self.target = target
        self.cause = cause


@dataclass(frozen=True, eq=False)
class ResidualSample:
    x: np.ndarray
    u: np.ndarray
    omega_V: float
    omega_h: float
    region: int
    timestamp: float


def measure_residuals(t, states, inputs, nominal, certs, partition: RegionPartition | None = None,
                      time_tol: float = 1e-9) -> list[ResidualSample]:
    """One sample per consecutive pair of states.

    ``inputs[k]`` is the input held on ``[t_k, t_{k+1})``; extra trailing
    inputs are ignored. ``timestamp`` is the interval start. Without a
    partition every sample is assigned region 1.
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    if t.size < 2 or states.shape[0] != t.size:
        raise InvalidTrajectory("need at least two timestamped states")
    if inputs.shape[0] < t.size - 1:
        raise InvalidTrajectory("need one held input per interval")
    steps = np.diff(t)
    dt = float(steps[0])
    if dt <= 0 or np.max(np.abs(steps - dt)) > time_tol:
        raise InvalidTrajectory("timestamps are not uniformly spaced")
    out = []
    for k in range(t.size - 1):
        x0, x1, u = states[k], states[k + 1], inputs[k]
        xj = 0.5 * (x0 + x1)
        xdot = nominal.dynamics(xj, u)
        wV = (certs.V(x1) - certs.V(x0)) / dt - float(certs.grad_V(xj) @ xdot)
        wh = (certs.h(x1) - certs.h(x0)) / dt - float(certs.grad_h(xj) @ xdot)
        r = region_of(partition, xj) if partition is not None else 1
        out.append(ResidualSample(xj, u.copy(), float(wV), float(wh), r, float(t[k])))
    return out


@dataclass(frozen=True, eq=False)
class RegionDataset:
    region: int
    X: np.ndarray  # GP features, (N, D)
    Y: np.ndarray  # augmented inputs [1, u], (N, m + 1)
    omega_V: np.ndarray
    omega_h: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def targets(self, which: str) -> np.ndarray:
        return self.omega_V if which == "V" else self.omega_h


def partition_dataset(samples, partition: RegionPartition, feature_coords, m: int) -> list[RegionDataset]:
    """Split samples by the region claiming each midpoint state."""
    feature_coords = list(feature_coords)
    buckets = [[] for _ in range(partition.n_regions)]
    for s in samples:
        hits = partition.claims(s.x) if partition.in_domain(s.x) else []
        if len(hits) != 1:
            raise CoverageError(f"sample at t={s.timestamp} (x={s.x}) is claimed by regions {hits}")
        buckets[hits[0] - 1].append(s)
    out = []
    for r, bucket in enumerate(buckets, start=1):
        if bucket:
            X = np.array([s.x[feature_coords] for s in bucket])
            Y = augment(np.array([s.u for s in bucket]).reshape(len(bucket), m))
            wV = np.array([s.omega_V for s in bucket])
            wh = np.array([s.omega_h for s in bucket])
        else:
            X = np.zeros((0, len(feature_coords)))
            Y = np.zeros((0, m + 1))
            wV = wh = np.zeros(0)
        out.append(RegionDataset(r, X, Y, wV, wh))
    return out


@dataclass(frozen=True, eq=False)
class BatchMOGPModel:
    """Two GPs (``V`` and ``h`` residuals) per region plus confidence scales."""

    partition: RegionPartition
    feature_coords: tuple[int, ...]
    models: tuple[tuple[FittedGP, FittedGP], ...]
    betas: tuple[float, ...]
    delta: float = 0.05

    def __post_init__(self):
        R = self.partition.n_regions
        if len(self.models) != R or len(self.betas) != R:
            raise ValueError(f"need exactly {R} regions of models and betas")
        if any(len(pair) != 2 for pair in self.models):
            raise ValueError("each region needs a V model and an h model")
        if not all(b > 0 for b in self.betas):
            raise ValueError("beta must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def n_regions(self) -> int:
        return self.partition.n_regions

    def untrained_regions(self) -> list[int]:
        return [r + 1 for r, (mv, mh) in enumerate(self.models) if not (mv.trained and mh.trained)]

    def counts(self) -> list[int]:
        return [mv.n for mv, _ in self.models]

    def to_dict(self) -> dict:
        return {
            "partition": partition_to_dict(self.partition),
            "feature_coords": list(self.feature_coords),
            "betas": list(self.betas),
            "delta": self.delta,
            "models": [[mv.to_dict(), mh.to_dict()] for mv, mh in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchMOGPModel":
        models = tuple((FittedGP.from_dict(a), FittedGP.from_dict(b)) for a, b in d["models"])
        return cls(partition_from_dict(d["partition"]), tuple(d["feature_coords"]), models,
                   tuple(d["betas"]), d["delta"])


def partition_to_dict(p: RegionPartition) -> dict:
    return {
        "coords": list(p.coords),
        "domain": [list(d) for d in p.domain],
        "regions": [
            [[[iv.lo, iv.hi, iv.lo_closed, iv.hi_closed] for iv in box.intervals] for box in region]
            for region in p.regions
        ],
    }


def partition_from_dict(d: dict) -> RegionPartition:
    from .plant import Box, Interval

    regions = tuple(
        tuple(Box(tuple(Interval(*iv) for iv in box)) for box in region) for region in d["regions"]
    )
    return RegionPartition(tuple(d["coords"]), regions, tuple(tuple(v) for v in d["domain"]))


def save_model(model: BatchMOGPModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> BatchMOGPModel:
    with open(path) as fh:
        return BatchMOGPModel.from_dict(json.load(fh))


def _prior_model(m: int, dim: int, region: int, target: str) -> FittedGP:
    kernel = se_composite(m, np.ones(dim), 1.0, region)
    return fit(kernel, np.zeros((0, dim)), np.zeros((0, m + 1)), np.zeros(0), 1.0, label=f"r{region}-{target}")


def fit_batch_mogp(datasets, partition: RegionPartition, feature_coords, m: int,
                   hyper: HyperOptConfig | None = None, beta=2.0, delta: float = 0.05,
                   previous: BatchMOGPModel | None = None) -> BatchMOGPModel:
    """Optimise hyperparameters and condition one GP per (region, target).

    ``beta`` is a scalar or one value per region. Hyperparameters of
    ``previous`` (same partition) are tried as an extra starting point.
    """
    hyper = hyper or HyperOptConfig()
    R = partition.n_regions
    if len(datasets) != R:
        raise ValueError(f"expected {R} datasets, got {len(datasets)}")
    if all(ds.n == 0 for ds in datasets):
        raise ValueError("at least one region needs data")
    betas = tuple(float(b) for b in np.broadcast_to(np.asarray(beta, dtype=float), (R,)))
    dim = len(feature_coords)
    models = []
    for ds in datasets:
        pair = []
        for k, target in enumerate(TARGETS):
            label = f"r{ds.region}-{target}"
            if ds.n == 0:
                log.warning("region %d has no data; using the prior", ds.region)
                pair.append(_prior_model(m, dim, ds.region, target))
                continue
            starts = []
            if previous is not None and previous.models[ds.region - 1][k].trained:
                old = previous.models[ds.region - 1][k]
                starts.append(np.concatenate([old.kernel.to_log_params(), [np.log(old.noise_variance)]]))
            cfg = replace(hyper, seed=hyper.seed + 101 * ds.region + k)
            omega = ds.targets(target)
            try:
                res = optimize_hyperparams(ds.X, ds.Y, omega, cfg, region_id=ds.region, initial_points=starts)
                pair.append(fit(res.kernel, ds.X, ds.Y, omega, res.noise_variance, label=label))
            except Exception as exc:
                raise ResidualFitError(ds.region, target, exc) from exc
        models.append(tuple(pair))
    return BatchMOGPModel(partition, tuple(feature_coords), tuple(models), betas, delta)


def query_residual(model: BatchMOGPModel, x, target: str) -> tuple[AffinePosterior, bool]:
    """Posterior of the active region's residual; the flag is set for untrained regions."""
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    r = region_of(model.partition, x)
    gp = model.models[r - 1][TARGETS.index(target)]
    x = np.asarray(x, dtype=float)
    post = affine_posterior(gp, x[list(model.feature_coords)])
    return post, not gp.trained


# ---------------------------------------------------------------------------
# dataset CSV


def dataset_header(n: int, m: int) -> list[str]:
    return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
            + ["omega_V", "omega_h", "region"])


def write_dataset(path, samples) -> None:
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to write")
    n, m = samples[0].x.size, samples[0].u.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(dataset_header(n, m))
        for s in samples:
            row = [s.timestamp, *s.x, *s.u, s.omega_V, s.omega_h]
            w.writerow([f"{float(v):.17g}" for v in row] + [s.region])


def read_dataset(path) -> list[ResidualSample]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for c in header if c.startswith("x"))
    m = sum(1 for c in header if c.startswith("u"))
    out = []
    for row in rows[1:]:
        vals = [float(v) for v in row[:-1]]
        out.append(ResidualSample(np.array(vals[1:1 + n]), np.array(vals[1 + n:1 + n + m]),
                                  vals[1 + n + m], vals[2 + n + m], int(row[-1]), vals[0]))
    return out
