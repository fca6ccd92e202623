"""Switching plants, the nominal model, RK4 stepping and the ACC benchmark."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .safety import CertificatePair


class DomainError(ValueError):
    """State outside the operating domain."""


class CoverageError(ValueError):
    """Partition does not claim a state exactly once."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = False

    def contains(self, v: float) -> bool:
        above = v >= self.lo if self.lo_closed else v > self.lo
        below = v <= self.hi if self.hi_closed else v < self.hi
        return above and below


@dataclass(frozen=True)
class Box:
    """Axis-aligned box over the partition coordinates."""

    intervals: tuple[Interval, ...]

    def contains(self, coords) -> bool:
        return all(iv.contains(float(c)) for iv, c in zip(self.intervals, coords))


@dataclass(frozen=True)
class RegionPartition:
    """Regions as unions of boxes over ``coords`` (indices into the state).

    Region indices are 1-based. ``domain`` is a closed box ``[(lo, hi), ...]``
    over the same coordinates.
    """

    coords: tuple[int, ...]
    regions: tuple[tuple[Box, ...], ...]
    domain: tuple[tuple[float, float], ...]

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def project(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[list(self.coords)]

    def in_domain(self, x) -> bool:
        c = self.project(x)
        return all(lo <= v <= hi for v, (lo, hi) in zip(c, self.domain))

    def clip(self, x) -> np.ndarray:
        """Copy of ``x`` with the partition coordinates clipped into the domain."""
        x = np.array(x, dtype=float)
        for k, (lo, hi) in zip(self.coords, self.domain):
            x[k] = min(max(x[k], lo), hi)
        return x

    def claims(self, x) -> list[int]:
        c = self.project(x)
        return [r + 1 for r, boxes in enumerate(self.regions) if any(b.contains(c) for b in boxes)]

    @classmethod
    def single(cls, coords, domain) -> "RegionPartition":
        box = Box(tuple(Interval(lo, hi, True, True) for lo, hi in domain))
        return cls(tuple(coords), ((box,),), tuple(tuple(d) for d in domain))

    @classmethod
    def from_breakpoints(cls, coord_index: int, edges: Sequence[float], coords, domain):
        """Slabs ``[e_k, e_{k+1})`` along one partition coordinate; the last slab is closed."""
        coords = tuple(coords)
        axis = coords.index(coord_index)
        regions = []
        for k in range(len(edges) - 1):
            ivs = []
            for j, (lo, hi) in enumerate(domain):
                if j == axis:
                    ivs.append(Interval(edges[k], edges[k + 1], True, k == len(edges) - 2))
                else:
                    ivs.append(Interval(lo, hi, True, True))
            regions.append((Box(tuple(ivs)),))
        return cls(coords, tuple(regions), tuple(tuple(d) for d in domain))


def region_of(partition: RegionPartition, x) -> int:
    if not partition.in_domain(x):
        raise DomainError(f"state {np.asarray(x)} is outside the domain {partition.domain}")
    hits = partition.claims(x)
    if len(hits) != 1:
        raise CoverageError(f"state {np.asarray(x)} claimed by regions {hits}")
    return hits[0]


VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class NominalModel:
    f: VectorField
    g: VectorField  # returns (n, m)

    def dynamics(self, x, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.f(x) + self.g(x) @ u


@dataclass(frozen=True, eq=False)
class SwitchingPlant:
    drifts: tuple[VectorField, ...]
    actuations: tuple[VectorField, ...]
    partition: RegionPartition

    def __post_init__(self):
        if not (len(self.drifts) == len(self.actuations) == self.partition.n_regions):
            raise ValueError("need one drift and one actuation field per region")

    def region(self, x, clip: bool = False) -> int:
        if clip:
            x = self.partition.clip(x)
        return region_of(self.partition, x)

    def dynamics(self, x, u) -> np.ndarray:
        """True vector field; stage states outside the domain use the nearest region."""
        r = self.region(x, clip=True) - 1
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.drifts[r](x) + self.actuations[r](x) @ u


def true_dynamics(plant: SwitchingPlant, x, u) -> np.ndarray:
    r = region_of(plant.partition, x) - 1
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return plant.drifts[r](x) + plant.actuations[r](x) @ u


def step(dynamics: Callable, x, u, dt: float) -> np.ndarray:
    """One classical RK4 step with the input held constant over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = dynamics(x, u)
    k2 = dynamics(x + 0.5 * dt * k1, u)
    k3 = dynamics(x + 0.5 * dt * k2, u)
    k4 = dynamics(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# adaptive cruise control


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    f0: float
    f1: float
    f2: float
    c: float

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")

    def resistance(self, v: float) -> float:
        return self.f0 + self.f1 * v + self.f2 * v * v


@dataclass(frozen=True)
class AccConfig:
    """ACC benchmark; simulation state is ``[x1, x2, z]`` (position, speed, headway)."""

    true_params: tuple[VehicleParams, ...] = (
        VehicleParams(3300.0, 0.2, 10.0, 0.5, 1.0),
        VehicleParams(3300.0, 1.0, 50.0, 4.5, 0.5),
    )
    nominal_params: VehicleParams = VehicleParams(1050.0, 0.1, 15.0, 2.25, 1.0)
    v0: float = 10.0
    T_h: float = 1.6
    v_d: float = 24.0
    z0: float = 140.0
    x0: tuple[float, float] = (0.0, 14.0)
    region2_bounds: tuple[float, float] = (15.0, 25.0)
    domain: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 700.0), (0.0, 30.0))

    def __post_init__(self):
        if self.T_h <= 0:
            raise ValueError("T_h must be positive")
        if len(self.true_params) != 2:
            raise ValueError("the ACC benchmark has exactly two road regions")

    @property
    def initial_state(self) -> np.ndarray:
        return np.array([self.x0[0], self.x0[1], self.z0], dtype=float)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AccConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown AccConfig keys: {sorted(unknown)}")
        if "true_params" in d:
            d["true_params"] = tuple(VehicleParams(**p) for p in d["true_params"])
        if "nominal_params" in d:
            d["nominal_params"] = VehicleParams(**d["nominal_params"])
        for key in ("x0", "region2_bounds"):
            if key in d:
                d[key] = tuple(d[key])
        if "domain" in d:
            d["domain"] = tuple(tuple(v) for v in d["domain"])
        return cls(**d)


def acc_partition(config: AccConfig) -> RegionPartition:
    """Region 1 is ``([0, a) U (b, L]) x [0, vmax]``, region 2 is ``[a, b] x [0, vmax]``."""
    (x_lo, x_hi), (v_lo, v_hi) = config.domain
    a, b = config.region2_bounds
    speed = Interval(v_lo, v_hi, True, True)
    r1 = (Box((Interval(x_lo, a, True, False), speed)), Box((Interval(b, x_hi, False, True), speed)))
    r2 = (Box((Interval(a, b, True, True), speed)),)
    return RegionPartition((0, 1), (r1, r2), config.domain)


def _vehicle_fields(p: VehicleParams, v0: float):
    def f(x):
        return np.array([x[1], -p.resistance(x[1]) / p.mass, v0 - x[1]])

    def g(x):
        return np.array([[0.0], [p.c / p.mass], [0.0]])

    return f, g


def acc_certificates(config: AccConfig, lam=1.0, gamma=1.0, rho=100.0) -> CertificatePair:
    v_d, T_h = config.v_d, config.T_h
    return CertificatePair(
        V=lambda x: (x[1] - v_d) ** 2,
        grad_V=lambda x: np.array([0.0, 2.0 * (x[1] - v_d), 0.0]),
        h=lambda x: x[2] - T_h * x[1],
        grad_h=lambda x: np.array([0.0, -T_h, 1.0]),
        lam=lam,
        gamma=gamma,
        rho=rho,
    )


def acc_benchmark(config: AccConfig | None = None, lam=1.0, gamma=1.0, rho=100.0):
    """Return ``(plant, nominal, certificates, partition)`` for the ACC study."""
    config = config or AccConfig()
    partition = acc_partition(config)
    fields_ = [_vehicle_fields(p, config.v0) for p in config.true_params]
    plant = SwitchingPlant(tuple(f for f, _ in fields_), tuple(g for _, g in fields_), partition)
    nf, ng = _vehicle_fields(config.nominal_params, config.v0)
    nominal = NominalModel(nf, ng)
    return plant, nominal, acc_certificates(config, lam, gamma, rho), partition
