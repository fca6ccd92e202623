"""Closed-loop episodes, episodic residual learning and the controller comparison."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .gp import HyperOptConfig
from .plant import AccConfig, RegionPartition, acc_benchmark, region_of, step
from .residuals import (
    BatchMOGPModel,
    fit_batch_mogp,
    measure_residuals,
    partition_dataset,
    query_residual,
    write_dataset,
)
from .safety import assemble_socp, lie_terms, nominal_lie_terms
from .socp import INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, SolverSettings, solve_nominal_qp, solve_socp

log = logging.getLogger(__name__)

CONTROLLERS = ("nominal-qp", "single-gp-socp", "mogp-socp", "true-oracle")
GP_CONTROLLERS = ("single-gp-socp", "mogp-socp")

HORIZON_COMPLETE = "horizon-complete"
UNSAFE = "unsafe"
DOMAIN_EXIT = "domain-exit"

TRAJECTORY_COLUMNS = ["t", "x1", "x2", "z", "u", "V", "h", "region", "solver_status", "slack", "epigraph"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    acc: AccConfig = field(default_factory=AccConfig)
    controller: str = "mogp-socp"
    dt: float = 0.05
    horizon: float = 20.0
    beta: float = 2.0
    delta: float = 0.05
    lam: float = 5.0
    gamma: float = 2.0
    rho: float = 1e8
    hyperopt: HyperOptConfig = field(default_factory=HyperOptConfig)
    seed: int = 0
    max_episodes: int = 10
    out_dir: str = "runs"
    feature_coords: tuple[int, ...] = (0, 1)
    unsafe_tolerance: float = 1e-6
    speed_tolerance: float = 0.5
    svg: bool = True

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.max_episodes < 1:
            raise ConfigError("max_episodes must be at least 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        for name in ("lam", "gamma", "rho"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_coords"] = list(self.feature_coords)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "acc" in d:
                d["acc"] = AccConfig.from_dict(d["acc"])
            if "hyperopt" in d:
                hk = {f.name for f in fields(HyperOptConfig)}
                bad = set(d["hyperopt"]) - hk
                if bad:
                    raise ConfigError(f"unknown hyperopt keys: {sorted(bad)}")
                h = dict(d["hyperopt"])
                for key in ("log_lengthscale_range", "log_signal_range", "log_noise_range"):
                    if key in h:
                        h[key] = tuple(h[key])
                d["hyperopt"] = HyperOptConfig(**h)
            if "feature_coords" in d:
                d["feature_coords"] = tuple(d["feature_coords"])
            return cls(**d)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# controllers


@dataclass(frozen=True, eq=False)
class StepResult:
    u: np.ndarray
    slack: float
    epigraph: float
    status: str


class Controller:
    """Maps a state to an input; holds no state between calls."""

    def __init__(self, name: str, config: ExperimentConfig, model: BatchMOGPModel | None = None,
                 settings: SolverSettings | None = None):
        if name not in CONTROLLERS:
            raise ConfigError(f"unknown controller {name!r}")
        if (name in GP_CONTROLLERS) != (model is not None):
            raise ValueError(f"{name} {'needs' if name in GP_CONTROLLERS else 'takes no'} residual model")
        self.name = name
        self.config = config
        self.model = model
        self.settings = settings
        self.plant, self.nominal, self.certs, self.partition = acc_benchmark(
            config.acc, config.lam, config.gamma, config.rho
        )

    def problem(self, x):
        """SOCP assembled at ``x`` (GP controllers only)."""
        r = region_of(self.model.partition, x)
        post_V, _ = query_residual(self.model, x, "V")
        post_h, _ = query_residual(self.model, x, "h")
        beta = self.model.betas[r - 1]
        lie = nominal_lie_terms(self.nominal, self.certs, x)
        return assemble_socp(x, post_V, post_h, beta, self.certs, lie)

    def __call__(self, x) -> StepResult:
        x = np.asarray(x, dtype=float)
        m = 1
        if self.name in ("nominal-qp", "true-oracle"):
            if self.name == "nominal-qp":
                lie = nominal_lie_terms(self.nominal, self.certs, x)
            else:
                # diagnostics only: reads the true plant's active region
                r = self.plant.region(x, clip=True) - 1
                lie = lie_terms(self.plant.drifts[r], self.plant.actuations[r], self.certs, x)
            u, d, sol = solve_nominal_qp(x, self.certs, lie, self.settings)
        else:
            sol = solve_socp(self.problem(x), self.settings)
            u, d = sol.z[:m].copy(), float(sol.z[m])
        return StepResult(u, d, float(sol.z[-1]), sol.status)


# ---------------------------------------------------------------------------
# episodes


@dataclass(eq=False)
class EpisodeLog:
    controller: str
    rows: list[dict]
    states: np.ndarray  # every visited state, including the one after the last applied input
    inputs: np.ndarray  # applied inputs, one fewer than ``states``
    dt: float
    termination: str
    h_values: np.ndarray  # h at every checked state, including the final one
    dataset_size_after: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.states.shape[0])

    @property
    def min_h(self) -> float:
        return float(np.min(self.h_values))

    @property
    def safe(self) -> bool:
        return self.termination == HORIZON_COMPLETE

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in TRAJECTORY_COLUMNS])


def _fmt(v):
    if isinstance(v, (str, int, np.integer)) and not isinstance(v, bool):
        return str(v)
    return f"{float(v):.17g}"


def read_trajectory(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {k: float(v) for k, v in r.items() if k not in ("region", "solver_status")}
        d["region"] = int(r["region"])
        d["solver_status"] = r["solver_status"]
        out.append(d)
    return out


def run_episode(config: ExperimentConfig, controller: str | Controller | None = None,
                model: BatchMOGPModel | None = None) -> EpisodeLog:
    """Run one closed-loop episode from the configured initial state.

    The loop stops early when ``h`` drops below ``-unsafe_tolerance``, the
    state leaves the domain, or the solver does not return an optimal point;
    the offending step is logged. The state reached after the last applied
    input is kept in ``states`` and included in the safety verdict.
    """
    if not isinstance(controller, Controller):
        controller = Controller(controller or config.controller, config, model)
    certs, partition, plant = controller.certs, controller.partition, controller.plant
    x = config.acc.initial_state
    states, inputs, rows = [x], [], []
    hs = []
    termination = HORIZON_COMPLETE

    def row(k, x, u, status, res=None):
        r = partition.claims(partition.clip(x))
        return {
            "t": k * config.dt, "x1": x[0], "x2": x[1], "z": x[2], "u": u,
            "V": certs.V(x), "h": certs.h(x), "region": r[0] if r else 0, "solver_status": status,
            "slack": res.slack if res else math.nan, "epigraph": res.epigraph if res else math.nan,
        }

    for k in range(config.n_steps):
        hval = certs.h(x)
        hs.append(hval)
        if not partition.in_domain(x):
            rows.append(row(k, x, math.nan, DOMAIN_EXIT))
            termination = DOMAIN_EXIT
            break
        if hval < -config.unsafe_tolerance:
            rows.append(row(k, x, math.nan, UNSAFE))
            termination = UNSAFE
            break
        res = controller(x)
        rows.append(row(k, x, float(res.u[0]), res.status, res))
        if res.status != OPTIMAL:
            termination = INFEASIBLE if res.status == INFEASIBLE else NUMERICAL_FAILURE
            break
        x = step(plant.dynamics, x, res.u, config.dt)
        states.append(x)
        inputs.append(res.u)
    else:
        hs.append(certs.h(x))
        if hs[-1] < -config.unsafe_tolerance:
            termination = UNSAFE
        elif not partition.in_domain(x):
            termination = DOMAIN_EXIT
    ep = EpisodeLog(controller.name, rows, np.array(states), np.array(inputs).reshape(-1, 1),
                    config.dt, termination, np.array(hs))
    return ep


def episode_samples(config: ExperimentConfig, ep: EpisodeLog, nominal, certs, partition):
    """Residual samples from the in-domain prefix of an episode."""
    n = ep.inputs.shape[0]
    inside = [partition.in_domain(s) for s in ep.states[: n + 1]]
    keep = n + 1 if all(inside) else inside.index(False)
    if keep < 2:
        return []
    return measure_residuals(ep.times[:keep], ep.states[:keep], ep.inputs[: keep - 1], nominal, certs, partition)


def speed_convergence_time(ep: EpisodeLog, v_d: float, tol: float) -> float | None:
    for t, x in zip(ep.times, ep.states):
        if abs(x[1] - v_d) <= tol:
            return float(t)
    return None


# ---------------------------------------------------------------------------
# episodic learning


@dataclass(eq=False)
class TrainingResult:
    model: BatchMOGPModel | None
    episodes: list[EpisodeLog]
    samples: list
    converged: bool

    @property
    def initial_samples(self) -> int:
        return self.episodes[0].dataset_size_after


def episodic_train(config: ExperimentConfig, partition: RegionPartition | None = None,
                   controller: str = "mogp-socp") -> TrainingResult:
    """Nominal roll-out, then GP-filtered episodes until one finishes safely.

    Each episode's residuals are appended to the dataset and the model is
    refit before the next episode. ``partition`` overrides the plant's
    partition for the residual model (a one-region partition gives the
    single-GP baseline). Reaching ``max_episodes`` without a safe GP episode
    returns ``converged=False``.
    """
    _, nominal, certs, plant_partition = acc_benchmark(config.acc, config.lam, config.gamma, config.rho)
    model_partition = partition or plant_partition
    hyper = replace(config.hyperopt, seed=config.seed)
    m = 1
    samples, episodes = [], []
    model = None
    for ep_index in range(config.max_episodes):
        if model is None:
            ep = run_episode(config, "nominal-qp")
        else:
            ep = run_episode(config, controller, model)
        episodes.append(ep)
        if model is not None and ep.safe:
            ep.dataset_size_after = len(samples)
            log.info("episode %d safe; stopping with %d samples", ep_index + 1, len(samples))
            return TrainingResult(model, episodes, samples, True)
        samples.extend(episode_samples(config, ep, nominal, certs, plant_partition))
        ep.dataset_size_after = len(samples)
        log.info("episode %d: %s, %d samples", ep_index + 1, ep.termination, len(samples))
        if ep_index + 1 == config.max_episodes:
            break
        datasets = partition_dataset(samples, model_partition, config.feature_coords, m)
        model = fit_batch_mogp(datasets, model_partition, config.feature_coords, m, hyper,
                               config.beta, config.delta, previous=model)
    return TrainingResult(model, episodes, samples, False)


# ---------------------------------------------------------------------------
# comparison


def single_partition(config: ExperimentConfig) -> RegionPartition:
    return RegionPartition.single(tuple(config.feature_coords), config.acc.domain)


def summarize(ep: EpisodeLog, config: ExperimentConfig) -> dict:
    return {
        "min_h": ep.min_h,
        "violation": bool(ep.min_h < 0),
        "termination": ep.termination,
        "speed_convergence_time": speed_convergence_time(ep, config.acc.v_d, config.speed_tolerance),
        "steps": len(ep.rows),
    }


def compare_controllers(config: ExperimentConfig, out_dir: str | None = None, models: dict | None = None):
    """Train both GP variants, run all four controllers and write the outputs.

    Returns ``(summary, episodes, training)``; ``models`` may supply
    pre-trained residual models keyed by controller name.
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    models = dict(models or {})
    training = {}
    if "mogp-socp" not in models:
        training["mogp-socp"] = episodic_train(config)
        models["mogp-socp"] = training["mogp-socp"].model
    if "single-gp-socp" not in models:
        training["single-gp-socp"] = episodic_train(config, single_partition(config), "single-gp-socp")
        models["single-gp-socp"] = training["single-gp-socp"].model
    summary, episodes = {}, {}
    for name in CONTROLLERS:
        key = name.replace("-", "_")
        try:
            ep = run_episode(config, name, models.get(name))
        except Exception as exc:  # isolate failures per controller
            log.exception("controller %s failed", name)
            summary[key] = {"error": str(exc)}
            continue
        episodes[name] = ep
        ep.write_csv(os.path.join(out_dir, f"trajectory_{key}.csv"))
        summary[key] = summarize(ep, config)
    for name, tr in training.items():
        key = name.replace("-", "_")
        summary.setdefault(key, {})["training"] = {
            "converged": tr.converged,
            "episodes": [e.termination for e in tr.episodes],
            "initial_samples": tr.initial_samples,
            "total_samples": len(tr.samples),
        }
        if name == "mogp-socp" and tr.samples:
            write_dataset(os.path.join(out_dir, "dataset.csv"), tr.samples)
    for name, model in models.items():
        if model is not None:
            with open(os.path.join(out_dir, f"model_{name.replace('-', '_')}.json"), "w") as fh:
                json.dump(model.to_dict(), fh)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    write_plot_data(episodes, os.path.join(out_dir, "plot_data.csv"))
    if config.svg:
        from .plots import write_svg_panels

        write_svg_panels(episodes, out_dir)
    return summary, episodes, training


PLOT_COLUMNS = ("V", "h", "u", "x2", "z")


def write_plot_data(episodes: dict, path) -> None:
    """Long-format table ``controller, t, V, h, u, x2, z`` for plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "t", *PLOT_COLUMNS])
        for name, ep in episodes.items():
            for r in ep.rows:
                w.writerow([name, _fmt(r["t"])] + [_fmt(r[c]) for c in PLOT_COLUMNS])


# ---------------------------------------------------------------------------
# offline audit


@dataclass(frozen=True)
class AuditResult:
    checked: int
    failures: list
    max_residual: float

    @property
    def passed(self) -> bool:
        return not self.failures


def audit_rows(rows, config: ExperimentConfig, model: BatchMOGPModel, tol: float = 1e-6) -> AuditResult:
    """Rebuild the program at each logged optimal step and re-check every cone."""
    controller = Controller("mogp-socp", config, model)
    failures, worst, checked = [], -math.inf, 0
    for r in rows:
        if r["solver_status"] != OPTIMAL:
            continue
        x = np.array([r["x1"], r["x2"], r["z"]])
        z = np.array([r["u"], r["slack"], r["epigraph"]])
        res = controller.problem(x).max_residual(z)
        worst = max(worst, res)
        checked += 1
        if not res <= tol:
            failures.append((r["t"], res))
    return AuditResult(checked, failures, worst if checked else 0.0)
