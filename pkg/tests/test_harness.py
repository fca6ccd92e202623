import json

import numpy as np
import pytest

from gpsocp.harness import (
    CONTROLLERS,
    HORIZON_COMPLETE,
    TRAJECTORY_COLUMNS,
    UNSAFE,
    ConfigError,
    Controller,
    ExperimentConfig,
    audit_rows,
    load_config,
    read_trajectory,
    run_episode,
    single_partition,
)
from gpsocp.residuals import load_model


def test_short_horizon_logs_two_steps():
    cfg = ExperimentConfig(horizon=0.1)
    for name in ("nominal-qp", "true-oracle"):
        ep = run_episode(cfg, name)
        assert len(ep.rows) == 2
        assert ep.termination == HORIZON_COMPLETE
        assert [r["t"] for r in ep.rows] == [0.0, 0.05]


def test_gp_controller_requires_model():
    with pytest.raises(ValueError):
        run_episode(ExperimentConfig(horizon=0.1), "mogp-socp")


def test_true_oracle_is_safe():
    ep = run_episode(ExperimentConfig(), "true-oracle")
    assert ep.termination == HORIZON_COMPLETE
    assert ep.min_h >= -1e-6


def test_nominal_qp_crosses_the_barrier():
    ep = run_episode(ExperimentConfig(), "nominal-qp")
    assert ep.termination == UNSAFE
    assert ep.h_values[-1] < 0
    assert 0 < ep.times[len(ep.rows) - 1] < 20.0
    assert np.isnan(ep.rows[-1]["u"])


def test_episode_csv_is_deterministic(tmp_path):
    cfg = ExperimentConfig(horizon=3.0)
    run_episode(cfg, "nominal-qp").write_csv(tmp_path / "a.csv")
    run_episode(cfg, "nominal-qp").write_csv(tmp_path / "b.csv")
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b
    header = a.decode().splitlines()[0].split(",")
    assert header == list(TRAJECTORY_COLUMNS)


def test_trajectory_round_trip(tmp_path):
    ep = run_episode(ExperimentConfig(horizon=0.5), "nominal-qp")
    ep.write_csv(tmp_path / "t.csv")
    rows = read_trajectory(tmp_path / "t.csv")
    assert len(rows) == len(ep.rows)
    for a, b in zip(rows, ep.rows):
        assert a["u"] == b["u"] and a["h"] == b["h"] and a["solver_status"] == b["solver_status"]


def test_config_validation_and_round_trip(tmp_path):
    cfg = ExperimentConfig(seed=3, beta=1.5)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"horizon": 0.0}, {"max_episodes": 0}, {"delta": 1.0}, {"controller": "pid"}, {"dt": -1.0}):
        with pytest.raises(ConfigError):
            ExperimentConfig(**bad)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"horizon": 5.0, "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"hyperopt": {"restarts": 2, "bogus": 1}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"horizon": 4.0, "acc": {"v_d": 22.0}, "hyperopt": {"restarts": 2}}))
    loaded = load_config(path)
    assert loaded.horizon == 4.0 and loaded.acc.v_d == 22.0 and loaded.hyperopt.restarts == 2


def test_single_gp_is_mogp_pipeline_with_one_region(comparison):
    cfg = comparison["config"]
    model = comparison["training"]["single-gp-socp"].model
    assert model.partition == single_partition(cfg)
    a, b = Controller("single-gp-socp", cfg, model), Controller("mogp-socp", cfg, model)
    for x in comparison["episodes"]["mogp-socp"].states[::40]:
        pa, pb = a.problem(x), b.problem(x)
        assert np.array_equal(pa.f, pb.f)
        for ca, cb in zip(pa.cones, pb.cones):
            assert np.array_equal(ca.M, cb.M) and np.array_equal(ca.n, cb.n)
            assert np.array_equal(ca.p, cb.p) and ca.q == cb.q


def test_training_dataset_grows(comparison):
    for tr in comparison["training"].values():
        sizes = [ep.dataset_size_after for ep in tr.episodes]
        assert sizes == sorted(sizes)
        assert tr.episodes[0].controller == "nominal-qp"


def test_comparison_outputs(comparison):
    out = comparison["out"]
    summary = json.loads((out / "summary.json").read_text())
    for name in CONTROLLERS:
        key = name.replace("-", "_")
        assert (out / f"trajectory_{key}.csv").exists()
        assert {"min_h", "violation", "termination", "speed_convergence_time"} <= set(summary[key])
    for f in ("dataset.csv", "plot_data.csv", "config.json", "h.svg", "u.svg", "x2.svg", "z.svg", "V.svg"):
        assert (out / f).exists()


def test_mogp_tracks_the_true_design(comparison):
    eps = comparison["episodes"]
    u_m = np.array([r["u"] for r in eps["mogp-socp"].rows])
    u_t = np.array([r["u"] for r in eps["true-oracle"].rows])
    n = min(u_m.size, u_t.size)
    assert np.mean(np.abs(u_m[:n] - u_t[:n])) <= 0.2 * np.mean(np.abs(u_t[:n]))


def test_audit_flags_tampered_rows(comparison):
    out, cfg = comparison["out"], comparison["config"]
    rows = read_trajectory(out / "trajectory_mogp_socp.csv")
    model = load_model(out / "model_mogp_socp.json")
    assert audit_rows(rows, cfg, model).passed
    k = next(i for i, r in enumerate(rows) if r["h"] < 5.0 and r["solver_status"] == "optimal")
    rows[k] = dict(rows[k], u=rows[k]["u"] + 1e4)
    res = audit_rows(rows, cfg, model)
    assert not res.passed and res.failures[0][0] == rows[k]["t"]
