"""Command-line entry point: simulate, train, compare, audit."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .harness import (
    CONTROLLERS,
    GP_CONTROLLERS,
    ConfigError,
    ExperimentConfig,
    audit_rows,
    compare_controllers,
    episodic_train,
    load_config,
    read_trajectory,
    run_episode,
    single_partition,
    summarize,
)
from .residuals import load_model, save_model, write_dataset
from .socp import NUMERICAL_FAILURE

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with ExperimentConfig fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--episodes", type=int, help="maximum number of training episodes")
    common.add_argument("--horizon", type=float, help="episode length in seconds")
    common.add_argument("--dt", type=float, help="control and sampling period in seconds")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gpsocp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run one episode with one controller")
    sim.add_argument("--controller", choices=CONTROLLERS)
    sim.add_argument("--model", help="residual model JSON for GP controllers (trained if omitted)")
    sub.add_parser("train", parents=[common], help="episodic data collection and model fitting")
    sub.add_parser("compare", parents=[common], help="train both GP variants and run all controllers")
    aud = sub.add_parser("audit", parents=[common], help="re-check every optimal logged step")
    aud.add_argument("--trajectory", required=True)
    aud.add_argument("--model", required=True)
    aud.add_argument("--tol", type=float, default=1e-6)
    return parser


def resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for flag, name in (("seed", "seed"), ("out", "out_dir"), ("episodes", "max_episodes"),
                       ("horizon", "horizon"), ("dt", "dt"), ("controller", "controller")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    return replace(config, **overrides) if overrides else config


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def cmd_simulate(config: ExperimentConfig, args) -> int:
    os.makedirs(config.out_dir, exist_ok=True)
    model = None
    if config.controller in GP_CONTROLLERS:
        if args.model:
            model = load_model(args.model)
        else:
            partition = single_partition(config) if config.controller == "single-gp-socp" else None
            result = episodic_train(config, partition, config.controller)
            if result.model is None:
                print("no model could be trained", file=sys.stderr)
                return EXIT_NOT_CONVERGED
            model = result.model
    ep = run_episode(config, config.controller, model)
    key = config.controller.replace("-", "_")
    ep.write_csv(os.path.join(config.out_dir, f"trajectory_{key}.csv"))
    summary = summarize(ep, config)
    _write_json(os.path.join(config.out_dir, "summary.json"), {key: summary})
    print(json.dumps(summary))
    return EXIT_NUMERICAL if ep.termination == NUMERICAL_FAILURE else EXIT_OK


def cmd_train(config: ExperimentConfig, args) -> int:
    os.makedirs(config.out_dir, exist_ok=True)
    result = episodic_train(config)
    for i, ep in enumerate(result.episodes, start=1):
        ep.write_csv(os.path.join(config.out_dir, f"episode_{i:02d}.csv"))
    if result.samples:
        write_dataset(os.path.join(config.out_dir, "dataset.csv"), result.samples)
    if result.model is not None:
        save_model(result.model, os.path.join(config.out_dir, "model.json"))
    report = {
        "converged": result.converged,
        "episodes": [
            {"termination": ep.termination, "min_h": ep.min_h, "dataset_size_after": ep.dataset_size_after}
            for ep in result.episodes
        ],
        "region_counts": result.model.counts() if result.model is not None else [],
    }
    _write_json(os.path.join(config.out_dir, "training.json"), report)
    print(json.dumps(report))
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_compare(config: ExperimentConfig, args) -> int:
    summary, _, _ = compare_controllers(config)
    print(json.dumps(summary, indent=2))
    if any(v.get("termination") == NUMERICAL_FAILURE for v in summary.values()):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_audit(config: ExperimentConfig, args) -> int:
    result = audit_rows(read_trajectory(args.trajectory), config, load_model(args.model), args.tol)
    print(json.dumps({"checked": result.checked, "failures": len(result.failures),
                      "max_residual": result.max_residual}))
    for t, res in result.failures:
        print(f"t={t:.6g} residual={res:.3e}", file=sys.stderr)
    return EXIT_OK if result.passed else EXIT_NUMERICAL


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "compare": cmd_compare, "audit": cmd_audit}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](config, args)


if __name__ == "__main__":
    sys.exit(main())
