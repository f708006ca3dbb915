"""Command-line interface.

Subcommands: simulate, collect, meta-train, adapt, evaluate, ablation,
sweep, source-matrix, offline, curve. Global flags --config/--seed/--out.
Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .harness import io
from .harness.config import (
    BASELINE_METHODS,
    ExperimentConfig,
    default_experiment,
)
from .harness.runners import (
    baseline_controller,
    evaluate_controller,
    modular_pipeline,
    run_ablation,
    run_complexity_sweep,
    run_data_volume_curve,
    run_main,
    run_offline_case,
    run_source_selection,
    value_config_for,
    dist_config_for,
    collect_source_datasets,
)
from .meta import adapt as adapt_models
from .meta import maml_train, run_episode
from .planner import DynamicsModel, PlannerController, PolicyConfig, default_dynamics_net
from .scenario import EnvFactory


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = default_experiment()
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    method = args.method or cfg.method
    if method not in BASELINE_METHODS:
        raise ConfigurationError(
            f"simulate runs baseline controllers only, got {method!r}")
    rows = []
    for seed in cfg.seeds:
        ctrl = baseline_controller(method, np.random.default_rng([seed, 3]))
        m = evaluate_controller(cfg.target, ctrl, seed)
        rows.append({
            "scenario": cfg.target.name, "seed": seed, "method": method,
            "avg_travel_time": m.avg_travel_time_s,
            "avg_queue_length": m.avg_queue_length,
        })
        print(f"{cfg.target.name} seed={seed} {method}: "
              f"travel={m.avg_travel_time_s:.2f}s "
              f"queue={m.avg_queue_length:.3f}")
    io.write_metrics_csv(Path(cfg.out_dir) / "simulate" / "metrics.csv", rows)
    return 0


def _cmd_collect(args) -> int:
    cfg = _load_config(args)
    seed_seq = np.random.SeedSequence([cfg.seeds[0], 17])
    datasets = collect_source_datasets(cfg, seed_seq)
    for ds in datasets:
        path = Path(cfg.out_dir) / "datasets" / f"{ds.city_id}.jsonl"
        io.save_dataset(path, ds)
        print(f"wrote {len(ds)} records to {path}")
    return 0


def _cmd_meta_train(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    seed_seq = np.random.SeedSequence([seed, 17])
    datasets = collect_source_datasets(cfg, seed_seq)
    lanes = cfg.target.network.lanes_per_intersection
    n_grids = cfg.target.network.state_grids
    g0 = DynamicsModel(default_dynamics_net(lanes, n_grids, cfg.dyn_hidden,
                                            seed=seed), lanes, n_grids)
    phi = maml_train(datasets, cfg.maml, g0, dist_config_for(cfg, cfg.target),
                     seed)
    path = Path(cfg.out_dir) / "meta" / "initialization.json"
    io.save_checkpoint(
        path, None, DynamicsModel(g0.net.with_params(phi), lanes, n_grids),
        value_params=vars_dict(value_config_for(cfg, cfg.target)),
        dist_params=vars_dict(dist_config_for(cfg, cfg.target)),
        policy_params={"epsilon": cfg.adapt.epsilon0,
                       "candidate_mode": "CONSTANT"},
        provenance={"source_cities": [s.name for s in cfg.sources],
                    "meta_iters": cfg.maml.meta_iterations, "seed": seed})
    print(f"wrote meta-trained checkpoint to {path}")
    return 0


def vars_dict(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def _cmd_adapt(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    ck = io.load_checkpoint(args.checkpoint)
    factory = EnvFactory(cfg.target)
    estimator, dynamics = adapt_models(
        ck["dynamics"].net.params, factory, cfg.adapt, cfg.target.schema,
        seed, dyn_hidden=cfg.dyn_hidden,
        estimator_hidden=cfg.estimator_hidden,
        value_cfg=value_config_for(cfg, cfg.target),
        dist_cfg=dist_config_for(cfg, cfg.target))
    path = Path(cfg.out_dir) / "adapted" / "checkpoint.json"
    io.save_checkpoint(
        path, estimator, dynamics,
        value_params=vars_dict(value_config_for(cfg, cfg.target)),
        dist_params=vars_dict(dist_config_for(cfg, cfg.target)),
        policy_params={"epsilon": 0.0, "candidate_mode": "CONSTANT"},
        provenance={"source_cities": [s.name for s in cfg.sources],
                    "meta_iters": cfg.maml.meta_iterations, "seed": seed,
                    "interactions": factory.interactions})
    print(f"consumed {factory.interactions} target episodes; "
          f"wrote {path}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ck = io.load_checkpoint(args.checkpoint)
    if ck["estimator"] is None:
        raise ConfigurationError(
            "checkpoint has no estimator; adapt it before evaluating")
    rows = []
    for seed in cfg.seeds:
        ctrl = PlannerController(ck["estimator"], ck["dynamics"],
                                 PolicyConfig(epsilon=0.0),
                                 value_config_for(cfg, cfg.target),
                                 np.random.default_rng(0))
        sim = cfg.target.make(seed)
        m, _ = run_episode(sim, ctrl, cfg.target.intervals,
                           cfg.target.interval_s)
        rows.append({
            "scenario": cfg.target.name, "seed": seed, "method": "modular",
            "avg_travel_time": m.avg_travel_time_s,
            "avg_queue_length": m.avg_queue_length,
        })
        print(f"seed={seed}: travel={m.avg_travel_time_s:.2f}s "
              f"queue={m.avg_queue_length:.3f}")
    io.write_metrics_csv(Path(cfg.out_dir) / "evaluate" / "metrics.csv", rows)
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_main(cfg)
    print(f"method={report.method} mean_travel={report.mean_travel:.2f} "
          f"(std {report.std_travel:.2f}) mean_queue={report.mean_queue:.3f}")
    return 0


def _cmd_ablation(args) -> int:
    cfg = _load_config(args)
    if cfg.method not in ("modular", "monolithic", "seq_pretrain"):
        cfg = cfg.with_method("modular")
    reports = run_ablation(cfg)
    for method, rep in reports.items():
        print(f"{method}: mean_travel={rep.mean_travel:.2f} "
              f"(std {rep.std_travel:.2f})")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    widths = tuple(float(w) for w in args.widths.split(","))
    depths = tuple(int(d) for d in args.depths.split(","))
    results = run_complexity_sweep(cfg, widths, depths)
    for entry in results:
        print(f"width x{entry['width_scale']} depth {entry['depth']}: "
              f"{entry['param_count']} params, "
              f"travel={entry['mean_travel']:.2f}")
    return 0


def _cmd_source_matrix(args) -> int:
    cfg = _load_config(args)
    out = run_source_selection(cfg)
    for row in out["matrix"]:
        print(row)
    return 0


def _cmd_offline(args) -> int:
    cfg = _load_config(args)
    out = run_offline_case(cfg)
    for method, travel in out["mean_travel_by_method"].items():
        print(f"{method}: mean_travel={travel:.2f}")
    return 0


def _cmd_curve(args) -> int:
    cfg = _load_config(args)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    rows = run_data_volume_curve(cfg, fractions, full_budget=args.full_budget)
    for r in rows:
        print(f"fraction={r['fraction']} seed={r['seed']}: "
              f"travel={r['travel_time']:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridlight",
        description="Grid traffic simulation, modular signal control, and "
                    "the experiment harness around them.")
    parser.add_argument("--config", type=str, default=None,
                        help="experiment config JSON (defaults to the "
                             "built-in desk configuration)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's seed list with one seed")
    parser.add_argument("--out", type=str, default=None,
                        help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one baseline on the target")
    p.add_argument("--method", type=str, default=None)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("collect", help="collect source-city experience")
    p.set_defaults(fn=_cmd_collect)

    p = sub.add_parser("meta-train", help="meta-train the dynamics model")
    p.set_defaults(fn=_cmd_meta_train)

    p = sub.add_parser("adapt", help="adapt a meta-trained checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.set_defaults(fn=_cmd_adapt)

    p = sub.add_parser("evaluate", help="evaluate an adapted checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline for the configured method")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("ablation", help="modular vs ablated variants")
    p.set_defaults(fn=_cmd_ablation)

    p = sub.add_parser("sweep", help="model complexity sweep")
    p.add_argument("--widths", type=str, default="0.5,1.0")
    p.add_argument("--depths", type=str, default="2,3")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("source-matrix", help="single-source transfer matrix")
    p.set_defaults(fn=_cmd_source_matrix)

    p = sub.add_parser("offline", help="offline estimator case study")
    p.set_defaults(fn=_cmd_offline)

    p = sub.add_parser("curve", help="travel time vs interaction budget")
    p.add_argument("--fractions", type=str, default="0.25,0.5,1.0")
    p.add_argument("--full-budget", type=int, default=10)
    p.set_defaults(fn=_cmd_curve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
