"""Experiment runners: the main method comparison, ablations, the model
complexity sweep, single-source transfer matrix, offline estimator training,
and the data-volume curve.

Every runner is reproducible from (config, seeds): all randomness descends
from the per-seed SeedSequence, and CSV outputs carry no timestamps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .. import nn
from ..baselines import (
    EpsilonMixController,
    FixedTimeController,
    MaxPressureController,
    RandomController,
    SotlController,
)
from ..errors import ConfigurationError
from ..meta import (
    AdaptConfig,
    MamlConfig,
    TaskDataset,
    adapt,
    collect_experience,
    dynamics_error,
    maml_train,
    offline_train_repr,
    run_episode,
    seq_pretrain,
)
from ..planner import (
    DistanceConfig,
    DynamicsModel,
    PlannerController,
    PolicyConfig,
    StateEstimator,
    ValueConfig,
    default_dynamics_net,
    default_estimator_net,
)
from ..scenario import EnvFactory, ScenarioSpec
from ..sim.engine import MetricsReport
from ..sim.network import PHASE_IDS, SCHEMA_DIMS
from .config import BASELINE_METHODS, ExperimentConfig
from . import io


@dataclass
class RunReport:
    """Per-seed metric rows plus their mean and sample standard deviation."""

    method: str
    rows: list[dict]
    mean_travel: float
    std_travel: float
    mean_queue: float
    std_queue: float
    config_digest: str
    wall_clock_s: float
    extras: dict

    @classmethod
    def from_rows(cls, method: str, rows: list[dict], digest: str,
                  wall: float, extras: dict | None = None) -> "RunReport":
        travel = np.array([r["avg_travel_time"] for r in rows], dtype=float)
        queue = np.array([r["avg_queue_length"] for r in rows], dtype=float)
        std = (float(np.std(travel, ddof=1)), float(np.std(queue, ddof=1))) \
            if len(rows) > 1 else (0.0, 0.0)
        return cls(method, rows, float(travel.mean()), std[0],
                   float(queue.mean()), std[1], digest, wall, extras or {})

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "rows": self.rows,
            "mean_travel": self.mean_travel,
            "std_travel": self.std_travel,
            "mean_queue": self.mean_queue,
            "std_queue": self.std_queue,
            "config_digest": self.config_digest,
            "wall_clock_s": self.wall_clock_s,
            "extras": self.extras,
        }


def value_config_for(cfg: ExperimentConfig, scenario: ScenarioSpec) -> ValueConfig:
    net = scenario.network
    return ValueConfig(cfg.horizon, cfg.step_discount, cfg.block_discount,
                       net.state_grids, net.pass_capacity)


def dist_config_for(cfg: ExperimentConfig, scenario: ScenarioSpec) -> DistanceConfig:
    net = scenario.network
    return DistanceConfig(cfg.dist_discount, net.state_grids,
                          net.pass_capacity)


def baseline_controller(method: str, rng: np.random.Generator):
    if method == "fixed_time":
        return FixedTimeController()
    if method == "sotl":
        return SotlController()
    if method == "max_pressure":
        return MaxPressureController()
    if method == "random":
        return RandomController(rng)
    raise ConfigurationError(f"{method!r} is not a baseline method")


def evaluate_controller(scenario: ScenarioSpec, controller,
                        seed: int) -> MetricsReport:
    sim = scenario.make(seed)
    metrics, _ = run_episode(sim, controller, scenario.intervals,
                             scenario.interval_s)
    return metrics


def _metrics_row(scenario: ScenarioSpec, seed: int, method: str,
                 metrics: MetricsReport) -> dict:
    return {
        "scenario": scenario.name,
        "seed": seed,
        "method": method,
        "avg_travel_time": metrics.avg_travel_time_s,
        "avg_queue_length": metrics.avg_queue_length,
    }


# -- the modular pipeline ------------------------------------------------------


def collect_source_datasets(cfg: ExperimentConfig, seed_seq,
                            sources: tuple[ScenarioSpec, ...] | None = None
                            ) -> list[TaskDataset]:
    """Source-city experience under max-pressure control with epsilon-random
    phases mixed in for coverage."""
    sources = cfg.sources if sources is None else sources
    datasets = []
    for i, src in enumerate(sources):
        child = np.random.default_rng(seed_seq.spawn(1)[0])
        behavior = EpsilonMixController(
            MaxPressureController(), cfg.behavior_epsilon,
            np.random.default_rng(child.integers(2 ** 31 - 1)))
        datasets.append(collect_experience(
            lambda s, src=src: src.make(s), behavior, cfg.collect_episodes,
            np.random.default_rng(child.integers(2 ** 31 - 1)),
            city_id=src.name, intervals=src.intervals,
            interval_s=src.interval_s))
    return datasets


def modular_pipeline(cfg: ExperimentConfig, seed: int, *,
                     sources: tuple[ScenarioSpec, ...] | None = None,
                     aggregator: str = "maml",
                     budget: int | None = None):
    """Collect -> meta-train -> adapt -> evaluate greedily, for one seed.

    Returns (metrics, artifacts). Artifacts include the adapted models, the
    meta-trained initialization, the exact interaction count, and held-out
    dynamics errors for the adapted and un-fine-tuned models.
    """
    sources = cfg.sources if sources is None else sources
    target = cfg.target
    ss = np.random.SeedSequence([seed, 17])
    collect_seq, net_seq, train_seq, adapt_seq = ss.spawn(4)

    datasets = collect_source_datasets(cfg, collect_seq, sources)

    lanes = target.network.lanes_per_intersection
    n_grids = target.network.state_grids
    dist_cfg = dist_config_for(cfg, target)
    g0 = DynamicsModel(
        default_dynamics_net(lanes, n_grids, cfg.dyn_hidden,
                             seed=int(np.random.default_rng(net_seq)
                                      .integers(2 ** 31 - 1))),
        lanes, n_grids)
    train_seed = int(np.random.default_rng(train_seq).integers(2 ** 31 - 1))
    if aggregator == "maml":
        phi = maml_train(datasets, cfg.maml, g0, dist_cfg, train_seed)
    elif aggregator == "seq":
        phi = seq_pretrain(datasets, cfg.maml, g0, dist_cfg, train_seed)
    else:
        raise ConfigurationError(f"unknown aggregator {aggregator!r}")

    adapt_cfg = (cfg.adapt if budget is None
                 else replace(cfg.adapt, target_episode_budget=budget))
    factory = EnvFactory(target)
    vc = value_config_for(cfg, target)
    estimator, dynamics = adapt(
        phi, factory, adapt_cfg, target.schema,
        int(np.random.default_rng(adapt_seq).integers(2 ** 31 - 1)),
        dyn_hidden=cfg.dyn_hidden, estimator_hidden=cfg.estimator_hidden,
        value_cfg=vc, dist_cfg=dist_cfg)
    interactions = factory.interactions

    controller = PlannerController(estimator, dynamics,
                                   PolicyConfig(epsilon=0.0), vc,
                                   np.random.default_rng(0))
    sim = factory.make(seed, count=False)
    metrics, _ = run_episode(sim, controller, target.intervals,
                             target.interval_s)

    held = collect_experience(
        lambda s: factory.make(s, count=False), FixedTimeController(),
        episodes=1, rng=np.random.default_rng(20_000 + seed),
        city_id="heldout", intervals=target.intervals,
        interval_s=target.interval_s)
    err_adapted = dynamics_error(dynamics, held.records, dist_cfg)
    err_meta = dynamics_error(
        DynamicsModel(g0.net.with_params(phi), lanes, n_grids),
        held.records, dist_cfg)

    artifacts = {
        "interactions": interactions,
        "heldout_dist_adapted": err_adapted,
        "heldout_dist_meta_init": err_meta,
        "estimator": estimator,
        "dynamics": dynamics,
        "phi": phi,
        "g0": g0,
    }
    return metrics, artifacts


# -- the non-modular ablation ---------------------------------------------------


class MonolithicController:
    """Scores each phase by the value of the single next state predicted
    straight from the observation; no intermediate state estimate exists,
    so lookahead beyond one step is not possible."""

    def __init__(self, net: nn.Net, lanes: int, n_grids: int,
                 schema_id: str, epsilon: float, vc: ValueConfig,
                 rng: np.random.Generator):
        self.net = net
        self.lanes = lanes
        self.n_grids = n_grids
        self.schema_id = schema_id
        self.epsilon = epsilon
        self.w_block = vc.block_discount ** np.arange(vc.blocks)
        self.vc = vc
        self.rng = rng

    def begin_episode(self, env) -> None:
        pass

    def _decide_one(self, obs) -> int:
        if self.epsilon > 0.0 and self.rng.random() < self.epsilon:
            return int(self.rng.integers(1, len(PHASE_IDS) + 1))
        o = obs.values.reshape(-1)
        k = len(PHASE_IDS)
        x = np.zeros((k, o.size + k))
        x[:, :o.size] = o
        x[np.arange(k), o.size + np.arange(k)] = 1.0
        pred = nn.forward(self.net, x)
        blocks = pred.reshape(k, self.lanes, self.vc.blocks,
                              self.vc.pass_grids).sum(axis=(1, 3))
        costs = blocks @ self.w_block
        return int(PHASE_IDS[int(np.argmin(costs))])

    def decide(self, env, interval_index: int, obs: dict) -> dict:
        return {node: self._decide_one(obs[node]) for node in env.nodes}


def _monolithic_arrays(ds: TaskDataset, lanes: int, n_grids: int):
    d_o = SCHEMA_DIMS[ds.schema_id]
    m = len(ds.records)
    x = np.zeros((m, lanes * d_o + len(PHASE_IDS)))
    y = np.zeros((m, lanes * n_grids))
    for i, r in enumerate(ds.records):
        x[i, :lanes * d_o] = r.obs.values.reshape(-1)
        x[i, lanes * d_o + r.action - 1] = 1.0
        y[i] = r.state_next.reshape(-1)
    return x, y


def _carry_trailing_layers(src: nn.Net, dst: nn.Net) -> nn.Net:
    """Copy every layer after the first from src into dst; the first layer
    keeps dst's fresh initialization (input widths differ per city)."""
    params = dst.params.copy()
    src_off = (src.layer_sizes[0] + 1) * src.layer_sizes[1]
    dst_off = (dst.layer_sizes[0] + 1) * dst.layer_sizes[1]
    if src.params.size - src_off != params.size - dst_off:
        raise ConfigurationError(
            "trailing layers of source and destination nets do not align")
    params[dst_off:] = src.params[src_off:]
    return dst.with_params(params)


def monolithic_pipeline(cfg: ExperimentConfig, seed: int):
    """Train one observation-to-next-state net per source city in sequence,
    carrying the trailing layers across cities and into the target, then
    fine-tune within the same episode budget."""
    target = cfg.target
    ss = np.random.SeedSequence([seed, 29])
    collect_seq, net_seq, train_seq, adapt_seq = ss.spawn(4)
    datasets = collect_source_datasets(cfg, collect_seq)

    lanes = target.network.lanes_per_intersection
    n_grids = target.network.state_grids
    dist_cfg = dist_config_for(cfg, target)
    vc = value_config_for(cfg, target)
    net_rng = np.random.default_rng(net_seq)
    train_rng = np.random.default_rng(train_seq)
    from ..planner import block_distance_loss  # local alias for clarity

    loss_fn = block_distance_loss(dist_cfg, lanes)
    prev: nn.Net | None = None
    for ds in datasets:
        d_o = SCHEMA_DIMS[ds.schema_id]
        sizes = (lanes * d_o + len(PHASE_IDS), *cfg.dyn_hidden, lanes * n_grids)
        net = nn.net_new(sizes, "softplus",
                         seed=int(net_rng.integers(2 ** 31 - 1)))
        if prev is not None:
            net = _carry_trailing_layers(prev, net)
        x, y = _monolithic_arrays(ds, lanes, n_grids)
        opt = nn.Adam(lr=cfg.maml.outer_lr)
        for _ in range(cfg.maml.meta_iterations):
            idx = train_rng.choice(x.shape[0],
                                   size=min(cfg.maml.batch_size, x.shape[0]),
                                   replace=False)
            _, g = nn.loss_and_grad(net, loss_fn, x[idx], y[idx])
            net = net.with_params(opt.step(net.params, g))
        prev = net

    d_o = SCHEMA_DIMS[target.schema]
    sizes = (lanes * d_o + len(PHASE_IDS), *cfg.dyn_hidden, lanes * n_grids)
    net = nn.net_new(sizes, "softplus", seed=int(net_rng.integers(2 ** 31 - 1)))
    if prev is not None:
        net = _carry_trailing_layers(prev, net)

    factory = EnvFactory(target)
    adapt_rng = np.random.default_rng(adapt_seq)
    records = []
    epsilon = cfg.adapt.epsilon0
    opt = nn.Adam(lr=cfg.adapt.lr)
    for _ in range(cfg.adapt.target_episode_budget):
        env = factory.make(int(adapt_rng.integers(2 ** 31 - 1)))
        ctrl = MonolithicController(
            net, lanes, n_grids, target.schema, epsilon, vc,
            np.random.default_rng(adapt_rng.integers(2 ** 31 - 1)))
        _, recs = run_episode(env, ctrl, target.intervals, target.interval_s,
                              record=True, city_id=target.name)
        records.extend(recs)
        epsilon *= cfg.adapt.epsilon_decay
        ds = TaskDataset(target.name, target.schema, records)
        x, y = _monolithic_arrays(ds, lanes, n_grids)
        for _ in range(cfg.adapt.epochs_per_episode):
            perm = adapt_rng.permutation(x.shape[0])
            for lo in range(0, x.shape[0], cfg.adapt.batch_size):
                idx = perm[lo:lo + cfg.adapt.batch_size]
                _, g = nn.loss_and_grad(net, loss_fn, x[idx], y[idx])
                net = net.with_params(opt.step(net.params, g))

    ctrl = MonolithicController(net, lanes, n_grids, target.schema, 0.0, vc,
                                np.random.default_rng(0))
    sim = factory.make(seed, count=False)
    metrics, _ = run_episode(sim, ctrl, target.intervals, target.interval_s)
    return metrics, {"interactions": factory.interactions, "net": net}


# -- runners -------------------------------------------------------------------


def _finish_report(cfg: ExperimentConfig, method: str, rows: list[dict],
                   t0: float, extras: dict, out_name: str) -> RunReport:
    digest = io.config_digest(cfg.to_json())
    report = RunReport.from_rows(method, rows, digest,
                                 time.perf_counter() - t0, extras)
    base = f"{cfg.out_dir}/{out_name}"
    io.write_metrics_csv(f"{base}/metrics.csv", rows)
    io.write_json(f"{base}/report.json", report.to_json())
    io.write_manifest(f"{base}/manifest.json", cfg.to_json(), cfg.seeds)
    return report


def run_main(cfg: ExperimentConfig) -> RunReport:
    """The core comparison: run the configured method once per seed on the
    target scenario and aggregate metrics."""
    cfg.validate()
    t0 = time.perf_counter()
    rows = []
    extras: dict = {"per_seed": {}}
    for seed in cfg.seeds:
        if cfg.method in BASELINE_METHODS:
            ctrl = baseline_controller(
                cfg.method, np.random.default_rng([seed, 3]))
            metrics = evaluate_controller(cfg.target, ctrl, seed)
        elif cfg.method == "modular":
            metrics, art = modular_pipeline(cfg, seed)
            extras["per_seed"][str(seed)] = {
                "interactions": art["interactions"],
                "heldout_dist_adapted": art["heldout_dist_adapted"],
                "heldout_dist_meta_init": art["heldout_dist_meta_init"],
            }
        elif cfg.method == "seq_pretrain":
            metrics, art = modular_pipeline(cfg, seed, aggregator="seq")
            extras["per_seed"][str(seed)] = {
                "interactions": art["interactions"]}
        elif cfg.method == "monolithic":
            metrics, art = monolithic_pipeline(cfg, seed)
            extras["per_seed"][str(seed)] = {
                "interactions": art["interactions"]}
        else:
            raise ConfigurationError(f"unknown method {cfg.method!r}")
        rows.append(_metrics_row(cfg.target, seed, cfg.method, metrics))
    return _finish_report(cfg, cfg.method, rows, t0, extras,
                          f"main-{cfg.method}")


def run_ablation(cfg: ExperimentConfig) -> dict[str, RunReport]:
    """Modular vs monolithic vs sequential pretraining, paired per seed.

    Directional expectations (modular beats monolithic, meta-aggregation
    beats sequential) are recorded as informational flags, not hard
    failures: a three-seed desk run cannot certify them."""
    if cfg.method not in ("modular", "monolithic", "seq_pretrain"):
        raise ConfigurationError(
            f"run_ablation requires a pipeline method, got {cfg.method!r}")
    cfg.validate()
    t0 = time.perf_counter()
    reports = {}
    all_rows = []
    for method in ("modular", "monolithic", "seq_pretrain"):
        sub = cfg.with_method(method)
        rows = []
        for seed in cfg.seeds:
            if method == "modular":
                metrics, _ = modular_pipeline(sub, seed)
            elif method == "seq_pretrain":
                metrics, _ = modular_pipeline(sub, seed, aggregator="seq")
            else:
                metrics, _ = monolithic_pipeline(sub, seed)
            rows.append(_metrics_row(cfg.target, seed, method, metrics))
        all_rows.extend(rows)
        reports[method] = RunReport.from_rows(
            method, rows, io.config_digest(sub.to_json()), 0.0)
    wall = time.perf_counter() - t0
    directional = {
        "modular_beats_monolithic":
            reports["modular"].mean_travel <= reports["monolithic"].mean_travel,
        "maml_beats_sequential":
            reports["modular"].mean_travel <= reports["seq_pretrain"].mean_travel,
    }
    base = f"{cfg.out_dir}/ablation"
    io.write_metrics_csv(f"{base}/metrics.csv", all_rows)
    io.write_json(f"{base}/report.json", {
        "variants": {m: r.to_json() for m, r in reports.items()},
        "directional_expectations": directional,
        "wall_clock_s": wall,
    })
    io.write_manifest(f"{base}/manifest.json", cfg.to_json(), cfg.seeds)
    return reports


def run_complexity_sweep(cfg: ExperimentConfig, width_scales=(0.5, 1.0),
                         depths=(2, 3)) -> list[dict]:
    """Repeat the main run across dynamics-net widths and depths, reporting
    parameter counts alongside the metrics."""
    if not width_scales or not depths:
        raise ConfigurationError("sweep grid must be nonempty")
    cfg.validate()
    t0 = time.perf_counter()
    results = []
    rows_out = []
    for ws in width_scales:
        for depth in depths:
            hidden = tuple(max(8, int(round(128 * ws))) for _ in range(depth))
            est_hidden = tuple(max(4, int(round(32 * ws)))
                               for _ in range(min(depth, 2)))
            sub = replace(cfg, dyn_hidden=hidden, estimator_hidden=est_hidden,
                          out_dir=f"{cfg.out_dir}/sweep-w{ws}-d{depth}")
            lanes = cfg.target.network.lanes_per_intersection
            n_grids = cfg.target.network.state_grids
            dyn_params = nn.param_count(
                [lanes * n_grids + len(PHASE_IDS), *hidden, lanes * n_grids])
            est_params = nn.param_count(
                [SCHEMA_DIMS[cfg.target.schema], *est_hidden, n_grids])
            report = run_main(sub)
            entry = {
                "width_scale": ws,
                "depth": depth,
                "dyn_hidden": list(hidden),
                "param_count": dyn_params + est_params,
                "dyn_param_count": dyn_params,
                "estimator_param_count": est_params,
                "mean_travel": report.mean_travel,
                "std_travel": report.std_travel,
                "mean_queue": report.mean_queue,
                "std_queue": report.std_queue,
            }
            results.append(entry)
            rows_out.append(entry)
    io.write_csv(f"{cfg.out_dir}/sweep/summary.csv",
                 ("width_scale", "depth", "param_count", "mean_travel",
                  "std_travel", "mean_queue", "std_queue"), rows_out)
    io.write_json(f"{cfg.out_dir}/sweep/report.json", {
        "grid": results, "wall_clock_s": time.perf_counter() - t0})
    return results


def run_source_selection(cfg: ExperimentConfig) -> dict:
    """Every ordered (source, target) city pair: meta-train on the single
    source, adapt to the target, and tabulate against the baselines."""
    pool = list(cfg.sources) + [cfg.target]
    if len(pool) < 2:
        raise ConfigurationError("source selection needs >= 2 scenarios")
    t0 = time.perf_counter()
    cells: dict[tuple[str, str], dict] = {}
    rows = []
    for src in pool:
        for dst in pool:
            if src.name == dst.name:
                continue
            travels, queues = [], []
            for seed in cfg.seeds:
                sub = replace(cfg, target=dst,
                              maml=replace(cfg.maml, task_batch_size=1))
                metrics, _ = modular_pipeline(sub, seed, sources=(src,))
                travels.append(metrics.avg_travel_time_s)
                queues.append(metrics.avg_queue_length)
                rows.append({
                    "source": src.name, "target": dst.name, "seed": seed,
                    "avg_travel_time": metrics.avg_travel_time_s,
                    "avg_queue_length": metrics.avg_queue_length,
                })
            cells[(src.name, dst.name)] = {
                "mean_travel": float(np.mean(travels)),
                "std_travel": float(np.std(travels, ddof=1))
                if len(travels) > 1 else 0.0,
                "mean_queue": float(np.mean(queues)),
            }
    baseline_rows = {}
    for method in ("fixed_time", "max_pressure"):
        baseline_rows[method] = {}
        for dst in pool:
            ctrl = baseline_controller(method, np.random.default_rng(0))
            m = evaluate_controller(dst, ctrl, cfg.seeds[0])
            baseline_rows[method][dst.name] = {
                "mean_travel": m.avg_travel_time_s,
                "mean_queue": m.avg_queue_length,
            }
    # matrix rendering with "/" on the diagonal
    names = [s.name for s in pool]
    matrix_rows = []
    for src_name in names:
        row = {"source": src_name}
        for dst_name in names:
            if src_name == dst_name:
                row[dst_name] = "/"
            else:
                row[dst_name] = f"{cells[(src_name, dst_name)]['mean_travel']:.2f}"
        matrix_rows.append(row)
    base = f"{cfg.out_dir}/source-matrix"
    io.write_csv(f"{base}/cells.csv",
                 ("source", "target", "seed", "avg_travel_time",
                  "avg_queue_length"), rows)
    io.write_csv(f"{base}/matrix.csv", ("source", *names), matrix_rows)
    io.write_json(f"{base}/report.json", {
        "cells": {f"{a}->{b}": v for (a, b), v in cells.items()},
        "baselines": baseline_rows,
        "wall_clock_s": time.perf_counter() - t0,
    })
    return {"cells": cells, "baselines": baseline_rows, "matrix": matrix_rows}


def run_offline_case(cfg: ExperimentConfig, offline_episodes: int = 1) -> dict:
    """Train the estimator on fixed-time logs only, pair it with the
    online-adapted dynamics model, and compare three ways: online planner,
    offline-estimator planner, and fixed-time control."""
    cfg.validate()
    t0 = time.perf_counter()
    target = cfg.target
    vc = value_config_for(cfg, target)
    rows = []
    per_seed = {}
    for seed in cfg.seeds:
        metrics_online, art = modular_pipeline(cfg, seed)
        interactions_before = art["interactions"]

        factory = EnvFactory(target, interactions=interactions_before)
        log_rng = np.random.default_rng([seed, 77])
        logged = collect_experience(
            lambda s: factory.make(s, count=False), FixedTimeController(),
            episodes=offline_episodes, rng=log_rng, city_id=target.name,
            intervals=target.intervals, interval_s=target.interval_s)
        pairs = [(r.obs, r.state) for r in logged.records]
        est_off = offline_train_repr(
            pairs, target.schema, epochs=cfg.adapt.epochs_per_episode * 2,
            lr=cfg.adapt.lr, hidden=cfg.estimator_hidden,
            dist_cfg=dist_config_for(cfg, target), seed=seed)

        ctrl = PlannerController(est_off, art["dynamics"],
                                 PolicyConfig(epsilon=0.0), vc,
                                 np.random.default_rng(0))
        sim = factory.make(seed, count=False)
        metrics_off, _ = run_episode(sim, ctrl, target.intervals,
                                     target.interval_s)
        metrics_fixed = evaluate_controller(
            target, FixedTimeController(), seed)

        assert factory.interactions == interactions_before, \
            "offline training consumed environment interactions"
        per_seed[str(seed)] = {"interactions": factory.interactions}
        for method, m in (("modular", metrics_online),
                          ("modular_offline", metrics_off),
                          ("fixed_time", metrics_fixed)):
            rows.append(_metrics_row(target, seed, method, m))
    by_method = {}
    for method in ("modular", "modular_offline", "fixed_time"):
        sel = [r for r in rows if r["method"] == method]
        by_method[method] = float(np.mean([r["avg_travel_time"] for r in sel]))
    base = f"{cfg.out_dir}/offline"
    io.write_metrics_csv(f"{base}/metrics.csv", rows)
    io.write_json(f"{base}/report.json", {
        "mean_travel_by_method": by_method,
        "per_seed": per_seed,
        "wall_clock_s": time.perf_counter() - t0,
    })
    return {"rows": rows, "mean_travel_by_method": by_method,
            "per_seed": per_seed}


def run_data_volume_curve(cfg: ExperimentConfig, fractions=(0.25, 0.5, 1.0),
                          full_budget: int = 10) -> list[dict]:
    """Adaptation quality versus interaction budget: run the pipeline at a
    ceiling-rounded fraction of the full episode budget and emit one CSV row
    per (fraction, seed)."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ConfigurationError(f"fractions must be in (0, 1], got {f}")
    cfg.validate()
    t0 = time.perf_counter()
    rows = []
    for frac in fractions:
        budget = int(np.ceil(frac * full_budget))
        for seed in cfg.seeds:
            metrics, art = modular_pipeline(cfg, seed, budget=budget)
            rows.append({
                "fraction": frac,
                "budget_episodes": budget,
                "seed": seed,
                "travel_time": metrics.avg_travel_time_s,
                "queue_length": metrics.avg_queue_length,
            })
    io.write_csv(f"{cfg.out_dir}/curve/curve.csv",
                 ("fraction", "budget_episodes", "seed", "travel_time",
                  "queue_length"), rows)
    io.write_json(f"{cfg.out_dir}/curve/report.json", {
        "rows": rows, "wall_clock_s": time.perf_counter() - t0})
    return rows
