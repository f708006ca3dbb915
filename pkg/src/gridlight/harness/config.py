"""Experiment configuration: the three desk-scale synthetic cities with
mismatched observation schemas, method names, and the experiment document.

The desk cities are sized so a full multi-city pipeline runs in minutes:
three small grids with distinct flow patterns and per-city sensor schemas.
The target city's through demand deliberately exceeds what a fixed cycle
can serve, so adaptive control has a clear margin to exploit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ConfigurationError
from ..meta import AdaptConfig, MamlConfig
from ..scenario import ScenarioSpec
from ..sim import Flow, RoadNetwork

METHODS = ("modular", "monolithic", "seq_pretrain", "fixed_time", "sotl",
           "max_pressure", "random")

BASELINE_METHODS = ("fixed_time", "sotl", "max_pressure", "random")

PIPELINE_METHODS = ("modular", "monolithic", "seq_pretrain")


def desk_city_a(episode_s: int = 3600) -> ScenarioSpec:
    """2x2 grid, SCHEMA_A sensors, east-west dominant traffic."""
    flows = (
        Flow(("W", 0), ("through", "through"), 0, episode_s, 12),
        Flow(("W", 1), ("through", "through"), 0, episode_s, 12),
        Flow(("E", 0), ("through", "through"), 0, episode_s, 14),
        Flow(("E", 1), ("through", "through"), 0, episode_s, 14),
        Flow(("N", 0), ("through", "through"), 0, episode_s, 25),
        Flow(("N", 1), ("through", "through"), 0, episode_s, 25),
        Flow(("W", 1), ("left", "through"), 0, episode_s, 30),
        Flow(("E", 0), ("left", "through"), 0, episode_s, 30),
    )
    return ScenarioSpec("city-a", RoadNetwork(rows=2, cols=2), flows,
                        "SCHEMA_A", episode_s=episode_s)


def desk_city_b(episode_s: int = 3600) -> ScenarioSpec:
    """3x2 grid, SCHEMA_B sensors, north-south dominant traffic."""
    flows = (
        Flow(("N", 0), ("through",) * 3, 0, episode_s, 11),
        Flow(("N", 1), ("through",) * 3, 0, episode_s, 11),
        Flow(("S", 0), ("through",) * 3, 0, episode_s, 13),
        Flow(("S", 1), ("through",) * 3, 0, episode_s, 13),
        Flow(("W", 0), ("through", "through"), 0, episode_s, 26),
        Flow(("W", 1), ("through", "through"), 0, episode_s, 26),
        Flow(("W", 2), ("through", "through"), 0, episode_s, 26),
        Flow(("N", 0), ("left", "through"), 0, episode_s, 30),
        Flow(("S", 1), ("left", "through"), 0, episode_s, 34),
    )
    return ScenarioSpec("city-b", RoadNetwork(rows=3, cols=2), flows,
                        "SCHEMA_B", episode_s=episode_s)


def desk_city_c(episode_s: int = 3600) -> ScenarioSpec:
    """2x3 grid, SCHEMA_C sensors, heavy north-south through demand that a
    fixed cycle cannot serve."""
    flows = (
        Flow(("N", 0), ("through", "through"), 0, episode_s, 12),
        Flow(("N", 1), ("through", "through"), 0, episode_s, 12),
        Flow(("N", 2), ("through", "through"), 0, episode_s, 12),
        Flow(("S", 0), ("through", "through"), 0, episode_s, 12),
        Flow(("S", 1), ("through", "through"), 0, episode_s, 12),
        Flow(("S", 2), ("through", "through"), 0, episode_s, 12),
        Flow(("W", 0), ("through",) * 3, 0, episode_s, 30),
        Flow(("E", 1), ("through",) * 3, 0, episode_s, 30),
        Flow(("N", 0), ("left", "through", "through"), 0, episode_s, 36),
        Flow(("S", 2), ("left", "through", "through"), 0, episode_s, 36),
        Flow(("W", 1), ("right",), 0, episode_s, 40),
    )
    return ScenarioSpec("city-c", RoadNetwork(rows=2, cols=3), flows,
                        "SCHEMA_C", episode_s=episode_s)


def saturated_city(episode_s: int = 3600) -> ScenarioSpec:
    """2x2 grid pushed past capacity from every side; used for soundness
    checks rather than controller comparisons."""
    flows = (
        Flow(("N", 0), ("through", "through"), 0, episode_s, 4),
        Flow(("N", 1), ("through", "through"), 0, episode_s, 4),
        Flow(("S", 0), ("through", "through"), 0, episode_s, 4),
        Flow(("S", 1), ("through", "through"), 0, episode_s, 4),
        Flow(("W", 0), ("through", "through"), 0, episode_s, 4),
        Flow(("W", 1), ("through", "through"), 0, episode_s, 4),
        Flow(("E", 0), ("through", "through"), 0, episode_s, 4),
        Flow(("E", 1), ("through", "through"), 0, episode_s, 4),
        Flow(("N", 0), ("left", "through"), 0, episode_s, 9),
        Flow(("S", 1), ("left", "through"), 0, episode_s, 9),
    )
    return ScenarioSpec("saturated", RoadNetwork(rows=2, cols=2), flows,
                        "BASE", episode_s=episode_s)


DESK_CITIES = {"city-a": desk_city_a, "city-b": desk_city_b,
               "city-c": desk_city_c, "saturated": saturated_city}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs: scenarios, method, training configs, seeds."""

    sources: tuple[ScenarioSpec, ...]
    target: ScenarioSpec
    method: str
    maml: MamlConfig
    adapt: AdaptConfig
    seeds: tuple[int, ...]
    out_dir: str
    collect_episodes: int = 20
    behavior_epsilon: float = 0.2
    horizon: int = 2
    step_discount: float = 0.9
    block_discount: float = 0.8
    dist_discount: float = 0.8
    dyn_hidden: tuple[int, ...] = (128, 128)
    estimator_hidden: tuple[int, ...] = (32, 32)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.method in PIPELINE_METHODS and not self.sources:
            raise ConfigurationError(
                f"method {self.method!r} needs at least one source scenario"
            )
        if self.method == "modular":
            for src in self.sources:
                if src.schema == self.target.schema:
                    raise ConfigurationError(
                        f"target schema {self.target.schema} must differ "
                        f"from every source schema (source {src.name!r} "
                        f"matches)"
                    )
        if self.collect_episodes < 1:
            raise ConfigurationError("collect_episodes must be >= 1")

    def to_json(self) -> dict:
        return {
            "sources": [s.to_json() for s in self.sources],
            "target": self.target.to_json(),
            "method": self.method,
            "maml": {
                "inner_lr": self.maml.inner_lr,
                "outer_lr": self.maml.outer_lr,
                "meta_iterations": self.maml.meta_iterations,
                "task_batch_size": self.maml.task_batch_size,
                "inner_steps": self.maml.inner_steps,
                "first_order": self.maml.first_order,
                "batch_size": self.maml.batch_size,
                "outer_optimizer": self.maml.outer_optimizer,
            },
            "adapt": {
                "lr": self.adapt.lr,
                "target_episode_budget": self.adapt.target_episode_budget,
                "joint_weight": self.adapt.joint_weight,
                "epochs_per_episode": self.adapt.epochs_per_episode,
                "batch_size": self.adapt.batch_size,
                "optimizer": self.adapt.optimizer,
                "epsilon0": self.adapt.epsilon0,
                "epsilon_decay": self.adapt.epsilon_decay,
            },
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "collect_episodes": self.collect_episodes,
            "behavior_epsilon": self.behavior_epsilon,
            "horizon": self.horizon,
            "step_discount": self.step_discount,
            "block_discount": self.block_discount,
            "dist_discount": self.dist_discount,
            "dyn_hidden": list(self.dyn_hidden),
            "estimator_hidden": list(self.estimator_hidden),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        try:
            maml_doc = doc.get("maml", {})
            adapt_doc = doc.get("adapt", {})
            return cls(
                sources=tuple(ScenarioSpec.from_json(s)
                              for s in doc.get("sources", [])),
                target=ScenarioSpec.from_json(doc["target"]),
                method=str(doc["method"]),
                maml=MamlConfig(
                    inner_lr=float(maml_doc.get("inner_lr", 2e-4)),
                    outer_lr=float(maml_doc.get("outer_lr", 1e-3)),
                    meta_iterations=int(maml_doc.get("meta_iterations", 150)),
                    task_batch_size=int(maml_doc.get("task_batch_size", 1)),
                    inner_steps=int(maml_doc.get("inner_steps", 1)),
                    first_order=bool(maml_doc.get("first_order", True)),
                    batch_size=int(maml_doc.get("batch_size", 256)),
                    outer_optimizer=str(maml_doc.get("outer_optimizer", "adam")),
                ),
                adapt=AdaptConfig(
                    lr=float(adapt_doc.get("lr", 1e-3)),
                    target_episode_budget=int(
                        adapt_doc.get("target_episode_budget", 5)),
                    joint_weight=float(adapt_doc.get("joint_weight", 1.0)),
                    epochs_per_episode=int(
                        adapt_doc.get("epochs_per_episode", 20)),
                    batch_size=int(adapt_doc.get("batch_size", 128)),
                    optimizer=str(adapt_doc.get("optimizer", "adam")),
                    epsilon0=float(adapt_doc.get("epsilon0", 0.1)),
                    epsilon_decay=float(adapt_doc.get("epsilon_decay", 0.99)),
                ),
                seeds=tuple(int(s) for s in doc.get("seeds", [0, 1, 2])),
                out_dir=str(doc.get("out_dir", "runs")),
                collect_episodes=int(doc.get("collect_episodes", 20)),
                behavior_epsilon=float(doc.get("behavior_epsilon", 0.2)),
                horizon=int(doc.get("horizon", 2)),
                step_discount=float(doc.get("step_discount", 0.9)),
                block_discount=float(doc.get("block_discount", 0.8)),
                dist_discount=float(doc.get("dist_discount", 0.8)),
                dyn_hidden=tuple(doc.get("dyn_hidden", (128, 128))),
                estimator_hidden=tuple(doc.get("estimator_hidden", (32, 32))),
            )
        except KeyError as exc:
            raise ConfigurationError(
                f"experiment config missing field {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def with_method(self, method: str) -> "ExperimentConfig":
        return replace(self, method=method)


def default_experiment(method: str = "modular", out_dir: str = "runs",
                       seeds: tuple[int, ...] = (0, 1, 2)) -> ExperimentConfig:
    """The standard desk configuration: sources A and B, target C."""
    return ExperimentConfig(
        sources=(desk_city_a(), desk_city_b()),
        target=desk_city_c(),
        method=method,
        maml=MamlConfig(inner_lr=2e-4, outer_lr=1e-3, meta_iterations=150,
                        task_batch_size=2, outer_optimizer="adam"),
        adapt=AdaptConfig(lr=1e-3, target_episode_budget=5,
                          epochs_per_episode=20),
        seeds=seeds,
        out_dir=out_dir,
    )
