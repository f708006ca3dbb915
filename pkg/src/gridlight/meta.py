"""Multi-city experience aggregation and adaptation.

``maml_run`` is the generic two-loop meta-trainer: per sampled task it takes
``inner_steps`` plain gradient steps on a support batch, evaluates the
adapted parameters on a query batch, and applies the summed outer gradient.
First-order mode evaluates the outer gradient at the adapted parameters;
exact second-order mode differentiates through the inner step by central
finite differences and is only practical for tiny test models.

``adapt`` runs the fixed-budget fine-tuning loop on a target city: the
dynamics model starts from the meta-trained parameters, the observation
estimator starts fresh, and both are trained jointly on everything collected
so far after each budgeted episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import nn
from .errors import ConfigurationError, ShapeError
from .planner import (
    DistanceConfig,
    DynamicsModel,
    PlannerController,
    PolicyConfig,
    StateEstimator,
    ValueConfig,
    block_distance_loss,
    default_dynamics_net,
    default_estimator_net,
    rowwise_block_distance_loss,
    state_distance,
)
from .scenario import EnvFactory
from .sim import Observation, Sim
from .sim.engine import MetricsReport
from .sim.network import PHASE_IDS, SCHEMA_DIMS


@dataclass(frozen=True)
class TransitionRecord:
    """One intersection's interval transition: what was observed, the true
    state, the commanded phase, and what followed."""

    city_id: str
    t: int
    obs: Observation
    state: np.ndarray
    action: int
    state_next: np.ndarray
    obs_next: Observation


@dataclass
class TaskDataset:
    """All logged transitions for one city, with the support/query ratio
    used when the dataset serves as a meta-learning task."""

    city_id: str
    schema_id: str
    records: list[TransitionRecord]
    support_fraction: float = 0.5

    def __post_init__(self):
        if not self.records:
            raise ConfigurationError(f"task dataset {self.city_id!r} is empty")
        if not 0.0 < self.support_fraction < 1.0:
            raise ConfigurationError(
                f"support_fraction must be in (0, 1), got {self.support_fraction}"
            )
        schemas = {r.obs.schema_id for r in self.records}
        if schemas != {self.schema_id}:
            raise ConfigurationError(
                f"dataset {self.city_id!r} mixes schemas {schemas}, "
                f"expected only {self.schema_id}"
            )

    def __len__(self) -> int:
        return len(self.records)


def run_episode(sim: Sim, controller, intervals: int, interval_s: int = 20,
                record: bool = False, city_id: str = ""):
    """Drive one episode at the action-interval cadence.

    Returns (final metrics, transition records); records hold one entry per
    intersection per interval when recording is on.
    """
    controller.begin_episode(sim)
    obs, states = sim.snapshot()
    records: list[TransitionRecord] = []
    for t in range(intervals):
        acts = controller.decide(sim, t, obs)
        obs_next, states_next, _ = sim.step(acts, interval_s)
        if record:
            for node in sim.nodes:
                records.append(TransitionRecord(
                    city_id, t, obs[node], states[node], acts[node],
                    states_next[node], obs_next[node]))
        obs, states = obs_next, states_next
    return sim.metrics(), records


def collect_experience(make_env: Callable[[int], Sim], controller,
                       episodes: int, rng: np.random.Generator,
                       city_id: str, intervals: int,
                       interval_s: int = 20) -> TaskDataset:
    """Run full episodes under the given behavior controller and log every
    per-intersection transition. Reproducible given an equally seeded rng
    and an equal-state controller."""
    if episodes < 1:
        raise ConfigurationError(f"episodes must be >= 1, got {episodes}")
    records: list[TransitionRecord] = []
    schema = None
    for _ in range(episodes):
        env = make_env(int(rng.integers(2 ** 31 - 1)))
        schema = env.schema
        _, recs = run_episode(env, controller, intervals, interval_s,
                              record=True, city_id=city_id)
        records.extend(recs)
    return TaskDataset(city_id, schema, records)


@dataclass(frozen=True)
class MamlConfig:
    """Two-loop meta-training hyperparameters."""

    inner_lr: float
    outer_lr: float
    meta_iterations: int
    task_batch_size: int
    inner_steps: int = 1
    first_order: bool = True
    batch_size: int = 256
    outer_optimizer: str = "sgd"

    def __post_init__(self):
        if self.inner_lr < 0 or self.outer_lr < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if self.meta_iterations < 0:
            raise ConfigurationError("meta_iterations must be >= 0")
        if self.task_batch_size < 1:
            raise ConfigurationError("task_batch_size must be >= 1")
        if self.inner_steps < 1:
            raise ConfigurationError("inner_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.outer_optimizer not in ("sgd", "adam"):
            raise ConfigurationError(
                f"outer_optimizer must be 'sgd' or 'adam', "
                f"got {self.outer_optimizer!r}"
            )


class ArrayTask:
    """A meta-learning task over fixed (X, Y) arrays with a disjoint
    support/query split and a supplied loss-and-gradient function."""

    def __init__(self, x: np.ndarray, y: np.ndarray,
                 loss_and_grad: Callable[[np.ndarray, np.ndarray, np.ndarray],
                                         tuple[float, np.ndarray]],
                 support_fraction: float, batch_size: int,
                 rng: np.random.Generator):
        self.x = x
        self.y = y
        self._loss_and_grad = loss_and_grad
        self.batch_size = batch_size
        perm = rng.permutation(x.shape[0])
        cut = max(1, int(round(support_fraction * x.shape[0])))
        cut = min(cut, x.shape[0] - 1) if x.shape[0] > 1 else 1
        self.support_idx = perm[:cut]
        self.query_idx = perm[cut:] if x.shape[0] > 1 else perm

    def _draw(self, idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if idx.size <= self.batch_size:
            return idx
        return rng.choice(idx, size=self.batch_size, replace=False)

    def support_batch(self, rng: np.random.Generator):
        return self._draw(self.support_idx, rng)

    def query_batch(self, rng: np.random.Generator):
        return self._draw(self.query_idx, rng)

    def loss_and_grad(self, theta: np.ndarray, batch: np.ndarray):
        return self._loss_and_grad(theta, self.x[batch], self.y[batch])


def _fd_outer_grad(theta: np.ndarray, task, support_batches, query_batch,
                   inner_lr: float, eps: float = 1e-6) -> np.ndarray:
    """Exact outer gradient through the inner adaptation, by central
    differences over the initial parameters. Test scale only."""

    def adapted_query_loss(t0: np.ndarray) -> float:
        t = t0
        for b in support_batches:
            _, g = task.loss_and_grad(t, b)
            t = t - inner_lr * g
        loss, _ = task.loss_and_grad(t, query_batch)
        return loss

    out = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += eps
        up = adapted_query_loss(tp)
        tp[i] -= 2 * eps
        down = adapted_query_loss(tp)
        out[i] = (up - down) / (2 * eps)
    return out


def maml_run(theta0: np.ndarray, tasks: Sequence, cfg: MamlConfig,
             seed: int) -> np.ndarray:
    """Generic meta-training loop over tasks exposing ``support_batch``,
    ``query_batch``, and ``loss_and_grad``; returns the final parameters."""
    if not tasks:
        raise ConfigurationError("at least one task is required")
    if cfg.task_batch_size > len(tasks):
        raise ConfigurationError(
            f"task_batch_size ({cfg.task_batch_size}) exceeds the number of "
            f"tasks ({len(tasks)})"
        )
    rng = np.random.default_rng(seed)
    theta = np.array(theta0, dtype=np.float64, copy=True)
    adam = nn.Adam(lr=cfg.outer_lr) if cfg.outer_optimizer == "adam" else None
    for _ in range(cfg.meta_iterations):
        chosen = sorted(rng.choice(len(tasks), size=cfg.task_batch_size,
                                   replace=False))
        outer = np.zeros_like(theta)
        for ti in chosen:
            task = tasks[ti]
            support_batches = [task.support_batch(rng)
                               for _ in range(cfg.inner_steps)]
            query_batch = task.query_batch(rng)
            if cfg.first_order:
                adapted = theta
                for b in support_batches:
                    _, g = task.loss_and_grad(adapted, b)
                    adapted = adapted - cfg.inner_lr * g
                _, gq = task.loss_and_grad(adapted, query_batch)
                outer += gq
            else:
                outer += _fd_outer_grad(theta, task, support_batches,
                                        query_batch, cfg.inner_lr)
        theta = adam.step(theta, outer) if adam else theta - cfg.outer_lr * outer
    return theta


def _dynamics_arrays(ds: TaskDataset, lanes: int, state_grids: int):
    m = len(ds.records)
    x = np.zeros((m, lanes * state_grids + len(PHASE_IDS)))
    y = np.zeros((m, lanes * state_grids))
    for i, r in enumerate(ds.records):
        if r.state.shape != (lanes, state_grids):
            raise ShapeError(
                f"record state shape {r.state.shape} does not match the "
                f"dynamics model ({lanes}, {state_grids})"
            )
        x[i, :lanes * state_grids] = r.state.reshape(-1)
        x[i, lanes * state_grids + r.action - 1] = 1.0
        y[i] = r.state_next.reshape(-1)
    return x, y


def maml_train(tasks: Sequence[TaskDataset], cfg: MamlConfig,
               dyn: DynamicsModel, dist_cfg: DistanceConfig,
               seed: int) -> np.ndarray:
    """Meta-train the dynamics model across city datasets; returns the
    aggregated initialization parameters."""
    if not tasks:
        raise ConfigurationError("at least one task dataset is required")
    loss_fn = block_distance_loss(dist_cfg, dyn.lanes)
    rng = np.random.default_rng(seed)

    def make_task(ds: TaskDataset) -> ArrayTask:
        x, y = _dynamics_arrays(ds, dyn.lanes, dyn.state_grids)

        def lag(theta, xb, yb):
            return nn.loss_and_grad(dyn.net, loss_fn, xb, yb, params=theta)

        return ArrayTask(x, y, lag, ds.support_fraction, cfg.batch_size, rng)

    return maml_run(dyn.net.params, [make_task(ds) for ds in tasks], cfg, seed)


def seq_pretrain(tasks: Sequence[TaskDataset], cfg: MamlConfig,
                 dyn: DynamicsModel, dist_cfg: DistanceConfig,
                 seed: int) -> np.ndarray:
    """Ablation of the aggregator: plain minibatch gradient descent over the
    city datasets one after another, same per-step budget as the meta loop."""
    if not tasks:
        raise ConfigurationError("at least one task dataset is required")
    loss_fn = block_distance_loss(dist_cfg, dyn.lanes)
    rng = np.random.default_rng(seed)
    theta = dyn.net.params.copy()
    for ds in tasks:
        x, y = _dynamics_arrays(ds, dyn.lanes, dyn.state_grids)
        for _ in range(cfg.meta_iterations):
            idx = rng.choice(x.shape[0], size=min(cfg.batch_size, x.shape[0]),
                             replace=False)
            _, g = nn.loss_and_grad(dyn.net, loss_fn, x[idx], y[idx],
                                    params=theta)
            theta = theta - cfg.inner_lr * g
    return theta


@dataclass(frozen=True)
class AdaptConfig:
    """Fixed-budget target-city fine-tuning hyperparameters."""

    lr: float
    target_episode_budget: int
    joint_weight: float = 1.0
    epochs_per_episode: int = 20
    batch_size: int = 128
    optimizer: str = "adam"
    epsilon0: float = 0.1
    epsilon_decay: float = 0.99

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.target_episode_budget < 1:
            raise ConfigurationError(
                f"target_episode_budget must be >= 1, got "
                f"{self.target_episode_budget}"
            )
        if self.joint_weight < 0:
            raise ConfigurationError("joint_weight must be >= 0")
        if self.epochs_per_episode < 1:
            raise ConfigurationError("epochs_per_episode must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(
                f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}"
            )
        if not 0.0 <= self.epsilon0 <= 1.0 or not 0.0 < self.epsilon_decay <= 1.0:
            raise ConfigurationError("invalid exploration schedule")


def _estimator_arrays(records: Sequence[TransitionRecord]):
    x = np.concatenate([r.obs.values for r in records], axis=0)
    y = np.concatenate([r.state for r in records], axis=0).astype(np.float64)
    return x, y


def adapt(phi: np.ndarray, env_factory: EnvFactory, cfg: AdaptConfig,
          schema_id: str, seed: int, *,
          dyn_hidden: tuple[int, ...] = (128, 128),
          estimator_hidden: tuple[int, ...] = (32, 32),
          value_cfg: ValueConfig | None = None,
          dist_cfg: DistanceConfig | None = None
          ) -> tuple[StateEstimator, DynamicsModel]:
    """Adapt to a target city within an exact episode budget.

    The dynamics net starts from the meta-trained parameters, the estimator
    from scratch. After each budgeted episode (driven by the current
    epsilon-greedy policy) both models are trained jointly on all records
    collected so far, minimizing estimator distance plus ``joint_weight``
    times dynamics distance.
    """
    scenario = env_factory.scenario
    if schema_id != scenario.schema:
        raise ConfigurationError(
            f"schema {schema_id!r} does not match target scenario schema "
            f"{scenario.schema!r}"
        )
    net = scenario.network
    lanes = net.lanes_per_intersection
    n_grids = net.state_grids
    if value_cfg is None:
        value_cfg = ValueConfig(2, 0.9, 0.8, n_grids, net.pass_capacity)
    if dist_cfg is None:
        dist_cfg = DistanceConfig(0.8, n_grids, net.pass_capacity)

    ss = np.random.SeedSequence(seed)
    seeds = ss.spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    g_net = default_dynamics_net(lanes, n_grids, dyn_hidden,
                                 seed=int(init_rng.integers(2 ** 31 - 1)))
    g_net = g_net.with_params(phi)
    f_net = default_estimator_net(schema_id, n_grids, estimator_hidden,
                                  seed=int(init_rng.integers(2 ** 31 - 1)))

    train_rng = np.random.default_rng(seeds[1])
    episode_rng = np.random.default_rng(seeds[2])
    f_loss = rowwise_block_distance_loss(dist_cfg, lanes)
    g_loss = block_distance_loss(dist_cfg, lanes)
    opt_f = nn.Adam(lr=cfg.lr) if cfg.optimizer == "adam" else None
    opt_g = nn.Adam(lr=cfg.lr) if cfg.optimizer == "adam" else None

    records: list[TransitionRecord] = []
    epsilon = cfg.epsilon0
    for _ in range(cfg.target_episode_budget):
        env = env_factory.make(int(episode_rng.integers(2 ** 31 - 1)))
        controller = PlannerController(
            StateEstimator(f_net, schema_id, lanes, n_grids),
            DynamicsModel(g_net, lanes, n_grids),
            PolicyConfig(epsilon=epsilon), value_cfg,
            np.random.default_rng(episode_rng.integers(2 ** 31 - 1)))
        _, recs = run_episode(env, controller, scenario.intervals,
                              scenario.interval_s, record=True,
                              city_id=scenario.name)
        records.extend(recs)
        epsilon *= cfg.epsilon_decay

        xg, yg = _dynamics_arrays(
            TaskDataset(scenario.name, schema_id, records), lanes, n_grids)
        xf, yf = _estimator_arrays(records)
        m = len(records)
        for _ in range(cfg.epochs_per_episode):
            perm = train_rng.permutation(m)
            for lo in range(0, m, cfg.batch_size):
                idx = perm[lo:lo + cfg.batch_size]
                rows = (idx[:, None] * lanes + np.arange(lanes)).reshape(-1)
                _, gf = nn.loss_and_grad(f_net, f_loss, xf[rows], yf[rows])
                _, gg = nn.loss_and_grad(g_net, g_loss, xg[idx], yg[idx])
                gg = cfg.joint_weight * gg
                if opt_f is not None:
                    f_net = f_net.with_params(opt_f.step(f_net.params, gf))
                    g_net = g_net.with_params(opt_g.step(g_net.params, gg))
                else:
                    f_net = f_net.with_params(nn.sgd_step(f_net.params, gf, cfg.lr))
                    g_net = g_net.with_params(nn.sgd_step(g_net.params, gg, cfg.lr))

    return (StateEstimator(f_net, schema_id, lanes, n_grids),
            DynamicsModel(g_net, lanes, n_grids))


def offline_train_repr(logged: Sequence[tuple[Observation, np.ndarray]],
                       schema_id: str, epochs: int, lr: float, *,
                       hidden: tuple[int, ...] = (32, 32),
                       dist_cfg: DistanceConfig | None = None,
                       batch_size: int | None = 128,
                       optimizer: str = "adam",
                       seed: int = 0) -> StateEstimator:
    """Train the observation-to-state estimator purely on logged pairs; no
    environment interaction happens here."""
    if not logged:
        raise ConfigurationError("logged pairs must be nonempty")
    if schema_id not in SCHEMA_DIMS:
        raise ConfigurationError(f"unknown observation schema {schema_id!r}")
    for obs, _ in logged:
        if obs.schema_id != schema_id:
            raise ConfigurationError(
                f"logged observation has schema {obs.schema_id!r}, "
                f"expected {schema_id!r}"
            )
    lanes, n_grids = logged[0][1].shape
    if dist_cfg is None:
        dist_cfg = DistanceConfig(0.8, n_grids, max(1, n_grids // 3))
    x = np.concatenate([obs.values for obs, _ in logged], axis=0)
    y = np.concatenate([s for _, s in logged], axis=0).astype(np.float64)
    f_net = default_estimator_net(schema_id, n_grids, hidden, seed=seed)
    loss_fn = rowwise_block_distance_loss(dist_cfg, lanes)
    opt = nn.Adam(lr=lr) if optimizer == "adam" else None
    rng = np.random.default_rng(seed)
    m = len(logged)
    bsz = m if batch_size is None else min(batch_size, m)
    for _ in range(epochs):
        perm = rng.permutation(m) if batch_size is not None else np.arange(m)
        for lo in range(0, m, bsz):
            idx = perm[lo:lo + bsz]
            rows = (idx[:, None] * lanes + np.arange(lanes)).reshape(-1)
            _, g = nn.loss_and_grad(f_net, loss_fn, x[rows], y[rows])
            if opt is not None:
                f_net = f_net.with_params(opt.step(f_net.params, g))
            else:
                f_net = f_net.with_params(nn.sgd_step(f_net.params, g, lr))
    return StateEstimator(f_net, schema_id, lanes, n_grids)


def training_loss(estimator: StateEstimator,
                  logged: Sequence[tuple[Observation, np.ndarray]],
                  dist_cfg: DistanceConfig) -> float:
    """Mean estimator distance over logged (observation, state) pairs."""
    total = 0.0
    for obs, state in logged:
        total += state_distance(estimator.estimate(obs), state, dist_cfg)
    return total / len(logged)


def dynamics_error(dyn: DynamicsModel, records: Sequence[TransitionRecord],
                   dist_cfg: DistanceConfig) -> float:
    """Mean one-step prediction distance over transition records."""
    if not records:
        raise ConfigurationError("records must be nonempty")
    lanes, n_grids = records[0].state.shape
    x = np.zeros((len(records), lanes * n_grids + len(PHASE_IDS)))
    for i, r in enumerate(records):
        x[i, :lanes * n_grids] = r.state.reshape(-1)
        x[i, lanes * n_grids + r.action - 1] = 1.0
    pred = nn.forward(dyn.net, x)
    total = 0.0
    for i, r in enumerate(records):
        total += state_distance(pred[i].reshape(lanes, n_grids),
                                r.state_next, dist_cfg)
    return total / len(records)
