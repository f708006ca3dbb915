"""Deterministic discrete traffic microsimulator.

Time advances in 1-second ticks grouped into fixed action intervals
(20 s by default). Per tick, in order: vehicles at the head of boundary
exit links leave the network, permitted head-of-lane vehicles cross
intersections (at most ``pass_capacity`` per lane per interval), every
other vehicle advances one grid toward the intersection when the grid
ahead has room, and scheduled vehicles enter at their origin grid when it
has room (deferred tick by tick otherwise, so no vehicle is ever lost).

Commanded phases are held for the whole interval. Everything is a pure
function of (network, flows, seed, action trace); the handle keeps a seeded
RNG for callers but never consumes it itself. A handle is single-threaded;
run independent handles for parallelism.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .network import (
    APPROACHES,
    HEADING_DELTA,
    HEADING_OF_APPROACH,
    MOVEMENTS,
    OPPOSITE,
    PHASE_IDS,
    SCHEMA_DIMS,
    TURN,
    Flow,
    Observation,
    RoadNetwork,
    origin_node,
    permits,
    trace_route,
)


@dataclass(frozen=True)
class MetricsReport:
    """Average travel time (s) and average per-lane queue length."""

    avg_travel_time_s: float
    avg_queue_length: float


class _Vehicle:
    __slots__ = ("vid", "sched_s", "enter_s", "exit_s", "route", "route_pos",
                 "grid", "moved_tick")

    def __init__(self, vid: int, sched_s: int, route: tuple[int, ...]):
        self.vid = vid
        self.sched_s = sched_s
        self.enter_s = -1
        self.exit_s = -1
        self.route = route  # movement indices, one per intersection crossed
        self.route_pos = 0
        self.grid = -1
        self.moved_tick = -1


class _Lane:
    __slots__ = ("occ", "vehs", "pending", "is_approach", "crossings",
                 "mid_passes", "seg_moves", "seg_samples", "stationary",
                 "last_crossings", "last_mid_passes", "last_seg_speed")

    def __init__(self, length: int):
        self.occ = np.zeros(length, dtype=np.int64)
        self.vehs: list[_Vehicle] = []
        self.pending: deque[_Vehicle] = deque()
        self.is_approach = False
        self.crossings = 0
        self.mid_passes = 0
        self.seg_moves = [0, 0]
        self.seg_samples = [0, 0]
        self.stationary = 0
        self.last_crossings = 0
        self.last_mid_passes = 0
        self.last_seg_speed = (0.0, 0.0)


class _Link:
    __slots__ = ("key", "node", "approach", "heading", "lanes")

    def __init__(self, key, node, approach, heading, n_lanes, length):
        self.key = key
        self.node = node            # node the link enters (None for exits)
        self.approach = approach    # side of `node` it enters from
        self.heading = heading
        self.lanes = [_Lane(length) for _ in range(n_lanes)]


class Sim:
    """Simulation handle; build one with :func:`reset`."""

    def __init__(self, network: RoadNetwork, flows: list[Flow], seed: int,
                 schema: str = "BASE", validate: bool = False):
        if schema not in SCHEMA_DIMS:
            raise ConfigurationError(f"unknown observation schema {schema!r}")
        self.network = network
        self.flows = list(flows)
        self.seed = int(seed)
        self.schema = schema
        self.validate = validate
        self.rng = np.random.default_rng(seed)

        self.clock = 0
        self.entered = 0
        self.exited = 0
        self._travel_sum_exited = 0.0
        self._queue_mean_sum = 0.0
        self._intervals = 0

        self.nodes = network.nodes
        self._build_topology()
        self._schedule_flows()

    # -- construction -----------------------------------------------------

    def _build_topology(self):
        net = self.network
        length = net.lane_grids
        n_lanes = net.lanes_per_approach
        self.in_links: dict[tuple[tuple[int, int], str], _Link] = {}
        self.exit_links: dict[tuple[tuple[int, int], str], _Link] = {}
        for node in self.nodes:
            for side in APPROACHES:
                heading = HEADING_OF_APPROACH[side]
                link = _Link(("in", node, side), node, side, heading,
                             n_lanes, length)
                for lane in link.lanes:
                    lane.is_approach = True
                self.in_links[(node, side)] = link
            for heading in APPROACHES:  # headings share the compass names
                dr, dc = HEADING_DELTA[heading]
                nxt = (node[0] + dr, node[1] + dc)
                if not net.on_grid(nxt):
                    self.exit_links[(node, heading)] = _Link(
                        ("out", node, heading), None, None, heading,
                        n_lanes, length)

        # Downstream link for a vehicle leaving `node` with a new heading.
        self._downstream: dict[tuple[tuple[int, int], str], _Link] = {}
        for node in self.nodes:
            for heading in APPROACHES:
                dr, dc = HEADING_DELTA[heading]
                nxt = (node[0] + dr, node[1] + dc)
                if net.on_grid(nxt):
                    link = self.in_links[(nxt, OPPOSITE[heading])]
                else:
                    link = self.exit_links[(node, heading)]
                self._downstream[(node, heading)] = link

        self._approach_lane_map = {
            node: [self.in_links[(node, side)].lanes[m]
                   for side in APPROACHES for m in range(n_lanes)]
            for node in self.nodes
        }
        self._all_links = (
            [self.in_links[(node, side)] for node in self.nodes
             for side in APPROACHES]
            + [self.exit_links[k] for k in sorted(self.exit_links)]
        )
        self._all_lanes = [ln for link in self._all_links for ln in link.lanes]
        self._approach_lanes = [ln for ln in self._all_lanes if ln.is_approach]
        self._n_approach_lanes = len(self._approach_lanes)

    def _schedule_flows(self):
        net = self.network
        self.vehicles: list[_Vehicle] = []
        per_lane: dict[int, list[_Vehicle]] = {}
        vid = 0
        for flow in self.flows:
            trace_route(net, flow)  # raises ConfigurationError when invalid
            node = origin_node(net, flow.origin)
            entry = self.in_links[(node, flow.origin[0])]
            # Entry side must be a true boundary (no upstream intersection).
            heading = HEADING_OF_APPROACH[flow.origin[0]]
            dr, dc = HEADING_DELTA[OPPOSITE[heading]]
            upstream = (node[0] + dr, node[1] + dc)
            if net.on_grid(upstream):
                raise ConfigurationError(
                    f"flow origin {flow.origin} is not a boundary edge"
                )
            route_idx = tuple(MOVEMENTS.index(m) for m in flow.route)
            lane = entry.lanes[route_idx[0]]
            key = id(lane)
            if key not in per_lane:
                per_lane[key] = (lane, [])
            for sched in flow.schedule():
                v = _Vehicle(vid, sched, route_idx)
                vid += 1
                self.vehicles.append(v)
                per_lane[key][1].append(v)
        for lane, vs in per_lane.values():
            vs.sort(key=lambda v: (v.sched_s, v.vid))
            lane.pending = deque(vs)
        self._entry_lanes = [lane for lane, _ in per_lane.values()]

    # -- queries -----------------------------------------------------------

    @property
    def vehicles_on_network(self) -> int:
        return self.entered - self.exited

    def _node_lanes(self, node) -> list[_Lane]:
        try:
            return self._approach_lane_map[node]
        except KeyError:
            raise KeyError(f"unknown intersection {node!r}") from None

    def extract_state(self, node) -> np.ndarray:
        """Ground-truth occupancy of the first state_grids cells per lane."""
        n = self.network.state_grids
        return np.stack([lane.occ[:n] for lane in self._node_lanes(node)])

    def observe(self, node, schema: str | None = None) -> Observation:
        schema = self.schema if schema is None else schema
        if schema not in SCHEMA_DIMS:
            raise ConfigurationError(f"unknown observation schema {schema!r}")
        lanes = self._node_lanes(node)
        vals = np.zeros((len(lanes), SCHEMA_DIMS[schema]))
        for i, lane in enumerate(lanes):
            vals[i, 0] = len(lane.vehs)
            if schema == "SCHEMA_A":
                vals[i, 1] = lane.last_crossings
            elif schema == "SCHEMA_B":
                vals[i, 1] = lane.last_mid_passes
            elif schema == "SCHEMA_C":
                vals[i, 1], vals[i, 2] = lane.last_seg_speed
        return Observation(schema, vals)

    def waiting_counts(self, node) -> np.ndarray:
        """Per-lane count of vehicles that did not move on the most recent
        completed tick of an interval."""
        return np.array([lane.stationary for lane in self._node_lanes(node)],
                        dtype=np.int64)

    def movement_queues(self, node) -> dict[tuple[str, str], tuple[float, float]]:
        """(upstream, downstream) queue sizes per movement.

        Upstream is the approach lane's occupancy over the state window;
        downstream is the mean occupancy of the receiving link's lanes over
        the same window.
        """
        lanes = self._node_lanes(node)
        n = self.network.state_grids
        out = {}
        for ai, approach in enumerate(APPROACHES):
            heading = HEADING_OF_APPROACH[approach]
            for mi, movement in enumerate(MOVEMENTS):
                lane = lanes[ai * len(MOVEMENTS) + mi]
                up = float(lane.occ[:n].sum())
                dlink = self._downstream[(node, TURN[heading][movement])]
                down = float(np.mean([ln.occ[:n].sum() for ln in dlink.lanes]))
                out[(approach, movement)] = (up, down)
        return out

    def snapshot(self):
        """Current per-intersection observations and states without stepping."""
        obs = {node: self.observe(node) for node in self.nodes}
        states = {node: self.extract_state(node) for node in self.nodes}
        return obs, states

    def metrics(self) -> MetricsReport:
        """Cumulative metrics; vehicles still on the network contribute
        (clock - enter_s) to travel time."""
        if self.entered == 0:
            travel = 0.0
        else:
            on_net = sum(self.clock - v.enter_s for v in self.vehicles
                         if v.enter_s >= 0 and v.exit_s < 0)
            travel = (self._travel_sum_exited + on_net) / self.entered
        queue = (self._queue_mean_sum / self._intervals
                 if self._intervals else 0.0)
        return MetricsReport(travel, queue)

    def digest(self) -> str:
        """Hash of the full dynamic state, for determinism checks."""
        h = hashlib.sha256()
        h.update(repr((self.clock, self.entered, self.exited,
                       self._travel_sum_exited, self._queue_mean_sum,
                       self._intervals)).encode())
        for link in self._all_links:
            for lane in link.lanes:
                h.update(lane.occ.tobytes())
                h.update(repr([(v.vid, v.grid, v.route_pos) for v in lane.vehs])
                         .encode())
                h.update(repr((lane.crossings, lane.mid_passes,
                               lane.last_crossings, lane.last_mid_passes,
                               lane.last_seg_speed, lane.stationary,
                               len(lane.pending))).encode())
        for v in self.vehicles:
            h.update(repr((v.vid, v.enter_s, v.exit_s)).encode())
        return h.hexdigest()

    # -- dynamics ----------------------------------------------------------

    def step(self, actions, interval_s: int = 20):
        """Advance one action interval holding the commanded phases.

        Returns (observations, states, interval metrics delta), each keyed
        by intersection.
        """
        if interval_s < 1:
            raise ConfigurationError(f"interval_s must be >= 1, got {interval_s}")
        acts = {}
        for node in self.nodes:
            if node not in actions:
                raise ConfigurationError(f"missing action for intersection {node}")
            a = int(actions[node])
            if a not in PHASE_IDS:
                raise ConfigurationError(f"phase id {a} outside [1, 8]")
            acts[node] = a
        if len(actions) != len(self.nodes):
            raise ConfigurationError("one action per intersection required")

        for lane in self._approach_lanes:
            lane.crossings = 0
            lane.mid_passes = 0
            lane.seg_moves[0] = lane.seg_moves[1] = 0
            lane.seg_samples[0] = lane.seg_samples[1] = 0

        exited_before = self.exited
        travel_before = self._travel_sum_exited
        for k in range(interval_s):
            self._tick(acts, last=(k == interval_s - 1))

        stationary_total = 0
        for lane in self._approach_lanes:
            lane.last_crossings = lane.crossings
            lane.last_mid_passes = lane.mid_passes
            lane.last_seg_speed = tuple(
                (lane.seg_moves[i] / lane.seg_samples[i])
                if lane.seg_samples[i] else 0.0
                for i in range(2)
            )
            stationary_total += lane.stationary
        queue_mean = stationary_total / self._n_approach_lanes
        self._queue_mean_sum += queue_mean
        self._intervals += 1

        n_exited = self.exited - exited_before
        travel = ((self._travel_sum_exited - travel_before) / n_exited
                  if n_exited else 0.0)
        obs, states = self.snapshot()
        return obs, states, MetricsReport(travel, queue_mean)

    def _tick(self, acts: dict, last: bool):
        net = self.network
        cap = net.grid_capacity
        n_cross = net.pass_capacity
        length = net.lane_grids
        mid = length // 2
        third1 = length // 3
        third2 = 2 * (length // 3)
        t = self.clock
        stamp = t + 1

        # 1. boundary exits
        for key in self.exit_links:
            for lane in self.exit_links[key].lanes:
                vehs = lane.vehs
                while vehs and vehs[0].grid == 0:
                    v = vehs.pop(0)
                    lane.occ[0] -= 1
                    v.exit_s = stamp
                    v.moved_tick = t
                    self.exited += 1
                    self._travel_sum_exited += stamp - v.enter_s

        # 2. intersection crossings
        for node in self.nodes:
            phase = acts[node]
            lanes = self._approach_lane_map[node]
            for ai, approach in enumerate(APPROACHES):
                heading = HEADING_OF_APPROACH[approach]
                for mi, movement in enumerate(MOVEMENTS):
                    lane = lanes[ai * 3 + mi]
                    vehs = lane.vehs
                    if not vehs or vehs[0].grid != 0:
                        continue
                    if not permits(phase, approach, movement):
                        continue
                    d_out = TURN[heading][movement]
                    dlink = self._downstream[(node, d_out)]
                    is_exit = dlink.node is None
                    while (vehs and vehs[0].grid == 0
                           and lane.crossings < n_cross):
                        v = vehs[0]
                        if is_exit:
                            dest = dlink.lanes[v.route[v.route_pos]]
                        else:
                            dest = dlink.lanes[v.route[v.route_pos + 1]]
                        if dest.occ[length - 1] >= cap:
                            break
                        vehs.pop(0)
                        lane.occ[0] -= 1
                        lane.crossings += 1
                        v.grid = length - 1
                        v.route_pos += 1
                        v.moved_tick = t
                        dest.occ[length - 1] += 1
                        dest.vehs.append(v)

        # 3. in-lane advances, with per-tick stats for observed lanes
        for lane in self._all_lanes:
            if not lane.vehs:
                if last and lane.is_approach:
                    lane.stationary = 0
                continue
            occ = lane.occ
            is_app = lane.is_approach
            stationary = 0
            seg_moves = lane.seg_moves
            seg_samples = lane.seg_samples
            for v in lane.vehs:
                g = v.grid
                if g != 0 and v.moved_tick != t and occ[g - 1] < cap:
                    occ[g] -= 1
                    g -= 1
                    occ[g] += 1
                    v.grid = g
                    v.moved_tick = t
                    if is_app and g == mid - 1:
                        lane.mid_passes += 1
                moved = v.moved_tick == t
                if is_app:
                    if g < third2:
                        k = 0 if g < third1 else 1
                        seg_samples[k] += 1
                        if moved:
                            seg_moves[k] += 1
                    if last and not moved:
                        stationary += 1
            if last and is_app:
                lane.stationary = stationary

        # 4. scheduled entries (deferred while the origin grid is full)
        for lane in self._entry_lanes:
            pending = lane.pending
            while (pending and pending[0].sched_s <= t
                   and lane.occ[length - 1] < cap):
                v = pending.popleft()
                v.enter_s = stamp
                v.grid = length - 1
                v.moved_tick = t
                lane.occ[length - 1] += 1
                lane.vehs.append(v)
                self.entered += 1

        self.clock = stamp

        if self.validate:
            on_net = sum(len(ln.vehs) for ln in self._all_lanes)
            if self.entered != on_net + self.exited:
                raise RuntimeError(
                    f"conservation violated at t={stamp}: "
                    f"entered={self.entered} on={on_net} exited={self.exited}")
            for lane in self._all_lanes:
                if lane.occ.max(initial=0) > cap:
                    raise RuntimeError(f"grid over capacity at t={stamp}")
                if lane.occ.min(initial=0) < 0:
                    raise RuntimeError(f"negative occupancy at t={stamp}")


def reset(network: RoadNetwork, flows: list[Flow], seed: int,
          schema: str = "BASE", validate: bool = False) -> Sim:
    """Build a fresh simulation: clock 0, empty network, seeded RNG.

    Two calls with equal arguments yield handles with identical state
    digests and identical behavior under identical action traces.
    """
    return Sim(network, flows, seed, schema, validate)
