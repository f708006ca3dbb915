"""Persistence: metrics CSV, JSON reports, JSONL datasets, model
checkpoints, and run manifests.

CSV bytes are deterministic (fixed float formatting, no timestamps) so a
rerun with the same config and seeds reproduces files exactly; wall-clock
timing lives only in JSON reports.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .. import nn
from ..errors import ConfigurationError
from ..meta import TaskDataset, TransitionRecord
from ..planner import DynamicsModel, StateEstimator
from ..sim.network import Observation

METRICS_COLUMNS = ("scenario", "seed", "method", "avg_travel_time",
                   "avg_queue_length")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_metrics_csv(path, rows) -> None:
    write_csv(path, METRICS_COLUMNS, rows)


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def config_digest(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


# -- datasets ---------------------------------------------------------------

def save_dataset(path, dataset: TaskDataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in dataset.records:
            fh.write(json.dumps({
                "city_id": r.city_id,
                "t": r.t,
                "schema_id": r.obs.schema_id,
                "obs": r.obs.values.tolist(),
                "state": r.state.tolist(),
                "action": r.action,
                "state_next": r.state_next.tolist(),
                "obs_next": r.obs_next.values.tolist(),
            }) + "\n")


def load_dataset(path) -> TaskDataset:
    records = []
    city_id = ""
    schema = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            city_id = doc["city_id"]
            schema = doc["schema_id"]
            records.append(TransitionRecord(
                city_id=city_id,
                t=int(doc["t"]),
                obs=Observation(schema, np.array(doc["obs"], dtype=float)),
                state=np.array(doc["state"], dtype=np.int64),
                action=int(doc["action"]),
                state_next=np.array(doc["state_next"], dtype=np.int64),
                obs_next=Observation(schema, np.array(doc["obs_next"],
                                                      dtype=float)),
            ))
    if not records:
        raise ConfigurationError(f"dataset file {path} is empty")
    return TaskDataset(city_id, schema, records)


# -- checkpoints --------------------------------------------------------------

def _net_fragment(net: nn.Net) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "output_activation": net.output_activation,
        "params": net.params.tolist(),
    }


def _net_from_fragment(doc: dict) -> nn.Net:
    try:
        sizes = [int(s) for s in doc["layer_sizes"]]
        act = str(doc["output_activation"])
        params = np.array(doc["params"], dtype=np.float64)
    except KeyError as exc:
        raise ConfigurationError(f"net fragment missing field {exc}") from exc
    net = nn.net_new(sizes, act, seed=0)
    return net.with_params(params)  # rejects NaN/Inf and length mismatches


def save_checkpoint(path, estimator: StateEstimator | None,
                    dynamics: DynamicsModel, value_params: dict,
                    dist_params: dict, policy_params: dict,
                    provenance: dict) -> None:
    doc = {
        "repr": None if estimator is None else {
            **_net_fragment(estimator.net),
            "schema_id": estimator.schema_id,
            "lanes": estimator.lanes,
            "state_grids": estimator.state_grids,
        },
        "dyn": {
            **_net_fragment(dynamics.net),
            "lanes": dynamics.lanes,
            "state_grids": dynamics.state_grids,
        },
        "value_params": value_params,
        "dist_params": dist_params,
        "policy_params": policy_params,
        "provenance": provenance,
    }
    write_json(path, doc)


def load_checkpoint(path) -> dict:
    with Path(path).open("r", encoding="utf-8") as fh:
        doc = json.load(fh)
    out = dict(doc)
    if doc.get("repr") is not None:
        frag = doc["repr"]
        out["estimator"] = StateEstimator(
            _net_from_fragment(frag), str(frag["schema_id"]),
            int(frag["lanes"]), int(frag["state_grids"]))
    else:
        out["estimator"] = None
    frag = doc["dyn"]
    out["dynamics"] = DynamicsModel(
        _net_from_fragment(frag), int(frag["lanes"]), int(frag["state_grids"]))
    return out


def write_manifest(path, config_doc: dict, seeds, extra: dict | None = None) -> None:
    doc = {
        "config_digest": config_digest(config_doc),
        "config": config_doc,
        "seeds": list(seeds),
    }
    if extra:
        doc.update(extra)
    write_json(path, doc)
