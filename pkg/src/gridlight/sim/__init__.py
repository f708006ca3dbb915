from .network import (
    APPROACHES,
    MOVEMENTS,
    PHASE_IDS,
    PHASES,
    SCHEMA_DIMS,
    Flow,
    Observation,
    Phase,
    RoadNetwork,
    origin_node,
    permits,
    trace_route,
)
from .engine import MetricsReport, Sim, reset

__all__ = [
    "APPROACHES", "MOVEMENTS", "PHASE_IDS", "PHASES", "SCHEMA_DIMS",
    "Flow", "Observation", "Phase", "RoadNetwork", "origin_node", "permits",
    "trace_route", "MetricsReport", "Sim", "reset",
]
