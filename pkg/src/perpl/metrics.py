"""Trace metrics: headway RMSE, l2 acceleration damping ratio, comfort cost, barrier activation rate."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import SimConfig

LOW_SPEED = 0.5  # m/s; headway samples below this are skipped


def headway_rmse(trace, n: int, cfg: SimConfig) -> float | None:
    """RMS deviation of ``(d[n-1] - d[n] - d0) / v[n]`` from ``h_d``.

    Returns ``None`` when every sample is below the low-speed threshold.
    """
    if n < 1:
        raise ValueError("headway is undefined for the lead vehicle")
    if len(trace) == 0:
        raise ValueError("empty trace")
    v = trace.v[:, n]
    keep = v >= LOW_SPEED
    if not np.any(keep):
        return None
    headway = (trace.d[keep, n - 1] - trace.d[keep, n] - cfg.d0) / v[keep]
    return float(np.sqrt(np.mean((headway - cfg.h_d) ** 2)))


def damping_ratio(trace, n: int) -> float | None:
    """``||a_n||_2 / ||a_0||_2``; ``None`` when the lead never accelerates."""
    lead_energy = float(np.sum(trace.a[:, 0] ** 2))
    if lead_energy == 0.0:
        return None
    return math.sqrt(float(np.sum(trace.a[:, n] ** 2)) / lead_energy)


def comfort_cost(trace, n: int, alpha: float = 1.0) -> float:
    return float(np.mean(alpha * trace.a[:, n] ** 2))


def barrier_activation_pct(trace, n: int) -> float:
    return 100.0 * float(np.count_nonzero(trace.barrier[:, n])) / len(trace)


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class MetricsReport:
    """Per-vehicle metrics for one episode plus follower/CAV aggregates."""

    per_vehicle: dict[int, dict[str, Any]]
    collided: bool = False
    aggregate: dict[str, dict[str, float | None]] = field(default_factory=dict)

    KEYS = ("headway_rmse", "damping_ratio", "comfort", "barrier_activation_pct")

    def __post_init__(self):
        if not self.aggregate:
            groups = {
                "followers": [r for r in self.per_vehicle.values()],
                "cav": [r for r in self.per_vehicle.values() if r["kind"] == "CAV"],
            }
            self.aggregate = {g: {k: _mean(r[k] for r in rows) for k in self.KEYS}
                              for g, rows in groups.items()}

    def to_dict(self) -> dict[str, Any]:
        return {"collided": self.collided,
                "vehicles": [{"vehicle": n, **rec} for n, rec in sorted(self.per_vehicle.items())],
                "aggregate": self.aggregate}

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def episode_report(trace, cfg: SimConfig, alpha: float = 1.0) -> MetricsReport:
    per = {}
    for n in range(1, len(trace.kinds)):
        per[n] = {
            "kind": trace.kinds[n],
            "headway_rmse": headway_rmse(trace, n, cfg),
            "damping_ratio": damping_ratio(trace, n),
            "comfort": comfort_cost(trace, n, alpha),
            "barrier_activation_pct": barrier_activation_pct(trace, n),
        }
    return MetricsReport(per, collided=bool(trace.collided))
