"""Fixed-size, fixed-scale observation vector for the residual policy.

Layout (15 entries)::

    [delta_d, delta_v, a,
     present_1, speed_1, accel_1, gap_1,
     present_2, speed_2, accel_2, gap_2,
     present_3, speed_3, accel_3, gap_3]

Predecessor ``k`` is the vehicle ``k`` places upstream, seen through the
communication delay; ``gap_k`` is its delayed position minus the ego's current
position. Absent predecessors are all zeros.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..controllers import ErrorState
from ..dynamics import VehicleState

N_PREDECESSORS = 3
OBS_DIM = 3 + 4 * N_PREDECESSORS

NORMALIZATION = {
    "delta_d": 10.0,  # m
    "delta_v": 5.0,   # m/s
    "accel": 3.0,     # m/s^2
    "speed": 20.0,    # m/s
    "gap": 50.0,      # m
}


def build_observation(err: ErrorState, ego: VehicleState, preds_delayed: Sequence[VehicleState],
                      norm: dict[str, float] = NORMALIZATION) -> np.ndarray:
    obs = np.zeros(OBS_DIM)
    obs[0] = err.delta_d / norm["delta_d"]
    obs[1] = err.delta_v / norm["delta_v"]
    obs[2] = err.a / norm["accel"]
    for k, p in enumerate(preds_delayed[:N_PREDECESSORS]):
        base = 3 + 4 * k
        obs[base] = 1.0
        obs[base + 1] = p.v / norm["speed"]
        obs[base + 2] = p.a / norm["accel"]
        obs[base + 3] = (p.d - ego.d) / norm["gap"]
    return obs
