from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any

from ..controllers import ErrorState
from ..errors import ConfigError


@dataclass(frozen=True)
class RewardWeights:
    w_d: float = 1.0
    w_v: float = 0.5
    w_a: float = 0.1
    w_b: float = 5.0
    d_ref: float = 10.0  # m
    v_ref: float = 5.0   # m/s
    a_ref: float = 3.0   # m/s^2

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RewardWeights:
        unknown = sorted(set(raw) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError([f"reward.{k}: unknown key" for k in unknown])
        return cls(**raw)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def reward(s: ErrorState, executed_accel: float, barrier_activated: bool,
           w: RewardWeights = RewardWeights()) -> float:
    """Negative weighted quadratic tracking/effort cost, minus a flat barrier penalty."""
    cost = (w.w_d * (s.delta_d / w.d_ref) ** 2
            + w.w_v * (s.delta_v / w.v_ref) ** 2
            + w.w_a * (executed_accel / w.a_ref) ** 2)
    return -cost - (w.w_b if barrier_activated else 0.0)
