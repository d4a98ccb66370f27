"""Car-following control laws: constant-time-headway error state, linear feedback, and IDM."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Any

from .dynamics import A_MAX_HARD, A_MIN_HARD, SimConfig, VehicleState
from .errors import ConfigError


@dataclass(frozen=True)
class ErrorState:
    """Controller state ``[delta_d, delta_v, a]``.

    ``delta_d`` is the spacing error against the CTH target ``d0 + h_d * v``,
    ``delta_v`` is predecessor speed minus ego speed. Build it with
    :func:`compute_error_state`.
    """

    delta_d: float
    delta_v: float
    a: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.delta_d, self.delta_v, self.a)


@dataclass(frozen=True)
class LinearGains:
    k_d: float = 0.62
    k_v: float = 0.37
    k_a: float = 0.0

    def __post_init__(self):
        if self.k_a != 0.0:
            raise ValueError("k_a is fixed at 0")

    @classmethod
    def zero(cls) -> LinearGains:
        # bypasses the positivity expectations; used for the pure-RL baseline
        return cls(k_d=0.0, k_v=0.0)


@dataclass(frozen=True)
class IdmParams:
    v0: float = 20.3
    t_head: float = 1.2
    a_max: float = 1.9
    b_comf: float = 3.9
    sigma: float = 4.0
    s0: float = 2.0

    def __post_init__(self):
        problems = [f"idm.{f.name}: must be > 0" for f in fields(self) if not getattr(self, f.name) > 0]
        if self.sigma < 1:
            problems.append("idm.sigma: must be >= 1")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> IdmParams:
        unknown = sorted(set(raw) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError([f"idm.{k}: unknown key" for k in unknown])
        return cls(**raw)


def compute_error_state(ego: VehicleState, pred_delayed: VehicleState, cfg: SimConfig) -> ErrorState:
    delta_d = pred_delayed.d - ego.d - cfg.d0 - cfg.h_d * ego.v
    return ErrorState(delta_d, pred_delayed.v - ego.v, ego.a)


def linear_policy(s: ErrorState, k: LinearGains = LinearGains()) -> float:
    return k.k_d * s.delta_d + k.k_v * s.delta_v + k.k_a * s.a


def idm_accel(ego_v: float, gap: float, closing_speed: float, p: IdmParams = IdmParams()) -> float:
    """IDM acceleration for net ``gap`` (m) and ``closing_speed = ego_v - pred_v``.

    Note the sign: positive closing speed means the ego is catching up, the
    opposite of ``ErrorState.delta_v``.
    """
    if not gap > 0:
        raise ValueError(f"IDM gap must be positive, got {gap}")
    s_star = p.s0 + ego_v * p.t_head + ego_v * closing_speed / (2.0 * math.sqrt(p.a_max * p.b_comf))
    acc = p.a_max * (1.0 - (ego_v / p.v0) ** p.sigma - (s_star / gap) ** 2)
    return min(A_MAX_HARD, max(A_MIN_HARD, acc))


def idm_equilibrium_gap(v: float, p: IdmParams = IdmParams()) -> float:
    """Net gap at which IDM holds speed ``v`` behind a vehicle at the same speed."""
    if v < 0:
        raise ValueError(f"speed must be >= 0, got {v}")
    if v >= p.v0:
        raise ValueError(f"IDM has no equilibrium gap at v={v} >= v0={p.v0}")
    return (p.s0 + v * p.t_head) / math.sqrt(1.0 - (v / p.v0) ** p.sigma)
