"""Longitudinal vehicle kinematics, first-order actuator lag and fixed-lag delay lines."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any

from .errors import ConfigError

# Realizable acceleration band (m/s^2). Wide enough for emergency braking
# interventions and for aggressive recovery commands above +4 to saturate here.
A_MIN_HARD = -12.0
A_MAX_HARD = 4.0

_STEP_TOL = 1e-9


@dataclass(frozen=True)
class VehicleState:
    """Front-bumper position ``d`` (m), speed ``v`` (m/s), realized acceleration ``a`` (m/s^2)."""

    d: float
    v: float
    a: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    tau_a: float = 0.2
    tau_c: float = 0.3
    h_d: float = 2.0
    d0: float = 4.0
    vehicle_length: float = 4.0
    safety_headway: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self):
        object.__setattr__(self, "safety_headway", tuple(float(x) for x in self.safety_headway))
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        if not self.dt > 0:
            out.append(f"dt: must be > 0, got {self.dt}")
        if not self.tau_a > 0:
            out.append(f"tau_a: must be > 0, got {self.tau_a}")
        if not self.tau_c >= 0:
            out.append(f"tau_c: must be >= 0, got {self.tau_c}")
        if self.dt > 0:
            for name in ("tau_a", "tau_c"):
                value = getattr(self, name)
                if value >= 0 and not _is_step_multiple(value, self.dt):
                    out.append(f"{name}: {value} is not an integer multiple of dt={self.dt}")
            if self.tau_a > 0 and self.dt > self.tau_a:
                out.append(f"dt: {self.dt} exceeds tau_a={self.tau_a}")
        if len(self.safety_headway) != 2:
            out.append("safety_headway: expected [lower, upper]")
        else:
            lo, hi = self.safety_headway
            if not lo < self.h_d < hi:
                out.append(f"safety_headway: need {lo} < h_d={self.h_d} < {hi}")
        if self.d0 < 0:
            out.append(f"d0: must be >= 0, got {self.d0}")
        if self.vehicle_length <= 0:
            out.append(f"vehicle_length: must be > 0, got {self.vehicle_length}")
        return out

    @property
    def comm_lag_steps(self) -> int:
        return steps_for(self.tau_c, self.dt)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> SimConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError([f"sim.{k}: unknown key" for k in unknown])
        return cls(**raw)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}


def _is_step_multiple(tau: float, dt: float) -> bool:
    k = tau / dt
    return abs(k - round(k)) < 1e-6


def steps_for(tau: float, dt: float) -> int:
    """Number of whole update intervals in ``tau``; rejects non-multiples."""
    if not _is_step_multiple(tau, dt):
        raise ConfigError(f"delay {tau} is not an integer multiple of dt={dt}")
    return int(round(tau / dt))


def step_actuator(a: float, u: float, tau_a: float, dt: float) -> float:
    """One explicit-Euler step of the first-order lag ``a_dot = (u - a) / tau_a``."""
    if tau_a <= 0:
        raise ValueError(f"tau_a must be positive, got {tau_a}")
    if dt > tau_a + _STEP_TOL:
        raise ValueError(f"dt={dt} exceeds tau_a={tau_a}; the lag update would overshoot")
    return a + dt * (u - a) / tau_a


def integrate_kinematics(state: VehicleState, dt: float) -> VehicleState:
    """Semi-implicit Euler with a speed floor at zero.

    When the floor engages the vehicle holds still for the step; the stored
    acceleration is left untouched.
    """
    v = max(0.0, state.v + state.a * dt)
    return VehicleState(d=state.d + v * dt, v=v, a=state.a)


def advance(state: VehicleState, u: float, cfg: SimConfig) -> VehicleState:
    """Actuator lag followed by kinematics: the per-step update every follower uses."""
    a = step_actuator(state.a, u, cfg.tau_a, cfg.dt)
    return integrate_kinematics(replace(state, a=a), cfg.dt)


@dataclass
class DelayLine:
    """Fixed-lag buffer: a read returns the sample pushed ``lag_steps`` pushes ago.

    Until the buffer has seen ``lag_steps + 1`` samples the earliest pushed
    sample is returned.
    """

    lag_steps: int
    _buf: list = field(default_factory=list, repr=False)
    _head: int = field(default=0, repr=False)
    _count: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.lag_steps < 0:
            raise ValueError(f"lag_steps must be >= 0, got {self.lag_steps}")
        self._buf = [None] * (self.lag_steps + 1)

    @classmethod
    def for_delay(cls, tau: float, dt: float) -> DelayLine:
        return cls(steps_for(tau, dt))

    def push(self, sample) -> None:
        self._buf[self._head] = sample
        self._head = (self._head + 1) % len(self._buf)
        self._count += 1

    def read(self):
        if self._count == 0:
            raise IndexError("read from an empty DelayLine")
        if self._count <= self.lag_steps:
            # warm-up: the oldest slot ever written is index 0
            return self._buf[0]
        # the slot about to be overwritten holds the sample from lag_steps pushes ago
        return self._buf[self._head]

    def push_read(self, sample):
        self.push(sample)
        return self.read()

    def __len__(self) -> int:
        return min(self._count, len(self._buf))
