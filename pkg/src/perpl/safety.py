"""Headway safety barrier.

The combined command is projected onto the set of accelerations whose one-step
prediction keeps the time headway inside ``cfg.safety_headway``. The ego is
predicted through its own actuator lag and kinematics; the predecessor is
carried forward at its (delayed) speed. For a scalar command the minimum-norm
projection is a clamp onto an interval, and the interval endpoints are found by
bisection because the predicted headway is monotone in the command.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dynamics import A_MAX_HARD, A_MIN_HARD, SimConfig, VehicleState

BISECT_TOL = 1e-6
# Below this predicted speed the headway is ill-defined; only the standstill
# spacing d0 is enforced.
LOW_SPEED = 0.5

TOO_CLOSE = "too_close"
TOO_FAR = "too_far"


@dataclass(frozen=True)
class SafeActionInterval:
    lo: float
    hi: float
    feasible: bool
    violation: str | None = None


def _predict(u: float, ego: VehicleState, pred: VehicleState, cfg: SimConfig) -> tuple[float, float]:
    """Return (spacing - d0, ego speed) one step ahead under command ``u``."""
    dt = cfg.dt
    a = ego.a + dt * (u - ego.a) / cfg.tau_a
    v = ego.v + a * dt
    if v < 0.0:
        v = 0.0
    spacing = (pred.d + pred.v * dt) - (ego.d + v * dt)
    return spacing - cfg.d0, v


def _lower_ok(u, ego, pred, cfg) -> bool:
    slack, v = _predict(u, ego, pred, cfg)
    if v < LOW_SPEED:
        return slack >= 0.0
    return slack >= cfg.safety_headway[0] * v


def _upper_ok(u, ego, pred, cfg) -> bool:
    slack, v = _predict(u, ego, pred, cfg)
    return slack <= cfg.safety_headway[1] * v


def _upper_active(ego, pred, cfg) -> bool:
    # the upper bound only binds when the ego cannot reach the low-speed regime this step
    return _predict(A_MIN_HARD, ego, pred, cfg)[1] >= LOW_SPEED


def is_safe(u: float, ego: VehicleState, pred_delayed: VehicleState, cfg: SimConfig) -> bool:
    """Membership test for the admissible set (cheaper than building the interval)."""
    if not A_MIN_HARD <= u <= A_MAX_HARD or not _lower_ok(u, ego, pred_delayed, cfg):
        return False
    return not _upper_active(ego, pred_delayed, cfg) or _upper_ok(u, ego, pred_delayed, cfg)


def _bisect(ok, good: float, bad: float) -> float:
    while abs(bad - good) > BISECT_TOL:
        mid = 0.5 * (good + bad)
        if ok(mid):
            good = mid
        else:
            bad = mid
    return good


def admissible_interval(ego: VehicleState, pred_delayed: VehicleState, cfg: SimConfig) -> SafeActionInterval:
    def lower(u):
        return _lower_ok(u, ego, pred_delayed, cfg)

    def upper(u):
        return _upper_ok(u, ego, pred_delayed, cfg)

    # too-close side: admissible commands form (-inf, hi]
    if lower(A_MAX_HARD):
        hi = A_MAX_HARD
    elif lower(A_MIN_HARD):
        hi = _bisect(lower, A_MIN_HARD, A_MAX_HARD)
    else:
        return SafeActionInterval(A_MIN_HARD, A_MIN_HARD, False, TOO_CLOSE)

    # too-far side: admissible commands form [lo, +inf)
    if not _upper_active(ego, pred_delayed, cfg) or upper(A_MIN_HARD):
        lo = A_MIN_HARD
    elif upper(A_MAX_HARD):
        lo = _bisect(upper, A_MAX_HARD, A_MIN_HARD)
    else:
        return SafeActionInterval(A_MAX_HARD, A_MAX_HARD, False, TOO_FAR)

    if lo > hi:
        return SafeActionInterval(hi, hi, False, TOO_CLOSE)
    return SafeActionInterval(lo, hi, True)


def project(combined: float, interval: SafeActionInterval) -> tuple[float, bool]:
    """Nearest admissible command; emergency bound when nothing is admissible."""
    if not interval.feasible:
        return (A_MAX_HARD if interval.violation == TOO_FAR else A_MIN_HARD), True
    safe = min(interval.hi, max(interval.lo, combined))
    return safe, safe != combined


def safety_filter(combined: float, ego: VehicleState, pred_delayed: VehicleState,
                  cfg: SimConfig) -> tuple[float, bool]:
    """``project(combined, admissible_interval(...))`` that skips the bisection when
    ``combined`` is already admissible."""
    if is_safe(combined, ego, pred_delayed, cfg):
        return combined, False
    return project(combined, admissible_interval(ego, pred_delayed, cfg))
