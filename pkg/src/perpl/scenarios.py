"""Lead trajectories (ingested, synthetic, extremized), platoon layouts and equilibrium starts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .controllers import IdmParams, idm_equilibrium_gap
from .dynamics import A_MAX_HARD, SimConfig, VehicleState
from .errors import DataError

CAV = "CAV"
HV = "HV"

CONSISTENCY_TOL = 0.05  # m/s, |v[t+1] - v[t] - a[t]*dt|
DEFAULT_STEPS = 500
DEFAULT_DT = 0.1


@dataclass(frozen=True)
class LeadTrajectory:
    dt: float
    speeds: np.ndarray
    accels: np.ndarray
    source: str = "synthetic"  # ingested | synthetic | extremized
    name: str = ""

    def __post_init__(self):
        speeds = np.asarray(self.speeds, dtype=float)
        accels = np.asarray(self.accels, dtype=float)
        if speeds.shape != accels.shape or speeds.ndim != 1 or len(speeds) == 0:
            raise DataError("trajectory speeds/accels must be equal-length non-empty 1-D arrays")
        speeds.setflags(write=False)
        accels.setflags(write=False)
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "accels", accels)

    def __len__(self) -> int:
        return len(self.speeds)

    def consistency_residual(self) -> np.ndarray:
        return self.speeds[1:] - self.speeds[:-1] - self.accels[:-1] * self.dt

    def validate(self, a_bound: float = A_MAX_HARD * 3) -> None:
        if np.any(self.speeds < 0):
            raise DataError(f"trajectory {self.name!r}: negative speed")
        if np.any(np.abs(self.accels) > a_bound):
            raise DataError(f"trajectory {self.name!r}: |accel| exceeds {a_bound}")
        res = self.consistency_residual()
        if len(res) and np.max(np.abs(res)) >= CONSISTENCY_TOL:
            raise DataError(f"trajectory {self.name!r}: speed/accel inconsistent "
                            f"(max residual {np.max(np.abs(res)):.3g} m/s)")


def _central_diff(v: np.ndarray, dt: float) -> np.ndarray:
    if len(v) < 2:
        return np.zeros_like(v)
    return np.gradient(v, dt, edge_order=1)


def _forward_diff(v: np.ndarray, dt: float) -> np.ndarray:
    a = np.zeros_like(v)
    if len(v) >= 2:
        a[:-1] = np.diff(v) / dt
        a[-1] = a[-2]
    return a


def _consistent_accels(speeds: np.ndarray, accels: np.ndarray | None, dt: float) -> np.ndarray:
    """Keep supplied/central-difference accels when they agree with the speeds,
    otherwise fall back to forward differences (which agree exactly)."""
    if accels is None:
        accels = _central_diff(speeds, dt)
    res = speeds[1:] - speeds[:-1] - accels[:-1] * dt
    if len(res) and np.max(np.abs(res)) >= CONSISTENCY_TOL:
        accels = _forward_diff(speeds, dt)
    return accels


# --------------------------------------------------------------------------- ingestion

_DEFAULT_COLUMNS = {"time": "time", "speed": "speed", "accel": "accel", "position": "position"}


def load_trajectory(path: str | Path, column_map: dict[str, Any] | None = None,
                    dt: float = DEFAULT_DT) -> LeadTrajectory:
    """Read a delimiter-separated lead trajectory and resample it onto a ``dt`` grid.

    ``column_map`` maps the logical names ``time``/``speed``/``accel``/``position``
    to header names, and may carry ``time_scale`` / ``speed_scale`` /
    ``accel_scale`` multipliers (e.g. ``time_scale=0.001`` for milliseconds).
    ``time`` and ``speed`` are required; position is accepted but unused since
    the simulator integrates the lead from its speed.
    """
    path = Path(path)
    cmap = dict(_DEFAULT_COLUMNS)
    scales = {"time_scale": 1.0, "speed_scale": 1.0, "accel_scale": 1.0}
    for k, v in (column_map or {}).items():
        if k in scales:
            scales[k] = float(v)
        elif k in cmap or k == "delimiter":
            cmap[k] = v
        else:
            raise DataError(f"{path}: unknown column-map key {k!r}")

    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    delimiter = cmap.get("delimiter")
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(lines[0], delimiters=",;\t ").delimiter
        except csv.Error:
            delimiter = ","
    reader = csv.reader(lines, delimiter=delimiter, skipinitialspace=True)
    header = [h.strip() for h in next(reader)]
    missing = [f"{name} (column {cmap[name]!r})" for name in ("time", "speed") if cmap[name] not in header]
    if missing:
        raise DataError(f"{path}:1: missing required column(s): {', '.join(missing)}")
    idx_t = header.index(cmap["time"])
    idx_v = header.index(cmap["speed"])
    idx_a = header.index(cmap["accel"]) if cmap["accel"] in header else None

    times, speeds, accels = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            t = float(row[idx_t]) * scales["time_scale"]
            v = float(row[idx_v]) * scales["speed_scale"]
            a = float(row[idx_a]) * scales["accel_scale"] if idx_a is not None else None
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: unparseable row ({exc})") from exc
        if times and t <= times[-1]:
            raise DataError(f"{path}:{lineno}: time {t} is not strictly increasing")
        if v < 0:
            raise DataError(f"{path}:{lineno}: negative speed {v}")
        times.append(t)
        speeds.append(v)
        accels.append(a)
    if not times:
        raise DataError(f"{path}: no data rows")

    t = np.asarray(times)
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(n)
    if len(t) == n and np.allclose(t, grid, rtol=0.0, atol=1e-9):
        # already on the grid: keep the samples verbatim
        v_grid = np.asarray(speeds)
        a_grid = np.asarray(accels, dtype=float) if idx_a is not None else None
    else:
        v_grid = np.interp(grid, t, np.asarray(speeds))
        a_grid = np.interp(grid, t, np.asarray(accels, dtype=float)) if idx_a is not None else None
    a_grid = _consistent_accels(v_grid, a_grid, dt)
    traj = LeadTrajectory(dt, v_grid, a_grid, source="ingested", name=path.stem)
    traj.validate()
    return traj


def write_trajectory(path: str | Path, traj: LeadTrajectory) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "speed", "accel"])
        for i, (v, a) in enumerate(zip(traj.speeds, traj.accels)):
            w.writerow([repr(round(i * traj.dt, 10)), repr(float(v)), repr(float(a))])


# --------------------------------------------------------------------------- generation

def extremize(traj: LeadTrajectory, gain: float = 2.0, decel_cap: float = 4.0,
              accel_cap: float = 3.0) -> LeadTrajectory:
    """Scale accelerations by ``gain``, clamp to ``[-decel_cap, accel_cap]`` and
    re-integrate speed from the initial speed with a floor at zero."""
    if gain < 1:
        raise ValueError(f"gain must be >= 1, got {gain}")
    acc = np.clip(np.asarray(traj.accels) * gain, -decel_cap, accel_cap)
    v = np.empty_like(acc)
    v[0] = traj.speeds[0]
    for t in range(len(acc) - 1):
        nxt = v[t] + acc[t] * traj.dt
        if nxt < 0.0:
            nxt = 0.0
            acc[t] = -v[t] / traj.dt
        v[t + 1] = nxt
    return LeadTrajectory(traj.dt, v, acc, source="extremized", name=traj.name)


# Mild defaults: every acceleration stays within +-3 m/s^2, and decelerations stay
# under half the extremize cap, so an extremized copy brakes at up to -4 m/s^2
# while the lead keeps moving (min speed about 3 m/s).
SYNTH_DEFAULTS: dict[str, dict[str, Any]] = {
    "sinusoid": {"v_mean": [12.0, 16.0], "amplitude": [1.5, 3.0], "period": [9.0, 16.0],
                 "phase": [0.0, 2 * math.pi]},
    "brake-pulse": {"v_cruise": [13.0, 15.0], "rate": [1.5, 2.0], "duration": [2.5, 3.0],
                    "start": [5.0, 15.0], "recovery_rate": [0.8, 1.8]},
    "stop-and-go": {"v_high": [14.0, 16.0], "v_low": [9.5, 11.0], "decel": [1.0, 2.0],
                    "accel": [0.8, 1.5], "dwell": [2.0, 6.0]},
}


def _draw(params: dict[str, Any], rng: np.random.Generator) -> dict[str, float]:
    out = {}
    for key in sorted(params):
        spec = params[key]
        if isinstance(spec, (list, tuple)):
            lo, hi = float(spec[0]), float(spec[1])
            out[key] = float(rng.uniform(lo, hi)) if hi > lo else lo
        else:
            out[key] = float(spec)
    return out


def _lower(spec) -> float:
    return float(spec[0]) if isinstance(spec, (list, tuple)) else float(spec)


def _upper(spec) -> float:
    return float(spec[1]) if isinstance(spec, (list, tuple)) else float(spec)


def _integrate(v0: float, acc: np.ndarray, dt: float) -> np.ndarray:
    v = np.empty_like(acc)
    v[0] = v0
    for t in range(len(acc) - 1):
        v[t + 1] = v[t] + acc[t] * dt
    return v


def synth_trajectory(kind: str, params: dict[str, Any] | None = None, seed: int = 0,
                     n_steps: int = DEFAULT_STEPS, dt: float = DEFAULT_DT) -> LeadTrajectory:
    """Seeded synthetic lead profile.

    Each parameter is either a number or a ``[lo, hi]`` range sampled uniformly.
    Missing parameters take the ranges in :data:`SYNTH_DEFAULTS`.
    """
    if kind not in SYNTH_DEFAULTS:
        raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {sorted(SYNTH_DEFAULTS)}")
    merged = {**SYNTH_DEFAULTS[kind], **(params or {})}
    rng = np.random.default_rng(seed)
    p = _draw(merged, rng)
    t = dt * np.arange(n_steps)

    if kind == "sinusoid":
        if _lower(merged["v_mean"]) - _upper(merged["amplitude"]) < 0:
            raise ValueError("sinusoid ranges allow negative speed (v_mean - amplitude < 0)")
        w = 2 * math.pi / p["period"]
        speeds = p["v_mean"] + p["amplitude"] * np.sin(w * t + p["phase"])
        accels = _forward_diff(speeds, dt)
    elif kind == "brake-pulse":
        if _lower(merged["v_cruise"]) - _upper(merged["rate"]) * _upper(merged["duration"]) < 0:
            raise ValueError("brake-pulse ranges allow negative speed (v_cruise - rate*duration < 0)")
        acc = np.zeros(n_steps)
        k0 = int(round(p["start"] / dt))
        k1 = k0 + int(round(p["duration"] / dt))
        acc[k0:k1] = -p["rate"]
        drop = p["rate"] * (k1 - k0) * dt
        if p["recovery_rate"] > 0 and drop > 0:
            k2 = k1 + int(round(drop / p["recovery_rate"] / dt))
            acc[k1:k2] = p["recovery_rate"]
        speeds = np.maximum(_integrate(p["v_cruise"], acc, dt), 0.0)
        accels = _consistent_accels(speeds, acc, dt)
    else:  # stop-and-go
        if _lower(merged["v_low"]) < 0 or _lower(merged["v_low"]) > _lower(merged["v_high"]):
            raise ValueError("stop-and-go needs 0 <= v_low <= v_high")
        acc = np.zeros(n_steps)
        v = p["v_high"]
        k = int(round(p["dwell"] / dt))
        going_down = True
        while k < n_steps:
            if going_down:
                rate, target = -p["decel"], p["v_low"]
            else:
                rate, target = p["accel"], p["v_high"]
            n = int(round(abs(target - v) / abs(rate) / dt)) if rate else 0
            acc[k:k + n] = rate
            v += rate * n * dt
            k += n + int(round(p["dwell"] / dt))
            going_down = not going_down
        speeds = np.maximum(_integrate(p["v_high"], acc, dt), 0.0)
        accels = _consistent_accels(speeds, acc, dt)

    traj = LeadTrajectory(dt, speeds, accels, source="synthetic", name=f"{kind}-{seed}")
    traj.validate()
    return traj


def constant_trajectory(speed: float, n_steps: int = DEFAULT_STEPS, dt: float = DEFAULT_DT) -> LeadTrajectory:
    return LeadTrajectory(dt, np.full(n_steps, float(speed)), np.zeros(n_steps), name=f"constant-{speed}")


# --------------------------------------------------------------------------- platoons

@dataclass(frozen=True)
class PlatoonSpec:
    """Vehicle kinds from upstream (index 0, the trajectory-driven lead) downstream.

    ``cav_controller`` binds the CAV kind to ``linear``, ``rl`` or ``perpl``; HVs
    always run IDM. ``initial_speed`` defaults to the lead trajectory's first speed.
    """

    kinds: tuple[str, ...]
    cav_controller: str = "perpl"
    initial_speed: float | None = None

    def __post_init__(self):
        kinds = tuple(self.kinds)
        object.__setattr__(self, "kinds", kinds)
        if not kinds:
            raise ValueError("platoon must contain at least the lead vehicle")
        bad = [k for k in kinds if k not in (CAV, HV)]
        if bad:
            raise ValueError(f"unknown vehicle kinds {bad}")
        if self.cav_controller not in ("linear", "rl", "perpl"):
            raise ValueError(f"unknown CAV controller {self.cav_controller!r}")

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def cav_indices(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == CAV and i > 0]

    @property
    def hv_indices(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == HV and i > 0]


def single_vehicle(controller: str = "perpl") -> PlatoonSpec:
    return PlatoonSpec((HV, CAV), cav_controller=controller)


def mixed_platoon(controller: str = "perpl") -> PlatoonSpec:
    """Ten vehicles; followers 1, 5 and 8 are CAVs, the rest (and the lead) HVs."""
    cavs = {1, 5, 8}
    return PlatoonSpec(tuple(CAV if i in cavs else HV for i in range(10)), cav_controller=controller)


def penetration_platoon(n_followers: int, rate: float, seed: int = 0,
                        controller: str = "perpl") -> PlatoonSpec:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"penetration rate must lie in [0, 1], got {rate}")
    n_cav = int(math.floor(rate * n_followers + 0.5))
    rng = np.random.default_rng(seed)
    chosen = set(int(i) + 1 for i in rng.choice(n_followers, size=n_cav, replace=False))
    kinds = [HV] + [CAV if i in chosen else HV for i in range(1, n_followers + 1)]
    return PlatoonSpec(tuple(kinds), cav_controller=controller)


def cav_spacing(v: float, cfg: SimConfig) -> float:
    """Front-to-front spacing at which a delayed-feedback CAV holds ``delta_d = 0``.

    The predecessor position a CAV sees is ``tau_c * v`` stale, so the
    closed-loop rest point sits that much beyond the CTH target ``d0 + h_d v``.
    """
    return cfg.d0 + (cfg.h_d + cfg.tau_c) * v


def hv_spacing(v: float, cfg: SimConfig, idm: IdmParams) -> float:
    """Front-to-front spacing: vehicle length plus the IDM equilibrium net gap."""
    return cfg.vehicle_length + idm_equilibrium_gap(v, idm)


def init_equilibrium(spec: PlatoonSpec, cfg: SimConfig, idm: IdmParams = IdmParams(),
                     speed: float | None = None) -> list[VehicleState]:
    v = spec.initial_speed if speed is None else speed
    if v is None:
        raise ValueError("initial lead speed unknown")
    if spec.hv_indices and v >= idm.v0:
        raise ValueError(f"HV equilibrium undefined: v={v} >= IDM v0={idm.v0}")
    states = [VehicleState(0.0, float(v), 0.0)]
    d = 0.0
    for kind in spec.kinds[1:]:
        d -= cav_spacing(v, cfg) if kind == CAV else hv_spacing(v, cfg, idm)
        states.append(VehicleState(d, float(v), 0.0))
    return states


# --------------------------------------------------------------------------- manifests

@dataclass
class Manifest:
    """(path, split) entries; relative paths resolve against ``root``."""

    entries: list[tuple[Path, str]]
    root: Path = field(default_factory=Path.cwd)
    column_map: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.entries = [(Path(p), str(s)) for p, s in self.entries]
        self.root = Path(self.root)

    def paths(self, split: str) -> list[Path]:
        return [p if p.is_absolute() else self.root / p for p, s in self.entries if s == split]

    def load(self, split: str, dt: float = DEFAULT_DT) -> list[LeadTrajectory]:
        paths = self.paths(split)
        if not paths:
            raise DataError(f"manifest has no trajectories for split {split!r}")
        return [load_trajectory(p, self.column_map, dt=dt) for p in paths]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        payload = {"column_map": self.column_map,
                   "trajectories": [{"path": p.as_posix(), "split": s} for p, s in self.entries]}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        entries = [(Path(e["path"]), str(e["split"])) for e in raw["trajectories"]]
    except OSError as exc:
        raise DataError(f"{path}: cannot read manifest ({exc.strerror})") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from exc
    return Manifest(entries, root=path.parent, column_map=raw.get("column_map", {}))


def generate_split(kinds: Sequence[str], count: int, seed: int | Sequence[int],
                   params: dict[str, dict[str, Any]] | None = None,
                   n_steps: int = DEFAULT_STEPS) -> list[LeadTrajectory]:
    """``count`` synthetic trajectories cycling through ``kinds``, seeded per index."""
    params = params or {}
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [synth_trajectory(kinds[i % len(kinds)], params.get(kinds[i % len(kinds)]),
                             seed=int(seeds[i]), n_steps=n_steps)
            for i in range(count)]
