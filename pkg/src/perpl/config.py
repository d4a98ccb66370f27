"""Experiment configuration: one JSON document, dotted-key overrides, strict key checking."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .controllers import IdmParams, LinearGains
from .dynamics import SimConfig
from .errors import ConfigError, DataError
from .rl.ppo import PpoHyper
from .rl.reward import RewardWeights
from .scenarios import (SYNTH_DEFAULTS, LeadTrajectory, PlatoonSpec, extremize, generate_split,
                        load_manifest, mixed_platoon, single_vehicle)

CONTROLLERS = ("linear", "rl", "perpl")
SPLITS = ("train", "test", "extrapolation")
PRESETS = ("single", "mixed", "custom")

# Congested regime for the penetration sweep: IDM is only weakly damped near
# 8 m/s, so the human-driven share visibly amplifies the brake pulse.
SWEEP_LEAD = {"v_cruise": [7.0, 10.0], "rate": [1.5, 2.5], "duration": [1.5, 2.5],
              "start": [3.0, 8.0], "recovery_rate": [0.8, 1.8]}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output": "runs",
    "sim": SimConfig().to_dict(),
    "ppo": PpoHyper().to_dict(),
    "reward": RewardWeights().to_dict(),
    "idm": {k: getattr(IdmParams(), k) for k in ("v0", "t_head", "a_max", "b_comf", "sigma", "s0")},
    "gains": {"k_d": LinearGains().k_d, "k_v": LinearGains().k_v, "k_a": 0.0},
    "platoon": {"preset": "single", "kinds": None, "controller": "perpl"},
    "data": {
        "manifest": None,
        "kinds": ["sinusoid", "brake-pulse", "stop-and-go"],
        "seed": 0,
        "train": 20,
        "test": 100,
        "extrapolation": 100,
        "params": {},
        "extremize_gain": 2.0,
        "decel_cap": 4.0,
        "accel_cap": 3.0,
        "column_map": {},
    },
    "train": {"iterations": 200},
    "sweep": {
        "rates": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        "followers": 40,
        "seeds": [0, 1, 2],
        "controller": "linear",
        "lead": {"kind": "brake-pulse", "params": SWEEP_LEAD},
    },
    "metrics": {"alpha": 1.0},
}

# values under these keys are free-form mappings checked by their consumers
_OPEN_KEYS = {"data.params", "data.column_map", "sweep.lead.params"}


def _unknown_keys(raw: Any, ref: Any, prefix: str = "") -> list[str]:
    if not isinstance(raw, dict) or not isinstance(ref, dict):
        return []
    out = []
    for key, value in raw.items():
        path = f"{prefix}{key}"
        if key not in ref:
            out.append(f"{path}: unknown key")
        elif path not in _OPEN_KEYS:
            out.extend(_unknown_keys(value, ref[key], path + "."))
    return out


def _merge(base: dict[str, Any], over: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in over.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict) and isinstance(out.get(key), dict) and path not in _OPEN_KEYS:
            out[key] = _merge(out[key], value, path + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    out = copy.deepcopy(raw)
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part} is not a section")
        node[path[-1]] = value
    return out


def _section(problems: list[str], prefix: str, build):
    try:
        return build()
    except ConfigError as exc:
        problems.extend(p if p.startswith(prefix) else prefix + p for p in exc.problems)
    except (TypeError, ValueError) as exc:
        problems.append(f"{prefix.rstrip('.')}: {exc}")
    return None


def _check_count(problems: list[str], key: str, value: Any, minimum: int = 1) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        problems.append(f"{key}: expected an integer >= {minimum}, got {value!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings plus the resolved JSON they came from."""

    raw: dict[str, Any]
    sim: SimConfig
    ppo: PpoHyper
    reward: RewardWeights
    idm: IdmParams
    gains: LinearGains
    base_dir: Path = Path(".")

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def data(self) -> dict[str, Any]:
        return self.raw["data"]

    @property
    def sweep(self) -> dict[str, Any]:
        return self.raw["sweep"]

    @property
    def alpha(self) -> float:
        return float(self.raw["metrics"]["alpha"])

    @property
    def iterations(self) -> int:
        return self.raw["train"]["iterations"]

    def platoon(self, controller: str | None = None) -> PlatoonSpec:
        p = self.raw["platoon"]
        controller = controller or p["controller"]
        if p["preset"] == "single":
            return single_vehicle(controller)
        if p["preset"] == "mixed":
            return mixed_platoon(controller)
        return PlatoonSpec(tuple(p["kinds"]), cav_controller=controller)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"


def build_config(raw: dict[str, Any] | None = None, overrides: list[str] | None = None,
                 base_dir: str | Path = ".") -> ExperimentConfig:
    """Merge ``raw`` and ``overrides`` over :data:`DEFAULTS`; every problem is reported at once."""
    raw = apply_overrides(raw or {}, overrides or [])
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    problems = _unknown_keys(raw, DEFAULTS)
    merged = _merge(DEFAULTS, raw)

    sim = _section(problems, "sim.", lambda: SimConfig.from_dict(merged["sim"]))
    ppo = _section(problems, "ppo.", lambda: PpoHyper.from_dict(merged["ppo"]))
    reward = _section(problems, "reward.", lambda: RewardWeights.from_dict(merged["reward"]))
    idm = _section(problems, "idm.", lambda: IdmParams.from_dict(merged["idm"]))
    gains = _section(problems, "gains.", lambda: LinearGains(**merged["gains"]))

    _check_count(problems, "seed", merged["seed"], minimum=0)
    _check_count(problems, "data.seed", merged["data"]["seed"], minimum=0)
    for split in SPLITS:
        _check_count(problems, f"data.{split}", merged["data"][split])
    _check_count(problems, "train.iterations", merged["train"]["iterations"])
    _check_count(problems, "sweep.followers", merged["sweep"]["followers"])

    platoon = merged["platoon"]
    if platoon["controller"] not in CONTROLLERS:
        problems.append(f"platoon.controller: expected one of {list(CONTROLLERS)}, got {platoon['controller']!r}")
    if platoon["preset"] not in PRESETS:
        problems.append(f"platoon.preset: expected one of {list(PRESETS)}, got {platoon['preset']!r}")
    elif platoon["preset"] == "custom":
        kinds = platoon["kinds"]
        if not isinstance(kinds, list) or len(kinds) < 2 or any(k not in ("CAV", "HV") for k in kinds):
            problems.append("platoon.kinds: custom preset needs a list of at least two 'CAV'/'HV' entries")
    if merged["sweep"]["controller"] not in CONTROLLERS:
        problems.append(f"sweep.controller: expected one of {list(CONTROLLERS)}")

    data = merged["data"]
    unknown_kinds = [k for k in data["kinds"] if k not in SYNTH_DEFAULTS] if isinstance(data["kinds"], list) else ["?"]
    if unknown_kinds or not data["kinds"]:
        problems.append(f"data.kinds: expected a non-empty list from {sorted(SYNTH_DEFAULTS)}")
    for kind in data["params"]:
        if kind not in SYNTH_DEFAULTS:
            problems.append(f"data.params.{kind}: unknown trajectory kind")
    if not data["extremize_gain"] >= 1:
        problems.append("data.extremize_gain: must be >= 1")
    rates = merged["sweep"]["rates"]
    if not isinstance(rates, list) or not rates or any(not 0 <= r <= 1 for r in rates):
        problems.append("sweep.rates: expected a non-empty list of fractions in [0, 1]")
    if not isinstance(merged["sweep"]["seeds"], list) or not merged["sweep"]["seeds"]:
        problems.append("sweep.seeds: expected a non-empty list of integers")
    if merged["sweep"]["lead"]["kind"] not in SYNTH_DEFAULTS:
        problems.append("sweep.lead.kind: unknown trajectory kind")
    if not merged["metrics"]["alpha"] >= 0:
        problems.append("metrics.alpha: must be >= 0")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(merged, sim, ppo, reward, idm, gains, Path(base_dir))


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    if path is None:
        return build_config({}, overrides)
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return build_config(raw, overrides, base_dir=path.parent)


def split_trajectories(cfg: ExperimentConfig, split: str) -> list[LeadTrajectory]:
    """Trajectories of one split, from the manifest when configured, otherwise synthesized.

    Synthetic splits draw from independent seed streams; the extrapolation
    split is an extremized copy of its own fresh draw.
    """
    if split not in SPLITS:
        raise ConfigError(f"split: expected one of {list(SPLITS)}, got {split!r}")
    data = cfg.data
    if data["manifest"] is not None:
        manifest_path = Path(data["manifest"])
        if not manifest_path.is_absolute():
            manifest_path = cfg.base_dir / manifest_path
        manifest = load_manifest(manifest_path)
        if data["column_map"]:
            manifest.column_map = {**manifest.column_map, **data["column_map"]}
        return manifest.load(split, dt=cfg.sim.dt)
    try:
        trajs = generate_split(data["kinds"], data[split], seed=[data["seed"], SPLITS.index(split)],
                               params=data["params"])
    except ValueError as exc:
        raise ConfigError(f"data.params: {exc}") from exc
    if split == "extrapolation":
        trajs = [extremize(t, data["extremize_gain"], data["decel_cap"], data["accel_cap"]) for t in trajs]
    if any(abs(t.dt - cfg.sim.dt) > 1e-12 for t in trajs):
        raise DataError(f"synthetic trajectories use dt={trajs[0].dt}, config has sim.dt={cfg.sim.dt}")
    return trajs
