"""Gaussian actor / value critic pair and its checkpoint container."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import DataError
from .network import HIDDEN, MlpParams
from .observation import NORMALIZATION, OBS_DIM

R_MAX = 3.0  # m/s^2, residual band
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
LOG_STD_INIT = math.log(0.5)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

CHECKPOINT_FORMAT = "perpl-policy"
CHECKPOINT_VERSION = 1


def actor_forward(obs: np.ndarray, actor: MlpParams, log_std: np.ndarray,
                  r_max: float = R_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std of the residual action for a batch of observations."""
    out, _ = actor.forward(np.atleast_2d(obs))
    mean = r_max * np.tanh(out[:, 0])
    std = np.full_like(mean, math.exp(float(log_std[0])))
    return mean, std


def critic_forward(obs: np.ndarray, critic: MlpParams) -> np.ndarray:
    out, _ = critic.forward(np.atleast_2d(obs))
    return out[:, 0]


def gaussian_logprob(action, mean, std):
    z = (np.asarray(action) - mean) / std
    return -0.5 * z * z - np.log(std) - _LOG_SQRT_2PI


@dataclass
class Policy:
    actor: MlpParams
    critic: MlpParams
    log_std: np.ndarray
    r_max: float = R_MAX
    normalization: dict[str, float] = field(default_factory=lambda: dict(NORMALIZATION))
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def init(cls, rng: np.random.Generator, obs_dim: int = OBS_DIM, hidden: int = HIDDEN,
             log_std: float = LOG_STD_INIT) -> Policy:
        """Random hidden layers with a zero actor head, so the residual starts at exactly 0."""
        actor = MlpParams.init(obs_dim, 1, rng, hidden)
        critic = MlpParams.init(obs_dim, 1, rng, hidden, out_scale=0.01)
        return cls(actor, critic, np.array([log_std]))

    @classmethod
    def zeros(cls, obs_dim: int = OBS_DIM, hidden: int = HIDDEN) -> Policy:
        return cls(MlpParams.zeros(obs_dim, 1, hidden), MlpParams.zeros(obs_dim, 1, hidden), np.zeros(1))

    # -- flat parameter view (order: actor w1 b1 w2 b2, log_std, critic w1 b1 w2 b2)

    def arrays(self) -> list[np.ndarray]:
        return [*self.actor.arrays, self.log_std, *self.critic.arrays]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> Policy:
        out = self.copy()
        i = 0
        for a in out.arrays():
            a[...] = vec[i:i + a.size].reshape(a.shape)
            i += a.size
        return out

    def copy(self) -> Policy:
        return Policy(self.actor.copy(), self.critic.copy(), self.log_std.copy(), self.r_max,
                      dict(self.normalization), dict(self.meta))

    # -- acting

    def distribution(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return actor_forward(obs, self.actor, self.log_std, self.r_max)

    def value(self, obs: np.ndarray) -> np.ndarray:
        return critic_forward(obs, self.critic)

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None):
        """Residual commands for a batch of observations.

        Returns ``(executed, sampled, log_prob)``. Without ``rng`` the mean is
        used; sampled actions are clipped to the residual band for execution.
        """
        mean, std = self.distribution(obs)
        if rng is None:
            return mean, mean, gaussian_logprob(mean, mean, std)
        sampled = mean + std * rng.standard_normal(mean.shape)
        return np.clip(sampled, -self.r_max, self.r_max), sampled, gaussian_logprob(sampled, mean, std)

    # -- persistence

    def to_dict(self, optimizer: dict[str, Any] | None = None) -> dict[str, Any]:
        def net(p: MlpParams):
            return {"shapes": p.shapes, **{k: getattr(p, k).tolist() for k in ("w1", "b1", "w2", "b2")}}

        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dtype": "float64",
            "obs_dim": int(self.actor.w1.shape[0]),
            "hidden": int(self.actor.w1.shape[1]),
            "r_max": self.r_max,
            "normalization": self.normalization,
            "actor": net(self.actor),
            "log_std": self.log_std.tolist(),
            "critic": net(self.critic),
            "meta": self.meta,
        }
        if optimizer is not None:
            payload["optimizer"] = optimizer
        return payload

    def save(self, path: str | Path, optimizer: dict[str, Any] | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(optimizer), sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> Policy:
        try:
            return cls._from_dict(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed checkpoint: {type(exc).__name__}: {exc}") from exc

    @classmethod
    def _from_dict(cls, raw: dict[str, Any]) -> Policy:
        if not isinstance(raw, dict):
            raise DataError("checkpoint must be a JSON object")
        if raw.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"not a policy checkpoint (format={raw.get('format')!r})")
        if raw.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {raw.get('version')!r}")
        obs_dim, hidden = raw["obs_dim"], raw["hidden"]
        expected = {"w1": [obs_dim, hidden], "b1": [hidden], "w2": [hidden, 1], "b2": [1]}

        def net(name: str) -> MlpParams:
            block = raw[name]
            arrays = {}
            for key, shape in expected.items():
                arr = np.asarray(block[key], dtype=np.float64)
                if list(arr.shape) != shape or block["shapes"][key] != shape:
                    raise DataError(f"checkpoint {name}.{key}: shape {list(arr.shape)} "
                                    f"(declared {block['shapes'][key]}), expected {shape}")
                if not np.all(np.isfinite(arr)):
                    raise DataError(f"checkpoint {name}.{key}: non-finite values")
                arrays[key] = arr
            return MlpParams(**arrays)

        log_std = np.asarray(raw["log_std"], dtype=np.float64)
        if log_std.shape != (1,):
            raise DataError(f"checkpoint log_std: shape {list(log_std.shape)}, expected [1]")
        return cls(net("actor"), net("critic"), log_std, float(raw["r_max"]),
                   {k: float(v) for k, v in raw["normalization"].items()}, dict(raw.get("meta", {})))

    @classmethod
    def load(cls, path: str | Path) -> Policy:
        return cls.from_dict(read_checkpoint(path))


def read_checkpoint(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed checkpoint ({exc})") from exc
