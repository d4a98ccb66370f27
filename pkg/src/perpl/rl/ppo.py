"""Clipped-surrogate PPO with GAE, a single Adam optimizer and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, NamedTuple, Sequence

import numpy as np

from ..errors import ConfigError, NumericalAbort
from .policy import LOG_STD_MAX, LOG_STD_MIN, Policy, gaussian_logprob


@dataclass(frozen=True)
class PpoHyper:
    lr: float = 2e-4
    gamma: float = 0.9
    gae_lambda: float = 0.95
    update_epochs: int = 10
    clip_eps: float = 0.2
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    minibatch_size: int = 64
    n_actors: int = 4

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.gamma <= 1:
            out.append(f"ppo.gamma: must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            out.append(f"ppo.gae_lambda: must lie in [0, 1], got {self.gae_lambda}")
        if not 0 < self.clip_eps < 1:
            out.append(f"ppo.clip_eps: must lie in (0, 1), got {self.clip_eps}")
        for name in ("lr", "value_coef", "max_grad_norm"):
            if not getattr(self, name) > 0:
                out.append(f"ppo.{name}: must be > 0")
        for name in ("update_epochs", "minibatch_size", "n_actors"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                out.append(f"ppo.{name}: must be a positive integer")
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> PpoHyper:
        unknown = sorted(set(raw) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError([f"ppo.{k}: unknown key" for k in unknown])
        return cls(**raw)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class Transition(NamedTuple):
    obs: np.ndarray
    action: float  # sampled (pre-clip) residual
    log_prob: float
    reward: float
    value: float
    done: bool


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, bootstrap: float,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward GAE recursion. ``dones[t]`` marks a terminal transition (no bootstrap past it)."""
    n = len(rewards)
    if n == 0:
        raise ValueError("cannot compute advantages of an empty trajectory")
    adv = np.zeros(n)
    running = 0.0
    next_value = bootstrap
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + np.asarray(values, dtype=float)


def compute_advantages(traj: Sequence[Transition], gamma: float, gae_lambda: float,
                       bootstrap: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and value targets for one trajectory (before batch normalisation).

    ``bootstrap`` is the value of the state after the last transition; pass 0
    when the episode terminated.
    """
    if len(traj) == 0:
        raise ValueError("cannot compute advantages of an empty trajectory")
    return gae(np.array([t.reward for t in traj]), np.array([t.value for t in traj]),
               np.array([t.done for t in traj]), bootstrap, gamma, gae_lambda)


def normalize(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def clipped_objective(ratio, adv, clip_eps):
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


@dataclass
class Batch:
    obs: np.ndarray        # (N, obs_dim)
    actions: np.ndarray    # (N,)
    log_probs: np.ndarray  # (N,) under the behaviour policy
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def subset(self, idx: np.ndarray) -> Batch:
        return Batch(self.obs[idx], self.actions[idx], self.log_probs[idx], self.advantages[idx], self.returns[idx])


def loss_and_grad(policy: Policy, batch: Batch, clip_eps: float,
                  value_coef: float) -> tuple[float, np.ndarray, dict[str, float]]:
    """Loss ``-mean(clipped surrogate) + value_coef * mean((V - R)^2)`` and its flat gradient."""
    n = len(batch)
    x = batch.obs

    out, a_cache = policy.actor.forward(x)
    t = np.tanh(out[:, 0])
    mean = policy.r_max * t
    log_std = policy.log_std[0]
    std = np.exp(log_std)
    logp = gaussian_logprob(batch.actions, mean, std)
    ratio = np.exp(logp - batch.log_probs)
    surr = ratio * batch.advantages
    surr_clip = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * batch.advantages
    objective = np.minimum(surr, surr_clip)

    values, c_cache = policy.critic.forward(x)
    err = values[:, 0] - batch.returns
    value_loss = float(np.mean(err * err))
    loss = -float(np.mean(objective)) + value_coef * value_loss

    # d loss / d logp; the clipped branch carries no gradient
    g_logp = -(batch.advantages * ratio * (surr <= surr_clip)) / n
    z = (batch.actions - mean) / std
    g_mean = g_logp * z / std
    g_log_std = np.sum(g_logp * (z * z - 1.0))
    g_out = (g_mean * policy.r_max * (1.0 - t * t))[:, None]
    actor_grads = policy.actor.backward(g_out, a_cache)
    critic_grads = policy.critic.backward((2.0 * value_coef / n) * err[:, None], c_cache)

    grad = np.concatenate([*(g.ravel() for g in actor_grads), [g_log_std],
                           *(g.ravel() for g in critic_grads)])
    diag = {
        "objective": float(np.mean(objective)),
        "value_loss": value_loss,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
    }
    return loss, grad, diag


class Adam:
    """Adam on a flat parameter vector; state is plain arrays so it checkpoints cleanly."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def copy(self) -> Adam:
        out = Adam(len(self.m), self.lr, self.beta1, self.beta2, self.eps)
        out.m, out.v, out.t = self.m.copy(), self.v.copy(), self.t
        return out

    def state_dict(self) -> dict[str, Any]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "m": self.m.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_state(cls, state: dict[str, Any]) -> Adam:
        out = cls(len(state["m"]), state["lr"], state["beta1"], state["beta2"], state["eps"])
        out.m = np.asarray(state["m"], dtype=float)
        out.v = np.asarray(state["v"], dtype=float)
        out.t = int(state["t"])
        return out


def ppo_update(batch: Batch, policy: Policy, h: PpoHyper, rng: np.random.Generator,
               optimizer: Adam | None = None) -> tuple[Policy, Adam, dict[str, float]]:
    """Run ``h.update_epochs`` passes of minibatch Adam on the PPO loss.

    ``batch.advantages`` should already be normalised. Inputs are not mutated;
    a non-finite gradient raises :class:`NumericalAbort` before anything is
    written back.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    opt = optimizer.copy() if optimizer is not None else Adam(policy.flat().size, h.lr)
    params = policy.flat()
    ls_index = policy.actor.w1.size + policy.actor.b1.size + policy.actor.w2.size + policy.actor.b2.size
    work = policy.copy()
    stats = {"objective": [], "value_loss": [], "clip_fraction": []}
    n = len(batch)
    mb = min(h.minibatch_size, n)
    for _ in range(h.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            sub = batch.subset(perm[start:start + mb])
            _, grad, diag = loss_and_grad(work, sub, h.clip_eps, h.value_coef)
            if not np.all(np.isfinite(grad)):
                raise NumericalAbort(f"non-finite gradient in PPO update (objective={diag['objective']!r}, "
                                     f"value_loss={diag['value_loss']!r})")
            norm = float(np.sqrt(grad @ grad))
            if norm > h.max_grad_norm:
                grad = grad * (h.max_grad_norm / norm)
            params = opt.step(params, grad)
            params[ls_index] = min(LOG_STD_MAX, max(LOG_STD_MIN, params[ls_index]))
            work = work.with_flat(params)
            for k, v in diag.items():
                stats[k].append(v)
    if not np.all(np.isfinite(params)):
        raise NumericalAbort("PPO update produced non-finite parameters")
    return work, opt, {k: float(np.mean(v)) for k, v in stats.items()}
