"""Residual policy learning: actor/critic networks, PPO with GAE, reward shaping."""

from .network import MlpParams
from .observation import NORMALIZATION, OBS_DIM, build_observation
from .policy import Policy, actor_forward, critic_forward, gaussian_logprob
from .ppo import Adam, Batch, PpoHyper, Transition, compute_advantages, gae, ppo_update
from .reward import RewardWeights, reward

__all__ = [
    "Adam", "Batch", "MlpParams", "NORMALIZATION", "OBS_DIM", "Policy", "PpoHyper", "RewardWeights",
    "Transition", "actor_forward", "build_observation", "compute_advantages", "critic_forward", "gae",
    "gaussian_logprob", "ppo_update", "reward",
]
