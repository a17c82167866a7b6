"""The tracking MDP: features, reward, episodes, and the batched env."""

from .env import ClipBank, TaskConfig, TrackingEnv
from .episode import (
    REASONS,
    CurriculumConfig,
    EpisodeConfig,
    anneal_assist,
    check_termination,
    episode_config,
    init_episode,
    termination_codes,
)
from .features import ObsNoise, build_critic_input, build_observation, critic_dim, obs_dim, priv_dim
from .reward import PENALTY_TERMS, TRACKING_TERMS, RewardWeights, compute_reward, kernel, reward_terms

__all__ = [
    "ClipBank", "TaskConfig", "TrackingEnv", "REASONS", "CurriculumConfig", "EpisodeConfig", "anneal_assist",
    "check_termination", "episode_config", "init_episode", "termination_codes", "ObsNoise",
    "build_critic_input", "build_observation", "critic_dim", "obs_dim", "priv_dim", "PENALTY_TERMS",
    "TRACKING_TERMS", "RewardWeights", "compute_reward", "kernel", "reward_terms",
]
