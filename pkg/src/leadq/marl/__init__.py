"""Learned query policies: recurrent agents trained through a monotone mixer."""
from .buffer import Episode, EpisodeBatch, ReplayBuffer, Transition
from .learner import (Learner, MarlConfig, compute_observation, compute_reward, compute_state,
                      select_action, td_loss, top_k, train_policies)
from .networks import AgentNet, MixerNet
from .policy import LeadqPolicy

__all__ = [
    "AgentNet", "Episode", "EpisodeBatch", "LeadqPolicy", "Learner", "MarlConfig", "MixerNet",
    "ReplayBuffer", "Transition", "compute_observation", "compute_reward", "compute_state",
    "select_action", "td_loss", "top_k", "train_policies",
]
