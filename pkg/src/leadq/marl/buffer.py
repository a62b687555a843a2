"""Episode storage for off-policy training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


@dataclass
class Transition:
    state: np.ndarray          # (S,)
    obs: np.ndarray            # (K, N_u * C)
    actions: np.ndarray        # (K, N_u) 0/1
    reward: float
    next_state: np.ndarray     # (S,)
    next_obs: np.ndarray       # (K, N_u * C); zeros on the terminal step
    terminal: bool
    position: int


@dataclass
class Episode:
    """J consecutive transitions stacked along the first axis."""

    states: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray

    @classmethod
    def from_transitions(cls, transitions):
        if not transitions or not transitions[-1].terminal:
            raise ConfigurationError("an episode must end with a terminal transition")
        for j, t in enumerate(transitions):
            if t.position != j:
                raise ConfigurationError(f"transition at slot {j} has position {t.position}")
            if not np.isfinite(t.reward):
                raise ConfigurationError("non-finite reward")
        return cls(
            states=np.stack([t.state for t in transitions]),
            obs=np.stack([t.obs for t in transitions]),
            actions=np.stack([t.actions for t in transitions]).astype(np.float64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.stack([t.next_state for t in transitions]),
            next_obs=np.stack([t.next_obs for t in transitions]),
            terminals=np.array([t.terminal for t in transitions], dtype=bool),
        )

    def __len__(self):
        return len(self.rewards)


@dataclass
class EpisodeBatch:
    states: np.ndarray       # (B, J, S)
    obs: np.ndarray          # (B, J, K, D)
    actions: np.ndarray      # (B, J, K, N_u)
    rewards: np.ndarray      # (B, J)
    next_states: np.ndarray  # (B, J, S)
    terminals: np.ndarray    # (B, J)

    @classmethod
    def stack(cls, episodes):
        if not episodes:
            raise ConfigurationError("empty episode batch")
        return cls(
            states=np.stack([e.states for e in episodes]),
            obs=np.stack([e.obs for e in episodes]),
            actions=np.stack([e.actions for e in episodes]),
            rewards=np.stack([e.rewards for e in episodes]),
            next_states=np.stack([e.next_states for e in episodes]),
            terminals=np.stack([e.terminals for e in episodes]),
        )

    def __len__(self):
        return self.rewards.shape[0]


class ReplayBuffer:
    """Ring buffer holding only complete episodes."""

    def __init__(self, capacity=1000):
        if capacity < 1:
            raise ConfigurationError("buffer capacity must be >= 1 episode")
        self.capacity = int(capacity)
        self.episodes = []
        self._next = 0

    def __len__(self):
        return len(self.episodes)

    @property
    def n_transitions(self):
        return sum(len(e) for e in self.episodes)

    def add(self, episode: Episode):
        if len(self.episodes) < self.capacity:
            self.episodes.append(episode)
        else:
            self.episodes[self._next] = episode
        self._next = (self._next + 1) % self.capacity

    def sample(self, n_episodes, rng) -> EpisodeBatch:
        if not self.episodes:
            raise ConfigurationError("cannot sample from an empty buffer")
        n = min(int(n_episodes), len(self.episodes))
        idx = np.sort(rng.choice(len(self.episodes), size=n, replace=False))
        return EpisodeBatch.stack([self.episodes[i] for i in idx])

    def state_dict(self):
        return {"capacity": self.capacity, "next": self._next, "episodes": list(self.episodes)}

    def load_state_dict(self, state):
        self.capacity = state["capacity"]
        self._next = state["next"]
        self.episodes = list(state["episodes"])
