"""Centralised training of the shared agent network and the mixer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import BudgetError, ConfigurationError
from ..metrics import accuracy
from ..nn import OptimizerState, ParamVector, optimizer_step
from ..policies import QueryDecision
from .buffer import EpisodeBatch, ReplayBuffer
from .networks import AgentNet, MixerNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarlConfig:
    gamma: float = 0.99
    episode_length: int = 10
    buffer_capacity: int = 1000
    batch_size: int = 32
    lr: float = 0.01
    warmup_steps: int = 32
    update_every: int = 1
    max_update_steps: int = 200
    target_update_period: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.2
    agent_hidden: int = 64
    mixer_hidden: int = 32
    grad_clip: float = 10.0
    clip_targets: bool = True

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("discount must satisfy 0 <= gamma < 1")
        if self.episode_length < 1:
            raise ConfigurationError("episode length must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ConfigurationError("batch size and buffer capacity must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.update_every < 1 or self.max_update_steps < 0 or self.target_update_period < 1:
            raise ConfigurationError("invalid update schedule")
        if not (0 <= self.eps_end <= 1 and 0 <= self.eps_start <= 1):
            raise ConfigurationError("exploration rates must lie in [0, 1]")
        if self.eps_decay_fraction < 0:
            raise ConfigurationError("eps_decay_fraction must be >= 0")

    def epsilon(self, round_index, total_rounds):
        """Linear decay from eps_start to eps_end over the first fraction of rounds."""
        span = self.eps_decay_fraction * total_rounds
        if span <= 0:
            return self.eps_end
        frac = max(0, round_index - 1) / span
        if frac >= 1.0:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * frac


# ---------------------------------------------------------------------------
# environment quantities


def compute_state(model, held) -> np.ndarray:
    """Per-sample confidence of the global model on the held-out set."""
    if len(held) == 0:
        raise ConfigurationError("state needs a non-empty held-out set")
    return model.predict_proba(held.features).max(axis=1)


def compute_observation(model, features, n_arrivals) -> np.ndarray:
    """Class-probability rows for one client's arrivals, flattened in arrival order."""
    features = np.asarray(features)
    if features.shape[0] != n_arrivals:
        raise ConfigurationError(f"observation needs {n_arrivals} arrivals, got {features.shape[0]}")
    return model.predict_proba(features).ravel()


def compute_reward(model_new, model_old, held) -> float:
    return accuracy(model_new, held) - accuracy(model_old, held)


def top_k(q, k):
    """Mask of the ``k`` largest entries along the last axis, ties to the lowest index."""
    q = np.asarray(q)
    order = np.argsort(-q, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(q.shape, dtype=np.float64)
    np.put_along_axis(mask, order, 1.0, axis=-1)
    return mask


def select_action(q, n_query, epsilon, rng):
    """Epsilon-greedy choice of ``n_query`` arrivals from per-arrival Q-values.

    The greedy branch maximises the summed Q of the chosen subset, i.e. takes
    the top ``n_query`` entries. ``rng.random()`` is always drawn so the random
    stream does not depend on which branch is taken.
    """
    q = np.asarray(q, dtype=np.float64)
    if n_query > len(q) or n_query < 0:
        raise BudgetError(f"budget {n_query} exceeds the {len(q)} arrivals")
    explore = rng.random() < epsilon
    if explore:
        idx = rng.choice(len(q), size=n_query, replace=False)
    else:
        idx = np.flatnonzero(top_k(q, n_query))
    return QueryDecision.from_indices(idx, len(q), n_query)


# ---------------------------------------------------------------------------
# TD objective


@dataclass
class TdResult:
    loss: float
    agent_grad: ParamVector
    mixer_grad: ParamVector
    q_tot: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)


def agent_inputs(agent: AgentNet, obs, actions):
    """(B, J, K, ...) observations and actions -> (J, B*K, n_inputs) agent inputs."""
    B, J, K = obs.shape[:3]
    prev = np.zeros_like(actions)
    prev[:, 1:] = actions[:, :-1]
    x = agent.inputs(obs, prev)
    return x.transpose(1, 0, 2, 3).reshape(J, B * K, agent.n_inputs)


def td_loss(batch: EpisodeBatch, agent: AgentNet, mixer: MixerNet, phi, psi, phi_target, psi_target,
            gamma, n_query, clip_targets=False) -> TdResult:
    """Mean squared TD error over every transition of every episode, with gradients.

    Double-Q targets: the online agent picks the next action, the target
    networks evaluate it. Terminal steps bootstrap nothing. With
    ``clip_targets`` each target is clamped to the return attainable from its
    episode position, ``|y_j| <= J - j`` since every reward lies in [-1, 1].
    """
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    B, J, K, Nu = batch.actions.shape
    xs = agent_inputs(agent, batch.obs, batch.actions)
    qs, hs, caches = agent.unroll(phi, xs)             # (J, B*K, Nu)
    qs_t, _, _ = agent.unroll(phi_target, xs)

    acts = batch.actions.transpose(1, 0, 2, 3).reshape(J, B * K, Nu)
    chosen = np.sum(qs * acts, axis=-1).reshape(J, B, K).transpose(1, 0, 2)  # (B, J, K)
    q_tot, cache = mixer.forward(psi, chosen, batch.states)                  # (B, J)

    boot = np.zeros((B, J))
    if J > 1:
        greedy = top_k(qs[1:], n_query)                                      # online picks at j+1
        q_next = np.sum(qs_t[1:] * greedy, axis=-1).reshape(J - 1, B, K).transpose(1, 0, 2)
        boot[:, :-1] = mixer(psi_target, q_next, batch.next_states[:, :-1])
    if not batch.terminals[:, -1].all():
        raise ConfigurationError("last transition of every episode must be terminal")
    y = batch.rewards + gamma * (1.0 - batch.terminals) * boot
    if clip_targets:
        bound = np.arange(J, 0, -1, dtype=np.float64)
        y = np.clip(y, -bound, bound)

    err = q_tot - y
    loss = float(np.mean(err**2))
    d_qtot = 2.0 * err / err.size
    mixer_grad, d_chosen = mixer.backward(psi, cache, d_qtot)
    d_chosen = d_chosen.reshape(B, J, K).transpose(1, 0, 2).reshape(J, B * K)
    dqs = d_chosen[:, :, None] * acts
    agent_grad = agent.backward(phi, hs, caches, dqs)
    return TdResult(loss, agent_grad, mixer_grad, q_tot, y)


# ---------------------------------------------------------------------------
# learner state


class Learner:
    """Online and target networks plus their Adam states."""

    def __init__(self, agent: AgentNet, mixer: MixerNet, cfg: MarlConfig, rng):
        self.agent = agent
        self.mixer = mixer
        self.cfg = cfg
        self.phi = agent.init(rng)
        self.psi = mixer.init(rng)
        self.phi_target = self.phi.copy()
        self.psi_target = self.psi.copy()
        self.opt_phi = OptimizerState("adam", cfg.lr, len(self.phi))
        self.opt_psi = OptimizerState("adam", cfg.lr, len(self.psi))
        self.updates = 0
        self.losses = []

    def sync_targets(self):
        self.phi_target = self.phi.copy()
        self.psi_target = self.psi.copy()

    def update(self, batch: EpisodeBatch, n_query) -> float:
        res = td_loss(batch, self.agent, self.mixer, self.phi, self.psi,
                      self.phi_target, self.psi_target, self.cfg.gamma, n_query, self.cfg.clip_targets)
        ga, gm = res.agent_grad, res.mixer_grad
        if self.cfg.grad_clip > 0:
            norm = float(np.sqrt(ga.values @ ga.values + gm.values @ gm.values))
            if norm > self.cfg.grad_clip:
                scale = self.cfg.grad_clip / norm
                ga = ga.with_values(ga.values * scale)
                gm = gm.with_values(gm.values * scale)
        self.phi = optimizer_step(self.opt_phi, self.phi, ga)
        self.psi = optimizer_step(self.opt_psi, self.psi, gm)
        self.updates += 1
        if self.updates % self.cfg.target_update_period == 0:
            self.sync_targets()
        self.losses.append(res.loss)
        return res.loss

    def state_dict(self):
        return {
            "phi": self.phi.values.copy(), "psi": self.psi.values.copy(),
            "phi_target": self.phi_target.values.copy(), "psi_target": self.psi_target.values.copy(),
            "opt_phi": self.opt_phi.state_dict(), "opt_psi": self.opt_psi.state_dict(),
            "updates": self.updates, "losses": list(self.losses),
        }

    def load_state_dict(self, state):
        self.phi = self.phi.with_values(state["phi"])
        self.psi = self.psi.with_values(state["psi"])
        self.phi_target = self.phi.with_values(state["phi_target"])
        self.psi_target = self.psi.with_values(state["psi_target"])
        self.opt_phi = OptimizerState.from_state_dict(state["opt_phi"])
        self.opt_psi = OptimizerState.from_state_dict(state["opt_psi"])
        self.updates = state["updates"]
        self.losses = list(state["losses"])


def train_policies(buffer: ReplayBuffer, learner: Learner, cfg: MarlConfig, n_query, rng):
    """Run up to ``cfg.max_update_steps`` TD updates; no-op until the buffer is big enough.

    Returns the list of per-step losses (empty when nothing was trained).
    """
    if buffer.n_transitions <= cfg.batch_size:
        return []
    losses = []
    for _ in range(cfg.max_update_steps):
        batch = buffer.sample(cfg.batch_size, rng)
        losses.append(learner.update(batch, n_query))
    return losses
