"""The learned query policy wired into the round loop."""
from __future__ import annotations

import numpy as np

from ..policies import QueryPolicy, RoundContext, query_warmup
from ..seeding import rng_for
from .buffer import Episode, ReplayBuffer, Transition
from .learner import (Learner, MarlConfig, compute_observation, compute_state, select_action,
                      train_policies)
from .networks import AgentNet, MixerNet


class LeadqPolicy(QueryPolicy):
    """Decentralised execution of a shared recurrent Q-network, trained centrally.

    Execution for client ``k`` reads only that client's observation, hidden
    state and the shared agent parameters. The held-out set, global state,
    reward and mixer are touched only in :meth:`after_round` (training side).
    """

    name = "leadq"

    def __init__(self, cfg: MarlConfig, n_clients, n_arrivals, n_classes, held, seed,
                 total_rounds):
        self.cfg = cfg
        self.n_clients = int(n_clients)
        self.n_arrivals = int(n_arrivals)
        self.held = held
        self.seed = seed
        self.total_rounds = int(total_rounds)
        self.agent = AgentNet(n_arrivals, n_classes, cfg.agent_hidden)
        self.mixer = MixerNet(n_clients, len(held), cfg.mixer_hidden)
        self.learner = Learner(self.agent, self.mixer, cfg, rng_for(seed, "leadq-init"))
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.timestep = 0
        self.hidden = np.zeros((self.n_clients, self.agent.n_hidden))
        self.prev_action = np.zeros((self.n_clients, self.n_arrivals))
        self.episode = []
        self.pending = None
        self.last_q = None
        self.last_losses = []
        self.transition_log = []

    @property
    def position(self):
        return self.timestep % self.cfg.episode_length

    @property
    def warming_up(self):
        return self.timestep < self.cfg.warmup_steps

    def agent_q(self, obs, hidden, prev_action):
        """Per-arrival Q-values and next hidden state for one client."""
        x = self.agent.inputs(obs, prev_action)[None, :]
        q, h, _ = self.agent.step(self.learner.phi, x, hidden[None, :])
        return q[0], h[0]

    def decide(self, ctx: RoundContext):
        if self.position == 0:
            self.hidden[:] = 0.0
            self.prev_action[:] = 0.0
        obs = np.stack([compute_observation(ctx.model, a.features, self.n_arrivals) for a in ctx.arrivals])
        if self.pending is not None and not self.pending.terminal:
            self.pending.next_obs = obs.copy()
        eps = self.cfg.epsilon(ctx.round, self.total_rounds)
        decisions, qs = [], []
        for k, arrivals in enumerate(ctx.arrivals):
            q, self.hidden[k] = self.agent_q(obs[k], self.hidden[k], self.prev_action[k])
            qs.append(q)
            if self.warming_up:
                d = query_warmup(arrivals.features, ctx.model, ctx.n_query)
            else:
                d = select_action(q, ctx.n_query, eps, rng_for(self.seed, "leadq-explore", ctx.round, k))
            decisions.append(d)
            self.prev_action[k] = d.mask
        self.last_q = qs
        self._obs = obs
        return decisions

    def scores(self, ctx):
        return [q.tolist() for q in self.last_q] if self.last_q is not None else super().scores(ctx)

    def after_round(self, *, ctx, decisions, model_after, reward, **_):
        terminal = self.position == self.cfg.episode_length - 1
        t = Transition(
            state=compute_state(ctx.model, self.held),
            obs=self._obs,
            actions=np.stack([d.mask for d in decisions]).astype(np.float64),
            reward=float(reward),
            next_state=compute_state(model_after, self.held),
            next_obs=np.zeros_like(self._obs),
            terminal=terminal,
            position=self.position,
        )
        self.episode.append(t)
        self.pending = t
        self.transition_log.append({
            "round": ctx.round, "position": t.position, "reward": t.reward, "terminal": terminal,
            "actions": [d.indices.tolist() for d in decisions],
        })
        if terminal:
            self.buffer.add(Episode.from_transitions(self.episode))
            self.episode = []
        self.timestep += 1
        self.last_losses = []
        if self.timestep % self.cfg.update_every == 0:
            self.last_losses = train_policies(self.buffer, self.learner, self.cfg, ctx.n_query,
                                              rng_for(self.seed, "leadq-train", ctx.round))

    def state_dict(self):
        return {
            "learner": self.learner.state_dict(), "buffer": self.buffer.state_dict(),
            "timestep": self.timestep, "hidden": self.hidden.copy(), "prev_action": self.prev_action.copy(),
            "episode": list(self.episode), "pending": self.pending, "transition_log": list(self.transition_log),
        }

    def load_state_dict(self, state):
        self.learner.load_state_dict(state["learner"])
        self.buffer.load_state_dict(state["buffer"])
        self.timestep = state["timestep"]
        self.hidden = state["hidden"].copy()
        self.prev_action = state["prev_action"].copy()
        self.episode = list(state["episode"])
        self.pending = state["pending"]
        if self.episode:
            self.pending = self.episode[-1]
        self.transition_log = list(state["transition_log"])
