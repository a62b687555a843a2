"""One seeded run of the query -> label -> train -> measure loop."""
from __future__ import annotations

import time

import numpy as np

from . import data as datamod
from .config import ExperimentConfig
from .errors import BudgetError, ConfigurationError, StreamExhausted
from .fl import ClientTrainState, GlobalModel, incorporate_labels, run_training_round
from .marl.learner import compute_reward
from .metrics import RoundRecord, accuracy, kl_divergence, label_histogram
from .nn import MlpSpec, init_mlp
from .policies import RoundContext, make_policy
from .seeding import rng_for, seed_for

STATE_VERSION = 1


def build_dataset(cfg: ExperimentConfig, seed):
    d = cfg.data
    if d.source == "synthetic":
        return datamod.make_synthetic_dataset(d.n_classes, d.dim, d.per_class, d.spread,
                                              seed_for(seed, "dataset"), d.center_scale)
    return datamod.Dataset.from_csv(d.source)


def build_splits(cfg: ExperimentConfig, seed):
    """``(train, held, test, shards)``; identical for every policy under one seed."""
    full = build_dataset(cfg, seed)
    rest, test = datamod.split_held_out(full, cfg.data.test_size, seed_for(seed, "test-split"))
    train, held = datamod.split_held_out(rest, cfg.held_out_size, seed_for(seed, "held-split"))
    p = cfg.partition
    if p.kind == "dirichlet":
        shards = datamod.partition_dirichlet(train, cfg.clients, p.alpha, seed_for(seed, "partition"))
    else:
        shards = datamod.partition_quantity(train, cfg.clients, p.classes_per_client,
                                            seed_for(seed, "partition"))
    return train, held, test, shards


def model_spec(cfg: ExperimentConfig, dim, n_classes):
    widths = (dim,) + cfg.model.hidden + (n_classes,)
    return MlpSpec(widths, (cfg.model.activation,) * len(cfg.model.hidden))


class Simulation:
    """State of one (config, seed, policy) run; :meth:`step` plays one round."""

    def __init__(self, cfg: ExperimentConfig, seed, policy=None):
        self.cfg = cfg
        self.seed = int(seed)
        self.policy_kind = (policy or cfg.policy).replace("-", "_")
        self.train, self.held, self.test, self.shards = build_splits(cfg, self.seed)
        self.n_classes = self.train.n_classes
        self.target_hist = self.train.histogram()
        self.oracle = datamod.LabelOracle(self.train.ids, self.train.labels)
        self.streams = [
            datamod.ClientStream(k, shard, cfg.n_arrivals, self.oracle, seed_for(self.seed, "stream", k))
            for k, shard in enumerate(self.shards)
        ]
        self.spec = model_spec(cfg, self.train.dim, self.n_classes)
        self.clients = [ClientTrainState.empty(k, self.train.dim, seed_for(self.seed, "client", k))
                        for k in range(cfg.clients)]
        self.round = 0
        self.records = []
        self.queried_ids = []
        self.policy = self._make_policy()
        self.model = self._initial_model()

    def _make_policy(self):
        if self.policy_kind == "leadq":
            return make_policy("leadq", cfg=self.cfg.leadq, n_clients=self.cfg.clients,
                               n_arrivals=self.cfg.n_arrivals, n_classes=self.n_classes,
                               held=self.held, seed=self.seed, total_rounds=self.cfg.rounds)
        return make_policy(self.policy_kind)

    def _initial_model(self):
        """Seed each client with its first arrivals, then train round 0."""
        if self.cfg.initial_labeled:
            for k, stream in enumerate(self.streams):
                arr = stream.take(self.cfg.initial_labeled, 0)
                labels = arr.query(np.arange(len(arr)))
                self.clients[k] = incorporate_labels(self.clients[k], arr.ids, arr.features, labels)
        model = GlobalModel(self.spec, init_mlp(self.spec, rng_for(self.seed, "model-init", 0)), 0)
        return run_training_round(model, self.clients, self.cfg.fl, self.seed, 0)

    @property
    def done(self):
        return self.round >= self.cfg.rounds

    def can_step(self):
        return all(s.remaining >= self.cfg.n_arrivals for s in self.streams)

    def step(self):
        """Play one round; returns ``(record, decision_log_lines)``."""
        cfg = self.cfg
        r = self.round + 1
        if not self.can_step():
            short = [s.client for s in self.streams if s.remaining < cfg.n_arrivals]
            raise StreamExhausted(f"round {r}: streams of clients {short} are exhausted")
        t0 = time.perf_counter()
        arrivals = [datamod.next_arrivals(s, r) for s in self.streams]
        ctx = RoundContext(r, self.seed, self.model, arrivals, list(self.clients), cfg.n_query)
        decisions = self.policy.decide(ctx)
        scores = self.policy.scores(ctx)

        round_ids = []
        log_lines = []
        for k, (arr, dec) in enumerate(zip(arrivals, decisions)):
            if dec.n_selected != cfg.n_query or len(dec) != len(arr):
                raise BudgetError(f"round {r} client {k}: {dec.n_selected} selected, budget {cfg.n_query}")
            idx = dec.indices
            labels = arr.query(idx)
            self.clients[k] = incorporate_labels(self.clients[k], arr.ids[idx], arr.features[idx], labels,
                                                 budget=cfg.n_query)
            round_ids.extend(arr.ids[idx].tolist())
            log_lines.append({"seed": self.seed, "round": r, "client": k, "policy": self.policy_kind,
                              "selected": idx.tolist(), "sample_ids": arr.ids[idx].tolist(),
                              "scores": scores[k]})

        before = self.model
        after = run_training_round(before, self.clients, cfg.fl, self.seed, r)
        reward = compute_reward(after, before, self.held)
        self.queried_ids.extend(round_ids)
        if round_ids:
            kl_round = kl_divergence(label_histogram(round_ids, self.oracle, self.n_classes),
                                     self.target_hist, cfg.kl_smoothing)
            kl_cum = kl_divergence(label_histogram(self.queried_ids, self.oracle, self.n_classes),
                                   self.target_hist, cfg.kl_smoothing)
        else:
            kl_round = kl_cum = 0.0
        self.policy.after_round(ctx=ctx, decisions=decisions, model_after=after, reward=reward)
        self.model = after
        self.round = r
        rec = RoundRecord(
            round=r, policy=self.policy_kind, seed=self.seed,
            test_acc=accuracy(after, self.test), held_acc=accuracy(after, self.held),
            reward=reward, kl_round=kl_round, kl_cumulative=kl_cum,
            labels_cumulative=len(self.queried_ids), wall_clock=time.perf_counter() - t0,
        )
        self.records.append(rec)
        return rec, log_lines

    # -- checkpointing -----------------------------------------------------

    def state_dict(self):
        return {
            "version": STATE_VERSION,
            "round": self.round,
            "theta": self.model.params.values.copy(),
            "clients": [(c.features, c.labels, c.ids, c.seed, c.n_queried) for c in self.clients],
            "cursors": [s.cursor for s in self.streams],
            "oracle": self.oracle.state_dict(),
            "queried_ids": list(self.queried_ids),
            "records": list(self.records),
            "policy": self.policy.state_dict(),
        }

    def load_state_dict(self, state):
        self.round = state["round"]
        self.model = GlobalModel(self.spec, self.model.params.with_values(state["theta"]), self.round)
        self.clients = [ClientTrainState(k, f, l, i, s, q) for k, (f, l, i, s, q) in enumerate(state["clients"])]
        for s, c in zip(self.streams, state["cursors"]):
            s.cursor = c
        self.oracle.load_state_dict(state["oracle"])
        self.queried_ids = list(state["queried_ids"])
        self.records = list(state["records"])
        self.policy.load_state_dict(state["policy"])


def leadq_round(sim: Simulation):
    """One full learned-policy round: query, label, train, reward, store, train policies."""
    if sim.policy_kind != "leadq":
        raise ConfigurationError(f"leadq_round needs the leadq policy, got {sim.policy_kind!r}")
    return sim.step()
