"""Query strategies: which arrivals each client sends to the labeling oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BudgetError, ConfigurationError
from .seeding import rng_for

POLICY_KINDS = ("random", "uncertainty", "coreset_local", "coreset_global", "warmup", "leadq")


@dataclass(frozen=True, eq=False)
class QueryDecision:
    """Binary mask over one client's arrivals."""

    mask: np.ndarray

    def __eq__(self, other):
        return isinstance(other, QueryDecision) and np.array_equal(self.mask, other.mask)

    __hash__ = None

    @classmethod
    def from_indices(cls, indices, n_arrivals, n_query=None):
        mask = np.zeros(n_arrivals, dtype=bool)
        mask[np.asarray(indices, dtype=np.int64)] = True
        if n_query is not None and mask.sum() != n_query:
            raise BudgetError(f"decision selects {int(mask.sum())} samples, budget is {n_query}")
        return cls(mask)

    @property
    def indices(self):
        return np.flatnonzero(self.mask)

    def __len__(self):
        return len(self.mask)

    @property
    def n_selected(self):
        return int(self.mask.sum())


def _check_budget(n_arrivals, n_query):
    if n_query < 0:
        raise BudgetError("query budget must be non-negative")
    if n_query > n_arrivals:
        raise BudgetError(f"budget {n_query} exceeds the {n_arrivals} arrivals")


def confidence(probs):
    """Maximum class probability per row."""
    return np.asarray(probs).max(axis=1)


def lowest_scores(scores, n_query):
    """Indices of the ``n_query`` smallest scores, ties to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    _check_budget(len(scores), n_query)
    return np.sort(np.argsort(scores, kind="stable")[:n_query])


def query_uncertainty(features, model, n_query) -> QueryDecision:
    """Least-confident sampling: lowest max-class probability."""
    probs = model.predict_proba(features)
    return QueryDecision.from_indices(lowest_scores(confidence(probs), n_query), len(probs))


def query_warmup(features, model, n_query) -> QueryDecision:
    """Warm-up rule used before the learned policies take over.

    Each arrival is scored by its own prediction score (max class
    probability) and the ``n_query`` lowest-scoring arrivals are taken.
    """
    probs = model.predict_proba(features)
    return QueryDecision.from_indices(lowest_scores(confidence(probs), n_query), len(probs))


def query_random(n_arrivals, n_query, rng) -> QueryDecision:
    _check_budget(n_arrivals, n_query)
    return QueryDecision.from_indices(rng.choice(n_arrivals, size=n_query, replace=False), n_arrivals)


def query_coreset(unlabeled, labeled, n_query):
    """Greedy farthest-first picks (in pick order) from ``unlabeled``.

    Each step takes the row with the largest Euclidean distance to its nearest
    neighbour in ``labeled`` plus the rows already picked. With nothing to
    measure against, the first row is taken.
    """
    U = np.asarray(unlabeled, dtype=np.float64)
    if U.shape[0] == 0:
        raise BudgetError("coreset selection from an empty pool")
    _check_budget(U.shape[0], n_query)
    L = np.asarray(labeled, dtype=np.float64).reshape(-1, U.shape[1])
    return list(_kernels.farthest_first(U, L, n_query))


def query_coreset_local(unlabeled, labeled, n_query) -> QueryDecision:
    picks = query_coreset(unlabeled, labeled, n_query)
    return QueryDecision.from_indices(picks, len(unlabeled), n_query)


def query_coreset_global(pools, labeled_sets, n_query):
    """Server-side farthest-first over all clients' arrivals, ``n_query`` per client.

    Distances are conditioned on the union of every client's labeled data.
    This needs raw data from every client, so it only serves as a
    privacy-violating reference.
    """
    pools = [np.asarray(p, dtype=np.float64) for p in pools]
    for p in pools:
        _check_budget(len(p), n_query)
    U = np.vstack(pools)
    groups = np.concatenate([np.full(len(p), k, dtype=np.int64) for k, p in enumerate(pools)])
    dim = U.shape[1]
    labeled = [np.asarray(l, dtype=np.float64).reshape(-1, dim) for l in labeled_sets]
    L = np.vstack(labeled) if labeled else np.zeros((0, dim))
    picks = _kernels.farthest_first(U, L, n_query * len(pools), groups, [n_query] * len(pools))
    starts = np.concatenate([[0], np.cumsum([len(p) for p in pools])])
    out = []
    for k, p in enumerate(pools):
        mine = [i - starts[k] for i in picks if groups[i] == k]
        out.append(QueryDecision.from_indices(mine, len(p), n_query))
    return out


# ---------------------------------------------------------------------------
# policy objects used by the experiment driver


@dataclass
class RoundContext:
    """Everything visible at the round barrier.

    ``arrivals[k]`` and ``labeled[k]`` belong to client ``k``; local policies
    only ever receive their own entry.
    """

    round: int
    seed: int
    model: object
    arrivals: list
    labeled: list
    n_query: int


class QueryPolicy:
    name = "base"
    privacy_violating = False

    def decide(self, ctx: RoundContext):
        return [self.decide_client(k, ctx.arrivals[k], ctx.labeled[k], ctx) for k in range(len(ctx.arrivals))]

    def decide_client(self, client, arrivals, labeled, ctx):
        raise NotImplementedError

    def scores(self, ctx: RoundContext):
        """Per-arrival scores for the decision log (None when not applicable)."""
        return [None] * len(ctx.arrivals)

    def after_round(self, **kwargs):
        pass

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass


class RandomPolicy(QueryPolicy):
    name = "random"

    def decide_client(self, client, arrivals, labeled, ctx):
        return query_random(len(arrivals), ctx.n_query, rng_for(ctx.seed, "random-query", ctx.round, client))


class UncertaintyPolicy(QueryPolicy):
    name = "uncertainty"

    def decide_client(self, client, arrivals, labeled, ctx):
        return query_uncertainty(arrivals.features, ctx.model, ctx.n_query)

    def scores(self, ctx):
        return [confidence(ctx.model.predict_proba(a.features)).tolist() for a in ctx.arrivals]


class WarmupPolicy(UncertaintyPolicy):
    name = "warmup"

    def decide_client(self, client, arrivals, labeled, ctx):
        return query_warmup(arrivals.features, ctx.model, ctx.n_query)


class LocalCoresetPolicy(QueryPolicy):
    name = "coreset_local"

    def decide_client(self, client, arrivals, labeled, ctx):
        return query_coreset_local(arrivals.features, labeled.features, ctx.n_query)


class GlobalCoresetPolicy(QueryPolicy):
    name = "coreset_global"
    privacy_violating = True

    def decide(self, ctx):
        return query_coreset_global([a.features for a in ctx.arrivals],
                                    [c.features for c in ctx.labeled], ctx.n_query)


def make_policy(kind, **kwargs) -> QueryPolicy:
    kind = kind.replace("-", "_")
    simple = {
        "random": RandomPolicy,
        "uncertainty": UncertaintyPolicy,
        "warmup": WarmupPolicy,
        "coreset_local": LocalCoresetPolicy,
        "coreset_global": GlobalCoresetPolicy,
    }
    if kind in simple:
        return simple[kind]()
    if kind == "leadq":
        from .marl.policy import LeadqPolicy

        return LeadqPolicy(**kwargs)
    raise ConfigurationError(f"unknown policy {kind!r}; choose from {POLICY_KINDS}")
