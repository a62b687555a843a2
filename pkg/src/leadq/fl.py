"""FedAvg training over clients' growing labeled sets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AuditViolation, BudgetError, ConfigurationError, NumericError
from .nn import MlpSpec, ParamVector, forward_mlp, init_mlp, loss_and_grad, softmax
from .seeding import rng_for

log = logging.getLogger(__name__)

RESET_POLICIES = ("keep_previous", "random_reinit")
AGGREGATIONS = ("weighted", "unweighted")


@dataclass
class GlobalModel:
    spec: MlpSpec
    params: ParamVector
    round: int = 0

    def predict_proba(self, features):
        return softmax(forward_mlp(self.spec, self.params, features))


@dataclass(frozen=True)
class RoundConfig:
    iterations: int = 30
    lr: float = 0.01
    local_epochs: int = 1
    batch_size: int = 64
    reset: str = "random_reinit"
    aggregation: str = "weighted"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("training iterations per round must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.local_epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("local epochs must be >= 0 and batch size >= 1")
        if self.reset not in RESET_POLICIES:
            raise ConfigurationError(f"reset policy must be one of {RESET_POLICIES}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass(frozen=True)
class ClientTrainState:
    """A client's labeled set. ``seed`` keys its mini-batch shuffles."""

    client: int
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    seed: int = 0
    n_queried: int = 0

    @classmethod
    def empty(cls, client, dim, seed=0):
        return cls(client, np.zeros((0, dim)), np.zeros(0, np.int64), np.zeros(0, np.int64), seed)

    def __len__(self):
        return len(self.labels)


@dataclass
class LocalUpdate:
    grad: ParamVector
    weight: int
    skipped: bool = False
    losses: list = field(default_factory=list)


def local_train(client: ClientTrainState, theta: ParamVector, spec: MlpSpec, lr, epochs,
                batch_size, rng) -> LocalUpdate:
    """Run ``epochs`` passes of mini-batch SGD and report the displacement as a gradient.

    The returned gradient is ``(theta - theta_after) / lr`` so that a server
    step with the same ``lr`` reproduces the local trajectory for one client.
    """
    n = len(client)
    if n == 0:
        return LocalUpdate(theta.zeros_like(), 0, skipped=True)
    if epochs == 0:
        return LocalUpdate(theta.zeros_like(), n)
    w = theta.values.copy()
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            loss, g = loss_and_grad(spec, theta.with_values(w), client.features[idx], client.labels[idx])
            w -= lr * g.values
            losses.append(loss)
    return LocalUpdate(theta.with_values((theta.values - w) / lr), n, losses=losses)


def aggregate_and_update(theta: ParamVector, updates, lr, weighted=True) -> ParamVector:
    """Server step ``theta - lr * sum_k w_k g_k`` with clients summed in index order.

    Weighted mode uses ``w_k = n_k / sum n``; it is evaluated as
    ``g_ref + sum_k w_k (g_k - g_ref)`` with ``g_ref`` the first contributing
    client, which returns ``g_ref`` bit-for-bit when all contributions agree.
    """
    for k, up in enumerate(updates):
        if len(up.grad) != len(theta):
            raise ConfigurationError(
                f"client {k}: gradient length {len(up.grad)} != model length {len(theta)}"
            )
    if not weighted:
        total = np.zeros_like(theta.values)
        for up in updates:
            total = total + up.grad.values
        return theta.with_values(theta.values - lr * total)
    live = [up for up in updates if up.weight > 0]
    if not live:
        return theta.copy()
    n_total = float(sum(up.weight for up in live))
    ref = live[0].grad.values
    avg = ref.copy()
    for up in live[1:]:
        avg = avg + (up.weight / n_total) * (up.grad.values - ref)
    return theta.with_values(theta.values - lr * avg)


def run_training_round(model: GlobalModel, clients, cfg: RoundConfig, seed, round_index) -> GlobalModel:
    """One round of FedAvg: optional reset, then ``cfg.iterations`` local/aggregate steps."""
    if not any(len(c) for c in clients):
        log.warning("round %d: no client has labeled data; model left unchanged", round_index)
        return replace(model, round=round_index)
    if cfg.reset == "random_reinit":
        theta = init_mlp(model.spec, rng_for(seed, "model-init", round_index))
    else:
        theta = model.params.copy()
    for t in range(cfg.iterations):
        updates = [
            local_train(c, theta, model.spec, cfg.lr, cfg.local_epochs, cfg.batch_size,
                        rng_for(c.seed, "local-batches", round_index, t))
            for c in clients
        ]
        theta = aggregate_and_update(theta, updates, cfg.lr, cfg.aggregation == "weighted")
    if not theta.is_finite():
        raise NumericError(f"round {round_index}: global model diverged")
    return GlobalModel(model.spec, theta, round_index)


def incorporate_labels(client: ClientTrainState, ids, features, labels, budget=None) -> ClientTrainState:
    """Add newly labeled samples; duplicates are rejected."""
    ids = np.asarray(ids, dtype=np.int64)
    if budget is not None and len(ids) != budget:
        raise BudgetError(f"client {client.client}: {len(ids)} labels queried, budget is {budget}")
    if len(ids) == 0:
        return client
    if len(set(ids.tolist())) != len(ids) or np.isin(ids, client.ids).any():
        raise AuditViolation(f"client {client.client}: sample already in the labeled set")
    return replace(
        client,
        features=np.vstack([client.features, np.asarray(features, dtype=np.float64)]),
        labels=np.concatenate([client.labels, np.asarray(labels, dtype=np.int64)]),
        ids=np.concatenate([client.ids, ids]),
        n_queried=client.n_queried + len(ids),
    )
