"""Synthetic datasets, non-IID partitioning, held-out splits and client streams."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AuditViolation, ConfigurationError, DataError, PartitionError, StreamExhausted


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


class Dataset:
    """Rows of features with integer labels and stable sample ids."""

    def __init__(self, features, labels, n_classes, ids=None):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2:
            raise DataError("features must be a 2-D array")
        if labels.shape != (features.shape[0],):
            raise DataError("one label per feature row required")
        if n_classes < 1:
            raise DataError("class count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise DataError(f"labels must lie in [0, {n_classes})")
        if not np.all(np.isfinite(features)):
            raise DataError("features must be finite")
        self.features = features
        self.labels = labels
        self.n_classes = int(n_classes)
        self.ids = np.arange(len(labels), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Sample(self.features[i], int(self.labels[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.features[index], self.labels[index], self.n_classes, self.ids[index])

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def histogram(self):
        counts = self.class_counts().astype(np.float64)
        return counts / counts.sum()

    def to_csv(self, path, seed=None):
        """Write ``path`` (feature columns then label) plus ``path.json`` manifest."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(self.dim)] + ["label"])
            for x, y in zip(self.features, self.labels):
                w.writerow([repr(float(v)) for v in x] + [int(y)])
        manifest = {"dim": self.dim, "classes": self.n_classes, "n": len(self), "seed": seed}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        man_path = path.with_suffix(path.suffix + ".json")
        manifest = json.loads(man_path.read_text()) if man_path.exists() else {}
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise DataError(f"{path}: no samples")
        body = np.array(rows[1:], dtype=np.float64)
        feats, labels = body[:, :-1], body[:, -1].astype(np.int64)
        n_classes = manifest.get("classes", int(labels.max()) + 1)
        if "dim" in manifest and manifest["dim"] != feats.shape[1]:
            raise DataError(f"{path}: manifest dim {manifest['dim']} != {feats.shape[1]} columns")
        return cls(feats, labels, n_classes)


def make_synthetic_dataset(n_classes, dim, per_class_count, spread, seed, center_scale=1.0):
    """Isotropic Gaussian blobs, one per class, shuffled.

    Class centres are drawn from N(0, center_scale^2 I); samples around each
    centre have standard deviation ``spread``.
    """
    if n_classes < 2 or dim < 2:
        raise ConfigurationError("need at least 2 classes and 2 dimensions")
    if not spread > 0:
        raise ConfigurationError("spread must be positive")
    if per_class_count < 1:
        raise DataError("per_class_count must be >= 1; the dataset would be empty")
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=center_scale, size=(n_classes, dim))
    labels = np.repeat(np.arange(n_classes), per_class_count)
    feats = centers[labels] + rng.normal(scale=spread, size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(feats[order], labels[order], n_classes)


# ---------------------------------------------------------------------------
# partitioning


def partition_dirichlet(dataset: Dataset, n_clients, alpha, seed, max_retries=100):
    """Label-skewed split: each class is spread over clients by a Dir(alpha) draw.

    A draw that leaves any client empty is discarded and redrawn.
    """
    if n_clients < 1:
        raise ConfigurationError("client count must be >= 1")
    if not alpha > 0:
        raise ConfigurationError("Dirichlet alpha must be positive")
    if len(dataset) < n_clients:
        raise PartitionError(f"{len(dataset)} samples cannot cover {n_clients} clients")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.n_classes)]
    for _ in range(max_retries):
        shards = [[] for _ in range(n_clients)]
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(n_clients, float(alpha)))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for k, part in enumerate(np.split(idx, cuts)):
                shards[k].append(part)
        shards = [np.sort(np.concatenate(s)) if s else np.zeros(0, np.int64) for s in shards]
        if all(s.size for s in shards):
            return [dataset.subset(s) for s in shards]
    raise PartitionError(f"no Dirichlet draw without empty clients after {max_retries} attempts")


def partition_quantity(dataset: Dataset, n_clients, classes_per_client, seed):
    """Each client holds exactly ``classes_per_client`` classes, split evenly."""
    C, n_cls = int(classes_per_client), dataset.n_classes
    if not 1 <= C <= n_cls:
        raise ConfigurationError(f"classes per client must lie in [1, {n_cls}]")
    if n_clients * C < n_cls:
        raise PartitionError(f"{n_clients} clients x {C} classes cannot cover {n_cls} classes")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_cls)
    owned = [[int(perm[(k * C + j) % n_cls]) for j in range(C)] for k in range(n_clients)]
    holders = {c: [k for k in range(n_clients) if c in owned[k]] for c in range(n_cls)}
    shards = [[] for _ in range(n_clients)]
    for c in range(n_cls):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        if idx.size < len(holders[c]):
            raise PartitionError(f"class {c} has {idx.size} samples for {len(holders[c])} clients")
        for k, part in zip(holders[c], np.array_split(idx, len(holders[c]))):
            shards[k].append(part)
    return [dataset.subset(np.sort(np.concatenate(s))) for s in shards]


def split_held_out(dataset: Dataset, held_size, seed):
    """Stratified random split into ``(rest, held)``; held is ``held_size`` samples."""
    n = len(dataset)
    if held_size < 1:
        raise ConfigurationError("held-out size must be >= 1")
    if held_size >= n:
        raise ConfigurationError(f"held-out size {held_size} must be below dataset size {n}")
    rng = np.random.default_rng(seed)
    counts = dataset.class_counts()
    quota = counts * held_size / n
    take = np.floor(quota).astype(np.int64)
    # largest remainder, ties to lower class index
    short = held_size - take.sum()
    order = np.lexsort((np.arange(len(quota)), -(quota - take)))
    take[order[:short]] += 1
    held = []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        held.append(rng.choice(idx, size=take[c], replace=False))
    held = np.sort(np.concatenate(held))
    mask = np.ones(n, dtype=bool)
    mask[held] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(held)


# ---------------------------------------------------------------------------
# streams and the label oracle


class LabelOracle:
    """Holds hidden labels; the only way to read one is a logged query.

    ``log`` keeps one ``(round, client, ids)`` entry per query call.
    """

    def __init__(self, ids, labels):
        ids = np.asarray(ids, dtype=np.int64)
        self._labels = dict(zip(ids.tolist(), np.asarray(labels, dtype=np.int64).tolist()))
        self.queried = set()
        self.log = []
        self.violations = 0

    def query(self, client, round_index, ids):
        ids = [int(i) for i in ids]
        for i in ids:
            if i not in self._labels:
                raise DataError(f"sample {i} unknown to the oracle")
            if i in self.queried:
                raise AuditViolation(f"sample {i} queried twice")
        self.log.append((int(round_index), int(client), ids))
        self.queried.update(ids)
        return np.array([self._labels[i] for i in ids], dtype=np.int64)

    def reveal(self, ids):
        """Labels of samples that were already queried."""
        out = []
        for i in ids:
            i = int(i)
            if i not in self.queried:
                self.violations += 1
                raise AuditViolation(f"label of sample {i} read without a logged query")
            out.append(self._labels[i])
        return np.array(out, dtype=np.int64)

    def calls(self, min_round=1):
        return sum(len(ids) for r, _, ids in self.log if r >= min_round)

    def state_dict(self):
        return {"log": [(r, k, list(ids)) for r, k, ids in self.log], "violations": self.violations}

    def load_state_dict(self, state):
        self.log = [(r, k, list(ids)) for r, k, ids in state["log"]]
        self.queried = {i for _, _, ids in self.log for i in ids}
        self.violations = state["violations"]


@dataclass
class Arrivals:
    client: int
    round: int
    ids: np.ndarray
    features: np.ndarray
    oracle: LabelOracle

    def __len__(self):
        return len(self.ids)

    def query(self, positions):
        """Ask the oracle for the labels at the given arrival positions."""
        positions = np.asarray(positions, dtype=np.int64)
        return self.oracle.query(self.client, self.round, self.ids[positions])


class ClientStream:
    """One client's unlabeled arrivals, in a seeded shuffled order."""

    def __init__(self, client, shard: Dataset, n_arrivals, oracle, seed):
        if n_arrivals < 1:
            raise ConfigurationError("arrivals per round must be >= 1")
        order = np.random.default_rng(seed).permutation(len(shard))
        self.client = int(client)
        self.ids = shard.ids[order]
        self.features = shard.features[order]
        self.n_arrivals = int(n_arrivals)
        self.oracle = oracle
        self.cursor = 0

    def __len__(self):
        return len(self.ids)

    @property
    def remaining(self):
        return len(self.ids) - self.cursor

    def take(self, count, round_index):
        if count > self.remaining:
            raise StreamExhausted(
                f"client {self.client}: {self.remaining} samples left, {count} needed in round {round_index}"
            )
        lo, hi = self.cursor, self.cursor + count
        self.cursor = hi
        return Arrivals(self.client, round_index, self.ids[lo:hi], self.features[lo:hi], self.oracle)


def next_arrivals(stream: ClientStream, round_index) -> Arrivals:
    """Next ``n_arrivals`` samples of the stream; labels stay behind the oracle."""
    return stream.take(stream.n_arrivals, round_index)


def mean_pairwise_label_kl(shards, n_classes, eps=1e-6):
    """Mean KL divergence over ordered pairs of distinct client label histograms."""
    from .metrics import kl_divergence

    hists = [np.bincount(s.labels, minlength=n_classes) for s in shards]
    vals = [kl_divergence(hists[i], hists[j], eps)
            for i in range(len(hists)) for j in range(len(hists)) if i != j]
    return float(np.mean(vals)) if vals else 0.0
