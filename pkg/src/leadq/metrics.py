"""Accuracy, label-distribution divergence and per-round experiment records."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DataError
from .nn import forward_mlp

RECORD_SCHEMA_VERSION = 1


def predict_labels(model, features):
    logits = forward_mlp(model.spec, model.params, features)
    return np.argmax(logits, axis=1)  # first maximum wins ties


def accuracy(model, dataset) -> float:
    if len(dataset) == 0:
        raise DataError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict_labels(model, dataset.features) == dataset.labels))


def kl_divergence(queried, target, eps_smooth=1e-6) -> float:
    """KL(P || Q) in nats, after adding ``eps_smooth`` to every bin and renormalising."""
    p = np.asarray(queried, dtype=np.float64)
    q = np.asarray(target, dtype=np.float64)
    if p.shape != q.shape:
        raise DataError(f"histograms have different class counts: {p.shape} vs {q.shape}")
    p = p / p.sum() + eps_smooth
    q = q / q.sum() + eps_smooth
    p /= p.sum()
    q /= q.sum()
    nz = p > 0
    return float(max(np.sum(p[nz] * np.log(p[nz] / q[nz])), 0.0))


def label_histogram(ids, oracle, n_classes) -> np.ndarray:
    """Normalised histogram of labels of already-queried samples."""
    ids = list(ids)
    if not ids:
        raise DataError("histogram of no samples")
    labels = oracle.reveal(ids)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    return counts / counts.sum()


@dataclass
class RoundRecord:
    round: int
    policy: str
    seed: int
    test_acc: float
    held_acc: float
    reward: float
    kl_round: float
    kl_cumulative: float
    labels_cumulative: int
    wall_clock: float = 0.0

    def csv_row(self):
        return [self.round, self.policy, self.seed, repr(self.test_acc), repr(self.held_acc),
                repr(self.reward), repr(self.kl_round), repr(self.kl_cumulative), self.labels_cumulative]


# wall_clock is excluded from the CSV so repeated runs stay byte-identical
CSV_COLUMNS = [f.name for f in fields(RoundRecord) if f.name != "wall_clock"]


class RecordWriter:
    """Append-only per-round records as CSV (and optionally JSON lines)."""

    def __init__(self, csv_path, jsonl_path=None, existing=()):
        self.csv_path = csv_path
        self.jsonl_path = jsonl_path
        self.records = list(existing)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in self.records:
                w.writerow(rec.csv_row())
        if jsonl_path is not None:
            with open(jsonl_path, "w") as fh:
                for rec in self.records:
                    fh.write(json.dumps(asdict(rec)) + "\n")

    def append(self, rec: RoundRecord):
        if self.records and rec.round <= self.records[-1].round:
            raise ValueError(f"round {rec.round} does not follow {self.records[-1].round}")
        self.records.append(rec)
        with open(self.csv_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(rec.csv_row())
        if self.jsonl_path is not None:
            with open(self.jsonl_path, "a") as fh:
                fh.write(json.dumps(asdict(rec)) + "\n")


def read_records(csv_path):
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(RoundRecord(
            round=int(row["round"]), policy=row["policy"], seed=int(row["seed"]),
            test_acc=float(row["test_acc"]), held_acc=float(row["held_acc"]),
            reward=float(row["reward"]), kl_round=float(row["kl_round"]),
            kl_cumulative=float(row["kl_cumulative"]), labels_cumulative=int(row["labels_cumulative"]),
        ))
    return out


def write_summary(path, records_by_seed):
    """Per-round mean and standard deviation across seeds (rounds present in every seed)."""
    metrics = ["test_acc", "held_acc", "reward", "kl_round", "kl_cumulative"]
    if not records_by_seed:
        rounds = []
    else:
        common = set.intersection(*[{r.round for r in recs} for recs in records_by_seed.values()])
        rounds = sorted(common)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "policy", "n_seeds"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")])
        for r in rounds:
            rows = [next(x for x in recs if x.round == r) for recs in records_by_seed.values()]
            line = [r, rows[0].policy, len(rows)]
            for m in metrics:
                vals = np.array([getattr(x, m) for x in rows])
                line += [repr(float(vals.mean())), repr(float(vals.std()))]
            w.writerow(line)
