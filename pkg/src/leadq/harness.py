"""Experiment driver: runs seeds, writes records/decisions/checkpoints, resumes."""
from __future__ import annotations

import hashlib
import json
import logging
import pickle
from pathlib import Path

from . import config as configmod
from .config import ExperimentConfig
from .errors import CheckpointError, StreamExhausted
from .metrics import RECORD_SCHEMA_VERSION, RecordWriter, write_summary
from .simulation import STATE_VERSION, Simulation

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
SWEEP_POLICIES = ("random", "uncertainty", "coreset_local", "coreset_global", "leadq")


def _records_path(out, seed):
    return Path(out) / f"records_seed{seed}.csv"


def _ckpt_dir(out, seed):
    return Path(out) / "checkpoints" / f"seed{seed}"


def _append_jsonl(path, rows):
    if not rows:
        return
    with open(path, "a") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _truncate_jsonl(path, seed, last_round):
    """Keep lines of other seeds and of ``seed`` up to ``last_round``."""
    path = Path(path)
    if not path.exists():
        return
    kept = []
    for line in path.read_text().splitlines():
        row = json.loads(line)
        if row.get("seed") != seed or row.get("round", 0) <= last_round:
            kept.append(line + "\n")
    path.write_text("".join(kept))


def save_checkpoint(sim: Simulation, out):
    """Write ``state.pkl`` and the model params, then the manifest last."""
    d = _ckpt_dir(out, sim.seed)
    d.mkdir(parents=True, exist_ok=True)
    blob = pickle.dumps(sim.state_dict(), protocol=pickle.HIGHEST_PROTOCOL)
    tmp = d / "state.pkl.tmp"
    tmp.write_bytes(blob)
    tmp.replace(d / "state.pkl")
    sim.model.params.save(d / "theta")
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "state_version": STATE_VERSION,
        "seed": sim.seed,
        "policy": sim.policy_kind,
        "round": sim.round,
        "rounds_total": sim.cfg.rounds,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "rng": "keyed generators derived from (seed, stream, round); no mutable RNG state",
    }
    tmp = d / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    tmp.replace(d / "manifest.json")


def load_checkpoint(path):
    """Return ``(manifest, state)``; raises CheckpointError on any inconsistency."""
    d = Path(path)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{d}: no checkpoint manifest") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{d}/manifest.json is corrupt: {exc}") from None
    if not isinstance(manifest, dict):
        raise CheckpointError(f"{d}/manifest.json is corrupt: not an object")
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("state_version") != STATE_VERSION:
        raise CheckpointError(
            f"{d}: checkpoint format {manifest.get('format')}/{manifest.get('state_version')} is "
            f"incompatible with {CHECKPOINT_FORMAT}/{STATE_VERSION}"
        )
    try:
        blob = (d / "state.pkl").read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{d}: state file missing") from None
    if hashlib.sha256(blob).hexdigest() != manifest.get("sha256"):
        raise CheckpointError(f"{d}: state file does not match the manifest checksum")
    state = pickle.loads(blob)
    if state.get("round") != manifest.get("round"):
        raise CheckpointError(f"{d}: manifest round disagrees with state")
    return manifest, state


def _write_status(out, status):
    (Path(out) / "status.json").write_text(json.dumps(status, indent=2, sort_keys=True))


def _drive(sim: Simulation, out, writer: RecordWriter, stop_after=None):
    """Advance ``sim`` to its configured end. Returns a status string."""
    cfg = sim.cfg
    out = Path(out)
    while not sim.done:
        if stop_after is not None and sim.round >= stop_after:
            save_checkpoint(sim, out)
            return "stopped"
        try:
            rec, lines = sim.step()
        except StreamExhausted as exc:
            log.warning("seed %d: %s; stopping early", sim.seed, exc)
            save_checkpoint(sim, out)
            return "partial"
        writer.append(rec)
        _append_jsonl(out / "decisions.jsonl", lines)
        if sim.policy_kind == "leadq":
            row = dict(sim.policy.transition_log[-1], seed=sim.seed)
            _append_jsonl(out / "transitions.jsonl", [row])
        if sim.round % cfg.checkpoint_every == 0:
            save_checkpoint(sim, out)
    save_checkpoint(sim, out)
    return "complete"


def _finish(out, cfg, statuses, records):
    write_summary(Path(out) / "summary.csv", records)
    _write_status(out, {
        "policy": cfg.policy,
        "rounds": cfg.rounds,
        "record_schema": RECORD_SCHEMA_VERSION,
        "seeds": {str(s): st for s, st in statuses.items()},
        "complete": all(st == "complete" for st in statuses.values()),
    })


def run_experiment(cfg: ExperimentConfig, stop_after=None):
    """Run every seed of ``cfg`` into ``cfg.out``. Returns the per-seed records."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(configmod.serialize(cfg))
    for name in ("decisions.jsonl", "transitions.jsonl"):
        (out / name).unlink(missing_ok=True)
    statuses, records = {}, {}
    for seed in cfg.seeds:
        sim = Simulation(cfg, seed)
        writer = RecordWriter(_records_path(out, seed), out / f"records_seed{seed}.jsonl")
        statuses[seed] = _drive(sim, out, writer, stop_after)
        records[seed] = sim.records
    _finish(out, cfg, statuses, records)
    return records


def run_sweep(cfg: ExperimentConfig, policies=SWEEP_POLICIES, stop_after=None):
    """Same data, partitions, streams and initial model per seed for every policy."""
    results = {}
    for policy in policies:
        sub = cfg.replace(policy=policy, out=str(Path(cfg.out) / policy))
        results[policy] = run_experiment(sub, stop_after)
    return results


def resume(run_dir, rounds=None, stop_after=None):
    """Continue a run from its checkpoints; finished seeds are left untouched."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.cfg"
    if not cfg_path.exists():
        raise CheckpointError(f"{run_dir}: not a run directory (config.cfg missing)")
    cfg = configmod.load(cfg_path).replace(out=str(run_dir))
    if rounds is not None:
        cfg = cfg.replace(rounds=rounds)
    loaded = {}
    for seed in cfg.seeds:
        ckpt = _ckpt_dir(run_dir, seed)
        if (ckpt / "manifest.json").exists():
            loaded[seed] = load_checkpoint(ckpt)
    if rounds is not None:
        (run_dir / "config.cfg").write_text(configmod.serialize(cfg))
    statuses, records = {}, {}
    for seed in cfg.seeds:
        sim = Simulation(cfg, seed)
        if seed in loaded:
            manifest, state = loaded[seed]
            if manifest["policy"] != sim.policy_kind:
                raise CheckpointError(f"seed {seed}: checkpoint is for policy {manifest['policy']}")
            sim.load_state_dict(state)
            _truncate_jsonl(run_dir / "decisions.jsonl", seed, sim.round)
            _truncate_jsonl(run_dir / "transitions.jsonl", seed, sim.round)
        writer = RecordWriter(_records_path(run_dir, seed), run_dir / f"records_seed{seed}.jsonl",
                              existing=sim.records)
        if sim.done:
            statuses[seed] = "complete"
        else:
            statuses[seed] = _drive(sim, run_dir, writer, stop_after)
        records[seed] = sim.records
    _finish(run_dir, cfg, statuses, records)
    return records
