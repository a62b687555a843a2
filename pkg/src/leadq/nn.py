"""Small fixed-architecture networks over flat float64 parameter vectors.

Covers the dense task model, the GRU agent cell, softmax cross-entropy,
exact reverse-mode gradients and the SGD/Adam update rules.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DataError, NumericError

ACTIVATIONS = {"identity": _kernels.IDENTITY, "relu": _kernels.RELU, "tanh": _kernels.TANH}


class ParamVector:
    """Flat float64 vector partitioned into named, shaped segments."""

    __slots__ = ("values", "layout", "_offsets")

    def __init__(self, values, layout):
        self.layout = tuple((str(name), tuple(int(s) for s in shape)) for name, shape in layout)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ConfigurationError("parameter values must be a flat vector")
        total = sum(math.prod(shape) for _, shape in self.layout)
        if values.size != total:
            raise ConfigurationError(f"layout describes {total} parameters, got {values.size}")
        self.values = values
        offsets = {}
        start = 0
        for name, shape in self.layout:
            if name in offsets:
                raise ConfigurationError(f"duplicate segment name {name!r}")
            size = math.prod(shape)
            offsets[name] = (start, start + size, shape)
            start += size
        self._offsets = offsets

    @classmethod
    def zeros(cls, layout):
        size = sum(math.prod(tuple(shape)) for _, shape in layout)
        return cls(np.zeros(size), layout)

    @classmethod
    def from_segments(cls, segments):
        """Build from an ordered mapping ``name -> array``."""
        layout = [(name, np.shape(arr)) for name, arr in segments.items()]
        if not segments:
            return cls(np.zeros(0), layout)
        values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in segments.values()])
        return cls(values, layout)

    def __len__(self):
        return self.values.size

    def __getitem__(self, name):
        try:
            lo, hi, shape = self._offsets[name]
        except KeyError:
            raise KeyError(f"no parameter segment {name!r}") from None
        return self.values[lo:hi].reshape(shape)

    def names(self):
        return [name for name, _ in self.layout]

    def segment_of(self, index):
        for name, (lo, hi, _) in self._offsets.items():
            if lo <= index < hi:
                return name
        raise IndexError(index)

    def copy(self):
        return ParamVector(self.values.copy(), self.layout)

    def with_values(self, values):
        return ParamVector(values, self.layout)

    def zeros_like(self):
        return ParamVector(np.zeros_like(self.values), self.layout)

    def same_layout(self, other):
        return self.layout == other.layout

    def is_finite(self):
        return bool(np.all(np.isfinite(self.values)))

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"ParamVector(n={self.values.size}, segments={self.names()})"

    def manifest(self):
        return [{"name": name, "shape": list(shape)} for name, shape in self.layout]

    def to_json(self):
        # repr() of a Python float round-trips exactly
        return json.dumps({"layout": self.manifest(), "values": [float(v) for v in self.values]})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        layout = [(seg["name"], tuple(seg["shape"])) for seg in obj["layout"]]
        return cls(np.array(obj["values"], dtype=np.float64), layout)

    def save(self, path_stem):
        """Write ``<stem>.bin`` (little-endian float64) and ``<stem>.json`` (segment manifest)."""
        stem = str(path_stem)
        self.values.astype("<f8").tofile(stem + ".bin")
        with open(stem + ".json", "w") as fh:
            json.dump({"dtype": "<f8", "layout": self.manifest()}, fh)

    @classmethod
    def load(cls, path_stem):
        stem = str(path_stem)
        with open(stem + ".json") as fh:
            man = json.load(fh)
        values = np.fromfile(stem + ".bin", dtype=man.get("dtype", "<f8")).astype(np.float64)
        return cls(values, [(s["name"], tuple(s["shape"])) for s in man["layout"]])


# ---------------------------------------------------------------------------
# dense networks


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    activations: tuple = ()

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ConfigurationError("an MLP needs at least input and output widths")
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"MLP widths must be >= 1, got {widths}")
        acts = tuple(self.activations) if self.activations else ("relu",) * (len(widths) - 2)
        if len(acts) != len(widths) - 2:
            raise ConfigurationError(
                f"{len(widths) - 2} hidden layers need {len(widths) - 2} activations, got {len(acts)}"
            )
        for a in acts:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        object.__setattr__(self, "activations", acts)

    @property
    def n_inputs(self):
        return self.widths[0]

    @property
    def n_outputs(self):
        return self.widths[-1]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def layout(self):
        out = []
        for i in range(self.n_layers):
            out.append((f"W{i}", (self.widths[i], self.widths[i + 1])))
            out.append((f"b{i}", (self.widths[i + 1],)))
        return out

    def activation_codes(self):
        return [ACTIVATIONS[a] for a in self.activations] + [_kernels.IDENTITY]


def init_uniform(layout, rng, fan_in=None):
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) per segment.

    ``fan_in`` maps a segment name to its fan-in; by default a 2-D segment uses
    its first dimension and a bias uses the preceding weight's fan-in.
    """
    segments = {}
    last_fan = 1
    for name, shape in layout:
        if fan_in is not None and name in fan_in:
            f = fan_in[name]
        elif len(shape) == 2:
            f = shape[0]
        else:
            f = last_fan
        last_fan = f
        bound = math.sqrt(1.0 / max(f, 1))
        segments[name] = rng.uniform(-bound, bound, size=shape)
    return ParamVector.from_segments(segments)


def init_mlp(spec: MlpSpec, rng) -> ParamVector:
    return init_uniform(spec.layout(), rng)


def _check_mlp(spec, params, batch):
    if params.layout != tuple((n, tuple(s)) for n, s in spec.layout()):
        raise ConfigurationError("parameter layout does not match the MLP spec")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != spec.n_inputs:
        raise ConfigurationError(
            f"batch must have shape (n, {spec.n_inputs}), got {batch.shape}"
        )
    return batch


def _unpack(spec, params):
    ws = [params[f"W{i}"] for i in range(spec.n_layers)]
    bs = [params[f"b{i}"] for i in range(spec.n_layers)]
    return ws, bs


def forward_mlp(spec: MlpSpec, params: ParamVector, batch) -> np.ndarray:
    batch = _check_mlp(spec, params, batch)
    ws, bs = _unpack(spec, params)
    return _kernels.mlp_forward(ws, bs, spec.activation_codes(), batch)


def softmax(logits):
    """Row-wise softmax of a vector or matrix, max-shifted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels, n_rows, n_classes):
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise DataError(f"expected {n_rows} labels, got shape {labels.shape}")
    if n_rows and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range for {n_classes} classes")
    return labels.astype(np.int64)


def cross_entropy_loss(logits, labels) -> float:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    m = logits.max(axis=1)
    lse = np.log(np.exp(logits - m[:, None]).sum(axis=1)) + m
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def loss_and_grad(spec: MlpSpec, params: ParamVector, batch, labels):
    batch = _check_mlp(spec, params, batch)
    labels = _check_labels(labels, batch.shape[0], spec.n_outputs)
    ws, bs = _unpack(spec, params)
    loss, dws, dbs = _kernels.mlp_loss_grad(ws, bs, spec.activation_codes(), batch, labels)
    parts = []
    for dw, db in zip(dws, dbs):
        parts.append(np.asarray(dw).ravel())
        parts.append(np.asarray(db).ravel())
    return loss, params.with_values(np.concatenate(parts))


def grad(spec: MlpSpec, params: ParamVector, batch, labels) -> ParamVector:
    return loss_and_grad(spec, params, batch, labels)[1]


# ---------------------------------------------------------------------------
# recurrent cell


@dataclass(frozen=True)
class GruCellSpec:
    n_inputs: int
    n_hidden: int

    def __post_init__(self):
        if self.n_inputs < 1 or self.n_hidden < 1:
            raise ConfigurationError("GRU widths must be >= 1")

    def layout(self, prefix=""):
        h3 = 3 * self.n_hidden
        return [
            (prefix + "W_ih", (self.n_inputs, h3)),
            (prefix + "W_hh", (self.n_hidden, h3)),
            (prefix + "b_ih", (h3,)),
            (prefix + "b_hh", (h3,)),
        ]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(spec: GruCellSpec, params: ParamVector, x, h, prefix=""):
    """Batched GRU update; returns ``(h_new, cache)`` for :func:`gru_backward`.

    Gate order in the fused matrices is reset, update, candidate:
        r = sigma(x W_ir + b_ir + h W_hr + b_hr)
        z = sigma(x W_iz + b_iz + h W_hz + b_hz)
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h
    """
    H = spec.n_hidden
    gi = x @ params[prefix + "W_ih"] + params[prefix + "b_ih"]
    gh = h @ params[prefix + "W_hh"] + params[prefix + "b_hh"]
    r = _sigmoid(gi[..., :H] + gh[..., :H])
    z = _sigmoid(gi[..., H : 2 * H] + gh[..., H : 2 * H])
    hn = gh[..., 2 * H :]
    n = np.tanh(gi[..., 2 * H :] + r * hn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, r, z, n, hn)


def gru_backward(spec: GruCellSpec, params: ParamVector, cache, dh_new, grads: dict, prefix=""):
    """Accumulate parameter gradients into ``grads`` and return ``(dx, dh)``."""
    x, h, r, z, n, hn = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dan = dn * (1.0 - n * n)
    dar = dan * hn * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    dgi = np.concatenate([dar, daz, dan], axis=-1)
    dgh = np.concatenate([dar, daz, dan * r], axis=-1)
    x2 = x.reshape(-1, x.shape[-1])
    h2 = h.reshape(-1, h.shape[-1])
    gi2 = dgi.reshape(-1, dgi.shape[-1])
    gh2 = dgh.reshape(-1, dgh.shape[-1])
    grads[prefix + "W_ih"] += x2.T @ gi2
    grads[prefix + "W_hh"] += h2.T @ gh2
    grads[prefix + "b_ih"] += gi2.sum(axis=0)
    grads[prefix + "b_hh"] += gh2.sum(axis=0)
    dx = dgi @ params[prefix + "W_ih"].T
    dh = dh + dgh @ params[prefix + "W_hh"].T
    return dx, dh


def gru_step(spec: GruCellSpec, params: ParamVector, input, hidden) -> np.ndarray:
    x = np.asarray(input, dtype=np.float64)
    h = np.asarray(hidden, dtype=np.float64)
    if x.shape[-1] != spec.n_inputs or h.shape[-1] != spec.n_hidden:
        raise ConfigurationError(
            f"GRU expects input width {spec.n_inputs} and hidden width {spec.n_hidden}, "
            f"got {x.shape[-1]} and {h.shape[-1]}"
        )
    for name, shape in spec.layout():
        if params[name].shape != shape:
            raise ConfigurationError(f"segment {name} has shape {params[name].shape}, expected {shape}")
    return gru_forward(spec, params, x, h)[0]


def init_gru(spec: GruCellSpec, rng, prefix="") -> ParamVector:
    # PyTorch convention: every GRU tensor uses 1/hidden as fan-in
    layout = spec.layout(prefix)
    return init_uniform(layout, rng, fan_in={name: spec.n_hidden for name, _ in layout})


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    kind: str
    lr: float
    n_params: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.kind == "adam":
            if self.m is None:
                self.m = np.zeros(self.n_params)
            if self.v is None:
                self.v = np.zeros(self.n_params)

    def state_dict(self):
        d = {"kind": self.kind, "lr": self.lr, "n_params": self.n_params, "beta1": self.beta1,
             "beta2": self.beta2, "eps": self.eps, "step": self.step}
        if self.kind == "adam":
            d["m"] = self.m.copy()
            d["v"] = self.v.copy()
        return d

    @classmethod
    def from_state_dict(cls, d):
        return cls(**d)


def optimizer_step(state: OptimizerState, params: ParamVector, grads: ParamVector) -> ParamVector:
    """Return updated parameters; advances ``state`` in place."""
    g = grads.values
    if g.shape != params.values.shape:
        raise ConfigurationError(f"gradient length {g.size} != parameter length {params.values.size}")
    bad = ~np.isfinite(g)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite gradient in segment {params.segment_of(idx)!r}")
    state.step += 1
    if state.kind == "sgd":
        return params.with_values(params.values - state.lr * g)
    if state.m.shape != g.shape:
        raise ConfigurationError("Adam moments do not match parameter length")
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1**state.step)
    vhat = state.v / (1.0 - state.beta2**state.step)
    return params.with_values(params.values - state.lr * mhat / (np.sqrt(vhat) + state.eps))
