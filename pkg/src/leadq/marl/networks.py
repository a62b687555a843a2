"""Shared recurrent agent network and the monotone state-conditioned mixer."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..nn import GruCellSpec, ParamVector, gru_backward, gru_forward, init_gru, init_uniform


class AgentNet:
    """GRU cell followed by a linear head emitting one Q-value per arrival.

    Input per step is the flattened observation concatenated with the
    previous action mask.
    """

    def __init__(self, n_arrivals, n_classes, n_hidden):
        self.n_arrivals = int(n_arrivals)
        self.n_classes = int(n_classes)
        self.n_inputs = self.n_arrivals * self.n_classes + self.n_arrivals
        self.cell = GruCellSpec(self.n_inputs, int(n_hidden))

    @property
    def n_hidden(self):
        return self.cell.n_hidden

    def layout(self):
        return self.cell.layout("gru.") + [
            ("head.W", (self.n_hidden, self.n_arrivals)),
            ("head.b", (self.n_arrivals,)),
        ]

    def init(self, rng) -> ParamVector:
        gru = init_gru(self.cell, rng, prefix="gru.")
        head = init_uniform(self.layout()[4:], rng)
        return ParamVector(np.concatenate([gru.values, head.values]), self.layout())

    def inputs(self, obs, prev_action):
        obs = np.asarray(obs, dtype=np.float64)
        prev_action = np.asarray(prev_action, dtype=np.float64)
        if obs.shape[-1] != self.n_arrivals * self.n_classes or prev_action.shape[-1] != self.n_arrivals:
            raise ConfigurationError(
                f"agent expects observation width {self.n_arrivals * self.n_classes} and action width "
                f"{self.n_arrivals}, got {obs.shape[-1]} and {prev_action.shape[-1]}"
            )
        return np.concatenate([obs, prev_action], axis=-1)

    def step(self, params, x, h):
        """One step for a batch of rows: returns ``(q, h_new, cache)``."""
        if x.shape[-1] != self.n_inputs or h.shape[-1] != self.n_hidden:
            raise ConfigurationError("agent input or hidden width mismatch")
        h_new, cache = gru_forward(self.cell, params, x, h, prefix="gru.")
        q = h_new @ params["head.W"] + params["head.b"]
        return q, h_new, cache

    def unroll(self, params, xs):
        """Run a sequence ``xs`` of shape (J, rows, n_inputs) from a zero hidden state."""
        J, rows = xs.shape[0], xs.shape[1]
        h = np.zeros((rows, self.n_hidden))
        qs = np.empty((J, rows, self.n_arrivals))
        hs = np.empty((J, rows, self.n_hidden))
        caches = []
        for j in range(J):
            qs[j], h, cache = self.step(params, xs[j], h)
            hs[j] = h
            caches.append(cache)
        return qs, hs, caches

    def backward(self, params, hs, caches, dqs) -> ParamVector:
        """BPTT over a whole unrolled sequence given dLoss/dq per step."""
        grads = {name: np.zeros(shape) for name, shape in self.layout()}
        Wh = params["head.W"]
        dh = np.zeros_like(hs[0])
        for j in range(len(caches) - 1, -1, -1):
            dq = dqs[j]
            grads["head.W"] += hs[j].T @ dq
            grads["head.b"] += dq.sum(axis=0)
            dh = dh + dq @ Wh.T
            _, dh = gru_backward(self.cell, params, caches[j], dh, grads, prefix="gru.")
        return ParamVector(np.concatenate([grads[n].ravel() for n, _ in self.layout()]), self.layout())


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


class MixerNet:
    """Two-layer mixer whose weights come from linear hypernetworks of the state.

    Q_tot = elu(Q . |W1(s)| + b1(s)) . |W2(s)| + b2(s); the absolute values
    keep Q_tot nondecreasing in every agent's Q.
    """

    def __init__(self, n_agents, state_dim, n_hidden=32):
        self.n_agents = int(n_agents)
        self.state_dim = int(state_dim)
        self.n_hidden = int(n_hidden)

    def layout(self):
        S, K, E = self.state_dim, self.n_agents, self.n_hidden
        return [
            ("w1.W", (S, K * E)), ("w1.b", (K * E,)),
            ("b1.W", (S, E)), ("b1.b", (E,)),
            ("w2.W", (S, E)), ("w2.b", (E,)),
            ("b2.W", (S, 1)), ("b2.b", (1,)),
        ]

    def init(self, rng) -> ParamVector:
        """Fan-in uniform, with the weight generators shrunk by 1/K and 1/E.

        The state is all-positive, so plain fan-in init yields mixing weights
        whose summed gain dQ_tot/dQ_k is far above 1/gamma and the bootstrapped
        targets blow up. The shrink brings the initial gain to O(1).
        """
        params = init_uniform(self.layout(), rng)
        for seg in ("w1.W", "w1.b"):
            params[seg][...] /= self.n_agents
        for seg in ("w2.W", "w2.b"):
            params[seg][...] /= self.n_hidden
        return params

    def forward(self, params, q, s):
        """``q`` (..., K), ``s`` (..., S) -> Q_tot (...,) and a cache."""
        lead = q.shape[:-1]
        q2 = q.reshape(-1, self.n_agents)
        s2 = s.reshape(-1, self.state_dim)
        K, E = self.n_agents, self.n_hidden
        a1 = s2 @ params["w1.W"] + params["w1.b"]
        w1 = np.abs(a1).reshape(-1, K, E)
        c1 = s2 @ params["b1.W"] + params["b1.b"]
        pre = np.einsum("bk,bke->be", q2, w1) + c1
        hid = _elu(pre)
        a2 = s2 @ params["w2.W"] + params["w2.b"]
        w2 = np.abs(a2)
        c2 = s2 @ params["b2.W"] + params["b2.b"]
        out = np.sum(hid * w2, axis=1) + c2[:, 0]
        return out.reshape(lead), (q2, s2, a1, w1, pre, hid, a2, w2)

    def __call__(self, params, q, s):
        return self.forward(params, q, s)[0]

    def backward(self, params, cache, dout):
        """Returns ``(param_grads, dq)`` for upstream gradient ``dout``."""
        q2, s2, a1, w1, pre, hid, a2, w2 = cache
        d = dout.reshape(-1)
        K, E = self.n_agents, self.n_hidden
        g = {}
        g["b2.W"] = s2.T @ d[:, None]
        g["b2.b"] = np.array([d.sum()])
        da2 = d[:, None] * hid * np.sign(a2)
        g["w2.W"] = s2.T @ da2
        g["w2.b"] = da2.sum(axis=0)
        dpre = d[:, None] * w2 * np.where(pre > 0, 1.0, np.exp(np.minimum(pre, 0.0)))
        g["b1.W"] = s2.T @ dpre
        g["b1.b"] = dpre.sum(axis=0)
        dw1 = q2[:, :, None] * dpre[:, None, :]
        da1 = (dw1 * np.sign(a1).reshape(-1, K, E)).reshape(-1, K * E)
        g["w1.W"] = s2.T @ da1
        g["w1.b"] = da1.sum(axis=0)
        dq = np.einsum("be,bke->bk", dpre, w1)
        grads = ParamVector(np.concatenate([g[n].ravel() for n, _ in self.layout()]), self.layout())
        return grads, dq
