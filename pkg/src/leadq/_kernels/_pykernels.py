"""Pure-numpy reference kernels.

Same signatures as the compiled ``_ckernels`` module. Activation codes:
0 = identity, 1 = relu, 2 = tanh.
"""
import numpy as np

IDENTITY, RELU, TANH = 0, 1, 2


def _activate(z, code):
    if code == RELU:
        return np.maximum(z, 0.0)
    if code == TANH:
        return np.tanh(z)
    return z


def mlp_forward(weights, biases, acts, X):
    a = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        a = _activate(z, acts[i]) if i < last else z
    return a


def mlp_loss_grad(weights, biases, acts, X, y):
    """Mean softmax cross-entropy and its gradient w.r.t. every weight and bias."""
    n = X.shape[0]
    last = len(weights) - 1
    inputs = []
    outs = []
    a = X
    for i, (W, b) in enumerate(zip(weights, biases)):
        inputs.append(a)
        z = a @ W + b
        a = _activate(z, acts[i]) if i < last else z
        outs.append(a)
    logits = a
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(s[:, 0]) + m[:, 0] - logits[rows, y]))

    dz = e / s
    dz[rows, y] -= 1.0
    dz /= n
    dWs = [None] * len(weights)
    dbs = [None] * len(weights)
    for i in range(last, -1, -1):
        dWs[i] = inputs[i].T @ dz
        dbs[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ weights[i].T
            h = outs[i - 1]
            code = acts[i - 1]
            if code == RELU:
                dz = da * (h > 0.0)
            elif code == TANH:
                dz = da * (1.0 - h * h)
            else:
                dz = da
    return loss, dWs, dbs


def farthest_first(U, L, n_query, groups=None, quota=None):
    """Greedy max-min selection of ``n_query`` rows of ``U``.

    ``L`` anchors the initial distances (may have zero rows). When ``groups``
    is given, candidate ``i`` belongs to group ``groups[i]`` and at most
    ``quota[g]`` picks are taken from group ``g``. Ties go to the lowest row.
    An empty anchor set on the first pick selects the lowest eligible row.
    """
    n = U.shape[0]
    if L.shape[0] > 0:
        diff = U[:, None, :] - L[None, :, :]
        mind = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).min(axis=1)
    else:
        mind = np.full(n, np.inf)
    eligible = np.ones(n, dtype=bool)
    left = None
    if groups is not None:
        left = np.array(quota, dtype=np.int64)
        eligible &= left[groups] > 0
    picks = []
    for _ in range(n_query):
        if not eligible.any():
            break
        score = np.where(eligible, mind, -1.0)
        if np.isinf(score).any():
            i = int(np.flatnonzero(eligible)[0])
        else:
            i = int(np.argmax(score))
        picks.append(i)
        eligible[i] = False
        if groups is not None:
            g = groups[i]
            left[g] -= 1
            if left[g] <= 0:
                eligible[groups == g] = False
        d = U - U[i]
        mind = np.minimum(mind, np.sqrt(np.einsum("ij,ij->i", d, d)))
    return picks
