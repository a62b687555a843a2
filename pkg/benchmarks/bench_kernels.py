"""Time the compiled and numpy kernel backends on representative sizes.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Sizes follow the desk experiments: a 16-64-8 MLP trained on mini-batches of
64 and on a client's full labeled pool, farthest-first over one client's 10
arrivals and over the server-side pool of 10 clients with 200 labeled rows.
"""
import argparse
import json
import timeit

import numpy as np

from leadq import _kernels


def _mlp_case(rng, n):
    sizes = (16, 64, 8)
    W = [rng.normal(0, 0.3, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    b = [np.zeros(s) for s in sizes[1:]]
    acts = np.array([_kernels.RELU, _kernels.IDENTITY], dtype=np.int64)
    X = rng.normal(size=(n, sizes[0]))
    y = rng.integers(0, sizes[-1], size=n)
    return W, b, acts, X, y


def cases(rng):
    out = {}
    for n in (64, 200):
        W, b, acts, X, y = _mlp_case(rng, n)
        out[f"mlp_loss_grad n={n}"] = lambda k, W=W, b=b, acts=acts, X=X, y=y: k.mlp_loss_grad(W, b, acts, X, y)
        out[f"mlp_forward n={n}"] = lambda k, W=W, b=b, acts=acts, X=X: k.mlp_forward(W, b, acts, X)
    U, L = rng.normal(size=(10, 16)), rng.normal(size=(20, 16))
    out["farthest_first local 10x20"] = lambda k: k.farthest_first(U, L, 1)
    Ug, Lg = rng.normal(size=(100, 16)), rng.normal(size=(200, 16))
    groups = np.repeat(np.arange(10), 10).astype(np.int64)
    quota = [1] * 10
    out["farthest_first global 100x200"] = lambda k: k.farthest_first(Ug, Lg, 10, groups, quota)
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=0, help="calls per repeat (0: auto)")
    p.add_argument("--json", help="also write the timings here")
    args = p.parse_args(argv)

    backends = _kernels.available_backends()
    print(f"backends: {', '.join(backends)} (active: {_kernels.BACKEND})")
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        per_call = {}
        for be in backends:
            k = _kernels.get_backend(be)
            t = timeit.Timer(lambda: fn(k))
            number = args.number or t.autorange()[0]
            per_call[be] = min(t.repeat(args.repeat, number)) / number
        row = {"case": name, **{f"{be}_us": per_call[be] * 1e6 for be in backends}}
        if "cython" in per_call:
            row["speedup"] = per_call["python"] / per_call["cython"]
        rows.append(row)
        cols = "  ".join(f"{be} {per_call[be] * 1e6:9.1f} us" for be in backends)
        extra = f"  x{row['speedup']:.2f}" if "speedup" in row else ""
        print(f"{name:32s} {cols}{extra}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
