"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports cleanly, unless the
``LEADQ_PURE_PYTHON`` environment variable is set to a non-empty value.
``BACKEND`` names the active implementation of the selection kernel.

The MLP kernels always run on numpy: at the layer widths used here BLAS
matmuls beat the compiled loops (see benchmarks/bench_kernels.py), so the
compiled versions are kept only for comparison.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}") from None


if _ckernels is not None and not os.environ.get("LEADQ_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"

mlp_forward = _pykernels.mlp_forward
mlp_loss_grad = _pykernels.mlp_loss_grad
farthest_first = _BACKENDS[BACKEND].farthest_first

IDENTITY, RELU, TANH = _pykernels.IDENTITY, _pykernels.RELU, _pykernels.TANH
