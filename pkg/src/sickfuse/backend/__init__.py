"""Hot-kernel backend selection.

Two complete implementations exist: a compiled extension
(`sickfuse.backend._native`, built from Cython) and pure-numpy twins in
`numpy_kernels`. Benchmarks (benchmarks/bench_kernels.py) show the compiled
loops win where numpy has no vectorized story (max-pool argmax scatter, the
sequential SGBM scanline recurrence) but lose to BLAS on the channel
contractions inside the convolutions, so the default "auto" mode routes each
kernel to its measured winner. Set SICKFUSE_BACKEND=native or =numpy to
force one implementation everywhere; auto degrades to pure numpy when the
extension is not built.
"""

import os

from . import numpy_kernels

_CONV_KERNELS = (
    "conv3d_forward", "conv3d_grad_input", "conv3d_grad_kernel",
    "conv1d_forward", "conv1d_grad_input", "conv1d_grad_kernel",
)
_LOOP_KERNELS = ("maxpool_forward", "maxpool_backward", "sgbm_aggregate")

try:
    from . import _native
except ImportError:
    _native = None

_choice = os.environ.get("SICKFUSE_BACKEND", "auto").strip().lower() or "auto"

if _choice in ("numpy", "python"):
    _sources = {name: numpy_kernels for name in _CONV_KERNELS + _LOOP_KERNELS}
    _mode = "numpy"
elif _choice == "native":
    if _native is None:
        raise ImportError("SICKFUSE_BACKEND=native but the extension is not built")
    _sources = {name: _native for name in _CONV_KERNELS + _LOOP_KERNELS}
    _mode = "native"
elif _choice == "auto":
    if _native is None:
        _sources = {name: numpy_kernels for name in _CONV_KERNELS + _LOOP_KERNELS}
        _mode = "numpy"
    else:
        # measured routing: BLAS-backed numpy for channel contractions,
        # compiled loops for pooling and scanline aggregation
        _sources = {name: numpy_kernels for name in _CONV_KERNELS}
        _sources.update({name: _native for name in _LOOP_KERNELS})
        _mode = "mixed"
else:
    raise ValueError(f"SICKFUSE_BACKEND must be auto|native|numpy, got {_choice!r}")


def backend_name() -> str:
    return _mode


def kernel_sources() -> dict:
    """Which module serves each kernel (introspection for tests/benchmarks)."""
    return {name: mod.name for name, mod in _sources.items()}


def get_backend(name):
    """Whole-module access by name ("numpy" | "native"), for benchmarks."""
    if name in ("numpy", "python"):
        return numpy_kernels
    if name == "native":
        if _native is None:
            raise ImportError("compiled extension not built")
        return _native
    raise ValueError(f"unknown backend {name!r}")


conv3d_forward = _sources["conv3d_forward"].conv3d_forward
conv3d_grad_input = _sources["conv3d_grad_input"].conv3d_grad_input
conv3d_grad_kernel = _sources["conv3d_grad_kernel"].conv3d_grad_kernel
conv1d_forward = _sources["conv1d_forward"].conv1d_forward
conv1d_grad_input = _sources["conv1d_grad_input"].conv1d_grad_input
conv1d_grad_kernel = _sources["conv1d_grad_kernel"].conv1d_grad_kernel
maxpool_forward = _sources["maxpool_forward"].maxpool_forward
maxpool_backward = _sources["maxpool_backward"].maxpool_backward
sgbm_aggregate = _sources["sgbm_aggregate"].sgbm_aggregate
