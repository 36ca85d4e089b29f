"""Numeric kernels with a compiled core and a pure-numpy fallback.

The hot inner loops (token hashing, pairwise distances, the
mutual-reachability MST, and the sparse MLP training step) exist twice:
as a Cython extension (``_ckernels``) and as a numpy implementation
(``_pykernels``). The extension is preferred when it was built; set
``BDBENCH_KERNELS=py`` or ``=c`` to force a backend. Both backends obey
the same contracts; ``benchmarks/bench_kernels.py`` compares them.
"""

import os

_requested = os.environ.get("BDBENCH_KERNELS", "auto")

if _requested not in ("auto", "c", "py"):
    raise ValueError(f"BDBENCH_KERNELS must be 'auto', 'c' or 'py', got {_requested!r}")

if _requested in ("auto", "c"):
    try:
        from . import _ckernels as _impl

        BACKEND = "c"
    except ImportError:
        if _requested == "c":
            raise
        from . import _pykernels as _impl

        BACKEND = "py"
else:
    from . import _pykernels as _impl

    BACKEND = "py"

fnv1a_buckets = _impl.fnv1a_buckets
pairwise_distances = _impl.pairwise_distances
prim_mst = _impl.prim_mst
mlp_hidden = _impl.mlp_hidden
sgd_batch_step = _impl.sgd_batch_step

__all__ = [
    "BACKEND",
    "fnv1a_buckets",
    "pairwise_distances",
    "prim_mst",
    "mlp_hidden",
    "sgd_batch_step",
]
