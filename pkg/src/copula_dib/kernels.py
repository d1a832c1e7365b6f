"""Backend selection for the hot kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback is used. Setting ``COPULA_DIB_PURE_PYTHON=1`` forces the fallback.

Softplus always comes from numpy: its SIMD exp/log1p loops beat the scalar
libm calls of the compiled loop (see ``benchmarks/bench_kernels.py``), and
sharing it keeps training bit-identical across backends.
"""
import os

from . import _fallback

if os.environ.get("COPULA_DIB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "python"

softplus_forward = _fallback.softplus_forward
counter_uniform = _impl.counter_uniform
betainc = _impl.betainc
gammainc = _impl.gammainc

__all__ = ["BACKEND", "softplus_forward", "counter_uniform", "betainc", "gammainc"]
