"""Backend selection for the stepping hot path.

The compiled extension (sbpsim._core, Cython) is used when it imported
cleanly and SBPSIM_DISABLE_EXT is unset; otherwise the numpy kernels in
sbpsim._core_py take over.  Both expose:

    nonlinear_phase(u, conv, dt, coeff, dim)   in-place phase rotation
    abs2(u, out)                               |u|^2 into a real buffer
    max_abs(u)                                 sup norm of a complex array

`benchmarks/bench_backends.py` times one against the other.
"""

import os

from . import _core_py

BACKEND = "python"
_impl = _core_py

if not os.environ.get("SBPSIM_DISABLE_EXT"):
    try:
        from . import _core as _ext
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        _impl = _ext

nonlinear_phase = _impl.nonlinear_phase
abs2 = _impl.abs2
max_abs = _impl.max_abs
