"""Pure-numpy fallback for the fused stepping kernels.

Contracts match sbpsim._core (the compiled extension); sbpsim.backend
picks whichever is importable.  Arrays are 1-D views over the flattened
fields; callers own the reshaping.
"""

import numpy as np


def nonlinear_phase(u, conv, dt, coeff, dim):
    """In place: u *= exp(-i*dt*coeff*(conv - |u|**(2/dim)))."""
    if conv.shape[0] != u.shape[0]:
        raise ValueError("shape mismatch")
    a = u.real**2 + u.imag**2
    if dim == 2:
        amp = np.sqrt(a)
    elif dim == 3:
        amp = np.cbrt(a)
    else:
        raise ValueError("dim must be 2 or 3")
    ph = -dt * coeff * (conv - amp)
    u *= np.cos(ph) + 1j * np.sin(ph)


def abs2(u, out):
    """out = |u|**2 elementwise."""
    if out.shape[0] != u.shape[0]:
        raise ValueError("shape mismatch")
    np.add(u.real**2, u.imag**2, out=out)


def max_abs(u):
    """max_i |u_i|."""
    a = u.real**2 + u.imag**2
    return float(np.sqrt(a.max(initial=0.0)))
