"""Faddeeva function and the complex imaginary error function.

``faddeeva`` wraps ``scipy.special.wofz`` (continued fraction for large |z|,
series/Chebyshev expansions elsewhere; ~1e-13 relative accuracy).  Policy
for the lower half-plane: w(z) grows like 2 exp(-z^2) there, and a result
that overflows raises ``OverflowError`` instead of returning inf.
"""

import numpy as np
from scipy.special import wofz

_SQRT_PI = np.sqrt(np.pi)
_SERIES_RADIUS = 0.5
_SERIES_TERMS = 30


def faddeeva(z):
    """w(z) = exp(-z^2) erfc(-i z) for scalar or array ``z``."""
    z = np.asarray(z, dtype=complex)
    w = wofz(z)
    bad = ~np.isfinite(w) & np.isfinite(z)
    if np.any(bad):
        raise OverflowError(f"w(z) overflows for z = {z[bad].ravel()[0]!r}")
    return w if w.ndim else complex(w)


def _erfi_series(z):
    # erfi(z) = 2/sqrt(pi) * sum_n z^(2n+1) / (n! (2n+1))
    z2 = z * z
    term = z.copy()
    total = z.copy()
    for n in range(1, _SERIES_TERMS):
        term = term * z2 / n
        total = total + term / (2 * n + 1)
    return 2.0 / _SQRT_PI * total


def erfi_c(z):
    """erfi(z) = -i erf(i z) for complex ``z``.

    Uses erfi(z) = i - i exp(z^2) w(z) on the closed upper half-plane and
    oddness elsewhere; small |z| goes through the Taylor series to avoid
    the cancellation in ``i - i*(1 + ...)``.
    """
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    flip = (z.imag < 0) | ((z.imag == 0) & (z.real < 0))
    zc = np.where(flip, -z, z)
    out = np.empty_like(zc)
    small = np.abs(zc) < _SERIES_RADIUS
    if np.any(small):
        out[small] = _erfi_series(zc[small])
    big = ~small
    if np.any(big):
        zb = zc[big]
        with np.errstate(over="ignore", invalid="ignore"):
            out[big] = 1j - 1j * np.exp(zb * zb) * wofz(zb)
    out = np.where(flip, -out, out)
    return complex(out[0]) if scalar else out
