"""The standard smooth compactly supported cutoff.

chi(s) = 1 for s <= 1, 0 for s >= 2, glued with exp(-1/s) in between; all
derivatives are bounded and vanish at the junctions.  Amplitudes and
Fourier-side profiles are built from it.
"""

from __future__ import annotations

import numpy as np

__all__ = ["chi", "bump"]


def _glue(u):
    """exp(-1/u) for u > 0, 0 otherwise, vectorized without warnings."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def chi(s):
    """Smooth transition: 1 on (-inf, 1], 0 on [2, inf)."""
    s = np.asarray(s, dtype=float)
    up = _glue(2.0 - s)
    down = _glue(s - 1.0)
    with np.errstate(invalid="ignore"):
        out = np.where(up + down > 0.0, up / np.where(up + down > 0.0, up + down, 1.0), 0.0)
    return out if out.shape else float(out)


def bump(x, inner: float = 1.0, outer: float = None):
    """Radial cutoff: identically 1 for |x| <= inner, 0 beyond outer.

    With the default outer = 2 * inner this is chi(|x| / inner); a smaller
    gap gives a wider plateau with a steeper (still smooth) taper.
    """
    inner = float(inner)
    outer = 2.0 * inner if outer is None else float(outer)
    if not 0.0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    s = 1.0 + (np.abs(np.asarray(x, dtype=float)) - inner) / (outer - inner)
    return chi(s)
