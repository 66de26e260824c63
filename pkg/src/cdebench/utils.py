"""Small numerical helpers shared by the density-based estimators."""
import zlib

import numpy as np


def invert_cdf(cdf, grid, u):
    """Linear-interpolation inverse of a nondecreasing CDF tabulated on ``grid``.

    For each ``u`` the segment runs from the last grid point with ``cdf < u`` to
    the first with ``cdf >= u``, so flat stretches never receive mass.
    """
    cdf = np.asarray(cdf, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    hi = np.clip(np.searchsorted(cdf, u, side="left"), 0, len(cdf) - 1)
    lo = np.maximum(hi - 1, 0)
    c_lo, c_hi = cdf[lo], cdf[hi]
    span = c_hi - c_lo
    frac = np.where(span > 0, (u - c_lo) / np.where(span > 0, span, 1.0), 1.0)
    frac = np.clip(frac, 0.0, 1.0)
    return grid[lo] + frac * (grid[hi] - grid[lo])


def trapezoid(y, x, axis=-1):
    fn = getattr(np, "trapezoid", None) or np.trapz
    return fn(y, x, axis=axis)


def derive_seed(base_seed, *parts):
    """Stable 32-bit seed for a tuple of labels, xor-ed into the base seed."""
    key = "|".join(str(p) for p in parts).encode()
    return (int(base_seed) ^ zlib.crc32(key)) & 0xFFFFFFFF
