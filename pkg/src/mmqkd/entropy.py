"""Binary entropy and its inverse on [0, 1/2]."""

import math

from scipy.optimize import brentq


def binary_entropy(e: float) -> float:
    """Shannon entropy in bits of a Bernoulli(e) variable."""
    if not 0.0 <= e <= 1.0:
        raise ValueError(f"probability out of range: {e}")
    if e == 0.0 or e == 1.0:
        return 0.0
    return -e * math.log2(e) - (1.0 - e) * math.log2(1.0 - e)


def inverse_binary_entropy(h: float) -> float:
    """The unique ``e`` in [0, 1/2] with ``binary_entropy(e) == h``."""
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"entropy out of range: {h}")
    if h == 0.0:
        return 0.0
    if h == 1.0:
        return 0.5
    return brentq(lambda e: binary_entropy(e) - h, 1e-300, 0.5, xtol=1e-15, rtol=1e-15)
