"""Distortion norms between an input and its adversarial counterpart."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def l_norms(x, x_star) -> tuple[int, float, float, float]:
    """Return (L0, L1, L2, Linf) of x_star - x.

    L0 counts coordinates that changed at all (exact comparison, no
    tolerance); identical arrays give (0, 0.0, 0.0, 0.0) exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x.shape != x_star.shape:
        raise ConfigurationError(f"shape mismatch: {x.shape} vs {x_star.shape}")
    d = (x_star - x).ravel()
    l0 = int(np.count_nonzero(d))
    if l0 == 0:
        return 0, 0.0, 0.0, 0.0
    a = np.abs(d)
    return l0, float(a.sum()), float(np.sqrt((d * d).sum())), float(a.max())
