"""Saliency-map components, pair scores, and the greedy pair search.

A saliency map over a Jacobian J splits into two per-feature component
vectors for a class t:

    alpha_i = dY_t/dx_i
    beta_i  = sum over k != t of   w_k * dY_k/dx_i

where w_k is 1 for the plain map and the class probability F_k for the
weighted and taylor maps.  The taylor map additionally multiplies both
components by the remaining headroom (theta_max - x_i) when features
are pushed up, or (x_i - theta_min) when pushed down; pushing down also
negates the gradient terms.  Pair scores combine two features and keep
the sign constraints of the underlying map:

    targeted: 0 if A < 0 or B > 0, else  A * |B|
    non-targeted: 0 if A > 0 or B < 0, else |A| * B

with A = alpha_p + alpha_q and B = beta_p + beta_q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

VARIANTS = ("plain", "weighted", "taylor")
DIRECTIONS = ("increase", "decrease")

_SEARCH_CHUNK = 256


def max_iter_from_gamma(n: int, gamma: float, components: int = 2) -> int:
    """Iteration budget for distorting at most a gamma fraction of n features.

    floor(n * gamma / components); components is the number of features
    each iteration modifies (1 or 2).
    """
    if components not in (1, 2):
        raise ConfigurationError(f"components must be 1 or 2, got {components}")
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1], got {gamma}")
    if n < 1:
        raise ConfigurationError(f"feature count must be positive, got {n}")
    return int(math.floor(n * gamma / components))


@dataclass(frozen=True)
class SaliencyComponents:
    """Per-feature map components plus the saturation-based eligibility mask."""

    alpha: np.ndarray
    beta: np.ndarray
    admissible: np.ndarray


def per_feature_components(jac, probs, x, target: int, cfg) -> SaliencyComponents:
    """Build alpha/beta for one (class, direction) from a Jacobian.

    ``jac`` is the (K, n) Jacobian of the chosen logit source, ``probs``
    the softmax output used as weights, ``x`` the current flattened
    input.  ``cfg`` supplies variant, direction and the feature bounds.
    Features already at the direction's saturation bound come back
    inadmissible; for the taylor variant their components are exactly 0
    by construction.
    """
    jac = np.asarray(jac, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).ravel()
    k, n = jac.shape
    if not 0 <= target < k:
        raise ConfigurationError(f"class {target} out of range for {k} classes")
    if cfg.variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {cfg.variant!r}")
    if cfg.direction not in DIRECTIONS:
        raise ConfigurationError(f"unknown direction {cfg.direction!r}")

    alpha = jac[target].copy()
    if cfg.variant == "plain":
        beta = jac.sum(axis=0) - jac[target]
    else:
        beta = probs @ jac - probs[target] * jac[target]

    if cfg.direction == "increase":
        admissible = x < cfg.theta_max
        factor = cfg.theta_max - x
    else:
        alpha = -alpha
        beta = -beta
        admissible = x > cfg.theta_min
        factor = x - cfg.theta_min

    if cfg.variant == "taylor":
        alpha = alpha * factor
        beta = beta * factor
    return SaliencyComponents(alpha=alpha, beta=beta, admissible=admissible)


def pair_score(comp: SaliencyComponents, p: int, q: int) -> float:
    """Targeted two-feature score: A * |B| under A >= 0, B <= 0, else 0."""
    a = comp.alpha[p] + comp.alpha[q]
    b = comp.beta[p] + comp.beta[q]
    if a < 0.0 or b > 0.0:
        return 0.0
    return float(a * abs(b))


def nt_pair_score(comp: SaliencyComponents, p: int, q: int) -> float:
    """Non-targeted two-feature score: |A| * B under A <= 0, B >= 0, else 0."""
    a = comp.alpha[p] + comp.alpha[q]
    b = comp.beta[p] + comp.beta[q]
    if a > 0.0 or b < 0.0:
        return 0.0
    return float(abs(a) * b)


def feature_score(comp: SaliencyComponents, i: int) -> float:
    """Single-feature targeted score: alpha * |beta| under the same sign gate."""
    a = comp.alpha[i]
    b = comp.beta[i]
    if a < 0.0 or b > 0.0:
        return 0.0
    return float(a * abs(b))


def select_best_feature(comp: SaliencyComponents, active=None, excluded=()):
    """Best single feature by targeted score; None when no score is positive.

    Ties keep the smallest index.
    """
    s = comp.alpha * np.abs(comp.beta)
    s[(comp.alpha < 0.0) | (comp.beta > 0.0)] = 0.0
    mask = comp.admissible.copy()
    if active is not None:
        mask &= active
    for i in excluded:
        mask[i] = False
    s[~mask] = 0.0
    best = int(np.argmax(s))
    if s[best] <= 0.0:
        return None
    return best


def select_best_pair(
    comp: SaliencyComponents,
    active=None,
    scoring: str = "targeted",
    excluded_pairs=(),
):
    """Best unordered feature pair (p, q), p < q, by pair score.

    Scans the upper triangle in row-major chunks, which is exactly the
    naive lexicographic double loop: ties keep the lexicographically
    smallest pair, and the result is None when no candidate pair scores
    above 0.  ``active`` restricts candidates on top of the component
    mask; ``excluded_pairs`` removes individual (p, q) pairs.
    """
    if scoring not in ("targeted", "nt"):
        raise ConfigurationError(f"unknown scoring {scoring!r}")
    alpha, beta = comp.alpha, comp.beta
    n = alpha.size
    cand = comp.admissible.copy()
    if active is not None:
        cand &= active
    if cand.sum() < 2:
        return None
    excluded = {}
    for p, q in excluded_pairs:
        lo, hi = (p, q) if p < q else (q, p)
        excluded.setdefault(lo, []).append(hi)

    best_score = 0.0
    best_pair = None
    col_idx = np.arange(n)
    for start in range(0, n, _SEARCH_CHUNK):
        stop = min(start + _SEARCH_CHUNK, n)
        rows = slice(start, stop)
        a = alpha[rows, None] + alpha[None, :]
        b = beta[rows, None] + beta[None, :]
        if scoring == "targeted":
            s = a * np.abs(b)
            s[(a < 0.0) | (b > 0.0)] = 0.0
        else:
            s = np.abs(a) * b
            s[(a > 0.0) | (b < 0.0)] = 0.0
        mask = cand[rows, None] & cand[None, :]
        mask &= col_idx[None, :] > np.arange(start, stop)[:, None]
        for p in range(start, stop):
            if p in excluded:
                mask[p - start, excluded[p]] = False
        s[~mask] = 0.0
        flat = int(np.argmax(s))
        score = s.flat[flat]
        if score > best_score:
            best_score = float(score)
            best_pair = (start + flat // n, flat % n)
    return best_pair
