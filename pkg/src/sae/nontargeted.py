"""Non-targeted, maximal, and fast-gradient-sign attacks.

The non-targeted attack flips the prediction away from the current
class by saturating feature pairs chosen with the non-targeted map (the
map's class is the label being escaped).  The maximal attack widens the
search: every iteration it scores the targeted map toward each other
class and the non-targeted map, in both push directions, and saturates
the globally best pair toward the winning direction's bound.

Both support an exact-distortion mode for black-box transfer runs: the
attack keeps saturating pairs until exactly floor(n * gamma) features
(rounded down to an even count) have been modified, whether or not the
label has already flipped, and success is judged afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import engine, saliency
from .attacks import AttackResult
from .errors import ConfigurationError
from .metrics import l_norms


@dataclass(frozen=True)
class NtConfig:
    """Knobs for the non-targeted and maximal attacks.

    ``logit_source`` picks the Jacobian the maps are built from: the
    logits (Z) or the softmax probabilities (F).  ``direction`` sets the
    bound chosen pairs saturate to (increase -> theta_max).  In
    exact-distortion mode the pixel budget floor(n * gamma) is rounded
    down to an even number and fully spent.
    """

    variant: str = "weighted"  # plain | weighted | taylor
    logit_source: str = "Z"  # Z | F
    gamma: float | None = 0.037
    max_iter: int | None = None
    direction: str = "increase"
    exact_distortion: bool = False
    theta_min: float = 0.0
    theta_max: float = 1.0

    def __post_init__(self):
        if self.variant not in saliency.VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.logit_source not in ("Z", "F"):
            raise ConfigurationError(f"unknown logit source {self.logit_source!r}")
        if self.direction not in saliency.DIRECTIONS:
            raise ConfigurationError(f"unknown direction {self.direction!r}")
        if not self.theta_min < self.theta_max:
            raise ConfigurationError("theta_min must be below theta_max")
        if self.gamma is None and self.max_iter is None:
            raise ConfigurationError("either gamma or max_iter must be set")

    def resolved_max_iter(self, n: int) -> int:
        if self.exact_distortion:
            return self.pixel_budget(n) // 2
        if self.max_iter is not None:
            if self.max_iter < 0:
                raise ConfigurationError("max_iter must be non-negative")
            return self.max_iter
        return saliency.max_iter_from_gamma(n, self.gamma, 2)

    def pixel_budget(self, n: int) -> int:
        """Even feature budget for exact-distortion runs."""
        if self.gamma is None:
            budget = 2 * self.max_iter
        else:
            budget = saliency.max_iter_from_gamma(n, self.gamma, 1)
            if self.max_iter is not None:
                budget = min(budget, 2 * self.max_iter)
        return budget - (budget % 2)


def _source_jacobian(cfg: NtConfig, jac, probs):
    if cfg.logit_source == "Z":
        return jac
    return probs[:, None] * (jac - probs @ jac)


def _prepare(model, x):
    x0 = np.asarray(x, dtype=np.float64).ravel()
    if x0.size != model.feature_count:
        raise ConfigurationError(
            f"input has {x0.size} features, model expects {model.feature_count}"
        )
    if x0.min() < 0.0 or x0.max() > 1.0:
        raise ConfigurationError("input values must lie in [0, 1]")
    return x0


def _finish(model, x0, x_star, origin: int, iterations: int, final_label: int, trace):
    l0, l1, l2, linf = l_norms(x0, x_star)
    return AttackResult(
        success=final_label != origin,
        x_star=x_star.reshape(model.input_shape),
        iterations=iterations,
        final_label=final_label,
        l0=l0,
        l1=l1,
        l2=l2,
        linf=linf,
        trace=trace,
    )


def nt_attack(model, x, cfg: NtConfig = NtConfig(), label: int | None = None) -> AttackResult:
    """Flip the prediction away from ``label`` (default: the current prediction).

    Each iteration builds the non-targeted map against the current
    predicted class and saturates the best admissible pair to the
    direction's bound, so exactly two features change per iteration.
    """
    x0 = _prepare(model, x)
    n = x0.size
    origin = int(label) if label is not None else engine.predict(model, x0)
    if not 0 <= origin < model.class_count:
        raise ConfigurationError(f"label {origin} out of range")
    budget = cfg.resolved_max_iter(n)
    bound = cfg.theta_max if cfg.direction == "increase" else cfg.theta_min
    eye = np.eye(model.class_count)
    x_star = x0.copy()
    trace: list[tuple[tuple[int, int], float]] = []
    iterations = 0

    while True:
        logits, probs, pullback = engine.forward_with_pullback(model, x_star)
        current = int(np.argmax(logits))
        if iterations >= budget:
            break
        if not cfg.exact_distortion and current != origin:
            break
        jac = _source_jacobian(cfg, pullback(eye), probs)
        comp = saliency.per_feature_components(jac, probs, x_star, current, cfg)
        sel = saliency.select_best_pair(comp, scoring="nt")
        if sel is None:
            break
        p, q = sel
        trace.append(((p, q), saliency.nt_pair_score(comp, p, q)))
        x_star[[p, q]] = bound
        iterations += 1

    return _finish(model, x0, x_star, origin, iterations, current, trace)


def maximal_attack(model, x, cfg: NtConfig = NtConfig(), label: int | None = None) -> AttackResult:
    """Flip the prediction using the best of all 2K saliency maps per iteration.

    For each direction (increase, decrease) and each class s the
    component vectors are built once; class s == current label is
    scored with the non-targeted map, every other class with the
    targeted map.  The winning pair saturates to the winning direction's
    bound; ties keep the first map in enumeration order.  The taylor
    variant is not offered here because its headroom factor is
    direction-dependent.
    """
    if cfg.variant == "taylor":
        raise ConfigurationError("the maximal attack supports plain and weighted variants only")
    x0 = _prepare(model, x)
    n = x0.size
    origin = int(label) if label is not None else engine.predict(model, x0)
    if not 0 <= origin < model.class_count:
        raise ConfigurationError(f"label {origin} out of range")
    budget = cfg.resolved_max_iter(n)
    k = model.class_count
    eye = np.eye(k)
    x_star = x0.copy()
    untouched = np.ones(n, dtype=bool)  # modified features leave every map for good
    trace: list[tuple[tuple[int, int], float, str, int]] = []
    iterations = 0

    while True:
        logits, probs, pullback = engine.forward_with_pullback(model, x_star)
        current = int(np.argmax(logits))
        if iterations >= budget:
            break
        if not cfg.exact_distortion and current != origin:
            break
        jac = _source_jacobian(cfg, pullback(eye), probs)
        best = None  # (score, direction, class, pair)
        for direction in saliency.DIRECTIONS:
            dcfg = replace(cfg, direction=direction)
            for s in range(k):
                comp = saliency.per_feature_components(jac, probs, x_star, s, dcfg)
                if s == current:
                    sel = saliency.select_best_pair(comp, active=untouched, scoring="nt")
                    score = saliency.nt_pair_score(comp, *sel) if sel else 0.0
                else:
                    sel = saliency.select_best_pair(comp, active=untouched, scoring="targeted")
                    score = saliency.pair_score(comp, *sel) if sel else 0.0
                if sel is not None and (best is None or score > best[0]):
                    best = (score, direction, s, sel)
        if best is None:
            break
        score, direction, s, (p, q) = best
        bound = cfg.theta_max if direction == "increase" else cfg.theta_min
        trace.append(((p, q), score, direction, s))
        x_star[[p, q]] = bound
        untouched[[p, q]] = False
        iterations += 1

    return _finish(model, x0, x_star, origin, iterations, current, trace)


def fgsm(model, x, epsilon: float, label: int | None = None) -> AttackResult:
    """One fast-gradient-sign step: clip(x + eps * sign(d loss / d x)).

    The loss is cross-entropy at ``label`` (default: the current
    prediction), so the input gradient is the negated log-probability
    gradient.  Coordinates with exactly zero gradient do not move.
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    x0 = _prepare(model, x)
    origin = int(label) if label is not None else engine.predict(model, x0)
    if not 0 <= origin < model.class_count:
        raise ConfigurationError(f"label {origin} out of range")
    g = -engine.log_prob_gradient(model, x0, origin)
    x_star = np.clip(x0 + epsilon * np.sign(g), 0.0, 1.0)
    final = engine.predict(model, x_star)
    return _finish(model, x0, x_star, origin, 1, final, [])
