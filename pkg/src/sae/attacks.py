"""Targeted greedy saliency attacks (one- and two-feature variants).

Each iteration recomputes the Jacobian at the current adversarial
point, rebuilds the saliency components for the requested variant
(plain, weighted, or taylor), picks the best admissible feature or
feature pair, and nudges it by theta (clipped to the feature bounds).
A feature leaves the admissible set when it saturates at the bound the
attack pushes toward; a chosen pair is never reselected.  The attack
stops on success (predicted class equals the target), on exhausting the
iteration budget, or when every admissible candidate scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine, saliency
from .errors import ConfigurationError
from .metrics import l_norms


@dataclass(frozen=True)
class AttackConfig:
    """Shared knobs for the targeted attacks.

    ``gamma`` is the maximum fraction of features the attack may touch;
    the iteration budget is floor(n * gamma / components) unless
    ``max_iter`` overrides it.  ``theta`` is the per-step perturbation
    magnitude; direction picks its sign.
    """

    variant: str = "plain"  # plain | weighted | taylor
    theta: float = 1.0
    gamma: float | None = 0.145
    max_iter: int | None = None
    components: int = 2
    direction: str = "increase"
    logit_source: str = "Z"  # targeted attacks accept Z only
    theta_min: float = 0.0
    theta_max: float = 1.0

    def __post_init__(self):
        if self.variant not in saliency.VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.direction not in saliency.DIRECTIONS:
            raise ConfigurationError(f"unknown direction {self.direction!r}")
        if self.components not in (1, 2):
            raise ConfigurationError(f"components must be 1 or 2, got {self.components}")
        if self.logit_source not in ("Z", "F"):
            raise ConfigurationError(f"unknown logit source {self.logit_source!r}")
        if self.theta <= 0:
            raise ConfigurationError("theta must be positive; use direction for the sign")
        if not self.theta_min < self.theta_max:
            raise ConfigurationError("theta_min must be below theta_max")
        if self.gamma is None and self.max_iter is None:
            raise ConfigurationError("either gamma or max_iter must be set")

    def resolved_max_iter(self, n: int) -> int:
        if self.max_iter is not None:
            if self.max_iter < 0:
                raise ConfigurationError("max_iter must be non-negative")
            return self.max_iter
        return saliency.max_iter_from_gamma(n, self.gamma, self.components)


@dataclass
class AttackResult:
    """Outcome of a single attack run.

    ``iterations`` counts applied modifications; ``trace`` records the
    chosen feature indices and the score per iteration.  ``x_star`` has
    the model's input shape.
    """

    success: bool
    x_star: np.ndarray
    iterations: int
    final_label: int
    l0: int
    l1: float
    l2: float
    linf: float
    trace: list = field(default_factory=list)


def _validate_domain(x, cfg):
    if x.min() < cfg.theta_min or x.max() > cfg.theta_max:
        raise ConfigurationError(
            f"input values must lie in [{cfg.theta_min}, {cfg.theta_max}]"
        )


def targeted_attack(model, x, target: int, cfg: AttackConfig = AttackConfig()) -> AttackResult:
    """Drive the model's prediction on x to ``target``.

    An input already classified as the target succeeds with 0
    iterations.  The returned L0 never exceeds components * iterations.
    """
    if cfg.logit_source != "Z":
        raise ConfigurationError("targeted attacks support logit source Z only")
    if not 0 <= target < model.class_count:
        raise ConfigurationError(
            f"target {target} out of range for {model.class_count} classes"
        )
    x0 = np.asarray(x, dtype=np.float64).ravel()
    if x0.size != model.feature_count:
        raise ConfigurationError(
            f"input has {x0.size} features, model expects {model.feature_count}"
        )
    _validate_domain(x0, cfg)

    n = x0.size
    budget = cfg.resolved_max_iter(n)
    step = cfg.theta if cfg.direction == "increase" else -cfg.theta
    eye = np.eye(model.class_count)
    x_star = x0.copy()
    removed = np.zeros(n, dtype=bool)  # single-feature mode: chosen features leave Gamma
    blacklist: set[tuple[int, int]] = set()
    trace: list[tuple[tuple[int, ...], float]] = []
    iterations = 0

    while True:
        logits, probs, pullback = engine.forward_with_pullback(model, x_star)
        label = int(np.argmax(logits))
        if label == target or iterations >= budget:
            break
        jac = pullback(eye)
        comp = saliency.per_feature_components(jac, probs, x_star, target, cfg)
        if cfg.components == 2:
            sel = saliency.select_best_pair(comp, excluded_pairs=blacklist)
            if sel is None:
                break
            p, q = sel
            trace.append(((p, q), saliency.pair_score(comp, p, q)))
            blacklist.add(sel)
            x_star[[p, q]] = np.clip(x_star[[p, q]] + step, cfg.theta_min, cfg.theta_max)
        else:
            sel = saliency.select_best_feature(comp, active=~removed)
            if sel is None:
                break
            trace.append(((sel,), saliency.feature_score(comp, sel)))
            removed[sel] = True
            x_star[sel] = np.clip(x_star[sel] + step, cfg.theta_min, cfg.theta_max)
        iterations += 1

    l0, l1, l2, linf = l_norms(x0, x_star)
    return AttackResult(
        success=label == target,
        x_star=x_star.reshape(model.input_shape),
        iterations=iterations,
        final_label=label,
        l0=l0,
        l1=l1,
        l2=l2,
        linf=linf,
        trace=trace,
    )
