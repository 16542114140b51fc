"""Training, dataset augmentation, and the black-box substitute pipeline.

Training is plain mini-batch Adam on the softmax cross-entropy (plus an
optional L2 weight penalty); the gradient at the logits is
probs - one_hot(label).  Runs are fully deterministic for a given
rng_seed: the seed drives both the He-style uniform fan-in
initialization and the per-epoch shuffles.  The trainer
keeps 64-bit master weights while optimizing and stores 32-bit
parameters on the returned model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .errors import ConfigurationError, OracleError, TrainingError
from .store import Dataset


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0  # L2 penalty on weights; biases exempt
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = None
        self.v = None
        self.t = 0

    def update(self, params: list, grads: list) -> None:
        """Update parameter arrays in place from matching gradient arrays."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.learning_rate * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= scale * m / (np.sqrt(v) + self.epsilon)


def initialize_parameters(model: engine.Model, rng: np.random.Generator) -> list:
    """He-style uniform fan-in initialization; biases start at zero."""
    params = []
    for layer, zero in zip(model.layers, model.params):
        if zero is None:
            params.append(None)
            continue
        fan_in = int(np.prod(zero["w"].shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        params.append(
            {
                "w": rng.uniform(-limit, limit, zero["w"].shape).astype(np.float32),
                "b": np.zeros_like(zero["b"]),
            }
        )
    return params


def _batch_gradients(model: engine.Model, xb, yb):
    """Cross-entropy loss, correct-count, and parameter gradients for one batch."""
    logits, probs, caches = engine._forward_trace(model, xb)
    b = xb.shape[0]
    p_true = probs[np.arange(b), yb]
    with np.errstate(divide="ignore"):
        loss = float(-np.log(p_true).mean())
    correct = int((logits.argmax(axis=1) == yb).sum())
    g = probs.copy()
    g[np.arange(b), yb] -= 1.0
    g /= b
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 2, -1, -1):
        g, pg = engine._layer_backward(
            model.layers[i], model.params[i], caches[i], g, with_params=True
        )
        grads[i] = pg
    return loss, correct, grads


def train(model: engine.Model, data: Dataset, cfg: TrainConfig = TrainConfig()):
    """Train from scratch; returns (trained_model, per-epoch stats).

    Parameters are (re)initialized from cfg.rng_seed, so passing a
    trained model retrains it from scratch deterministically.  A
    non-finite loss raises TrainingError carrying the epoch index.
    """
    if len(data) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    if data.images.shape[1:] != model.input_shape:
        raise ConfigurationError(
            f"dataset images {data.images.shape[1:]} do not match model input {model.input_shape}"
        )
    if data.class_count != model.class_count:
        raise ConfigurationError(
            f"dataset has {data.class_count} classes, model emits {model.class_count}"
        )
    rng = np.random.default_rng(cfg.rng_seed)
    params32 = initialize_parameters(model, rng)
    indices = [i for i, p in enumerate(params32) if p is not None]
    # 64-bit master weights; the work model gets per-batch copies because
    # Model freezes whatever arrays it is handed.
    masters = []
    for i in indices:
        masters.append(params32[i]["w"].astype(np.float64))
        masters.append(params32[i]["b"].astype(np.float64))

    def snapshot():
        params = list(params32)
        for slot, i in enumerate(indices):
            params[i] = {"w": masters[2 * slot].copy(), "b": masters[2 * slot + 1].copy()}
        return model.with_params(params)

    optimizer = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    n = len(data)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            xb = data.images[batch].astype(np.float64)
            yb = data.labels[batch]
            loss, correct, grads = _batch_gradients(snapshot(), xb, yb)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            flat_grads = []
            for slot, i in enumerate(indices):
                gw = grads[i]["w"]
                if cfg.weight_decay > 0.0:
                    gw = gw + cfg.weight_decay * masters[2 * slot]
                flat_grads.append(gw)
                flat_grads.append(grads[i]["b"])
            optimizer.update(masters, flat_grads)
            total_loss += loss * len(batch)
            total_correct += correct
        history.append(
            EpochStats(epoch=epoch, loss=total_loss / n, accuracy=total_correct / n)
        )

    final = list(params32)
    for slot, i in enumerate(indices):
        final[i] = {
            "w": masters[2 * slot].astype(np.float32),
            "b": masters[2 * slot + 1].astype(np.float32),
        }
    return model.with_params(final), history


def accuracy(model: engine.Model, data: Dataset, batch_size: int = 256) -> float:
    """Fraction of samples whose argmax prediction matches the label."""
    if len(data) == 0:
        raise ConfigurationError("cannot evaluate an empty dataset")
    correct = 0
    for start in range(0, len(data), batch_size):
        xb = data.images[start : start + batch_size].astype(np.float64)
        correct += int(
            (engine.predict_batch(model, xb) == data.labels[start : start + batch_size]).sum()
        )
    return correct / len(data)


def augment_with_adversarial(data: Dataset, adversarial: Dataset) -> Dataset:
    """Concatenate a clean dataset with adversarial samples (duplicates allowed)."""
    if len(adversarial) == 0:
        return Dataset(data.images, data.labels, data.class_count)
    if data.images.shape[1:] != adversarial.images.shape[1:]:
        raise ConfigurationError(
            f"image shapes differ: {data.images.shape[1:]} vs {adversarial.images.shape[1:]}"
        )
    if data.class_count != adversarial.class_count:
        raise ConfigurationError("class counts differ")
    return Dataset(
        np.concatenate([data.images, adversarial.images]),
        np.concatenate([data.labels, adversarial.labels]),
        data.class_count,
    )


# ---------------------------------------------------------------------------
# black-box substitute pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JbdaConfig:
    """Jacobian-based dataset augmentation settings.

    ``oracle`` maps a batch of images to integer labels.  Each round
    doubles the working set: every sample x spawns
    clip(x + lambda * sign(dZ_c/dx)) with c the sample's oracle label,
    and the new points are labeled by the oracle.
    """

    oracle: object = None
    lam: float = 0.1
    rounds: int = 5
    seed_size: int = 150
    epochs_per_round: int = 10

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError("rounds must be positive")
        if self.seed_size < 1:
            raise ConfigurationError("seed_size must be positive")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")


def _query_oracle(oracle, images) -> np.ndarray:
    if oracle is None:
        raise ConfigurationError("JbdaConfig.oracle is not set")
    fn = oracle.__call__ if callable(oracle) else None
    if fn is None:
        raise ConfigurationError("oracle must be callable")
    try:
        labels = np.asarray(oracle(images))
    except Exception as e:
        raise OracleError(f"oracle query failed: {e}") from e
    if labels.shape != (images.shape[0],):
        raise OracleError(
            f"oracle returned shape {labels.shape} for {images.shape[0]} samples"
        )
    return labels.astype(np.int64)


def jbda_round(substitute: engine.Model, data: Dataset, cfg: JbdaConfig) -> Dataset:
    """One augmentation round; the returned set is exactly twice as large.

    The input dataset is never mutated; if the oracle raises, the
    OracleError propagates and the caller keeps the original set.
    """
    if len(data) == 0:
        raise ConfigurationError("cannot augment an empty dataset")
    if cfg.lam == 0.0:
        warnings.warn("jbda_round with lambda = 0 duplicates the dataset without movement")
    new_images = np.empty_like(data.images)
    for i in range(len(data)):
        x = data.images[i].astype(np.float64)
        g = engine.class_logit_gradient(substitute, x, int(data.labels[i]))
        moved = np.clip(x.ravel() + cfg.lam * np.sign(g), 0.0, 1.0)
        new_images[i] = moved.reshape(data.images.shape[1:]).astype(data.images.dtype)
    new_labels = _query_oracle(cfg.oracle, new_images)
    return Dataset(
        np.concatenate([data.images, new_images]),
        np.concatenate([data.labels, new_labels]),
        data.class_count,
    )


def balanced_seed(data: Dataset, size: int, class_count: int) -> Dataset:
    """Deterministic class-balanced subset: round-robin over classes in index order."""
    if size > len(data):
        raise ConfigurationError(f"seed size {size} exceeds dataset size {len(data)}")
    by_class = [np.flatnonzero(data.labels == c) for c in range(class_count)]
    picked = []
    depth = 0
    while len(picked) < size:
        advanced = False
        for c in range(class_count):
            if depth < len(by_class[c]):
                picked.append(int(by_class[c][depth]))
                advanced = True
                if len(picked) == size:
                    break
        if not advanced:
            raise ConfigurationError("dataset too small for a balanced seed of that size")
        depth += 1
    return data.subset(np.array(sorted(picked)))


def train_substitute(
    template: engine.Model,
    pool: Dataset,
    jcfg: JbdaConfig,
    tcfg: TrainConfig = TrainConfig(),
):
    """Train a substitute for a black-box oracle via iterative augmentation.

    Takes a class-balanced seed of jcfg.seed_size images from ``pool``
    (pool labels are ignored; the oracle labels everything), then
    alternates from-scratch training and jbda_round doubling for
    jcfg.rounds rounds.  Returns (substitute, final_dataset); the final
    set holds seed_size * 2**(rounds - 1) samples.
    """
    seed = balanced_seed(pool, jcfg.seed_size, template.class_count)
    labels = _query_oracle(jcfg.oracle, seed.images)
    working = Dataset(seed.images, labels, template.class_count)
    round_cfg = replace(tcfg, epochs=jcfg.epochs_per_round)
    substitute = None
    for r in range(jcfg.rounds):
        substitute, _ = train(template, working, round_cfg)
        if r < jcfg.rounds - 1:
            working = jbda_round(substitute, working, jcfg)
    return substitute, working
