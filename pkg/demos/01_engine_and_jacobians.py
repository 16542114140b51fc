"""Build a small convolutional classifier by hand and check its exact
input Jacobian against central finite differences.

The engine computes reverse-mode Jacobians: one cached forward pass,
then every class logit pulled back to the input at once.  On piecewise
linear networks (ReLU + maxpool) the result is exact wherever no unit
sits on a kink, so finite differences agree to roundoff.
"""

import argparse
import time

import numpy as np

from sae import engine


def build_demo_model(rng):
    model = engine.build_model(
        (8, 8, 1),
        [
            engine.Conv2D(4, (3, 3)),
            engine.ReLU(),
            engine.MaxPool2D((2, 2), (2, 2)),
            engine.Flatten(),
            engine.Dense(16),
            engine.ReLU(),
            engine.Dense(5),
            engine.Softmax(),
        ],
    )
    params = []
    for zero in model.params:
        if zero is None:
            params.append(None)
            continue
        fan_in = int(np.prod(zero["w"].shape[1:]))
        params.append(
            {
                "w": rng.normal(0, 1 / np.sqrt(fan_in), zero["w"].shape).astype(np.float32),
                "b": rng.normal(0, 0.05, zero["b"].shape).astype(np.float32),
            }
        )
    return model.with_params(params)


def fd_jacobian(model, x, h=1e-5):
    flat = x.ravel().astype(np.float64)
    out = np.empty((model.class_count, flat.size))
    for i in range(flat.size):
        lo, hi = flat.copy(), flat.copy()
        lo[i] -= h
        hi[i] += h
        zl, _ = engine.forward(model, lo.reshape(x.shape))
        zh, _ = engine.forward(model, hi.reshape(x.shape))
        out[:, i] = (zh - zl) / (2 * h)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    model = build_demo_model(rng)
    x = rng.uniform(0.1, 0.9, (8, 8, 1))

    logits, probs = engine.forward(model, x)
    print(f"model: {model.feature_count} inputs -> {model.class_count} classes")
    print(f"logits  {np.array2string(logits, precision=3)}")
    print(f"probs   {np.array2string(probs, precision=3)}")

    t0 = time.perf_counter()
    jac = engine.jacobian_logits(model, x)
    exact_ms = (time.perf_counter() - t0) * 1000
    t0 = time.perf_counter()
    fd = fd_jacobian(model, x)
    fd_ms = (time.perf_counter() - t0) * 1000

    err = np.abs(jac - fd).max()
    rel = err / np.abs(fd).max()
    print(f"\njacobian shape {jac.shape}")
    print(f"reverse mode: {exact_ms:.2f} ms   finite differences: {fd_ms:.1f} ms")
    print(f"max abs deviation {err:.3e}   relative {rel:.3e}")

    # the log-probability gradient is a softmax-weighted combination of rows
    t = int(np.argmax(probs))
    g = engine.log_prob_gradient(model, x, t)
    manual = (1 - probs[t]) * jac[t] - (probs @ jac - probs[t] * jac[t])
    print(f"\nlog-prob gradient vs softmax combination of rows: "
          f"max dev {np.abs(g - manual).max():.3e}")


if __name__ == "__main__":
    main()
