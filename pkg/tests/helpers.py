"""Shared fixtures-in-code for the model and acceptance tests."""

import numpy as np

from quan.model import ModelConfig, QuAN
from quan.training import OptimizerState, TrainConfig, adam_step, bce_loss

GRADCHECK_CONFIG = dict(grid=(4, 4), set_size=8, d_hidden=8, n_heads=4, n_minisets=2, n_layers=1)


def density_trained_quan(seed, steps=50, lr=1e-2, config=None):
    """A QuAN after a few Adam steps on a density-threshold task.

    At initialization the stacked blocks make the set rows nearly identical,
    so the pooling scores are almost uniform and the pooling key gradient
    drops to ~1e-10, below what central differences resolve in float64.
    A short bout of training moves the weights to a generic point.
    """
    cfg = ModelConfig(**(config or GRADCHECK_CONFIG))
    model = QuAN(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    state, tc = OptimizerState(), TrainConfig(lr=lr, l2=0.0)
    params = model.named_parameters()
    for step in range(steps):
        density = rng.uniform(0.2, 0.8, 16)
        X = (rng.random((16, cfg.set_size, *cfg.grid)) < density[:, None, None, None]).astype(np.uint8)
        model.zero_grad()
        bce_loss(model.forward(X, train=True, seed=step), (density > 0.5).astype(int)).backward()
        adam_step(params, state, tc)
    model.zero_grad()
    return model


def gradcheck_batch(seed, config=None):
    cfg = config or GRADCHECK_CONFIG
    X = np.random.default_rng(100 + seed).integers(0, 2, (4, cfg["set_size"], *cfg["grid"])).astype(np.uint8)
    return X, np.array([0, 1, 0, 1])


def relu_margin(model, X, seed=3):
    """Smallest |input| over every ReLU in one training-mode forward pass.

    Central differences are only valid if no ReLU input lies within reach
    of the perturbation.
    """
    import quan.model as qm
    from quan.tensor import activation

    seen = []

    def spy(name):
        fn = activation(name)
        if name != "relu":
            return fn

        def relu(t):
            seen.append(float(np.abs(t.data).min()))
            return fn(t)
        return relu

    qm.activation, saved = spy, qm.activation
    try:
        model.forward(X, train=True, seed=seed)
    finally:
        qm.activation = saved
    return min(seen)
