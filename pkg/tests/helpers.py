"""Shared builders for geometry and acceptance tests."""

import numpy as np

from plate.adapters import FullFineTune
from plate.bench import gen_two_moons
from plate.geometry import UpdateSubspace
from plate.model import ModelLayout, TrainConfig, forward, init_mlp, params_to_vector, train
from plate.numerics import SeededRng


def train_two_moons_model(seed=0, hidden=(16, 16, 16), n=400, epochs=150, lr=1e-2, noise=0.1):
    """A trained 3-layer two-moons classifier plus its training data."""
    data = gen_two_moons(n, noise, 0.0, (0.0, 0.0), seed=SeededRng(seed).child(1).seed)
    model = init_mlp(2, list(hidden), "relu", {"task1": 2}, seed=SeededRng(seed).child(2).seed)
    cfg = TrainConfig(epochs=epochs, batch_size=32, learning_rate=lr,
                      seed=SeededRng(seed).child(3).seed)
    train(model, [FullFineTune()] * len(hidden), data.inputs, data.targets, "task1", cfg)
    return model, data


def train_interpolating_regressor(seed=0, n=24, hidden=16, epochs=4000, lr=1e-2):
    """Overparameterized tanh regressor driven to near-zero residual."""
    gen = SeededRng(seed).generator()
    x = gen.standard_normal((n, 3))
    y = np.tanh(x @ np.array([1.0, -0.5, 0.25]))[:, None]
    model = init_mlp(3, [hidden, hidden], "tanh", {"task1": 1}, seed=seed + 1)
    cfg = TrainConfig(epochs=epochs, batch_size=n, learning_rate=lr, loss="mse", seed=seed + 2)
    _, curve = train(model, [FullFineTune()] * 2, x, y, "task1", cfg)
    return model, x, y, curve


def layer_feature_matrices(model, x):
    """Inputs seen by each layer when the network runs on ``x``."""
    _, cache = forward(model, None, x, None)
    return cache["inputs"]


def nullspace_update(model, x, seed=0, scale=0.1):
    """A flat parameter update orthogonal to every layer's features on ``x``.

    Rows of each layer delta live in the nullspace of that layer's
    feature matrix; layers whose features span the full input width get
    a zero delta.  Heads and biases are untouched.
    """
    layout = ModelLayout.of(model)
    table = layout.slices()
    feats = layer_feature_matrices(model, x)
    flat = np.zeros(layout.size)
    gen = SeededRng(seed).generator()
    for idx, layer in enumerate(model.layers):
        h = feats[idx]
        d_in = layer.weight.shape[1]
        _, svals, vt = np.linalg.svd(h, full_matrices=True)
        rank = int(np.sum(svals > max(h.shape) * np.finfo(float).eps * (svals[0] if svals.size else 0)))
        null = vt[rank:].T  # (d_in, q)
        if null.shape[1] == 0:
            continue
        coeff = gen.standard_normal((layer.weight.shape[0], null.shape[1]))
        delta = coeff @ null.T
        delta *= scale / max(np.linalg.norm(delta), 1e-300)
        ws, we, shape = table[f"layers.{idx}.weight"]
        flat[ws:we] = delta.ravel()
    return flat


def nullspace_subspace(model, x, dim, seed=0):
    """Explicit orthonormal family inside the per-layer feature nullspaces."""
    layout = ModelLayout.of(model)
    cols = []
    for j in range(dim):
        cols.append(nullspace_update(model, x, seed=seed * 1000 + j, scale=1.0))
    raw = np.stack(cols, axis=1)
    q, _ = np.linalg.qr(raw)
    return UpdateSubspace.from_columns(layout, q, provenance="nullspace")


def flat_gradient_norm(model, x, y, head, loss):
    from plate.geometry import _full_gradient

    theta = params_to_vector(model).data
    return float(np.linalg.norm(_full_gradient(model, theta, x, y, head, loss)))
