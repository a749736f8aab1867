"""Shared test helpers: finite-difference oracle and gradient flattening."""

import numpy as np


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. every parameter entry."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.data[idx]
            p.data = p.data.copy()
            p.data[idx] = orig + h
            up = loss_fn()
            p.data = p.data.copy()
            p.data[idx] = orig - h
            down = loss_fn()
            p.data = p.data.copy()
            p.data[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def flatten_grads(model) -> np.ndarray:
    g = np.concatenate([p.grad.ravel() for p in model.parameters()])
    for p in model.parameters():
        p.grad = None
    return g
