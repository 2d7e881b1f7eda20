"""Shared independent oracles for gradient and forward-pass checks."""

import numpy as np


def finite_diff_grad(loss_fn, flat, coords, eps=1e-6):
    """Central-difference gradient of loss_fn at the given flat coordinates."""
    grads = {}
    for c in coords:
        stepped = flat.copy()
        h = eps * max(1.0, abs(flat[c]))
        stepped[c] = flat[c] + h
        up = loss_fn(stepped)
        stepped[c] = flat[c] - h
        down = loss_fn(stepped)
        grads[c] = (up - down) / (2.0 * h)
    return grads


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def mlp_forward_loops(weights, biases, x):
    """Step-by-step scalar-loop forward pass (oracle for the vectorized MLP)."""
    a = np.array(x, dtype=float)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = np.zeros(w.shape[1])
        for j in range(w.shape[1]):
            s = b[j]
            for k in range(w.shape[0]):
                s += a[k] * w[k, j]
            z[j] = s
        a = z if i == last else np.tanh(z)
    return a
