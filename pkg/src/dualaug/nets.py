"""Minimal fully-connected networks with explicit forward/backward passes.

All the learned components in this toolkit (policy encoder and head, the
random-distillation pair) are small MLPs, so they share one implementation:
float64 numpy, tanh hidden units, linear output, Gaussian init with
std = 1/sqrt(fan_in).  Gradients are hand-derived, which keeps training
bit-deterministic and lets tests check them against finite differences.
"""

from __future__ import annotations

import numpy as np


class MLP:
    """Feed-forward net: tanh on hidden layers, identity (or tanh) output."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], out_tanh: bool = False):
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be non-empty and parallel")
        self.weights = weights
        self.biases = biases
        self.out_tanh = out_tanh

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, out_tanh: bool = False) -> "MLP":
        """Initialize for layer sizes [d_in, h1, ..., d_out]."""
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            std = 1.0 / np.sqrt(fan_in)
            weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, out_tanh=out_tanh)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping the per-layer activations for backward()."""
        acts = [x]
        a = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = np.tanh(z) if (i < last or self.out_tanh) else z
            acts.append(a)
        return a, acts

    def backward(
        self, acts: list[np.ndarray], grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Backprop grad_out (dL/d output) through the cached activations.

        Returns (weight grads, bias grads, grad wrt the input batch).
        """
        grads_w = [np.empty(0)] * self.n_layers
        grads_b = [np.empty(0)] * self.n_layers
        delta = grad_out * (1.0 - acts[-1] ** 2) if self.out_tanh else grad_out
        for i in range(self.n_layers - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * (1.0 - acts[i] ** 2)  # tanh'
        return grads_w, grads_b, delta

    def sgd_step(self, grads_w, grads_b, lr: float) -> None:
        for i in range(self.n_layers):
            self.weights[i] -= lr * grads_w[i]
            self.biases[i] -= lr * grads_b[i]

    # -- flat parameter view (finite differences, checkpoints) --------------

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        off = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[off : off + w.size].reshape(w.shape).copy()
            off += w.size
            self.biases[i] = flat[off : off + b.size].copy()
            off += b.size
        if off != flat.size:
            raise ValueError(f"flat vector has {flat.size} values, expected {off}")

    def copy(self) -> "MLP":
        return MLP(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            out_tanh=self.out_tanh,
        )
