"""Small tanh MLPs with hand-written backpropagation, plus Adam."""
from __future__ import annotations

import numpy as np


class MLP:
    """Fully connected net: tanh hidden layers, linear output.

    Weights are stored as ``(fan_in, fan_out)`` so a batch ``x`` of shape
    ``(B, fan_in)`` maps to ``x @ W + b``.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None, out_scale: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        n_layers = len(self.sizes) - 1
        for k, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            # orthogonal init, gain sqrt(2) on hidden layers, out_scale on the head
            gain = out_scale if k == n_layers - 1 else np.sqrt(2.0)
            a = rng.standard_normal((max(fi, fo), min(fi, fo)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            W = q if fi >= fo else q.T
            self.weights.append(gain * W[:fi, :fo].copy())
            self.biases.append(np.zeros(fo))

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[1]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if k == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        """Gradients of ``sum(dout * output)`` w.r.t. every parameter, same order as ``params``."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = np.atleast_2d(dout)
        for k in range(len(self.weights) - 1, -1, -1):
            h_in = acts[k]
            grads_w[k] = h_in.T @ delta
            grads_b[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] ** 2)
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out += [gw, gb]
        return out

    def __call__(self, x):
        return self.forward(x)[0]


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def unflatten_into(arrays, flat) -> None:
    i = 0
    for a in arrays:
        n = a.size
        a[...] = flat[i:i + n].reshape(a.shape)
        i += n
    if i != flat.size:
        raise ValueError("flat vector length does not match parameter count")


class Adam:
    def __init__(self, n: int, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)
