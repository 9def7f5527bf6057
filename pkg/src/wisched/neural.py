"""Minimal dense networks with exact reverse-mode gradients.

Hand-rolled on numpy so tests can check the backward pass against central
finite differences to machine-level tolerance, and so optimizer state is a
plain array dict that serializes into a flat checkpoint. Hidden layers use
tanh by default (relu available); outputs are linear. Weights and biases are
initialized uniformly in +-1/sqrt(fan_in) from a caller-supplied generator.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Mlp",
    "Adam",
    "GradBuffer",
    "softmax",
    "entropy",
    "forward_actor",
    "forward_critic",
]

_ACTIVATIONS = ("tanh", "relu")


class Mlp:
    """Fully connected network. ``sizes`` lists layer widths input-first;
    ``forward`` caches activations so ``backward`` can run exact reverse mode.
    """

    def __init__(self, sizes, activation: str = "tanh", rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng()
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._cache: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    # -- core passes -------------------------------------------------------

    def _act(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        return 1.0 - a * a if self.activation == "tanh" else (z > 0.0).astype(float)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass; input shape (N, sizes[0]) or (sizes[0],)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} != expected {self.sizes[0]}")
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if l == last else self._act(z)
            acts.append(h)
        self._cache = (acts, pre)
        return h

    def backward(self, grad_out: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Exact gradients of sum(grad_out * output) w.r.t. every parameter,
        for the most recent forward batch. Returns [(dW, db), ..] layer-first.
        """
        if self._cache is None:
            raise RuntimeError("backward called with no cached forward pass")
        acts, pre = self._cache
        delta = np.atleast_2d(np.asarray(grad_out, dtype=float))
        if delta.shape != acts[-1].shape:
            raise ValueError(f"grad shape {delta.shape} != output shape {acts[-1].shape}")
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            grads[l] = (acts[l].T @ delta, delta.sum(axis=0))
            if l > 0:
                delta = (delta @ self.weights[l].T) * self._act_grad(pre[l - 1], acts[l])
        return grads

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def export_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{l}"] = w
            out[f"{prefix}.b{l}"] = b
        return out

    @staticmethod
    def from_arrays(sizes, activation: str, prefix: str, arrays) -> "Mlp":
        net = Mlp(sizes, activation=activation, rng=np.random.default_rng(0))
        for l in range(len(net.weights)):
            w = np.asarray(arrays[f"{prefix}.W{l}"], dtype=float)
            b = np.asarray(arrays[f"{prefix}.b{l}"], dtype=float)
            if w.shape != net.weights[l].shape or b.shape != net.biases[l].shape:
                raise ValueError("checkpoint layer shapes do not match the declared sizes")
            net.weights[l] = w.copy()
            net.biases[l] = b.copy()
        return net


class GradBuffer:
    """Accumulates scaled parameter gradients shaped like a given network."""

    def __init__(self, net: Mlp) -> None:
        self.grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]

    def add(self, grads, scale: float = 1.0) -> None:
        for (gw, gb), (dw, db) in zip(self.grads, grads):
            gw += scale * dw
            gb += scale * db

    def as_param_list(self) -> list[np.ndarray]:
        out = []
        for gw, gb in self.grads:
            out.extend((gw, gb))
        return out


class Adam:
    """Adam with bias correction; state lives in plain arrays for checkpoints."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Descend: params <- params - lr * mhat / (sqrt(vhat) + eps)."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient count does not match optimizer state")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def export_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.int64)}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{k}"] = m
            out[f"{prefix}.v{k}"] = v
        return out

    def load_arrays(self, prefix: str, arrays) -> None:
        self.t = int(np.asarray(arrays[f"{prefix}.t"])[0])
        for k in range(len(self.m)):
            self.m[k] = np.asarray(arrays[f"{prefix}.m{k}"], dtype=float).copy()
            self.v[k] = np.asarray(arrays[f"{prefix}.v{k}"], dtype=float).copy()


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for stability; rows sum to 1."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row in nats, with 0*log(0) = 0. Lies in
    [0, log(num_actions)]."""
    p = np.atleast_2d(np.asarray(probs, dtype=float))
    logs = np.zeros_like(p)
    np.log(p, out=logs, where=p > 0.0)
    return -(p * logs).sum(axis=1)


def forward_actor(net: Mlp, obs: np.ndarray) -> np.ndarray:
    """Action distribution(s) for observation row(s)."""
    return softmax(net.forward(obs))


def forward_critic(net: Mlp, state: np.ndarray) -> np.ndarray:
    """Scalar value per state row."""
    return net.forward(state)[:, 0]
