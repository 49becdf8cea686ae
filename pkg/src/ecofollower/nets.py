"""Small dense networks with explicit forward/backward passes.

Everything is float64 numpy; gradients are exact analytic backprop and are
cross-checked against central finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

POLICY_FORMAT_VERSION = 1


class PolicyLoadError(RuntimeError):
    """Policy file is missing, malformed, or shaped differently than expected."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name: str, out: np.ndarray) -> np.ndarray:
    # derivatives expressed through the activation output
    if name == "tanh":
        return 1.0 - out * out
    if name == "linear":
        return np.ones_like(out)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray


class Mlp:
    """Fully connected net: sizes[0] -> ... -> sizes[-1].

    Hidden layers share one activation; the output layer has its own
    (tanh for the actor's [-1, 1] squash, linear for the critic).
    """

    def __init__(self, sizes, weights, biases, hidden_activation="tanh",
                 output_activation="linear"):
        self.sizes = list(sizes)
        self.weights = weights
        self.biases = biases
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        n_layers = len(self.sizes) - 1
        if len(weights) != n_layers or len(biases) != n_layers:
            raise ValueError("parameter count does not match layer sizes")
        for l in range(n_layers):
            if weights[l].shape != (self.sizes[l], self.sizes[l + 1]):
                raise ValueError(
                    f"layer {l}: weight shape {weights[l].shape} != "
                    f"({self.sizes[l]}, {self.sizes[l + 1]})")
            if biases[l].shape != (self.sizes[l + 1],):
                raise ValueError(f"layer {l}: bias shape {biases[l].shape}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, hidden_activation="tanh",
             output_activation="linear") -> "Mlp":
        """Glorot-uniform initialization."""
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(sizes, weights, biases, hidden_activation, output_activation)

    def _activation_of(self, layer: int) -> str:
        return self.output_activation if layer == len(self.weights) - 1 else self.hidden_activation

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = _act(self._activation_of(l), h @ w + b)
        return h

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping per-layer outputs for backward()."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        outs = [h]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = _act(self._activation_of(l), h @ w + b)
            outs.append(h)
        return h, outs

    def backward(self, cache: list[np.ndarray], dy: np.ndarray) -> Grads:
        """Backprop dL/dy through the cached pass; returns parameter and input grads."""
        dw = [None] * len(self.weights)
        db = [None] * len(self.biases)
        grad = np.asarray(dy, dtype=float)
        for l in range(len(self.weights) - 1, -1, -1):
            dz = grad * _act_deriv(self._activation_of(l), cache[l + 1])
            dw[l] = cache[l].T @ dz
            db[l] = dz.sum(axis=0)
            grad = dz @ self.weights[l].T
        return Grads(weights=dw, biases=db, inputs=grad)

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases],
                   self.hidden_activation, self.output_activation)


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """Blend target parameters toward the online net: t <- tau*o + (1-tau)*t."""
    for tp, op in zip(target.params(), online.params()):
        tp *= 1.0 - tau
        tp += tau * op


class Adam:
    """Per-parameter adaptive moments (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def save_policy(net: Mlp, path) -> None:
    """Versioned JSON container; floats round-trip bit-exactly."""
    obj = {
        "version": POLICY_FORMAT_VERSION,
        "sizes": net.sizes,
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_policy(path, expect_sizes=None) -> Mlp:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PolicyLoadError(f"cannot read policy file {path}: {exc}") from exc
    if not isinstance(obj, dict) or "version" not in obj:
        raise PolicyLoadError(f"{path}: not a policy file (missing version field)")
    if obj["version"] != POLICY_FORMAT_VERSION:
        raise PolicyLoadError(f"{path}: unsupported policy version {obj['version']}")
    try:
        sizes = [int(s) for s in obj["sizes"]]
        weights = [np.asarray(w, dtype=float) for w in obj["weights"]]
        biases = [np.asarray(b, dtype=float) for b in obj["biases"]]
        net = Mlp(sizes, weights, biases, obj["hidden_activation"], obj["output_activation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyLoadError(f"{path}: malformed policy: {exc}") from exc
    if expect_sizes is not None and list(expect_sizes) != sizes:
        raise PolicyLoadError(f"{path}: layer sizes {sizes} do not match expected {list(expect_sizes)}")
    return net
