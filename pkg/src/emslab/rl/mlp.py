"""Small fully connected networks with reverse-mode gradients and inverted dropout."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, UsageError

ACTIVATIONS = ("tanh", "linear")


@dataclass
class Mlp:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    out_activation: str = "linear"
    dropout_rate: float = 0.0
    _cache: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.out_activation not in ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.out_activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ShapeError(f"layer {i}: weight {w.shape}/bias {b.shape}, expected {expect}")

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator, out_activation="linear",
             dropout_rate=0.0, final_scale=3e-3) -> "Mlp":
        """Fan-in uniform init for hidden layers, small uniform init for the output layer."""
        weights, biases = [], []
        n = len(layer_sizes) - 1
        for i in range(n):
            fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
            lim = final_scale if i == n - 1 else 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
            biases.append(rng.uniform(-lim, lim, fan_out))
        return cls(list(layer_sizes), weights, biases, out_activation, dropout_rate)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.out_activation, self.dropout_rate)

    def forward(self, x, dropout: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Evaluate the network on one input vector or a (batch, features) array.

        With ``dropout`` each layer input is masked with keep probability
        1 - dropout_rate and rescaled. Activations are cached for :meth:`backward`.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.layer_sizes[0]:
            raise ShapeError(f"input has {h.shape[1]} features, network expects {self.layer_sizes[0]}")
        use_drop = dropout and self.dropout_rate > 0
        if use_drop and rng is None:
            raise UsageError("dropout forward pass needs an rng")
        keep = 1.0 - self.dropout_rate
        inputs, masks, outs = [], [], []
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if use_drop:
                mask = (rng.random(h.shape) < keep) / keep
                h = h * mask
            else:
                mask = None
            inputs.append(h)
            masks.append(mask)
            z = h @ w + b
            pre_out = z
            h = z if (i == n - 1 and self.out_activation == "linear") else np.tanh(z)
            outs.append(h)
        self._cache = {"inputs": inputs, "masks": masks, "outs": outs, "single": single,
                       "pre_out": pre_out}
        return h[0] if single else h

    @property
    def last_preactivation(self) -> np.ndarray:
        """Output-layer pre-activation from the most recent forward pass."""
        if self._cache is None:
            raise UsageError("no forward pass has been run")
        z = self._cache["pre_out"]
        return z[0] if self._cache["single"] else z

    def backward(self, grad_out, grad_preact=None) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of sum(grad_out * output) w.r.t. parameters and input.

        ``grad_preact``, if given, is an extra gradient on the output layer's
        pre-activation. Returns ``(grads, grad_input)`` where ``grads`` is
        ordered like :attr:`params`. Uses the activations and dropout masks of
        the most recent forward pass.
        """
        if self._cache is None:
            raise UsageError("backward called without a cached forward pass")
        c = self._cache
        g = np.asarray(grad_out, dtype=float)
        if c["single"]:
            g = g[None, :]
        n = len(self.weights)
        grads: list[np.ndarray] = [None] * (2 * n)
        for i in range(n - 1, -1, -1):
            out = c["outs"][i]
            if not (i == n - 1 and self.out_activation == "linear"):
                g = g * (1.0 - out * out)
            if i == n - 1 and grad_preact is not None:
                gp = np.asarray(grad_preact, dtype=float)
                g = g + (gp[None, :] if c["single"] else gp)
            grads[2 * i] = c["inputs"][i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if c["masks"][i] is not None:
                g = g * c["masks"][i]
        grad_in = g[0] if c["single"] else g
        return grads, grad_in


def forward(net: Mlp, x, dropout_on: bool = False, rng_seed=None) -> np.ndarray:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return net.forward(x, dropout=dropout_on, rng=rng)


def backward(net: Mlp, x, upstream_grad, dropout_on: bool = False, rng_seed=None):
    """Forward then backward on ``x``; the paired pass reuses the same dropout masks."""
    forward(net, x, dropout_on, rng_seed)
    return net.backward(upstream_grad)[0]


class Adam:
    """Per-parameter adaptive moment estimation."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
                "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    def load_state(self, state: dict) -> None:
        if len(state["m"]) != len(self.m):
            raise ShapeError("optimizer state does not match parameter count")
        m = [np.array(a, dtype=float) for a in state["m"]]
        v = [np.array(a, dtype=float) for a in state["v"]]
        for old, new in zip(self.m + self.v, m + v):
            if old.shape != new.shape:
                raise ShapeError(f"optimizer moment shape {new.shape} != {old.shape}")
        self.m, self.v, self.t = m, v, int(state["t"])
        self.lr, self.beta1, self.beta2, self.eps = state["lr"], state["beta1"], state["beta2"], state["eps"]
