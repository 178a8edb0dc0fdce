from __future__ import annotations

import numpy as np

from .layers import Layer, ShapeMismatch, layer_from_spec

__all__ = ["Network", "mse_loss"]


class Network:
    """An ordered stack of layers built for a fixed per-sample input shape.

    Parameters are initialised from ``seed`` when the network is built, so two
    networks with the same specs and seed are bitwise identical.
    """

    def __init__(self, layers: list[Layer], input_shape, seed: int = 0, name: str = "net"):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in np.atleast_1d(input_shape))
        self.seed = int(seed)
        self.name = name
        self.forward_calls = 0
        rng = np.random.default_rng(self.seed)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.build(shape, rng)
            except ShapeMismatch as exc:
                raise ShapeMismatch(f"{name} layer {i} ({layer.kind}): {exc}") from None
        self.output_shape = shape

    @classmethod
    def from_specs(cls, specs: list[dict], input_shape, seed: int = 0, name: str = "net") -> "Network":
        return cls([layer_from_spec(s) for s in specs], input_shape, seed=seed, name=name)

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (updated in place by optimisers)."""
        return [layer.params[k] for layer in self.layers for k in sorted(layer.params)]

    def parameter_names(self) -> list[str]:
        return [f"{i}.{layer.kind}.{k}" for i, layer in enumerate(self.layers) for k in sorted(layer.params)]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x: np.ndarray, invariant: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"{self.name} expects samples of shape {self.input_shape}, got {x.shape[1:]}")
        self.forward_calls += 1
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, invariant)
            caches.append(cache)
        return x, caches

    def __call__(self, x: np.ndarray, invariant: bool = False) -> np.ndarray:
        return self.forward(x, invariant)[0]

    def predict(self, x: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Inference pass without caches, counted as one forward call.

        Runs in batch-invariant mode, so splitting into chunks does not change
        any output bit.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"{self.name} expects samples of shape {self.input_shape}, got {x.shape[1:]}")
        self.forward_calls += 1
        out = np.empty((x.shape[0],) + self.output_shape)
        for start in range(0, x.shape[0], chunk):
            y = x[start: start + chunk]
            for layer in self.layers:
                y, _ = layer.forward(y, True)
            out[start: start + chunk] = y
        return out

    def backward(self, caches, dy: np.ndarray, input_grad: bool = True):
        """Gradients for ``parameters()`` order and the gradient w.r.t. the
        input (``None`` when ``input_grad`` is false)."""
        if len(caches) != len(self.layers):
            raise ShapeMismatch("cache does not belong to this network")
        dy = np.asarray(dy, dtype=np.float64)
        if dy.shape[1:] != self.output_shape:
            raise ShapeMismatch(f"{self.name} output gradient has shape {dy.shape[1:]}, expected {self.output_shape}")
        per_layer = []
        last = len(self.layers) - 1
        for i, (layer, cache) in enumerate(zip(reversed(self.layers), reversed(caches))):
            dy, g = layer.backward(dy, cache, need_dx=input_grad or i < last)
            per_layer.append(g)
        per_layer.reverse()
        grads = [g[k] for g, layer in zip(per_layer, self.layers) for k in sorted(layer.params)]
        return grads, dy

    def get_state(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def set_state(self, state: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(state) != len(params):
            raise ShapeMismatch("state does not match network parameters")
        for p, s in zip(params, state):
            if p.shape != s.shape:
                raise ShapeMismatch(f"parameter shape {p.shape} vs stored {s.shape}")
            p[...] = s


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of the squared 2-norm per sample, and its gradient."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    bsz = pred.shape[0]
    return float(np.sum(diff * diff) / bsz), (2.0 / bsz) * diff
