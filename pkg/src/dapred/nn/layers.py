"""Layers with explicit forward/backward passes.

Tensors are channels-last: dense layers see ``(batch, features)``, 1-D
convolutional layers see ``(batch, length, channels)``.  Every layer maps a
per-sample input shape to a per-sample output shape in ``build``; nothing
here assumes the sample rank, so 2-D variants can slot in alongside.
"""
from __future__ import annotations

import math

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeMismatch",
    "Layer",
    "Dense",
    "Conv1D",
    "MaxPool1D",
    "Upsample1D",
    "Flatten",
    "Reshape",
    "Activation",
    "sigmoid",
    "swish",
    "swish_grad",
    "layer_from_spec",
]


class ShapeMismatch(ValueError):
    pass


def sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def swish(x):
    return x * sigmoid(x)


def swish_grad(x):
    s = sigmoid(x)
    return s + x * s * (1.0 - s)


@numba.njit(cache=True)
def _swish_fwd(x, y, s):
    for i in range(x.size):
        si = 1.0 / (1.0 + math.exp(-x[i]))
        s[i] = si
        y[i] = x[i] * si


@numba.njit(cache=True)
def _swish_bwd(dy, x, s, dx):
    for i in range(x.size):
        si = s[i]
        dx[i] = dy[i] * (si + x[i] * si * (1.0 - si))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class; parameterless layers only override forward/backward."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.in_shape: tuple[int, ...] | None = None
        self.out_shape: tuple[int, ...] | None = None

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator) -> tuple[int, ...]:
        self.in_shape = tuple(in_shape)
        self.out_shape = self._out_shape(self.in_shape)
        return self.out_shape

    def _out_shape(self, in_shape):
        return in_shape

    def forward(self, x: np.ndarray, invariant: bool = False):
        """Return ``(y, cache)``.  With ``invariant`` every sample is computed
        by an identically shaped product, so results do not depend on what
        else is in the batch."""
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache, need_dx: bool = True) -> tuple[np.ndarray | None, dict[str, np.ndarray]]:
        """Return ``(dx, grads)``; layers may skip ``dx`` when ``need_dx`` is false."""
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int):
        super().__init__()
        if units < 1:
            raise ValueError("units must be positive")
        self.units = int(units)

    def build(self, in_shape, rng):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"dense layer needs flat input, got {in_shape}")
        out = super().build(in_shape, rng)
        n_in = in_shape[0]
        self.params = {
            "W": glorot_uniform(rng, (n_in, self.units), n_in, self.units),
            "b": np.zeros(self.units),
        }
        return out

    def _out_shape(self, in_shape):
        return (self.units,)

    def forward(self, x, invariant=False):
        if invariant:
            return np.matmul(x[:, None, :], self.params["W"])[:, 0, :] + self.params["b"], x
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, dy, cache, need_dx=True):
        x = cache
        grads = {"W": x.T @ dy, "b": dy.sum(axis=0)}
        return (dy @ self.params["W"].T if need_dx else None), grads

    def spec(self):
        return {"kind": self.kind, "units": self.units}


class Conv1D(Layer):
    """1-D convolution (cross-correlation) with zero 'same' padding."""

    kind = "conv1d"

    def __init__(self, filters: int, kernel_size: int = 3, stride: int = 1):
        super().__init__()
        if filters < 1 or kernel_size < 1 or stride < 1:
            raise ValueError("filters, kernel_size and stride must be positive")
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)

    def _padding(self, length: int) -> tuple[int, int]:
        out = -(-length // self.stride)
        total = max((out - 1) * self.stride + self.kernel_size - length, 0)
        return total // 2, total - total // 2

    def _out_shape(self, in_shape):
        return (-(-in_shape[0] // self.stride), self.filters)

    def build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"conv1d needs (length, channels) input, got {in_shape}")
        out = super().build(in_shape, rng)
        k, c_in = self.kernel_size, in_shape[1]
        self.params = {
            "W": glorot_uniform(rng, (k, c_in, self.filters), k * c_in, k * self.filters),
            "b": np.zeros(self.filters),
        }
        return out

    def _columns(self, x):
        left, right = self._padding(x.shape[1])
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        win = sliding_window_view(xp, self.kernel_size, axis=1)[:, :: self.stride]
        # (B, L_out, C_in, k) -> (B, L_out, k, C_in) to match W's layout
        return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(
            x.shape[0] * win.shape[1], -1), xp.shape[1], left

    def forward(self, x, invariant=False):
        if self.stride != 1:
            return self._forward_cols(x)
        bsz, length, c_in = x.shape
        left, right = self._padding(length)
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        lp = xp.shape[1]
        w = self.params["W"]
        if invariant:
            # stacked per-sample products: results independent of the batch
            taps = [np.matmul(xp, w[k]) for k in range(self.kernel_size)]
        else:
            flat = xp.reshape(bsz * lp, c_in)
            taps = [(flat @ w[k]).reshape(bsz, lp, self.filters) for k in range(self.kernel_size)]
        y = taps[0][:, :length].copy()
        for k in range(1, self.kernel_size):
            y += taps[k][:, k: k + length]
        y += self.params["b"]
        return y, (xp, x.shape, left)

    def backward(self, dy, cache, need_dx=True):
        if self.stride != 1:
            return self._backward_cols(dy, cache)
        xp, x_shape, left = cache
        bsz, lp, c_in = xp.shape
        length = x_shape[1]
        w = self.params["W"]
        flat = xp.reshape(bsz * lp, c_in)
        gw = np.empty_like(w)
        dxp = np.zeros((bsz * lp, c_in)) if need_dx else None
        shifted = np.zeros((bsz, lp, self.filters))
        for k in range(self.kernel_size):
            # output l pairs with padded input l + k
            shifted.fill(0.0)
            shifted[:, k: k + length] = dy
            sf = shifted.reshape(bsz * lp, self.filters)
            gw[k] = flat.T @ sf
            if need_dx:
                dxp += sf @ w[k].T
        grads = {"W": gw, "b": dy.sum(axis=(0, 1))}
        if not need_dx:
            return None, grads
        return dxp.reshape(bsz, lp, c_in)[:, left: left + length], grads

    def _forward_cols(self, x):
        cols, padded_len, left = self._columns(x)
        w = self.params["W"].reshape(-1, self.filters)
        l_out = cols.shape[0] // x.shape[0]
        y = np.matmul(cols.reshape(x.shape[0], l_out, -1), w) + self.params["b"]
        return y, (cols, x.shape, padded_len, left)

    def _backward_cols(self, dy, cache):
        cols, x_shape, padded_len, left = cache
        bsz, l_out, _ = dy.shape
        dy2 = dy.reshape(-1, self.filters)
        w = self.params["W"].reshape(-1, self.filters)
        grads = {"W": (cols.T @ dy2).reshape(self.params["W"].shape), "b": dy2.sum(axis=0)}
        dcols = (dy2 @ w.T).reshape(bsz, l_out, self.kernel_size, x_shape[2])
        dxp = np.zeros((bsz, padded_len, x_shape[2]))
        span = (l_out - 1) * self.stride + 1
        for k in range(self.kernel_size):
            dxp[:, k: k + span: self.stride] += dcols[:, :, k]
        return dxp[:, left: left + x_shape[1]], grads

    def spec(self):
        return {"kind": self.kind, "filters": self.filters,
                "kernel_size": self.kernel_size, "stride": self.stride}


class MaxPool1D(Layer):
    """Non-overlapping max pooling; ties go to the lowest index."""

    kind = "maxpool1d"

    def __init__(self, size: int = 2):
        super().__init__()
        if size < 1:
            raise ValueError("pool size must be positive")
        self.size = int(size)

    def _out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[0] < self.size:
            raise ShapeMismatch(f"cannot pool {in_shape} with size {self.size}")
        return (in_shape[0] // self.size, in_shape[1])

    def forward(self, x, invariant=False):
        bsz, length, ch = x.shape
        l_out = length // self.size
        xr = x[:, : l_out * self.size].reshape(bsz, l_out, self.size, ch)
        if self.size == 2:
            first = xr[:, :, 0] >= xr[:, :, 1]
            return np.where(first, xr[:, :, 0], xr[:, :, 1]), (first, x.shape)
        arg = xr.argmax(axis=2)
        y = np.take_along_axis(xr, arg[:, :, None, :], axis=2)[:, :, 0, :]
        return y, (arg, x.shape)

    def backward(self, dy, cache, need_dx=True):
        arg, x_shape = cache
        bsz, l_out, ch = dy.shape
        dxr = np.zeros((bsz, l_out, self.size, ch))
        if self.size == 2:
            dxr[:, :, 0] = np.where(arg, dy, 0.0)
            dxr[:, :, 1] = np.where(arg, 0.0, dy)
        else:
            np.put_along_axis(dxr, arg[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros(x_shape)
        dx[:, : l_out * self.size] = dxr.reshape(bsz, l_out * self.size, ch)
        return dx, {}

    def spec(self):
        return {"kind": self.kind, "size": self.size}


class Upsample1D(Layer):
    """Nearest-neighbour repetition along the length axis."""

    kind = "upsample1d"

    def __init__(self, factor: int = 2):
        super().__init__()
        if factor < 1:
            raise ValueError("upsampling factor must be positive")
        self.factor = int(factor)

    def _out_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"upsample1d needs (length, channels) input, got {in_shape}")
        return (in_shape[0] * self.factor, in_shape[1])

    def forward(self, x, invariant=False):
        return np.repeat(x, self.factor, axis=1), None

    def backward(self, dy, cache, need_dx=True):
        bsz, length, ch = dy.shape
        return dy.reshape(bsz, length // self.factor, self.factor, ch).sum(axis=2), {}

    def spec(self):
        return {"kind": self.kind, "factor": self.factor}


class Flatten(Layer):
    kind = "flatten"

    def _out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, invariant=False):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, need_dx=True):
        return dy.reshape(cache), {}


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in self.shape):
            raise ValueError("reshape sizes must be positive")

    def _out_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeMismatch(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x, invariant=False):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, dy, cache, need_dx=True):
        return dy.reshape(cache), {}

    def spec(self):
        return {"kind": self.kind, "shape": list(self.shape)}


class Activation(Layer):
    kind = "activation"

    def __init__(self, name: str = "swish"):
        super().__init__()
        if name not in ("swish", "linear"):
            raise ValueError(f"unknown activation {name!r}")
        self.name = name

    def forward(self, x, invariant=False):
        if self.name == "linear":
            return x, None
        x = np.ascontiguousarray(x, dtype=np.float64)
        y, s = np.empty_like(x), np.empty_like(x)
        _swish_fwd(x.reshape(-1), y.reshape(-1), s.reshape(-1))
        return y, (x, s)

    def backward(self, dy, cache, need_dx=True):
        if self.name == "linear":
            return dy, {}
        x, s = cache
        dy = np.ascontiguousarray(dy, dtype=np.float64)
        dx = np.empty_like(x)
        _swish_bwd(dy.reshape(-1), x.reshape(-1), s.reshape(-1), dx.reshape(-1))
        return dx, {}

    def spec(self):
        return {"kind": self.kind, "name": self.name}


_KINDS = {cls.kind: cls for cls in (Dense, Conv1D, MaxPool1D, Upsample1D, Flatten, Reshape, Activation)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**spec)
