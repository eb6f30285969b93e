"""Layers with hand-written backward passes.

Sequence tensors are channel-first, ``(batch, channels, length)``. Every
layer caches what its backward pass needs during ``forward`` and raises if
``backward`` is called without one.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict = {}
        self.grads: dict = {}
        self.buffers: dict = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _need_cache(self):
        if self._cache is None:
            raise BackwardError(f"{self.kind}: backward called without a preceding forward")
        return self._cache

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ValueError("dense sizes must be positive")
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot(rng, (in_features, out_features), in_features, out_features)
        self.params["b"] = np.zeros(out_features)
        self.zero_grad()

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense({self.in_features}->{self.out_features}): got input shape {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x = self._need_cache()
        self.grads["W"] += x.T @ grad
        self.grads["b"] += grad.sum(axis=0)
        return grad @ self.params["W"].T

    def spec(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}


class Conv1d(Layer):
    """Valid (unpadded) 1-D cross-correlation."""

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if min(in_channels, out_channels, kernel, stride) < 1:
            raise ValueError("conv1d sizes must be positive")
        self.in_channels, self.out_channels, self.kernel, self.stride = in_channels, out_channels, kernel, stride
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot(rng, (out_channels, in_channels, kernel), in_channels * kernel, out_channels * kernel)
        self.params["b"] = np.zeros(out_channels)
        self.zero_grad()

    def out_length(self, length: int) -> int:
        return (length - self.kernel) // self.stride + 1

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels or x.shape[2] < self.kernel:
            raise ShapeError(
                f"conv1d({self.in_channels}->{self.out_channels}, k={self.kernel}): got input shape {x.shape}")
        cols = sliding_window_view(x, self.kernel, axis=2)[:, :, :: self.stride, :]  # (B, C, Lo, K)
        B, C, Lo, K = cols.shape
        flat = cols.transpose(0, 2, 1, 3).reshape(B * Lo, C * K)
        W = self.params["W"].reshape(self.out_channels, C * K)
        out = (flat @ W.T).reshape(B, Lo, self.out_channels).transpose(0, 2, 1) + self.params["b"][None, :, None]
        self._cache = (x.shape, flat)
        return out

    def backward(self, grad):
        shape, flat = self._need_cache()
        B, C, L = shape
        Lo = grad.shape[2]
        g = grad.transpose(0, 2, 1).reshape(B * Lo, self.out_channels)
        self.grads["W"] += (g.T @ flat).reshape(self.params["W"].shape)
        self.grads["b"] += grad.sum(axis=(0, 2))
        dcols = (g @ self.params["W"].reshape(self.out_channels, -1)).reshape(B, Lo, C, self.kernel)
        dx = np.zeros(shape)
        span = self.stride * (Lo - 1) + 1
        for k in range(self.kernel):
            dx[:, :, k:k + span:self.stride] += dcols[:, :, :, k].transpose(0, 2, 1)
        return dx

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride}


class BatchNorm(Layer):
    """Normalises over the batch (and length, for 3-D input) per feature."""

    kind = "batch_norm"

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.features, self.momentum, self.eps = features, momentum, eps
        self.params["gamma"] = np.ones(features)
        self.params["beta"] = np.zeros(features)
        self.buffers["running_mean"] = np.zeros(features)
        self.buffers["running_var"] = np.ones(features)
        self.zero_grad()

    def _axes(self, x):
        if x.ndim == 2 and x.shape[1] == self.features:
            return (0,), (1, -1)
        if x.ndim == 3 and x.shape[1] == self.features:
            return (0, 2), (1, -1, 1)
        raise ShapeError(f"batch_norm({self.features}): got input shape {x.shape}")

    def forward(self, x, train=False):
        axes, bshape = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            n = x.size // self.features
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            unbiased = var * n / max(n - 1, 1)
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv.reshape(bshape)
        self._cache = (xhat, inv, axes, train)
        g, b = self.params["gamma"].reshape(bshape), self.params["beta"].reshape(bshape)
        return g * xhat + b

    def backward(self, grad):
        xhat, inv, axes, train = self._need_cache()
        self.grads["gamma"] += (grad * xhat).sum(axis=axes)
        self.grads["beta"] += grad.sum(axis=axes)
        expand = (lambda a: a) if grad.ndim == 2 else (lambda a: a[None, :, None])
        dxhat = grad * expand(self.params["gamma"])
        if not train:
            return dxhat * expand(inv)
        n = grad.size // self.features
        s1 = expand(dxhat.sum(axis=axes))
        s2 = expand((dxhat * xhat).sum(axis=axes))
        return expand(inv) / n * (n * dxhat - s1 - xhat * s2)

    def spec(self):
        return {"kind": self.kind, "features": self.features, "momentum": self.momentum, "eps": self.eps}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._cache = np.ones_like(x)
            return x
        mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._need_cache()

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


_GELU_C = math.sqrt(2.0 / math.pi)


class GELU(Layer):
    """tanh approximation."""

    kind = "gelu"

    def forward(self, x, train=False):
        u = _GELU_C * (x + 0.044715 * x * x * x)
        t = np.tanh(u)
        self._cache = (x, t)
        return 0.5 * x * (1.0 + t)

    def backward(self, grad):
        x, t = self._need_cache()
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad):
        return grad * self._need_cache()


class MaxPool1d(Layer):
    """Max over windows along the length axis; ``kernel=None`` pools globally."""

    kind = "max_pool1d"

    def __init__(self, kernel: Optional[int] = 2, stride: Optional[int] = None):
        super().__init__()
        if kernel is not None and kernel < 1:
            raise ValueError("pool kernel must be positive")
        self.kernel = kernel
        self.stride = stride if stride is not None else kernel

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ShapeError(f"max_pool1d: expected (B, C, L), got {x.shape}")
        k = x.shape[2] if self.kernel is None else self.kernel
        s = k if self.kernel is None else self.stride
        if x.shape[2] < k:
            raise ShapeError(f"max_pool1d(k={k}): input length {x.shape[2]} too short")
        win = sliding_window_view(x, k, axis=2)[:, :, ::s, :]
        arg = win.argmax(axis=3)
        out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
        self._cache = (x.shape, arg, k, s)
        return out

    def backward(self, grad):
        shape, arg, k, s = self._need_cache()
        dx = np.zeros(shape)
        B, C, Lo = arg.shape
        pos = arg + (np.arange(Lo) * s)[None, None, :]
        bi = np.arange(B)[:, None, None]
        ci = np.arange(C)[None, :, None]
        np.add.at(dx, (np.broadcast_to(bi, pos.shape), np.broadcast_to(ci, pos.shape), pos), grad)
        return dx

    def spec(self):
        return {"kind": self.kind, "kernel": self.kernel, "stride": self.stride}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class Reshape(Layer):
    """(B, ...) -> (B, *shape)."""

    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x, train=False):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"reshape to {self.shape}: got input shape {x.shape}")
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._need_cache())

    def spec(self):
        return {"kind": self.kind, "shape": list(self.shape)}


def build_layer(spec: dict, rng: Optional[np.random.Generator] = None) -> Layer:
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["in"], spec["out"], rng)
    if kind == "conv1d":
        return Conv1d(spec["in_channels"], spec["out_channels"], spec["kernel"], spec.get("stride", 1), rng)
    if kind == "batch_norm":
        return BatchNorm(spec["features"], spec.get("momentum", 0.1), spec.get("eps", 1e-5))
    if kind == "dropout":
        return Dropout(spec["rate"], rng)
    if kind == "gelu":
        return GELU()
    if kind == "relu":
        return ReLU()
    if kind == "max_pool1d":
        return MaxPool1d(spec.get("kernel", 2), spec.get("stride"))
    if kind == "flatten":
        return Flatten()
    if kind == "reshape":
        return Reshape(spec["shape"])
    raise ValueError(f"unknown layer kind {kind!r}")


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    @classmethod
    def from_specs(cls, specs, rng: np.random.Generator) -> "Sequential":
        return cls([build_layer(s, rng) for s in specs])

    def specs(self) -> list:
        return [layer.spec() for layer in self.layers]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer._cache = None

    def named_params(self, prefix: str = "") -> Iterator:
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield f"{prefix}{i}.{name}", arr

    def named_grads(self, prefix: str = "") -> Iterator:
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield f"{prefix}{i}.{name}", layer.grads[name]

    def named_buffers(self, prefix: str = "") -> Iterator:
        for i, layer in enumerate(self.layers):
            for name, arr in layer.buffers.items():
                yield f"{prefix}{i}.{name}", arr

    def set_rng(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def load_arrays(self, arrays: dict, prefix: str = "") -> None:
        for i, layer in enumerate(self.layers):
            for name in list(layer.params):
                layer.params[name] = np.array(arrays[f"{prefix}{i}.{name}"], dtype=np.float64)
            for name in list(layer.buffers):
                layer.buffers[name] = np.array(arrays[f"{prefix}{i}.{name}"], dtype=np.float64)
            layer.zero_grad()

    def param_count(self) -> int:
        return sum(a.size for _, a in self.named_params())
