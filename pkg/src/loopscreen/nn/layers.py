"""Layer zoo with hand-written forward/backward passes.

Activations flow channels-last, [batch, height, width, channels]: on CPU the
im2col gather and the pooling slices are far cheaper in that layout. Weight
tensors keep the conventional shapes ([out_ch, in_ch, k, k] for convolutions)
so serialized models are layout-independent.

Activations are cached only when forward runs with training=True, so eval-mode
inference is side-effect free and safe to run concurrently on a shared model.
Layers preserve the dtype of their inputs/parameters: training runs in float32,
gradient checks rebuild the same layers in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NoCachedForward, OddSpatialDim, ShapeMismatch


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def head_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    """Near-zero init for classifier heads (no ReLU follows them), keeping a
    fresh model's softmax close to uniform."""
    limit = 1.0 / fan_in
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _as_batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    if x.ndim == ndim:
        return x, False
    if x.ndim == ndim - 1:
        return x[None], True
    raise ShapeMismatch(f"expected a {ndim - 1}-D or {ndim}-D tensor, got shape {x.shape}")


class Layer:
    """Forward/backward contract: backward returns the input gradient with the
    exact shape forward consumed."""

    kind = "layer"

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def gradients(self) -> dict[str, np.ndarray]:
        return {}

    def _cache(self):
        cached = getattr(self, "_saved", None)
        if cached is None:
            raise NoCachedForward(f"{type(self).__name__}.backward before a training forward")
        return cached


class Conv2d(Layer):
    """Cross-correlation (the network convention: no kernel flip) plus bias.

    Three execution paths, all algebraically identical: 1x1 kernels run as one
    matmul, thin inputs go through im2col, and wider inputs accumulate one GEMM
    per kernel tap (much less gather traffic than im2col for in_channels >= 8).
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 *, rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.weights = he_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size),
                                  fan_in, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._saved = None

    def parameters(self):
        return {"weights": self.weights, "bias": self.bias}

    def gradients(self):
        return {"weights": self.grad_weights, "bias": self.grad_bias}

    def _w_taps(self) -> np.ndarray:
        # [k, k, in_ch, out_ch] so each tap (i, j) is a ready GEMM operand
        return np.ascontiguousarray(self.weights.transpose(2, 3, 1, 0))

    def _check_geometry(self, h, w, c):
        k, s, p = self.kernel_size, self.stride, self.padding
        if c != self.in_channels:
            raise ShapeMismatch(f"expected {self.in_channels} input channels, got {c}")
        if (h + 2 * p - k) % s or (w + 2 * p - k) % s or h + 2 * p < k or w + 2 * p < k:
            raise ShapeMismatch(
                f"input {h}x{w} with pad {p} is not evenly covered by k={k}, stride={s}"
            )

    def _out_hw(self, h, w):
        k, s, p = self.kernel_size, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, training=False):
        x, squeeze = _as_batched(x, 4)
        b, h, w, c = x.shape
        self._check_geometry(h, w, c)
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = self._out_hw(h, w)
        w_taps = self._w_taps()
        if k == 1 and s == 1 and p == 0:
            cols = x.reshape(-1, c)
            out = cols @ w_taps[0, 0] + self.bias
            saved = ("matmul", cols)
        else:
            xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
            if c >= 8:
                taps = []
                out = np.zeros((b * ho * wo, self.out_channels), dtype=x.dtype)
                for i in range(k):
                    for j in range(k):
                        xs = np.ascontiguousarray(
                            xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
                        ).reshape(-1, c)
                        taps.append(xs)
                        out += xs @ w_taps[i, j]
                out += self.bias
                saved = ("taps", taps)
            else:
                win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
                cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, k * k * c)
                out = cols @ w_taps.reshape(-1, self.out_channels) + self.bias
                saved = ("im2col", cols)
        if training:
            self._saved = (saved, x.shape, (b, h + 2 * p, w + 2 * p, c), (ho, wo), squeeze)
        return (out.reshape(ho, wo, -1) if squeeze
                else out.reshape(b, ho, wo, self.out_channels))

    def backward(self, grad_out):
        (mode, cache), x_shape, pad_shape, (ho, wo), squeeze = self._cache()
        if squeeze:
            grad_out = grad_out[None]
        k, s, p = self.kernel_size, self.stride, self.padding
        b, _, _, c = x_shape
        g2 = grad_out.reshape(-1, self.out_channels)
        self.grad_bias = g2.sum(axis=0)
        w_taps = self._w_taps()
        if mode == "matmul":
            self.grad_weights = (cache.T @ g2).T.reshape(self.weights.shape).copy()
            gx = (g2 @ w_taps[0, 0].T).reshape(x_shape)
        elif mode == "taps":
            gw = np.empty((k, k, c, self.out_channels), dtype=g2.dtype)
            gpad = np.zeros(pad_shape, dtype=g2.dtype)
            for tap, xs in enumerate(cache):
                i, j = divmod(tap, k)
                gw[i, j] = xs.T @ g2
                gpad[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += (
                    g2 @ w_taps[i, j].T
                ).reshape(b, ho, wo, c)
            self.grad_weights = gw.transpose(3, 2, 0, 1).copy()
            gx = gpad[:, p:pad_shape[1] - p, p:pad_shape[2] - p, :] if p else gpad
        else:
            gw2 = cache.T @ g2
            self.grad_weights = (
                gw2.reshape(k, k, c, self.out_channels).transpose(3, 2, 0, 1).copy()
            )
            gcols = g2 @ w_taps.reshape(-1, self.out_channels).T
            gct = gcols.reshape(b, ho, wo, k, k, c)
            gpad = np.zeros(pad_shape, dtype=g2.dtype)
            for i in range(k):
                for j in range(k):
                    gpad[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += (
                        gct[:, :, :, i, j, :]
                    )
            gx = gpad[:, p:pad_shape[1] - p, p:pad_shape[2] - p, :] if p else gpad
        return gx[0] if squeeze else gx


def conv2d(x, weights, bias, stride=1, padding=0):
    """Functional convolution on channels-first tensors ([C, H, W] or
    [B, C, H, W]), the layout-independent contract used by tests."""
    x = np.asarray(x)
    out_ch, in_ch, k, _ = weights.shape
    layer = Conv2d(in_ch, out_ch, k, stride, padding, dtype=weights.dtype)
    layer.weights = np.asarray(weights)
    layer.bias = np.asarray(bias)
    if x.ndim == 3:
        return layer.forward(x.transpose(1, 2, 0)).transpose(2, 0, 1)
    return layer.forward(x.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)


class DepthwiseConv2d(Layer):
    """Per-channel convolution used by the MBConv blocks; weights are [C, k, k]."""

    kind = "conv2d"

    def __init__(self, channels, kernel_size, stride=1, padding=0, *, rng=None, dtype=np.float32):
        self.channels = channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        self.weights = he_uniform(rng, (channels, kernel_size, kernel_size),
                                  kernel_size * kernel_size, dtype)
        self.bias = np.zeros(channels, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._saved = None

    def parameters(self):
        return {"weights": self.weights, "bias": self.bias}

    def gradients(self):
        return {"weights": self.grad_weights, "bias": self.grad_bias}

    def _taps(self, ho, wo):
        k, s = self.kernel_size, self.stride
        for i in range(k):
            for j in range(k):
                yield i, j, (
                    slice(None),
                    slice(i, i + s * (ho - 1) + 1, s),
                    slice(j, j + s * (wo - 1) + 1, s),
                    slice(None),
                )

    def forward(self, x, training=False):
        x, squeeze = _as_batched(x, 4)
        b, h, w, c = x.shape
        k, s, p = self.kernel_size, self.stride, self.padding
        if c != self.channels:
            raise ShapeMismatch(f"expected {self.channels} channels, got {c}")
        if (h + 2 * p - k) % s or (w + 2 * p - k) % s:
            raise ShapeMismatch(
                f"input {h}x{w} with pad {p} is not evenly covered by k={k}, stride={s}"
            )
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        out = np.zeros((b, ho, wo, c), dtype=x.dtype)
        for i, j, sl in self._taps(ho, wo):
            out += xp[sl] * self.weights[:, i, j]
        out += self.bias
        if training:
            self._saved = (xp, x.shape, (ho, wo), squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        xp, x_shape, (ho, wo), squeeze = self._cache()
        if squeeze:
            grad_out = grad_out[None]
        p = self.padding
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = grad_out.sum(axis=(0, 1, 2))
        gpad = np.zeros(xp.shape, dtype=grad_out.dtype)
        for i, j, sl in self._taps(ho, wo):
            self.grad_weights[:, i, j] = (grad_out * xp[sl]).sum(axis=(0, 1, 2))
            gpad[sl] += grad_out * self.weights[:, i, j]
        gx = gpad[:, p:xp.shape[1] - p, p:xp.shape[2] - p, :] if p else gpad
        gx = gx.reshape(x_shape)
        return gx[0] if squeeze else gx


# Window positions of a 2x2 pool in row-major order; ties route to the first.
_POOL_TAPS = ((0, 0), (0, 1), (1, 0), (1, 1))


class MaxPool2(Layer):
    """2x2 stride-2 max pool; gradient flows to the first row-major max."""

    kind = "maxpool2"

    def __init__(self):
        self._saved = None

    @staticmethod
    def _windows(x):
        return [x[:, dy::2, dx::2, :] for dy, dx in _POOL_TAPS]

    def forward(self, x, training=False):
        x, squeeze = _as_batched(x, 4)
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise OddSpatialDim(f"maxpool2 needs even spatial dims, got {h}x{w}")
        s0, s1, s2, s3 = self._windows(x)
        out = np.maximum(np.maximum(s0, s1), np.maximum(s2, s3))
        if training:
            idx = np.where(s0 == out, 0, np.where(s1 == out, 1, np.where(s2 == out, 2, 3)))
            self._saved = (idx.astype(np.int8), x.shape, squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        idx, x_shape, squeeze = self._cache()
        if squeeze:
            grad_out = grad_out[None]
        gx = np.zeros(x_shape, dtype=grad_out.dtype)
        for tap, (dy, dx) in enumerate(_POOL_TAPS):
            gx[:, dy::2, dx::2, :] = grad_out * (idx == tap)
        return gx[0] if squeeze else gx


class MaxPoolSame3(Layer):
    """3x3 stride-1 max pool with replicate padding (inception pool branch)."""

    kind = "maxpool2"

    def __init__(self):
        self._saved = None

    def forward(self, x, training=False):
        x, squeeze = _as_batched(x, 4)
        b, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
        out = xp[:, 0:h, 0:w, :].copy()
        idx = np.zeros((b, h, w, c), dtype=np.int8)
        for tap in range(1, 9):
            i, j = divmod(tap, 3)
            cand = xp[:, i:i + h, j:j + w, :]
            idx = np.where(cand > out, tap, idx)
            out = np.maximum(out, cand)
        if training:
            self._saved = (idx, x.shape, squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        idx, x_shape, squeeze = self._cache()
        if squeeze:
            grad_out = grad_out[None]
        b, h, w, c = x_shape
        gpad = np.zeros((b, h + 2, w + 2, c), dtype=grad_out.dtype)
        for tap in range(9):
            i, j = divmod(tap, 3)
            gpad[:, i:i + h, j:j + w, :] += grad_out * (idx == tap)
        # Fold replicate-padding gradients back onto the edge pixels.
        gx = gpad[:, 1:h + 1, 1:w + 1, :].copy()
        gx[:, 0, :, :] += gpad[:, 0, 1:w + 1, :]
        gx[:, -1, :, :] += gpad[:, h + 1, 1:w + 1, :]
        gx[:, :, 0, :] += gpad[:, 1:h + 1, 0, :]
        gx[:, :, -1, :] += gpad[:, 1:h + 1, w + 1, :]
        gx[:, 0, 0, :] += gpad[:, 0, 0, :]
        gx[:, 0, -1, :] += gpad[:, 0, w + 1, :]
        gx[:, -1, 0, :] += gpad[:, h + 1, 0, :]
        gx[:, -1, -1, :] += gpad[:, h + 1, w + 1, :]
        return gx[0] if squeeze else gx


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._saved = None

    def forward(self, x, training=False):
        if training:
            self._saved = x > 0
        return np.maximum(x, 0)

    def backward(self, grad_out):
        return grad_out * self._cache()


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, *, rng=None, dtype=np.float32,
                 init=he_uniform):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        self.weights = init(rng, (in_features, out_features), in_features, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._saved = None

    def parameters(self):
        return {"weights": self.weights, "bias": self.bias}

    def gradients(self):
        return {"weights": self.grad_weights, "bias": self.grad_bias}

    def forward(self, x, training=False):
        x, squeeze = _as_batched(x, 2)
        if x.shape[1] != self.in_features:
            raise ShapeMismatch(f"expected {self.in_features} features, got {x.shape[1]}")
        out = x @ self.weights + self.bias
        if training:
            self._saved = (x, squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        x, squeeze = self._cache()
        if squeeze:
            grad_out = grad_out[None]
        self.grad_weights = x.T @ grad_out
        self.grad_bias = grad_out.sum(axis=0)
        gx = grad_out @ self.weights.T
        return gx[0] if squeeze else gx


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._saved = None

    def forward(self, x, training=False):
        x, squeeze = _as_batched(x, 4)
        if training:
            self._saved = (x.shape, squeeze)
        out = x.reshape(x.shape[0], -1)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        shape, squeeze = self._cache()
        if squeeze:
            grad_out = grad_out[None]
        gx = grad_out.reshape(shape)
        return gx[0] if squeeze else gx


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def __init__(self):
        self._saved = None

    def forward(self, x, training=False):
        x, squeeze = _as_batched(x, 4)
        if training:
            self._saved = (x.shape, squeeze)
        out = x.mean(axis=(1, 2))
        return out[0] if squeeze else out

    def backward(self, grad_out):
        (b, h, w, c), squeeze = self._cache()
        if squeeze:
            grad_out = grad_out[None]
        gx = np.broadcast_to(grad_out[:, None, None, :] / (h * w), (b, h, w, c)).copy()
        return gx[0] if squeeze else gx


class Dropout(Layer):
    """Inverted dropout; seeded mask in training mode, exact identity in eval."""

    kind = "dropout"

    def __init__(self, rate, seed=0):
        if not 0.0 <= rate < 1.0:
            raise ShapeMismatch(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng([seed])
        self._saved = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            if training:
                self._saved = None
            return x
        mask = self.rng.random(x.shape) >= self.rate
        self._saved = mask
        return x * mask / (1.0 - self.rate)

    def backward(self, grad_out):
        mask = getattr(self, "_saved", None)
        if mask is None:
            return grad_out
        return grad_out * mask / (1.0 - self.rate)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class SigmoidGate(Layer):
    """Elementwise logistic gate; the squeeze-excitation scaling wires around it."""

    kind = "sigmoid_gate"

    def __init__(self):
        self._saved = None

    def forward(self, x, training=False):
        out = sigmoid(x)
        if training:
            self._saved = out
        return out

    def backward(self, grad_out):
        y = self._cache()
        return grad_out * y * (1.0 - y)
