"""Network layers with explicit forward/backward passes on numpy tensors.

All activations are channels-last ``[N, H, W, C]`` arrays: the im2col gather
then moves contiguous ``kw*C`` blocks and per-channel parameters broadcast on
the trailing axis, both of which matter on memory-bound CPUs.  Layers cache
what their backward pass needs during forward; ``backward`` consumes the
upstream gradient and returns the gradient w.r.t. the layer input,
accumulating parameter gradients in ``grads``.  Convolutions follow the
deep-learning convention (cross-correlation, no kernel flip) with same
padding and stride 1; pooling and transposed convolution use non-overlapping
2x2 windows so spatial sizes exactly halve/double.

Compute dtype follows the parameters (float64 for gradient checking,
float32 for routine training/inference).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _check_4d(x, name="input"):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"{name} must be [N, H, W, C], got shape {x.shape}")
    return x


def _im2col(x, kh, kw, ph, pw):
    """[N, H, W, C] -> [N*H*W, kh*kw*C] patch matrix (same padding)."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))   # [N,H,W,C,kh,kw]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c)


def _conv_raw(x, w, cols_out=None):
    """Same-padding stride-1 cross-correlation; w is [kh, kw, Cin, F]."""
    n, h, wd, c = x.shape
    kh, kw, c2, f = w.shape
    if c != c2:
        raise ValueError(f"channel mismatch: input {c}, kernel {c2}")
    cols = _im2col(x, kh, kw, (kh - 1) // 2, (kw - 1) // 2)
    if cols_out is not None:
        cols_out.append(cols)
    return (cols @ w.reshape(-1, f)).reshape(n, h, wd, f)


class Conv2D:
    """Same-padding convolution, odd kernel, stride 1, He init."""

    def __init__(self, in_ch, out_ch, kernel=(5, 5), rng=None,
                 dtype=np.float64):
        kh, kw = kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel sides must be odd for same padding")
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_ch * kh * kw))
        self.params = {
            "w": (rng.standard_normal((kh, kw, in_ch, out_ch)) * std).astype(dtype),
            "b": np.zeros(out_ch, dtype=dtype),
        }
        self.grads = {}
        self._cols = None
        self._shape = None

    def forward(self, x, train=True):
        x = _check_4d(x)
        sink = [] if train else None
        y = _conv_raw(x, self.params["w"], sink) + self.params["b"]
        if train:
            self._cols = sink[0]
            self._shape = x.shape
        return y

    def backward(self, dy):
        w = self.params["w"]
        kh, kw, c, f = w.shape
        n, h, wd, _ = self._shape
        self.grads["b"] = dy.sum(axis=(0, 1, 2))
        dyr = dy.reshape(n * h * wd, f)
        self.grads["w"] = (self._cols.T @ dyr).reshape(kh, kw, c, f)
        # input gradient = correlation with the flipped, transposed kernel
        w_back = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        return _conv_raw(dy, w_back)


class BatchNorm2D:
    """Per-channel batch normalization with running statistics.

    Training normalizes with batch statistics (population variance) and
    updates running estimates with momentum 0.99; inference uses the
    running estimates, so outputs do not depend on batch composition.
    """

    MOMENTUM = 0.99
    EPS = 1e-5

    def __init__(self, channels, dtype=np.float64):
        self.params = {
            "scale": np.ones(channels, dtype=dtype),
            "shift": np.zeros(channels, dtype=dtype),
        }
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grads = {}
        self._cache = None

    def forward(self, x, train=True):
        x = _check_4d(x)
        if train:
            n, h, w, c = x.shape
            if n * h * w <= 1:
                raise ValueError("batch statistics undefined for N*H*W <= 1")
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            self.running_mean = (self.MOMENTUM * self.running_mean
                                 + (1 - self.MOMENTUM) * mean)
            self.running_var = (self.MOMENTUM * self.running_var
                                + (1 - self.MOMENTUM) * var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mean) * inv_std
        if train:
            self._cache = (xhat, inv_std)
        return self.params["scale"] * xhat + self.params["shift"]

    def backward(self, dy):
        xhat, inv_std = self._cache
        self.grads["scale"] = (dy * xhat).sum(axis=(0, 1, 2))
        self.grads["shift"] = dy.sum(axis=(0, 1, 2))
        dxhat = dy * self.params["scale"]
        mean_dxhat = dxhat.mean(axis=(0, 1, 2))
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 1, 2))
        return inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)


class ReLU:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self._mask = None

    def forward(self, x, train=True):
        x = _check_4d(x)
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class MaxPool2x2:
    """2x2 max pooling, stride 2; gradient routed to the argmax position."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train=True):
        x = _check_4d(x)
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        blocks = (x.reshape(n, h // 2, 2, w // 2, 2, c)
                   .transpose(0, 1, 3, 5, 2, 4)
                   .reshape(n, h // 2, w // 2, c, 4))
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (idx, x.shape)
        return out

    def backward(self, dy):
        idx, (n, h, w, c) = self._cache
        dblocks = np.zeros((n, h // 2, w // 2, c, 4), dtype=dy.dtype)
        np.put_along_axis(dblocks, idx[..., None], dy[..., None], axis=-1)
        return (dblocks.reshape(n, h // 2, w // 2, c, 2, 2)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(n, h, w, c))


class TConv2x2:
    """2x2 transposed convolution with stride 2 (exactly doubles H and W)."""

    def __init__(self, in_ch, out_ch, rng=None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_ch * 4))
        self.params = {
            "w": (rng.standard_normal((in_ch, out_ch, 2, 2)) * std).astype(dtype),
            "b": np.zeros(out_ch, dtype=dtype),
        }
        self.grads = {}
        self._x = None

    def forward(self, x, train=True):
        x = _check_4d(x)
        n, h, w, c = x.shape
        if train:
            self._x = x
        wt = self.params["w"]
        f = wt.shape[1]
        # y[n, 2i+u, 2j+v, f] = sum_c x[n, i, j, c] w[c, f, u, v]
        y = np.einsum("nijc,cfuv->niujvf", x, wt, optimize=True)
        return y.reshape(n, 2 * h, 2 * w, f) + self.params["b"]

    def backward(self, dy):
        x = self._x
        n, h, w, c = x.shape
        f = self.params["w"].shape[1]
        dy6 = dy.reshape(n, h, 2, w, 2, f)
        self.grads["b"] = dy.sum(axis=(0, 1, 2))
        self.grads["w"] = np.einsum("nijc,niujvf->cfuv", x, dy6, optimize=True)
        return np.einsum("niujvf,cfuv->nijc", dy6, self.params["w"],
                         optimize=True)
