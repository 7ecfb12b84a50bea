"""Minimal neural-network layers on numpy arrays with explicit backprop.

Every layer follows the same protocol: `forward(x, train, rng)` computes
the output and, when `train` is true, caches what `backward(dout)` needs;
`backward` returns the gradient w.r.t. the layer input and stores
parameter gradients on the layer. Arrays keep whatever float dtype the
parameters were created with, so the same code runs float32 for training
and float64 for finite-difference checks.

Convolutions use im2col/col2im, processed in batch chunks so the column
matrices stay within a fixed memory budget.
"""

from __future__ import annotations

import numpy as np

from .errors import BadConfig, ShapeMismatch

# Upper bound on im2col scratch (elements per chunk). 2**26 float32
# elements is 256 MB, safe for the 5 GB sandbox this was sized for.
MAX_COL_ELEMENTS = 2**26


class Layer:
    """Base layer: parameter-free, cache-free."""

    name = ""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool, rng) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """(n, C, H, W) -> (n, C*kh*kw, out_h*out_w) patch matrix."""
    n, c = x.shape[:2]
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[
                :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
            ]
    return cols.reshape(n, c * kh * kw, out_h * out_w)


def _col2im_add(
    dcols: np.ndarray,
    dx: np.ndarray,
    kh: int,
    kw: int,
    stride: int,
    out_h: int,
    out_w: int,
) -> None:
    """Scatter-add (n, C*kh*kw, L) column gradients back into dx (n, C, H, W)."""
    n, c = dx.shape[:2]
    six = dcols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += six[
                :, :, i, j
            ]


class Conv2D(Layer):
    """2-D convolution, NCHW layout, square kernel, optional same-padding."""

    def __init__(
        self,
        name: str,
        w: np.ndarray,
        b: np.ndarray,
        stride: int,
        pad: int,
    ) -> None:
        self.name = name
        self.w = w  # (C_out, C_in, k, k)
        self.b = b  # (C_out,)
        self.stride = stride
        self.pad = pad
        self.dw = np.zeros_like(w)
        self.db = np.zeros_like(b)
        self._x_pad: np.ndarray | None = None

    def params(self):
        return {f"{self.name}/W": self.w, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/W": self.dw, f"{self.name}/b": self.db}

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        k = self.w.shape[2]
        oh = (h + 2 * self.pad - k) // self.stride + 1
        ow = (w + 2 * self.pad - k) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"{self.name}: input {h}x{w} too small for kernel {k}")
        return oh, ow

    def _chunk(self, c_in: int, k: int, out_h: int, out_w: int) -> int:
        per_sample = c_in * k * k * out_h * out_w
        return max(1, MAX_COL_ELEMENTS // max(per_sample, 1))

    def forward(self, x, train, rng=None):
        if x.ndim != 4 or x.shape[1] != self.w.shape[1]:
            raise ShapeMismatch(
                f"{self.name}: expected (n, {self.w.shape[1]}, h, w), got {x.shape}"
            )
        k = self.w.shape[2]
        if self.pad:
            x = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        n, c_in, h, w = x.shape
        out_h, out_w = self._out_hw(x.shape[2] - 2 * self.pad, x.shape[3] - 2 * self.pad)
        self._x_pad = x if train else None
        c_out = self.w.shape[0]
        wmat = self.w.reshape(c_out, -1)
        out = np.empty((n, c_out, out_h, out_w), dtype=x.dtype)
        step = self._chunk(c_in, k, out_h, out_w)
        for lo in range(0, n, step):
            hi = min(lo + step, n)
            cols = _im2col(x[lo:hi], k, k, self.stride, out_h, out_w)
            out[lo:hi] = (wmat @ cols).reshape(hi - lo, c_out, out_h, out_w)
        out += self.b[None, :, None, None]
        return out

    def backward(self, dout):
        if self._x_pad is None:
            raise BadConfig(f"{self.name}: backward before train-mode forward")
        x = self._x_pad
        n, c_in = x.shape[:2]
        c_out, _, k, _ = self.w.shape
        out_h, out_w = dout.shape[2], dout.shape[3]
        wmat = self.w.reshape(c_out, -1)
        dmat = dout.reshape(n, c_out, out_h * out_w)
        dw_flat = np.zeros((c_out, c_in * k * k), dtype=self.w.dtype)
        dx = np.zeros_like(x)
        step = self._chunk(c_in, k, out_h, out_w)
        for lo in range(0, n, step):
            hi = min(lo + step, n)
            cols = _im2col(x[lo:hi], k, k, self.stride, out_h, out_w)
            dw_flat += np.einsum("ncl,nkl->ck", dmat[lo:hi], cols, optimize=True)
            dcols = wmat.T @ dmat[lo:hi]
            _col2im_add(dcols, dx[lo:hi], k, k, self.stride, out_h, out_w)
        self.dw[...] = dw_flat.reshape(self.w.shape)
        self.db[...] = dout.sum(axis=(0, 2, 3))
        self._x_pad = None
        if self.pad:
            dx = dx[:, :, self.pad : -self.pad, self.pad : -self.pad]
        return dx


class LeakyReLU(Layer):
    def __init__(self, name: str, slope: float) -> None:
        self.name = name
        self.slope = slope
        self._positive: np.ndarray | None = None

    def forward(self, x, train, rng=None):
        positive = x > 0
        self._positive = positive if train else None
        return np.where(positive, x, x * x.dtype.type(self.slope))

    def backward(self, dout):
        if self._positive is None:
            raise BadConfig(f"{self.name}: backward before train-mode forward")
        out = np.where(self._positive, dout, dout * dout.dtype.type(self.slope))
        self._positive = None
        return out


class Dropout(Layer):
    """Inverted dropout: active only in train mode; rate 0 is a true no-op."""

    def __init__(self, name: str, rate: float) -> None:
        if not 0.0 <= rate < 1.0:
            raise BadConfig(f"dropout rate must be in [0,1), got {rate}")
        self.name = name
        self.rate = rate
        self._mask: np.ndarray | None = None

    def forward(self, x, train, rng=None):
        if not train or self.rate == 0.0:
            self._mask = np.array(True) if train else None
            return x
        if rng is None:
            raise BadConfig(f"{self.name}: train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype)
        mask /= x.dtype.type(keep)
        self._mask = mask
        return x * mask

    def backward(self, dout):
        if self._mask is None:
            raise BadConfig(f"{self.name}: backward before train-mode forward")
        mask = self._mask
        self._mask = None
        if mask.ndim == 0:  # rate 0 passthrough
            return dout
        return dout * mask


class Dense(Layer):
    """Affine map on (n, d_in) -> (n, d_out)."""

    def __init__(self, name: str, w: np.ndarray, b: np.ndarray) -> None:
        self.name = name
        self.w = w  # (d_in, d_out)
        self.b = b  # (d_out,)
        self.dw = np.zeros_like(w)
        self.db = np.zeros_like(b)
        self._x: np.ndarray | None = None

    def params(self):
        return {f"{self.name}/W": self.w, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/W": self.dw, f"{self.name}/b": self.db}

    def forward(self, x, train, rng=None):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ShapeMismatch(f"{self.name}: expected (n, {self.w.shape[0]}), got {x.shape}")
        self._x = x if train else None
        return x @ self.w + self.b

    def backward(self, dout):
        if self._x is None:
            raise BadConfig(f"{self.name}: backward before train-mode forward")
        self.dw[...] = self._x.T @ dout
        self.db[...] = dout.sum(axis=0)
        self._x = None
        return dout @ self.w.T


class PointwiseDense(Layer):
    """Per-position linear map over channels: (n, C, h, w) -> (n, D, h, w)."""

    def __init__(self, name: str, w: np.ndarray, b: np.ndarray) -> None:
        self.name = name
        self.w = w  # (C, D)
        self.b = b  # (D,)
        self.dw = np.zeros_like(w)
        self.db = np.zeros_like(b)
        self._x: np.ndarray | None = None

    def params(self):
        return {f"{self.name}/W": self.w, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/W": self.dw, f"{self.name}/b": self.db}

    def forward(self, x, train, rng=None):
        if x.ndim != 4 or x.shape[1] != self.w.shape[0]:
            raise ShapeMismatch(
                f"{self.name}: expected (n, {self.w.shape[0]}, h, w), got {x.shape}"
            )
        self._x = x if train else None
        out = np.einsum("nchw,cd->ndhw", x, self.w, optimize=True)
        out += self.b[None, :, None, None]
        return out

    def backward(self, dout):
        if self._x is None:
            raise BadConfig(f"{self.name}: backward before train-mode forward")
        self.dw[...] = np.einsum("nchw,ndhw->cd", self._x, dout, optimize=True)
        self.db[...] = dout.sum(axis=(0, 2, 3))
        self._x = None
        return np.einsum("ndhw,cd->nchw", dout, self.w, optimize=True)


class Flatten(Layer):
    def __init__(self, name: str) -> None:
        self.name = name
        self._shape: tuple[int, ...] | None = None

    def forward(self, x, train, rng=None):
        self._shape = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        if self._shape is None:
            raise BadConfig(f"{self.name}: backward before train-mode forward")
        shape = self._shape
        self._shape = None
        return dout.reshape(shape)


class ResBlock(Layer):
    """Identity-skip block: y = x + dropout(leaky_relu(dense(x)))."""

    def __init__(self, name: str, w: np.ndarray, b: np.ndarray, slope: float, rate: float):
        if w.shape[0] != w.shape[1]:
            raise BadConfig(f"{name}: residual dense must be square, got {w.shape}")
        self.name = name
        self.dense = Dense(f"{name}/dense", w, b)
        self.act = LeakyReLU(f"{name}/act", slope)
        self.drop = Dropout(f"{name}/drop", rate)

    def params(self):
        return self.dense.params()

    def grads(self):
        return self.dense.grads()

    def forward(self, x, train, rng=None):
        branch = self.drop.forward(self.act.forward(self.dense.forward(x, train, rng), train, rng), train, rng)
        return x + branch

    def backward(self, dout):
        dbranch = self.dense.backward(self.act.backward(self.drop.backward(dout)))
        return dout + dbranch


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for stability."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def run_forward(layers: list[Layer], x: np.ndarray, train: bool, rng) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x, train, rng)
    return x


def run_backward(layers: list[Layer], dout: np.ndarray) -> np.ndarray:
    for layer in reversed(layers):
        dout = layer.backward(dout)
    return dout
