"""Layers with explicit forward/backward passes, all float64.

Spatial tensors are indexed (batch, row, col, channel).  Convolution uses
cross-correlation semantics (no kernel flip) with "same" zero padding:
output size ceil(in/stride), total padding max((ceil(in/s)-1)*s + k - in, 0)
split floor/ceil between the leading and trailing edge.  The transpose
convolution is the exact linear adjoint of that map, so its output size is
input*stride.

The patch gather/scatter passes and pointwise nonlinearities run through
compiled loops in `_kernels`; the channel contractions are BLAS matmuls.
"""

import math

import numpy as np

from . import _kernels

__all__ = [
    "Dense",
    "Conv2D",
    "ConvTranspose2D",
    "MaxPool2D",
    "Activation",
    "Flatten",
    "Reshape",
    "leaky_relu",
    "sigmoid",
    "mse_loss",
    "mse_grad",
    "conv2d_forward",
    "conv2d_transpose_forward",
    "maxpool2d_forward",
    "dense_forward",
]


# ---------------------------------------------------------------------------
# activation functions


def leaky_relu(x, alpha):
    """x for x >= 0, alpha*x below."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, x, alpha * x)
    return out if out.ndim else float(out)


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x, dtype=float)
    out = _kernels.sigmoid_forward(np.ascontiguousarray(x).reshape(-1)).reshape(x.shape)
    return out if out.ndim else float(out)


def mse_loss(pred, target):
    """Mean over every entry of the squared difference."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred, target):
    return 2.0 * (pred - target) / pred.size


# ---------------------------------------------------------------------------
# geometry helpers


def same_padding(size, kernel, stride):
    """(leading, trailing) zero padding for ceil(size/stride) outputs."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    lead = total // 2
    return lead, total - lead


def _conv_geometry(h, w, kh, kw, sh, sw):
    oh, ow = math.ceil(h / sh), math.ceil(w / sw)
    pt, pb = same_padding(h, kh, sh)
    pl, pr = same_padding(w, kw, sw)
    return oh, ow, pt, pb, pl, pr


def _as_c(x):
    return np.ascontiguousarray(x, dtype=float)


# ---------------------------------------------------------------------------
# functional forms (used by the layer classes and directly by tests)


def dense_forward(W, b, h_in):
    """Affine map W h + b for a single vector or a (batch, in) matrix."""
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    h_in = np.asarray(h_in, dtype=float)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise ValueError(f"weights {W.shape} and bias {b.shape} disagree")
    if h_in.shape[-1] != W.shape[1]:
        raise ValueError(f"input width {h_in.shape[-1]} != weight columns {W.shape[1]}")
    return h_in @ W.T + b


def conv2d_forward(x, weights, bias, stride=(1, 1)):
    """Strided same-padded cross-correlation over (b,h,w,c) input."""
    x = _as_c(x)
    weights = np.asarray(weights, dtype=float)
    kh, kw, cin, cout = weights.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ValueError(f"input shape {x.shape} incompatible with kernel {weights.shape}")
    sh, sw = stride
    h, w = x.shape[1], x.shape[2]
    oh, ow, pt, _, pl, _ = _conv_geometry(h, w, kh, kw, sh, sw)
    cols = _kernels.gather_patches(x, oh, ow, kh, kw, sh, sw, pt, pl)
    out = cols.reshape(-1, kh * kw * cin) @ weights.reshape(-1, cout)
    out = out.reshape(x.shape[0], oh, ow, cout)
    if bias is not None:
        out += bias
    return out


def conv2d_transpose_forward(x, weights, bias, stride=(1, 1)):
    """Adjoint of `conv2d_forward`: (b,h,w,cin) -> (b,h*sh,w*sw,cout).

    ``weights`` has shape (kh, kw, cin, cout) where cin is this layer's
    input channel count; the underlying convolution being transposed maps
    cout -> cin channels.
    """
    x = _as_c(x)
    weights = np.asarray(weights, dtype=float)
    kh, kw, cin, cout = weights.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ValueError(f"input shape {x.shape} incompatible with kernel {weights.shape}")
    sh, sw = stride
    b, h, w = x.shape[0], x.shape[1], x.shape[2]
    H, W = h * sh, w * sw
    _, _, pt, _, pl, _ = _conv_geometry(H, W, kh, kw, sh, sw)
    # route each input value through the kernel onto the output grid
    kmat = weights.reshape(kh * kw, cin, cout).transpose(1, 0, 2).reshape(cin, -1)
    cols = (x.reshape(-1, cin) @ kmat).reshape(b, h, w, kh, kw, cout)
    out = _kernels.scatter_patches(cols, H, W, sh, sw, pt, pl)
    if bias is not None:
        out += bias
    return out


def maxpool2d_forward(x, window=(2, 2), stride=(2, 2)):
    """Same-padded max pooling; returns (output, argmax) for the backward pass."""
    x = _as_c(x)
    if x.ndim != 4:
        raise ValueError(f"expected (b,h,w,c) input, got shape {x.shape}")
    ph, pw = window
    sh, sw = stride
    h, w = x.shape[1], x.shape[2]
    oh, ow, pt, _, pl, _ = _conv_geometry(h, w, ph, pw, sh, sw)
    return _kernels.maxpool_forward(x, oh, ow, ph, pw, sh, sw, pt, pl)


# ---------------------------------------------------------------------------
# layer classes


class Layer:
    """Common parameter bookkeeping; subclasses fill forward/backward."""

    name = "layer"

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def output_shape(self, in_shape):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, W, b, name="dense"):
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.name = name
        self._x = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x):
        self._x = x
        return dense_forward(self.W, self.b, x)

    def backward(self, dout):
        self.dW[...] = dout.T @ self._x
        self.db[...] = dout.sum(axis=0)
        return dout @ self.W

    def output_shape(self, in_shape):
        if in_shape[-1] != self.W.shape[1]:
            raise ValueError(f"{self.name}: input width {in_shape[-1]} != {self.W.shape[1]}")
        return in_shape[:-1] + (self.W.shape[0],)


class Conv2D(Layer):
    def __init__(self, W, b, stride=(1, 1), name="conv"):
        self.W = np.asarray(W, dtype=float)  # (kh, kw, cin, cout)
        self.b = np.asarray(b, dtype=float)
        self.stride = tuple(stride)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.name = name
        self.needs_input_grad = True  # cleared for a network's first layer
        self._cols = None
        self._geom = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x):
        kh, kw, cin, cout = self.W.shape
        sh, sw = self.stride
        if x.shape[3] != cin:
            raise ValueError(f"{self.name}: {x.shape[3]} channels, kernel wants {cin}")
        h, w = x.shape[1], x.shape[2]
        oh, ow, pt, pb, pl, pr = _conv_geometry(h, w, kh, kw, sh, sw)
        cols = _kernels.gather_patches(_as_c(x), oh, ow, kh, kw, sh, sw, pt, pl)
        self._cols = cols
        self._geom = (x.shape, pt, pb, pl, pr)
        out = cols.reshape(-1, kh * kw * cin) @ self.W.reshape(-1, cout)
        return out.reshape(x.shape[0], oh, ow, cout) + self.b

    def backward(self, dout):
        kh, kw, cin, cout = self.W.shape
        sh, sw = self.stride
        x_shape, pt, pb, pl, pr = self._geom
        g = dout.reshape(-1, cout)
        self.dW[...] = (self._cols.reshape(-1, kh * kw * cin).T @ g).reshape(self.W.shape)
        self.db[...] = g.sum(axis=0)
        if not self.needs_input_grad:
            return None
        if (sh, sw) == (1, 1) and pt == pb and pl == pr:
            # symmetric same padding: input gradient is a plain convolution
            # with the kernel rotated 180 degrees and channels swapped
            cols_d = _kernels.gather_patches(
                _as_c(dout), x_shape[1], x_shape[2], kh, kw, 1, 1, pt, pl
            )
            wflip = np.ascontiguousarray(self.W[::-1, ::-1].transpose(0, 1, 3, 2)).reshape(
                -1, cin
            )
            dx = cols_d.reshape(-1, kh * kw * cout) @ wflip
            return dx.reshape(x_shape)
        dcols = (g @ self.W.reshape(-1, cout).T).reshape(self._cols.shape)
        return _kernels.scatter_patches(dcols, x_shape[1], x_shape[2], sh, sw, pt, pl)

    def output_shape(self, in_shape):
        h, w = in_shape[1], in_shape[2]
        sh, sw = self.stride
        return (in_shape[0], math.ceil(h / sh), math.ceil(w / sw), self.W.shape[3])


class ConvTranspose2D(Layer):
    def __init__(self, W, b, stride=(1, 1), name="conv_transpose"):
        self.W = np.asarray(W, dtype=float)  # (kh, kw, cin, cout)
        self.b = np.asarray(b, dtype=float)
        self.stride = tuple(stride)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.name = name
        self._x = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x):
        kh, kw, cin, cout = self.W.shape
        if x.shape[3] != cin:
            raise ValueError(f"{self.name}: {x.shape[3]} channels, kernel wants {cin}")
        self._x = x
        if self.stride == (1, 1) and kh % 2 == 1 and kw % 2 == 1 and cout >= cin:
            # adjoint of a stride-1 symmetric same conv = conv with the
            # 180-degree-rotated kernel; gathers cin-wide patches, so prefer
            # it only when that side is the narrow one
            rot = np.ascontiguousarray(self.W[::-1, ::-1])
            return conv2d_forward(x, rot, self.b, (1, 1))
        return conv2d_transpose_forward(x, self.W, self.b, self.stride)

    def backward(self, dout):
        kh, kw, cin, cout = self.W.shape
        sh, sw = self.stride
        b, h, w = self._x.shape[0], self._x.shape[1], self._x.shape[2]
        H, W = h * sh, w * sw
        _, _, pt, _, pl, _ = _conv_geometry(H, W, kh, kw, sh, sw)
        cols = _kernels.gather_patches(_as_c(dout), h, w, kh, kw, sh, sw, pt, pl)
        # dX: forward convolution of the output gradient with the kernel
        flat = cols.reshape(-1, kh * kw * cout)
        kmat = self.W.transpose(0, 1, 3, 2).reshape(-1, cin)
        dx = (flat @ kmat).reshape(b, h, w, cin)
        # dW[ki,kj,ci,co] = sum_{b,i,j} x[b,i,j,ci] * patch(dout)[b,i,j,ki,kj,co]
        xmat = self._x.reshape(-1, cin)
        dw = xmat.T @ flat
        self.dW[...] = dw.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        self.db[...] = dout.sum(axis=(0, 1, 2))
        return dx

    def output_shape(self, in_shape):
        sh, sw = self.stride
        return (in_shape[0], in_shape[1] * sh, in_shape[2] * sw, self.W.shape[3])


class MaxPool2D(Layer):
    def __init__(self, window=(2, 2), stride=(2, 2), name="maxpool"):
        self.window = tuple(window)
        self.stride = tuple(stride)
        self.name = name
        self._arg = None
        self._geom = None

    def forward(self, x):
        out, arg = maxpool2d_forward(x, self.window, self.stride)
        ph, pw = self.window
        sh, sw = self.stride
        pt, _ = same_padding(x.shape[1], ph, sh)
        pl, _ = same_padding(x.shape[2], pw, sw)
        self._arg = arg
        self._geom = (x.shape, pt, pl)
        return out

    def backward(self, dout):
        ph, pw = self.window
        sh, sw = self.stride
        x_shape, pt, pl = self._geom
        return _kernels.maxpool_backward(
            _as_c(dout), self._arg, x_shape[1], x_shape[2], ph, pw, sh, sw, pt, pl
        )

    def output_shape(self, in_shape):
        sh, sw = self.stride
        return (
            in_shape[0],
            math.ceil(in_shape[1] / sh),
            math.ceil(in_shape[2] / sw),
            in_shape[3],
        )


class Activation(Layer):
    """Pointwise nonlinearity: 'leaky_relu', 'sigmoid' or 'identity'."""

    def __init__(self, kind, alpha=0.25, name=None):
        if kind not in ("leaky_relu", "sigmoid", "identity"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.alpha = alpha
        self.name = name or kind
        self._cache = None

    def forward(self, x):
        if self.kind == "identity":
            return x
        x = _as_c(x)
        if self.kind == "leaky_relu":
            out, self._cache = _kernels.leaky_relu_forward(x, self.alpha)
            return out
        out = _kernels.sigmoid_forward(x)
        self._cache = out
        return out

    def backward(self, dout):
        if self.kind == "identity":
            return dout
        dout = _as_c(dout)
        if self.kind == "leaky_relu":
            return _kernels.leaky_relu_backward(dout, self._cache, self.alpha)
        return _kernels.sigmoid_backward(dout, self._cache)

    def output_shape(self, in_shape):
        return in_shape


class Flatten(Layer):
    """(b, h, w, c) -> (b, h*w*c), row-major."""

    def __init__(self, name="flatten"):
        self.name = name
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def output_shape(self, in_shape):
        return (in_shape[0], int(np.prod(in_shape[1:])))


class Reshape(Layer):
    """(b, features) -> (b, h, w, c), row-major."""

    def __init__(self, target, name="reshape"):
        self.target = tuple(target)
        self.name = name

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, dout):
        return dout.reshape(dout.shape[0], -1)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape[1:])) != int(np.prod(self.target)):
            raise ValueError(f"{self.name}: cannot reshape {in_shape} to {self.target}")
        return (in_shape[0],) + self.target
