"""Fully-connected and convolutional layers with injected switch noise.

Training-mode forward for a dense layer computes

    u_i = sum_j x_j [r_j W_ij + c (r_j - 1) S_ij] + b_i,    S = sgn(W)

with one switch r_j per input unit per sample, so every weight reading the
same input shares its switch.  The backward pass uses the exact input
gradient du_i/dx_j = r_j (W_ij + c S_ij) - c S_ij and the weight gradient
du_i/dW_ij = x_j (r_j + c (r_j - 1) dS/dW) with the sign derivative
smoothed as dS/dW := 1 - tanh(W)^2.  The convolutional layer applies the
same rules per spatial position: one switch map per input feature map per
sample, shared across all output maps.  Evaluation mode never draws
switches and never rescales; the 1/(1-tau) factor already lives inside the
kept branch of the weight perturbation.
"""

import enum

import numpy as np

from .core import RngStream
from .noise import NoiseKind, ShakeoutParams, gaussian_dropout_sigma2


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class MissingCacheError(RuntimeError):
    """backward() called without a matching train-mode forward()."""


def _glorot_uniform(shape, fan_in, fan_out, stream: RngStream) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return stream.generator().uniform(-a, a, shape)


def _draw_switch_values(gen, shape, tau):
    return np.where(gen.random(shape) < tau, 0.0, 1.0 / (1.0 - tau))


class Dense:
    """Linear layer, weights (out x in), optional switch noise on its input."""

    def __init__(self, n_in: int, n_out: int, noise: ShakeoutParams | None = None):
        self.n_in = n_in
        self.n_out = n_out
        self.noise = noise if noise is not None else ShakeoutParams(kind=NoiseKind.NONE)
        self.W = np.zeros((n_out, n_in))
        self.b = np.zeros(n_out)
        self.grad_W = None
        self.grad_b = None
        self._cache = None

    def init_weights(self, stream: RngStream) -> None:
        self.W = _glorot_uniform((self.n_out, self.n_in), self.n_in, self.n_out, stream)
        self.b = np.zeros(self.n_out)

    def forward(self, x, mode: Mode, stream: RngStream | None = None,
                params: ShakeoutParams | None = None, sign_fn=np.sign):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"expected input (batch, {self.n_in}), got {x.shape}")
        params = params if params is not None else self.noise
        kind = params.kind

        if mode is Mode.EVAL or kind is NoiseKind.NONE:
            u = x @ self.W.T + self.b
            if mode is Mode.TRAIN:
                self._cache = {"kind": NoiseKind.NONE, "x": x}
            return u

        if stream is None:
            raise ValueError("train-mode noisy forward needs an RngStream")
        gen = stream.generator()

        if kind is NoiseKind.GAUSSIAN_DROPOUT:
            sigma = np.sqrt(gaussian_dropout_sigma2(params.tau))
            g = gen.normal(1.0, sigma, x.shape)
            xg = x * g
            u = xg @ self.W.T + self.b
            self._cache = {"kind": kind, "xg": xg, "g": g}
            return u

        # shakeout / dropout
        r = _draw_switch_values(gen, x.shape, params.tau)
        xr = x * r
        u = xr @ self.W.T + self.b
        cache = {"kind": kind, "x": x, "r": r, "xr": xr, "c": params.c}
        if params.c != 0.0:
            S = sign_fn(self.W)
            xm = x * (r - 1.0)
            u = u + params.c * (xm @ S.T)
            cache["S"] = S
            cache["xm"] = xm
        self._cache = cache
        return u

    def backward(self, grad_u):
        if self._cache is None:
            raise MissingCacheError("Dense.backward without a cached forward")
        cache, self._cache = self._cache, None
        grad_u = np.asarray(grad_u, dtype=np.float64)
        self.grad_b = grad_u.sum(axis=0)
        kind = cache["kind"]

        if kind is NoiseKind.NONE:
            x = cache["x"]
            self.grad_W = grad_u.T @ x
            return grad_u @ self.W

        if kind is NoiseKind.GAUSSIAN_DROPOUT:
            self.grad_W = grad_u.T @ cache["xg"]
            return cache["g"] * (grad_u @ self.W)

        r, xr, c = cache["r"], cache["xr"], cache["c"]
        self.grad_W = grad_u.T @ xr
        if c == 0.0:
            return r * (grad_u @ self.W)
        S, xm = cache["S"], cache["xm"]
        dsdw = 1.0 - np.tanh(self.W) ** 2
        self.grad_W = self.grad_W + c * dsdw * (grad_u.T @ xm)
        return r * (grad_u @ (self.W + c * S)) - c * (grad_u @ S)

    def parameters(self):
        return [("W", self.W, "grad_W"), ("b", self.b, "grad_b")]


def im2col(X, kh, kw, stride, pad):
    """Unfold (b, c, h, w) into (b, c*kh*kw, oh*ow) patch columns."""
    b, c, h, w = X.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel ({kh}x{kw}) does not fit input ({h}x{w}) with pad {pad}")
    Xp = np.pad(X, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else X
    cols = np.empty((b, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = Xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * kh * kw, oh * ow), (oh, ow)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Scatter-add inverse of :func:`im2col`."""
    b, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    Xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            Xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return Xp[:, :, pad : pad + h, pad : pad + w] if pad else Xp


class Conv2D:
    """Convolution (cross-correlation) with per-position input switches."""

    def __init__(self, in_maps: int, out_maps: int, kh: int, kw: int,
                 stride: int = 1, pad: int = 0, noise: ShakeoutParams | None = None):
        self.in_maps = in_maps
        self.out_maps = out_maps
        self.kh, self.kw = kh, kw
        self.stride, self.pad = stride, pad
        self.noise = noise if noise is not None else ShakeoutParams(kind=NoiseKind.NONE)
        self.W = np.zeros((out_maps, in_maps, kh, kw))
        self.b = np.zeros(out_maps)
        self.grad_W = None
        self.grad_b = None
        self._cache = None

    def init_weights(self, stream: RngStream) -> None:
        fan_in = self.in_maps * self.kh * self.kw
        fan_out = self.out_maps * self.kh * self.kw
        self.W = _glorot_uniform(self.W.shape, fan_in, fan_out, stream)
        self.b = np.zeros(self.out_maps)

    def _conv_cols(self, X):
        cols, (oh, ow) = im2col(X, self.kh, self.kw, self.stride, self.pad)
        return cols, oh, ow

    def _apply_kernel(self, kernel_flat, cols, oh, ow):
        # collapse (batch, positions) into the gemm row axis; with a 1x1
        # spatial extent this is exactly the dense-layer product
        b, k, n_pos = cols.shape
        flat = cols.transpose(0, 2, 1).reshape(b * n_pos, k) @ kernel_flat.T
        return flat.reshape(b, n_pos, -1).transpose(0, 2, 1).reshape(
            b, kernel_flat.shape[0], oh, ow)

    def forward(self, X, mode: Mode, stream: RngStream | None = None,
                params: ShakeoutParams | None = None, sign_fn=np.sign):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or X.shape[1] != self.in_maps:
            raise ValueError(f"expected input (batch, {self.in_maps}, h, w), got {X.shape}")
        params = params if params is not None else self.noise
        kind = params.kind
        Wf = self.W.reshape(self.out_maps, -1)

        if mode is Mode.EVAL or kind is NoiseKind.NONE:
            cols, oh, ow = self._conv_cols(X)
            U = self._apply_kernel(Wf, cols, oh, ow) + self.b[None, :, None, None]
            if mode is Mode.TRAIN:
                self._cache = {"kind": NoiseKind.NONE, "cols": cols, "x_shape": X.shape}
            return U

        if stream is None:
            raise ValueError("train-mode noisy forward needs an RngStream")
        gen = stream.generator()

        if kind is NoiseKind.GAUSSIAN_DROPOUT:
            sigma = np.sqrt(gaussian_dropout_sigma2(params.tau))
            g = gen.normal(1.0, sigma, X.shape)
            cols, oh, ow = self._conv_cols(X * g)
            U = self._apply_kernel(Wf, cols, oh, ow) + self.b[None, :, None, None]
            self._cache = {"kind": kind, "cols": cols, "g": g, "x_shape": X.shape}
            return U

        # One switch map per input feature map per sample, same spatial
        # shape as the map; shared across all output maps.
        R = _draw_switch_values(gen, X.shape, params.tau)
        cols_a, oh, ow = self._conv_cols(X * R)
        U = self._apply_kernel(Wf, cols_a, oh, ow) + self.b[None, :, None, None]
        cache = {"kind": kind, "cols_a": cols_a, "R": R, "c": params.c, "x_shape": X.shape}
        if params.c != 0.0:
            S = sign_fn(self.W)
            cols_b, _, _ = self._conv_cols(X * (R - 1.0))
            Sf = S.reshape(self.out_maps, -1)
            U = U + params.c * self._apply_kernel(Sf, cols_b, oh, ow)
            cache["S"] = S
            cache["cols_b"] = cols_b
        self._cache = cache
        return U

    def backward(self, grad_U):
        if self._cache is None:
            raise MissingCacheError("Conv2D.backward without a cached forward")
        cache, self._cache = self._cache, None
        grad_U = np.asarray(grad_U, dtype=np.float64)
        batch = grad_U.shape[0]
        gU = grad_U.reshape(batch, self.out_maps, -1)
        self.grad_b = grad_U.sum(axis=(0, 2, 3))
        Wf = self.W.reshape(self.out_maps, -1)
        kind = cache["kind"]
        x_shape = cache["x_shape"]

        n_pos = gU.shape[2]
        flat_gU = gU.transpose(0, 2, 1).reshape(batch * n_pos, self.out_maps)

        def scatter(kernel_flat):
            # gradient columns back to input space, through the same
            # flattened gemm as the forward pass
            cols = (flat_gU @ kernel_flat).reshape(batch, n_pos, -1).transpose(0, 2, 1)
            return col2im(cols, x_shape, self.kh, self.kw, self.stride, self.pad)

        def kernel_grad(cols):
            # collapse (batch, positions) into one contraction axis; with a
            # 1x1 spatial extent this is the exact dense-layer matmul
            o = self.out_maps
            k = cols.shape[1]
            flat_g = gU.transpose(0, 2, 1).reshape(-1, o)
            flat_c = cols.transpose(0, 2, 1).reshape(-1, k)
            return (flat_g.T @ flat_c).reshape(self.W.shape)

        if kind is NoiseKind.NONE:
            self.grad_W = kernel_grad(cache["cols"])
            return scatter(Wf)

        if kind is NoiseKind.GAUSSIAN_DROPOUT:
            self.grad_W = kernel_grad(cache["cols"])
            return cache["g"] * scatter(Wf)

        R, cols_a, c = cache["R"], cache["cols_a"], cache["c"]
        self.grad_W = kernel_grad(cols_a)
        if c == 0.0:
            return R * scatter(Wf)
        S, cols_b = cache["S"], cache["cols_b"]
        Sf = S.reshape(self.out_maps, -1)
        dsdw = 1.0 - np.tanh(self.W) ** 2
        self.grad_W = self.grad_W + c * dsdw * kernel_grad(cols_b)
        return R * scatter(Wf + c * Sf) - c * scatter(Sf)

    def parameters(self):
        return [("W", self.W, "grad_W"), ("b", self.b, "grad_b")]


class MaxPool2D:
    """Max pooling; gradient routes to the arg-max, first index on ties."""

    def __init__(self, size: int = 2, stride: int | None = None):
        self.size = size
        self.stride = stride if stride is not None else size
        self._cache = None

    def forward(self, X, mode: Mode, stream=None):
        X = np.asarray(X, dtype=np.float64)
        b, c, h, w = X.shape
        cols, (oh, ow) = im2col(X.reshape(b * c, 1, h, w), self.size, self.size, self.stride, 0)
        # cols: (b*c, size*size, oh*ow); argmax over the window axis picks
        # the first maximum in row-major window order
        arg = np.argmax(cols, axis=1)
        out = np.take_along_axis(cols, arg[:, None, :], axis=1)[:, 0, :]
        if mode is Mode.TRAIN:
            self._cache = {"arg": arg, "cols_shape": cols.shape, "x_shape": X.shape, "oh": oh, "ow": ow}
        return out.reshape(b, c, oh, ow)

    def backward(self, grad_out):
        if self._cache is None:
            raise MissingCacheError("MaxPool2D.backward without a cached forward")
        cache, self._cache = self._cache, None
        b, c, h, w = cache["x_shape"]
        g = np.asarray(grad_out, dtype=np.float64).reshape(b * c, -1)
        cols = np.zeros(cache["cols_shape"])
        np.put_along_axis(cols, cache["arg"][:, None, :], g[:, None, :], axis=1)
        gx = col2im(cols, (b * c, 1, h, w), self.size, self.size, self.stride, 0)
        return gx.reshape(b, c, h, w)

    def parameters(self):
        return []


class ReLU:
    def __init__(self):
        self._cache = None

    def forward(self, x, mode: Mode, stream=None):
        x = np.asarray(x, dtype=np.float64)
        if mode is Mode.TRAIN:
            self._cache = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad):
        if self._cache is None:
            raise MissingCacheError("ReLU.backward without a cached forward")
        mask, self._cache = self._cache, None
        return grad * mask

    def parameters(self):
        return []


class Sigmoid:
    def __init__(self):
        self._cache = None

    def forward(self, x, mode: Mode, stream=None):
        y = sigmoid(x)
        if mode is Mode.TRAIN:
            self._cache = y
        return y

    def backward(self, grad):
        if self._cache is None:
            raise MissingCacheError("Sigmoid.backward without a cached forward")
        y, self._cache = self._cache, None
        return grad * y * (1.0 - y)

    def parameters(self):
        return []


class Flatten:
    def __init__(self):
        self._cache = None

    def forward(self, x, mode: Mode, stream=None):
        if mode is Mode.TRAIN:
            self._cache = x.shape
        return np.asarray(x).reshape(x.shape[0], -1)

    def backward(self, grad):
        shape, self._cache = self._cache, None
        return np.asarray(grad).reshape(shape)

    def parameters(self):
        return []


# --- functional op surface -------------------------------------------------

def fc_forward(layer: Dense, x, params, mode: Mode, stream=None, sign_fn=np.sign):
    return layer.forward(x, mode, stream, params=params, sign_fn=sign_fn)


def fc_backward(layer: Dense, grad_u):
    grad_x = layer.backward(grad_u)
    return grad_x, layer.grad_W, layer.grad_b


def conv_forward(layer: Conv2D, X, params, mode: Mode, stream=None, sign_fn=np.sign):
    return layer.forward(X, mode, stream, params=params, sign_fn=sign_fn)


def conv_backward(layer: Conv2D, grad_U):
    grad_X = layer.backward(grad_U)
    return grad_X, layer.grad_W, layer.grad_b


# --- activations and losses --------------------------------------------------

def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x):
    return (np.asarray(x, dtype=np.float64) > 0).astype(np.float64)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(x):
    y = sigmoid(x)
    return y * (1.0 - y)


def softmax_xent(logits, labels):
    """Mean cross-entropy with softmax, stabilized by max subtraction.

    Returns (loss, grad_logits); the gradient already carries the 1/batch
    factor so it feeds straight into backprop.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -float(np.mean(log_probs[np.arange(n), labels]))
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def squared_error(pred, target):
    """Mean (over batch) of half squared reconstruction error, with gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    diff = pred - target
    n = pred.shape[0]
    loss = 0.5 * float(np.sum(diff * diff)) / n
    return loss, diff / n
