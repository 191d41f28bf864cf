"""Forward/backward primitives from which every controller network is built.

Each layer owns its parameters and caches, on a training-mode forward,
exactly what its backward pass needs. ``backward`` consumes the most recent
training cache, accumulates parameter gradients via ``Param.add_grad`` and
returns the gradient with respect to the layer input. Calling ``backward``
without a preceding training-mode forward is rejected.

Convolution is valid (no padding): output spatial extent is
``(H - k) // stride + 1``. Max-pool ties route the gradient to the first
maximal element in row-major window order.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import GraphError, ShapeError
from .tensor import DEFAULT_DTYPE, Param


def conv_out_extent(extent: int, kernel: int, stride: int) -> int:
    return (extent - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Unfold (N,C,H,W) into (N, C*k*k, positions) patch columns."""
    n, c, _, _ = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kernel * kernel, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols: np.ndarray, x_shape: tuple, kernel: int, stride: int) -> np.ndarray:
    """Scatter-add patch columns back onto the (N,C,H,W) input grid."""
    n, c, h, w = x_shape
    ho = conv_out_extent(h, kernel, stride)
    wo = conv_out_extent(w, kernel, stride)
    d = cols.reshape(n, c, kernel, kernel, ho, wo)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d[
                :, :, i, j
            ]
    return dx


class Layer:
    """Base class. Subclasses set ``self._cache`` on training forwards."""

    def __init__(self):
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Tensors persisted in checkpoints (parameters plus running stats)."""
        return [(p.name, p.value) for p in self.params()]

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for p in self.params():
            new = tensors[p.name]
            if new.shape != p.value.shape:
                raise ShapeError(
                    f"checkpoint tensor '{p.name}' has shape {new.shape}, "
                    f"expected {p.value.shape}"
                )
            p.value = new.astype(p.value.dtype, copy=True)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise GraphError(
                f"{type(self).__name__}.backward called without a "
                "training-mode forward"
            )
        return self._cache


def _fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """Valid 2-D convolution, square kernel, no padding."""

    def __init__(self, in_depth: int, out_depth: int, kernel: int, stride: int,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise ShapeError(f"conv2d kernel/stride must be positive, got {kernel}/{stride}")
        self.kernel = kernel
        self.stride = stride
        w = _fan_in_uniform(rng, (out_depth, in_depth, kernel, kernel),
                            in_depth * kernel * kernel, dtype)
        self.weight = Param("weight", w)
        self.bias = Param("bias", np.zeros(out_depth, dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train):
        if x.ndim != 4:
            raise ShapeError(f"conv2d expects a 4-D input, got shape {x.shape}")
        od, ind, k, _ = self.weight.value.shape
        n, c, h, w = x.shape
        if c != ind:
            raise ShapeError(
                f"conv2d input channels mismatch: input shape {x.shape} "
                f"vs kernel shape {self.weight.value.shape}"
            )
        if k > h or k > w:
            raise ShapeError(
                f"conv2d kernel {k}x{k} larger than input spatial extent {h}x{w}"
            )
        cols = im2col(x, k, self.stride)
        wmat = self.weight.value.reshape(od, -1)
        out = np.matmul(wmat, cols)
        ho = conv_out_extent(h, k, self.stride)
        wo = conv_out_extent(w, k, self.stride)
        out = out.reshape(n, od, ho, wo) + self.bias.value[:, None, None]
        self._cache = (x.shape, cols) if train else None
        return out

    def backward(self, grad_out):
        x_shape, cols = self._need_cache()
        n, od, ho, wo = grad_out.shape
        g = grad_out.reshape(n, od, ho * wo)
        dw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        self.weight.add_grad(dw.reshape(self.weight.value.shape))
        self.bias.add_grad(grad_out.sum(axis=(0, 2, 3)))
        wmat = self.weight.value.reshape(od, -1)
        dcols = np.matmul(wmat.T, g)
        return col2im(dcols, x_shape, self.kernel, self.stride)


class MaxPool2d(Layer):
    """Max pooling; backward routes each window's gradient to its argmax."""

    def __init__(self, window: int, stride: int):
        super().__init__()
        if window < 1 or stride < 1:
            raise ShapeError(f"maxpool window/stride must be positive, got {window}/{stride}")
        self.window = window
        self.stride = stride

    def forward(self, x, train):
        if x.ndim != 4:
            raise ShapeError(f"maxpool expects a 4-D input, got shape {x.shape}")
        n, c, h, w = x.shape
        k = self.window
        if k > h or k > w:
            raise ShapeError(
                f"maxpool window {k}x{k} larger than input spatial extent {h}x{w}"
            )
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        win = win[:, :, ::self.stride, ::self.stride]
        flat = win.reshape(win.shape[:4] + (k * k,))
        arg = flat.argmax(axis=-1)
        out = flat.max(axis=-1)
        self._cache = (x.shape, arg) if train else None
        return out

    def backward(self, grad_out):
        x_shape, arg = self._need_cache()
        k, s = self.window, self.stride
        ho, wo = arg.shape[2], arg.shape[3]
        dx = np.zeros(x_shape, dtype=grad_out.dtype)
        for idx in range(k * k):
            di, dj = divmod(idx, k)
            contrib = np.where(arg == idx, grad_out, 0)
            dx[:, :, di : di + s * ho : s, dj : dj + s * wo : s] += contrib
        return dx


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (batch, H, W) with learnable affine.

    Training mode normalizes with batch statistics (population variance) and
    updates running statistics by exponential moving average; eval mode uses
    the running statistics. A degenerate batch (variance zero) is permitted:
    the variance clamps at eps.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        if eps <= 0:
            raise ShapeError(f"batchnorm eps must be > 0, got {eps}")
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param("gamma", np.ones(channels, dtype=dtype))
        self.beta = Param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return [
            ("gamma", self.gamma.value),
            ("beta", self.beta.value),
            ("running_mean", self.running_mean),
            ("running_var", self.running_var),
        ]

    def load_state(self, tensors):
        super().load_state(tensors)
        self.running_mean = tensors["running_mean"].astype(self.running_mean.dtype, copy=True)
        self.running_var = tensors["running_var"].astype(self.running_var.dtype, copy=True)

    def forward(self, x, train):
        if x.ndim != 4:
            raise ShapeError(f"batchnorm expects a 4-D input, got shape {x.shape}")
        c = x.shape[1]
        if c != self.gamma.value.shape[0]:
            raise ShapeError(
                f"batchnorm channel mismatch: input shape {x.shape} vs "
                f"{self.gamma.value.shape[0]} tracked channels"
            )
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.shape[0] * x.shape[2] * x.shape[3]
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var).astype(self.running_var.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        out = self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]
        self._cache = (xhat, inv) if train else None
        return out

    def backward(self, grad_out):
        xhat, inv = self._need_cache()
        self.gamma.add_grad((grad_out * xhat).sum(axis=(0, 2, 3)))
        self.beta.add_grad(grad_out.sum(axis=(0, 2, 3)))
        gx = grad_out * self.gamma.value[None, :, None, None]
        mean_gx = gx.mean(axis=(0, 2, 3), keepdims=True)
        mean_gx_xhat = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return inv[None, :, None, None] * (gx - mean_gx - xhat * mean_gx_xhat)


class Linear(Layer):
    """Affine map on flattened features: y = x W^T + b."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        w = _fan_in_uniform(rng, (out_features, in_features), in_features, dtype)
        self.weight = Param("weight", w)
        self.bias = Param("bias", np.zeros(out_features, dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train):
        if x.ndim != 2:
            raise ShapeError(f"linear expects a 2-D input, got shape {x.shape}")
        if x.shape[1] != self.weight.value.shape[1]:
            raise ShapeError(
                f"linear feature mismatch: input shape {x.shape} vs "
                f"weight shape {self.weight.value.shape}"
            )
        out = x @ self.weight.value.T + self.bias.value
        self._cache = x if train else None
        return out

    def backward(self, grad_out):
        x = self._need_cache()
        self.weight.add_grad(grad_out.T @ x)
        self.bias.add_grad(grad_out.sum(axis=0))
        return grad_out @ self.weight.value


class SoftmaxHead(Linear):
    """Classification head: a linear map to class logits.

    The softmax itself lives in the loss (see ``softmax_cross_entropy``) and
    in probability queries, so the graph output stays in logit space.
    """

    def __init__(self, in_features: int, classes: int,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        if classes < 2:
            raise ShapeError(f"softmax head needs >= 2 classes, got {classes}")
        super().__init__(in_features, classes, rng, dtype)
        self.classes = classes


class ReLU(Layer):
    def forward(self, x, train):
        self._cache = (x > 0) if train else None
        return np.maximum(x, 0)

    def backward(self, grad_out):
        mask = self._need_cache()
        return np.where(mask, grad_out, 0)


class Flatten(Layer):
    def forward(self, x, train):
        self._cache = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._need_cache())


class ClampScale(Layer):
    """Hard saturation of the raw pre-activation into [lo, hi].

    Gradient is 1 strictly inside the interval and 0 at or beyond the bounds.
    """

    def __init__(self, lo: float, hi: float):
        super().__init__()
        if not lo < hi:
            raise ShapeError(f"clamp bounds must satisfy lo < hi, got [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)

    def forward(self, x, train):
        self._cache = ((x > self.lo) & (x < self.hi)) if train else None
        return np.clip(x, self.lo, self.hi)

    def backward(self, grad_out):
        mask = self._need_cache()
        return np.where(mask, grad_out, 0)


class ScaledSigmoid(Layer):
    """scale * sigmoid(x); outputs lie in (0, scale) up to float saturation."""

    def __init__(self, scale: float):
        super().__init__()
        if scale <= 0:
            raise ShapeError(f"sigmoid scale must be > 0, got {scale}")
        self.scale = float(scale)

    def forward(self, x, train):
        s = sigmoid(x)
        self._cache = s if train else None
        return self.scale * s

    def backward(self, grad_out):
        s = self._need_cache()
        return grad_out * self.scale * s * (1.0 - s)


class Concat(Layer):
    """Concatenate flattened feature blocks along the feature axis."""

    def forward(self, xs, train):
        if len(xs) < 2:
            raise ShapeError(f"concat needs at least two inputs, got {len(xs)}")
        for x in xs:
            if x.ndim != 2:
                raise ShapeError(f"concat expects 2-D inputs, got shape {x.shape}")
        self._cache = [x.shape[1] for x in xs] if train else None
        return np.concatenate(xs, axis=1)

    def backward(self, grad_out):
        widths = self._need_cache()
        splits = np.cumsum(widths)[:-1]
        return np.split(grad_out, splits, axis=1)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically safe logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, true_class: np.ndarray):
    """Mean cross-entropy of softmaxed logits against 1-based class indices.

    Returns (loss, gradient w.r.t. logits). The loss is computed in log space
    (max subtraction plus log-sum-exp) so it stays finite for |logit| <= 1e4.
    Gradient is (softmax - onehot) / batch.
    """
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"cross-entropy expects (batch, C>=2) logits, got {logits.shape}")
    true_class = np.asarray(true_class)
    n, c = logits.shape
    if true_class.shape != (n,):
        raise ShapeError(
            f"class indices shape {true_class.shape} does not match batch {n}"
        )
    if np.any((true_class < 1) | (true_class > c)):
        bad = true_class[(true_class < 1) | (true_class > c)][0]
        raise ShapeError(f"class index {bad} out of range [1, {c}]")
    idx = true_class.astype(np.int64) - 1
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), idx]))
    grad = softmax(logits)
    grad[np.arange(n), idx] -= 1.0
    return loss, (grad / n).astype(logits.dtype)


def smooth_l1(prediction: np.ndarray, target: np.ndarray):
    """Smooth L1: quadratic for |d| < 1, linear beyond. Returns (loss, grad).

    loss is the mean per-element contribution; the gradient per element is
    d/n inside the quadratic zone and sign(d)/n outside.
    """
    if prediction.shape != target.shape:
        raise ShapeError(
            f"smooth_l1 shape mismatch: prediction {prediction.shape} vs "
            f"target {target.shape}"
        )
    d = prediction - target
    ad = np.abs(d)
    quad = ad < 1.0
    contrib = np.where(quad, 0.5 * d * d, ad - 0.5)
    n = d.size
    grad = np.where(quad, d, np.sign(d)) / n
    return float(contrib.mean()), grad.astype(prediction.dtype)
