# Copyright 2024 The lowdata-audio Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Differentiable operations on `Tensor`s.

Every operation computes its forward value with numpy and registers a
closure that maps the output gradient to the gradients of its inputs.
"""

from typing import Sequence

import numpy as np
from scipy.special import expit

from lowdata_audio.errors import ArgumentError, DimensionError
from lowdata_audio.ndgrad.tensor import (
    Parameter,
    RunningStats,
    Tensor,
    as_tensor,
    from_op
)


ACTIVATIONS = ("relu", "elu", "linear")
MODES = ("train", "eval")
DISTANCES = ("euclidean", "cosine")
BN_EPSILON = 1e-5


def _tensor(value: Tensor | Parameter | np.ndarray | float) -> Tensor:
    if isinstance(value, Parameter):
        return value.tensor
    return as_tensor(value)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ArgumentError(f"Unknown mode '{mode}', expected one of {MODES}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting added."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    return from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    return from_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def neg(a) -> Tensor:
    a = _tensor(a)
    return from_op(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _tensor(a)
    out = np.exp(a.data)
    return from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _tensor(a)
    if np.any(a.data <= 0):
        raise ArgumentError("The logarithm is only defined for positive values")
    return from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a) -> Tensor:
    a = _tensor(a)
    return from_op(np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _tensor(a)
    return from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def flatten(a) -> Tensor:
    """Flatten all but the batch axis."""
    a = _tensor(a)
    return reshape(a, (a.shape[0], -1))


def take_rows(a, index: np.ndarray | slice | Sequence[int]) -> Tensor:
    """Select rows (first axis entries) of a tensor."""
    a = _tensor(a)
    index = index if isinstance(index, slice) else np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        if isinstance(index, slice):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return from_op(a.data[index], (a,), backward)


def mean(a, axis: int | tuple[int, ...] | None = None) -> Tensor:
    a = _tensor(a)
    out = a.data.mean(axis=axis)
    count = a.data.size // max(out.size, 1)

    def backward(g):
        expanded = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, a.shape) / count,)

    return from_op(out, (a,), backward)


def global_max(a) -> Tensor:
    """Maximum over the spatial axes of a (N, C, H, W) tensor."""
    a = _tensor(a)
    if a.ndim != 4:
        raise DimensionError(f"Expected a (N, C, H, W) tensor but got shape {a.shape}")
    n, c, h, w = a.shape
    flat = a.data.reshape(n, c, h * w)
    index = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, index[..., None], axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros_like(flat)
        np.put_along_axis(grad, index[..., None], g[..., None], axis=-1)
        return (grad.reshape(a.shape),)

    return from_op(out, (a,), backward)


def conv2d(x, kernel, bias, padding: str = "valid") -> Tensor:
    """A 2D convolution (cross-correlation) with stride 1.

    Args:
        x: The input with shape (N, C, H, W).
        kernel: The filters with shape (F, C, kh, kw).
        bias: The bias with shape (F,).
        padding: Either 'valid' or 'same'.

    Returns:
        The output with shape (N, F, H - kh + 1, W - kw + 1) for 'valid'
        and (N, F, H, W) for 'same' padding.

    Raises:
        DimensionError: The shapes of input, kernel and bias don't agree.
        ArgumentError: Unknown padding mode.
    """
    x, k, b = _tensor(x), _tensor(kernel), _tensor(bias)
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d expects 4D input and kernel but got {x.shape} and {k.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = k.shape
    if kc != c:
        raise DimensionError(f"Input {x.shape} has {c} channels but kernel {k.shape} expects {kc}")
    if b.shape != (f,):
        raise DimensionError(f"Bias {b.shape} doesn't match kernel {k.shape}")

    if padding == "same":
        top, left = (kh - 1) // 2, (kw - 1) // 2
        xp = np.pad(x.data, ((0, 0), (0, 0), (top, kh - 1 - top), (left, kw - 1 - left)))
    elif padding == "valid":
        if kh > h or kw > w:
            raise DimensionError(f"Kernel {k.shape} doesn't fit into input {x.shape} with valid padding")
        top, left = 0, 0
        xp = x.data
    else:
        raise ArgumentError(f"Unknown padding '{padding}', expected 'valid' or 'same'")

    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    out = np.zeros((n, ho, wo, f))
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, i:i + ho, j:j + wo]
            out += np.tensordot(window, k.data[:, :, i, j], axes=([1], [1]))
    out = out.transpose(0, 3, 1, 2) + b.data[None, :, None, None]

    def backward(g):
        g_last = g.transpose(0, 2, 3, 1)
        gk = np.zeros_like(k.data) if k.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                window = xp[:, :, i:i + ho, j:j + wo]
                if gk is not None:
                    gk[:, :, i, j] = np.tensordot(g, window, axes=([0, 2, 3], [0, 2, 3]))
                if gxp is not None:
                    gxp[:, :, i:i + ho, j:j + wo] += np.tensordot(
                        g_last, k.data[:, :, i, j], axes=([3], [0])
                    ).transpose(0, 3, 1, 2)
        gx = None if gxp is None else gxp[:, :, top:top + h, left:left + w]
        return gx, gk, g.sum(axis=(0, 2, 3))

    return from_op(np.ascontiguousarray(out), (x, k, b), backward)


def maxpool2d(x, size: tuple[int, int]) -> Tensor:
    """Non-overlapping max pooling that drops trailing remainders.

    Ties resolve to the lowest index within a pooling window.

    Raises:
        ArgumentError: A pool size is not positive.
        DimensionError: The input is smaller than one pooling window.
    """
    x = _tensor(x)
    ph, pw = size
    if ph <= 0 or pw <= 0:
        raise ArgumentError(f"Pool sizes have to be positive but got {size}")
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects a (N, C, H, W) input but got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = h // ph, w // pw
    if ho == 0 or wo == 0:
        raise DimensionError(f"Pool {size} doesn't fit into input {x.shape}")

    windows = (
        x.data[:, :, :ho * ph, :wo * pw]
        .reshape(n, c, ho, ph, wo, pw)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, ph * pw)
    )
    index = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros_like(windows)
        np.put_along_axis(grad, index[..., None], g[..., None], axis=-1)
        grad = grad.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * ph, wo * pw)
        full = np.zeros_like(x.data)
        full[:, :, :ho * ph, :wo * pw] = grad
        return (full,)

    return from_op(out, (x,), backward)


def dense(x, weight, bias) -> Tensor:
    """An affine map of (N, D_in) inputs with a (D_in, D_out) weight."""
    x, w, b = _tensor(x), _tensor(weight), _tensor(bias)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"Input {x.shape} doesn't match dense weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"Bias {b.shape} doesn't match dense weight {w.shape}")
    return from_op(
        x.data @ w.data + b.data,
        (x, w, b),
        lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0))
    )


def activation(x, kind: str) -> Tensor:
    """Apply 'relu', 'elu' (alpha = 1) or 'linear' elementwise."""
    x = _tensor(x)
    if kind == "linear":
        return x
    if kind == "relu":
        positive = x.data > 0
        return from_op(np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive,))
    if kind == "elu":
        positive = x.data > 0
        out = np.where(positive, x.data, np.expm1(np.minimum(x.data, 0.0)))
        return from_op(out, (x,), lambda g: (g * np.where(positive, 1.0, out + 1.0),))
    raise ArgumentError(f"Unknown activation '{kind}', expected one of {ACTIVATIONS}")


def batchnorm(x, gamma, beta, mode: str, state: RunningStats, eps: float = BN_EPSILON) -> Tensor:
    """Per-channel batch normalization of (N, C, ...) inputs.

    In train mode the batch statistics over all axes but the channel axis
    are used and folded into the running statistics; eval mode uses the
    running statistics only.
    """
    _check_mode(mode)
    x, gamma, beta = _tensor(x), _tensor(gamma), _tensor(beta)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"Batch norm parameters {gamma.shape} don't match input {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    view = (1, channels) + (1,) * (x.ndim - 2)

    if mode == "train":
        batch_mean = x.data.mean(axis=axes)
        batch_var = x.data.var(axis=axes)
        state.update(batch_mean, batch_var)
    else:
        batch_mean, batch_var = state.mean, state.var
    inv_std = 1.0 / np.sqrt(batch_var + eps)
    x_hat = (x.data - batch_mean.reshape(view)) * inv_std.reshape(view)
    out = gamma.data.reshape(view) * x_hat + beta.data.reshape(view)
    count = x.data.size // channels

    def backward(g):
        g_hat = g * gamma.data.reshape(view)
        if mode == "train":
            gx = inv_std.reshape(view) / count * (
                count * g_hat
                - g_hat.sum(axis=axes, keepdims=True)
                - x_hat * (g_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = g_hat * inv_std.reshape(view)
        return gx, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    return from_op(out, (x, gamma, beta), backward)


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1 / (1 - rate) at train time.

    Raises:
        ArgumentError: The rate is outside of [0, 1) or no generator was
            given in train mode.
    """
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ArgumentError(f"Dropout rate has to be in [0, 1) but is {rate}")
    x = _tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ArgumentError("Dropout in train mode requires a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return from_op(x.data * mask, (x,), lambda g: (g * mask,))


def softmax_xent(logits, labels: Sequence[int] | np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean softmax cross-entropy.

    Args:
        logits: The (N, K) unnormalized scores.
        labels: N class indices in [0, K).

    Returns:
        A tuple of the scalar loss tensor and the (N, K) probabilities.

    Raises:
        DimensionError: The number of labels doesn't match the logits.
        ArgumentError: A label is out of range.
    """
    logits = _tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"Logits {logits.shape} don't match labels {labels.shape}")
    n, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        raise ArgumentError(f"Labels have to be in [0, {k}) but got {labels.tolist()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()

    def backward(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)

    return from_op(np.asarray(loss), (logits,), backward), probs


def pairwise_distance(a, b, kind: str = "euclidean", squared: bool = False) -> Tensor:
    """Distances between the rows of (Q, D) and (K, D) tensors.

    The euclidean distance is optionally squared. The cosine distance is
    1 - cos(a, b) with a distance of 1 whenever one vector is zero.
    Sub-gradients at the non-differentiable points are zero.

    Returns:
        A (Q, K) tensor.
    """
    a, b = _tensor(a), _tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"Can't compare rows of {a.shape} and {b.shape}")

    if kind == "euclidean":
        diff = a.data[:, None, :] - b.data[None, :, :]
        sq = np.einsum("qkd,qkd->qk", diff, diff)
        if squared:
            def backward(g):
                weighted = 2.0 * g[..., None] * diff
                return weighted.sum(axis=1), -weighted.sum(axis=0)
            return from_op(sq, (a, b), backward)

        dist = np.sqrt(sq)

        def backward(g):
            coef = np.divide(g, dist, out=np.zeros_like(dist), where=dist > 0)
            weighted = coef[..., None] * diff
            return weighted.sum(axis=1), -weighted.sum(axis=0)

        return from_op(dist, (a, b), backward)

    if kind == "cosine":
        norm_a = np.linalg.norm(a.data, axis=1)
        norm_b = np.linalg.norm(b.data, axis=1)
        valid = (norm_a[:, None] > 0) & (norm_b[None, :] > 0)
        safe_a = np.where(norm_a > 0, norm_a, 1.0)
        safe_b = np.where(norm_b > 0, norm_b, 1.0)
        denom = safe_a[:, None] * safe_b[None, :]
        sim = np.where(valid, (a.data @ b.data.T) / denom, 0.0)

        def backward(g):
            g_sim = np.where(valid, -g, 0.0)
            scaled = g_sim / denom
            weighted = g_sim * sim
            ga = scaled @ b.data - weighted.sum(axis=1)[:, None] * a.data / (safe_a ** 2)[:, None]
            gb = scaled.T @ a.data - weighted.sum(axis=0)[:, None] * b.data / (safe_b ** 2)[:, None]
            return ga, gb

        return from_op(1.0 - sim, (a, b), backward)

    raise ArgumentError(f"Unknown distance '{kind}', expected one of {DISTANCES}")
