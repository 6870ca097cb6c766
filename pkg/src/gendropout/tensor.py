"""Differentiable primitives on float64 numpy arrays.

Every primitive returns a :class:`Dual`: the forward output together with a
``backward`` callable mapping an upstream gradient (same shape as the output)
to a tuple of gradients, one per differentiable input.

Image tensors are laid out ``C x H x W``; a leading batch axis
(``N x C x H x W``) is accepted everywhere and is what the network uses.

Forward products go through :func:`ordered_matmul`, which accumulates every
output strictly in inner-index order. Removing inner terms that are exactly
zero therefore leaves the result bit-identical, which is what makes pruning
zero-gated units exact. Backward products use BLAS.
"""

from typing import Callable, NamedTuple, Sequence, Tuple

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, LabelError

__all__ = [
    "Dual",
    "as_tensor",
    "ordered_matmul",
    "matmul",
    "conv2d_valid",
    "maxpool2",
    "relu",
    "softmax",
    "softmax_cross_entropy",
]


class Dual(NamedTuple):
    output: np.ndarray
    backward: Callable[[np.ndarray], Tuple[np.ndarray, ...]]


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


@numba.njit(cache=True, nogil=True)
def _ordered_matmul(a, b):
    m, inner = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        row = out[i]
        for t in range(inner):
            v = a[i, t]
            if v != 0.0:
                bt = b[t]
                for j in range(n):
                    row[j] += v * bt[j]
    return out


def ordered_matmul(a, b) -> np.ndarray:
    """``a @ b`` with each output summed sequentially over the inner index."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[1]))
    return _ordered_matmul(a, b)


def matmul(a, b) -> Dual:
    a, b = as_tensor(a), as_tensor(b)
    out = ordered_matmul(a, b)

    def backward(g):
        g = as_tensor(g)
        return g @ b.T, a.T @ g

    return Dual(out, backward)


def _batched(x, rank):
    # -> (array with batch axis, whether a batch axis was added)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise DimensionError(f"expected a {rank}-d or {rank + 1}-d tensor, got shape {x.shape}")


def conv2d_valid(x, kernels, bias) -> Dual:
    """Cross-correlation with valid padding and stride 1.

    ``x`` is ``C x H x W`` (or batched), ``kernels`` is ``F x C x Kh x Kw`` and
    ``bias`` has length ``F``. Backward returns ``(grad_x, grad_kernels, grad_bias)``.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    xb, squeeze = _batched(x, 3)
    if kernels.ndim != 4:
        raise DimensionError(f"conv2d_valid: kernels must be F x C x Kh x Kw, got {kernels.shape}")
    n, c, h, w = xb.shape
    f, kc, kh, kw = kernels.shape
    if kc != c:
        raise DimensionError(
            f"conv2d_valid: input has {c} channels but kernels {kernels.shape} expect {kc}")
    if kh > h or kw > w:
        raise DimensionError(
            f"conv2d_valid: kernel {kh}x{kw} larger than input {h}x{w}")
    if bias.shape != (f,):
        raise DimensionError(f"conv2d_valid: bias shape {bias.shape}, expected ({f},)")
    ho, wo = h - kh + 1, w - kw + 1

    # im2col: rows are (n, i, j) output positions, columns are (c, di, dj)
    windows = sliding_window_view(xb, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    kmat = kernels.reshape(f, c * kh * kw)
    out = (ordered_matmul(cols, kmat.T) + bias).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if squeeze:
        out = out[0]

    def backward(g):
        g = as_tensor(g)
        if squeeze:
            g = g[None]
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        grad_k = (g2.T @ cols).reshape(kernels.shape)
        grad_b = g2.sum(axis=0)
        gcols = (g2 @ kmat).reshape(n, ho, wo, c, kh, kw)
        grad_x = np.zeros_like(xb)
        for di in range(kh):
            for dj in range(kw):
                grad_x[:, :, di:di + ho, dj:dj + wo] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        if squeeze:
            grad_x = grad_x[0]
        return grad_x, grad_k, grad_b

    return Dual(out, backward)


def maxpool2(x) -> Dual:
    """2x2 non-overlapping max pooling.

    Ties route the gradient to the first maximum in row-major window order.
    """
    x = as_tensor(x)
    xb, squeeze = _batched(x, 3)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2: spatial size {h}x{w} is not even")
    win = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def backward(g):
        g = as_tensor(g)
        if squeeze:
            g = g[None]
        gwin = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        grad = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        if squeeze:
            grad = grad[0]
        return (grad,)

    return Dual(out, backward)


def relu(x) -> Dual:
    x = as_tensor(x)
    on = x > 0
    out = np.where(on, x, 0.0)

    def backward(g):
        return (np.where(on, as_tensor(g), 0.0),)

    return Dual(out, backward)


def softmax(logits) -> np.ndarray:
    z = as_tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy of a batch and its gradient with respect to the logits."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be B x C, got {logits.shape}")
    b, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise DimensionError(f"softmax_cross_entropy: labels shape {labels.shape} for batch of {b}")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {labels[i]} at index {i} outside [0, {c})", index=i)
    labels = labels.astype(np.intp)

    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(b), labels] - logsumexp
    loss = float(-logp.mean())
    grad = np.exp(z - logsumexp[:, None])
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    return loss, grad
