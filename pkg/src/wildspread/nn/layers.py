"""Layer primitives: convolution, 2x2 max pooling, dense, activations, BCE.

Activations are channels-last. Batched functions take ``(B, H, W, C)``; the
single-sample forms take ``(H, W, C)``. Convolutions use valid padding and
stride 1; kernels are laid out ``(kh, kw, in, out)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


# --- activations ------------------------------------------------------------


def relu(x, out=None):
    return np.maximum(x, 0, out=out)


def sigmoid(x):
    """Logistic function in the branch form that never overflows."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "identity": lambda x: x}


def apply_activation(x, name: str):
    try:
        return ACTIVATIONS[name](x)
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


# --- loss -------------------------------------------------------------------


def bce_loss(p, y, eps: float = BCE_EPS) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != label shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    p = np.clip(p, eps, 1.0 - eps)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


# --- convolution ------------------------------------------------------------


def _conv_dims(x, kernel):
    H, W, C = x.shape[-3:]
    kh, kw, kc, _ = kernel.shape
    if kc != C:
        raise ShapeError(f"input has {C} channels, kernel expects {kc}")
    if kh > H or kw > W:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W}")
    return H - kh + 1, W - kw + 1


def conv2d_loop(x, kernel, bias, activation: str = "identity"):
    """Reference convolution of one (H, W, C) tensor by explicit window loops."""
    Ho, Wo = _conv_dims(x, kernel)
    kh, kw, _, O = kernel.shape
    out = np.empty((Ho, Wo, O), dtype=np.result_type(x, kernel))
    for i in range(Ho):
        for j in range(Wo):
            acc = bias.astype(out.dtype).copy()
            for a in range(kh):
                for b in range(kw):
                    acc += x[i + a, j + b, :] @ kernel[a, b]
            out[i, j] = acc
    return apply_activation(out, activation)


def im2col_for(x, kh: int, kw: int):
    """Contiguous (B, Ho*Wo, kh*kw*C) patch matrix, row-major over (a, b, c)."""
    B, H, W, C = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (B, Ho, Wo, C, kh, kw)
    Ho, Wo = win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(B, Ho * Wo, kh * kw * C), Ho, Wo


def conv2d_forward(x, kernel, bias, activation: str = "identity", per_sample: bool = False):
    """Convolution via im2col and one matrix product.

    With ``per_sample`` each sample is multiplied separately (a stacked
    product), which makes every output independent of the batch it sits in.
    Returns ``(output, cols)``; ``cols`` is kept for the backward pass.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    _conv_dims(x, kernel)
    kh, kw, C, O = kernel.shape
    cols, Ho, Wo = im2col_for(x, kh, kw)
    wm = kernel.reshape(kh * kw * C, O)
    if per_sample:
        z = np.matmul(cols, wm)
    else:
        z = (cols.reshape(-1, wm.shape[0]) @ wm).reshape(cols.shape[0], -1, O)
    z += bias
    if activation == "relu":
        relu(z, out=z)
    else:
        z = apply_activation(z, activation)
    out = z.reshape(x.shape[0], Ho, Wo, O)
    return (out[0] if single else out), cols


def conv2d_backward(dz, cols, x_shape, kernel, need_dx: bool = True):
    """Gradients of a convolution given dL/d(pre-activation) ``dz`` (B, Ho, Wo, O)."""
    B, Ho, Wo, O = dz.shape
    kh, kw, C, _ = kernel.shape
    dz2 = dz.reshape(-1, O)
    dk = (cols.reshape(-1, kh * kw * C).T @ dz2).reshape(kernel.shape)
    db = dz2.sum(axis=0)
    dx = None
    if need_dx:
        dcols = (dz2 @ kernel.reshape(-1, O).T).reshape(B, Ho, Wo, kh, kw, C)
        dx = np.zeros(x_shape, dtype=dz.dtype)
        for a in range(kh):
            for b in range(kw):
                dx[:, a:a + Ho, b:b + Wo, :] += dcols[:, :, :, a, b, :]
    return dk, db, dx


# --- pooling ----------------------------------------------------------------


def maxpool2x2(x):
    """2x2 stride-2 max pool; odd trailing rows/cols are dropped.

    Returns ``(output, argmax)`` where argmax (uint8) is the row-major window
    position 0..3 of the first maximum.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    B, H, W, C = x.shape
    H2, W2 = H // 2, W // 2
    if H2 == 0 or W2 == 0:
        raise ShapeError(f"cannot pool a {H}x{W} input")
    q = [x[:, a:2 * H2:2, b:2 * W2:2] for a in (0, 1) for b in (0, 1)]
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    # position of the first maximum: 0 if q0 holds it, else 1 if q1, ...
    ne = [(q[k] != out).view(np.uint8) for k in range(3)]
    arg = ne[0] * (1 + ne[1] * (1 + ne[2]))
    if single:
        return out[0], arg[0]
    return out, arg


def maxpool2x2_backward(dout, arg, x_shape):
    """Route each pooled gradient to its stored argmax cell; dropped cells get 0."""
    H2, W2 = dout.shape[1], dout.shape[2]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for k in range(4):
        a, b = divmod(k, 2)
        np.multiply(dout, arg == k, out=dx[:, a:2 * H2:2, b:2 * W2:2])
    return dx


# --- dense ------------------------------------------------------------------


def dense_forward(v, weight, bias, activation: str = "identity", per_sample: bool = False):
    """``v @ weight + bias`` then activation; ``v`` is (n,) or (B, n)."""
    v = np.asarray(v)
    if v.shape[-1] != weight.shape[0]:
        raise ShapeError(f"input length {v.shape[-1]} != weight rows {weight.shape[0]}")
    if per_sample and v.ndim == 2:
        z = np.matmul(v[:, None, :], weight)[:, 0, :]
    else:
        z = v @ weight
    z += bias
    if activation == "relu":
        return relu(z, out=z)
    return apply_activation(z, activation)
