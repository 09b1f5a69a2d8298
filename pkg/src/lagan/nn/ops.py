"""Differentiable ops for the LAGAN layer set.

Image tensors are channels-last: ``[batch, height, width, channels]``.
Convolution and locally connected layers share one kernel
(:func:`_window_forward`), so a locally connected layer whose filter banks are
all equal reproduces the convolution bit for bit.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from lagan.nn.tensor import Tensor, as_tensor, make_result


class DimensionError(ValueError):
    """Incompatible shapes between an input and a layer's parameters."""


class DegenerateBatchError(ValueError):
    """An op that needs cross-sample statistics got a batch of one."""


# ----------------------------------------------------------------------------
# shape law


def valid_extent(length: int, field: int, stride: int = 1) -> int:
    """Output extent of a valid-border sliding window: (L - F) / S + 1."""
    if field < 1 or stride < 1:
        raise DimensionError(f"field and stride must be >= 1, got F={field}, S={stride}")
    if length < field:
        raise DimensionError(f"valid border needs L >= F, got L={length}, F={field}")
    if (length - field) % stride:
        raise DimensionError(
            f"stride {stride} does not tile length {length} with field {field}"
        )
    return (length - field) // stride + 1


def _same_padding(field: int) -> int:
    if field % 2 == 0:
        raise DimensionError(f"same border needs an odd field, got F={field}")
    return (field - 1) // 2


# ----------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return make_result(a.values + b.values, (a, b), lambda g: (g, g))


def scale(x: Tensor, factor: float) -> Tensor:
    return make_result(x.values * factor, (x,), lambda g: (g * factor,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return make_result(x.values.reshape(shape), (x,), lambda g: (g.reshape(old),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, splits, axis=axis)

    return make_result(np.concatenate([t.values for t in tensors], axis=axis), tensors, backward)


def select(x: Tensor, index: int, axis: int = -1) -> Tensor:
    """Take one slice along ``axis`` (dropping the axis)."""
    out = np.take(x.values, index, axis=axis)

    def backward(g):
        full = np.zeros_like(x.values)
        idx = [slice(None)] * x.ndim
        idx[axis] = index
        full[tuple(idx)] = g
        return (full,)

    return make_result(out, (x,), backward)


def total(x: Tensor) -> Tensor:
    return make_result(np.sum(x.values), (x,), lambda g: (np.full(x.shape, g, dtype=np.float64),))


def mean(x: Tensor) -> Tensor:
    n = x.values.size
    return make_result(np.mean(x.values), (x,), lambda g: (np.full(x.shape, g / n, dtype=np.float64),))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return make_result(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.values > 0, 1.0, slope)
    return make_result(x.values * factor, (x,), lambda g: (g * factor,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign to keep exp() from overflowing
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.values)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),))


def activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------------------
# losses


def sigmoid_bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against ``targets``.

    Computed from logits, so the loss stays finite however confident the
    prediction is.
    """
    x = logits.values
    t = np.asarray(targets, dtype=np.float64).reshape(x.shape)
    n = x.size
    loss = np.mean(np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x))))
    return make_result(loss, (logits,), lambda g: (g * (_sigmoid(x) - t) / n,))


# ----------------------------------------------------------------------------
# dense layers


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weights.shape[0]:
        raise DimensionError(f"dense: input width {x.shape[-1]} != weight rows {weights.shape[0]}")
    out = x.values @ weights.values
    if bias is not None:
        out = out + bias.values
    parents = (x, weights) if bias is None else (x, weights, bias)

    def backward(g):
        grads = [g @ weights.values.T, x.values.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(out, parents, backward)


def hadamard_embed(z: Tensor, class_index, table: Tensor) -> Tensor:
    """Condition latent vectors by elementwise product with a learned class row."""
    idx = np.asarray(class_index, dtype=np.int64).reshape(-1)
    k = table.shape[0]
    if idx.size != z.shape[0]:
        raise DimensionError(f"got {idx.size} class indices for a batch of {z.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise IndexError(f"class index out of range [0, {k})")
    if z.shape[1] != table.shape[1]:
        raise DimensionError(f"latent width {z.shape[1]} != embedding width {table.shape[1]}")
    rows = table.values[idx]

    def backward(g):
        dtable = np.zeros_like(table.values)
        np.add.at(dtable, idx, g * z.values)
        return g * rows, dtable

    return make_result(z.values * rows, (z, table), backward)


# ----------------------------------------------------------------------------
# sliding-window layers


_CACHE_ELEMS = 1 << 17
# receptive volumes up to this size use an explicit patch matrix
_PATCH_LIMIT = 256


def _to_hwbc(x: np.ndarray, pad: int) -> np.ndarray:
    """[B,H,W,C] -> zero-padded, contiguous [H,W,B,C]."""
    xt = x.transpose(1, 2, 0, 3)
    if pad:
        xt = np.pad(xt, ((pad, pad), (pad, pad), (0, 0), (0, 0)))
    return np.ascontiguousarray(xt)


def _shifted(xt: np.ndarray, fi: int, fj: int, stride: int, out: int) -> np.ndarray:
    """Input pixels seen by filter tap (fi, fj) at every output location: [P, B, C]."""
    span = stride * (out - 1) + 1
    _, _, b, c = xt.shape
    return np.ascontiguousarray(xt[fi : fi + span : stride, fj : fj + span : stride]).reshape(out * out, b, c)


def _patches(xt: np.ndarray, field: int, stride: int, out: int) -> np.ndarray:
    """[H,W,B,C] -> [P, B, F*F*C] with feature order (fi, fj, c)."""
    _, _, b, c = xt.shape
    s0, s1, s2, s3 = xt.strides
    view = np.lib.stride_tricks.as_strided(
        xt, shape=(out, out, b, field, field, c), strides=(s0 * stride, s1 * stride, s2, s0, s1, s3), writeable=False
    )
    return view.reshape(out * out, b, field * field * c)


def _window_forward(x: Tensor, wv: np.ndarray, field: int, stride: int, border: str):
    """Shared conv2d/local2d kernel.

    ``wv`` is [Pw, F, F, C, N] with Pw = 1 (shared bank) or P (one bank per
    output location).  Both layer kinds take the identical arithmetic path, a
    per-location matmul, and differ only in which bank each location reads.
    Small receptive volumes go through an explicit patch matrix; large ones
    accumulate tap by tap so the patch matrix is never materialised.
    """
    if x.ndim != 4 or x.shape[1] != x.shape[2]:
        raise DimensionError(f"expected a square [B,L,L,C] input, got {x.shape}")
    if border == "same":
        if stride != 1:
            raise DimensionError("same border supports stride 1 only")
        pad = _same_padding(field)
    elif border == "valid":
        pad = 0
    else:
        raise ValueError(f"unknown border mode {border!r}")
    out = valid_extent(x.shape[1] + 2 * pad, field, stride)
    xt = _to_hwbc(x.values, pad)
    b, c = x.shape[0], x.shape[-1]
    n = wv.shape[-1]
    pt = None
    if field * field * c <= _PATCH_LIMIT:
        pt = _patches(xt, field, stride, out)
        y = np.matmul(pt, wv.reshape(wv.shape[0], -1, n))
    else:
        y = np.empty((out * out, b, n))
        # batch chunks small enough that the accumulator stays in cache across taps
        chunk = max(1, _CACHE_ELEMS // (out * out * n))
        for b0 in range(0, b, chunk):
            xc = xt[:, :, b0 : b0 + chunk]
            acc = np.zeros((out * out, xc.shape[2], n))
            for fi in range(field):
                for fj in range(field):
                    acc += np.matmul(_shifted(xc, fi, fj, stride, out), wv[:, fi, fj])
            y[:, b0 : b0 + chunk] = acc
    y = y.reshape(out, out, b, n).transpose(2, 0, 1, 3)
    return y, xt, pt, pad, out


def _window_backward(g, x, weights, wv, xt, pt, field, stride, pad, out, shared, need_w):
    """Gradients w.r.t. input and weights.

    ``pt`` is the forward patch matrix (None on the tap path).  ``need_w`` is
    whether the weights required grad at forward time; if not, no weight
    gradient is produced (e.g. a frozen discriminator during a generator step).
    """
    b, n = g.shape[0], g.shape[-1]
    p = out * out
    c = xt.shape[-1]
    k = field * field * c
    g2 = np.ascontiguousarray(g.transpose(1, 2, 0, 3)).reshape(p, b, n)
    span = stride * (out - 1) + 1
    use_patches = k <= _PATCH_LIMIT
    dx = dw = None
    if need_w and weights.requires_grad:
        if shared:
            g2d = g2.reshape(p * b, n)
            if use_patches:
                dwv = pt.reshape(p * b, k).T @ g2d
            else:
                dwv = np.empty((field, field, c, n))
                for fi in range(field):
                    for fj in range(field):
                        dwv[fi, fj] = _shifted(xt, fi, fj, stride, out).reshape(p * b, c).T @ g2d
        else:
            # [P, N, B] @ [P, B, K] keeps both operands contiguous for BLAS
            gt = np.ascontiguousarray(g2.transpose(0, 2, 1))
            if use_patches:
                dwv = np.matmul(gt, pt).transpose(0, 2, 1)
            else:
                dwv = np.empty((p, field, field, c, n))
                for fi in range(field):
                    for fj in range(field):
                        dwv[:, fi, fj] = np.matmul(gt, _shifted(xt, fi, fj, stride, out)).transpose(0, 2, 1)
        dw = dwv.reshape(weights.shape)
    if x.requires_grad:
        acc = np.zeros(xt.shape)
        if use_patches:
            wt = np.ascontiguousarray(wv.reshape(wv.shape[0], k, n).transpose(0, 2, 1))
            dp = np.matmul(g2, wt).reshape(out, out, b, field, field, c)
            for fi in range(field):
                for fj in range(field):
                    acc[fi : fi + span : stride, fj : fj + span : stride] += dp[:, :, :, fi, fj]
        else:
            wt = wv.transpose(0, 1, 2, 4, 3)  # [Pw, F, F, N, C]
            for fi in range(field):
                for fj in range(field):
                    contrib = np.matmul(g2, np.ascontiguousarray(wt[:, fi, fj]))
                    acc[fi : fi + span : stride, fj : fj + span : stride] += contrib.reshape(out, out, b, c)
        if pad:
            acc = acc[pad:-pad, pad:-pad]
        dx = acc.transpose(2, 0, 1, 3)
    return dx, dw


def conv2d(
    x: Tensor,
    weights: Tensor,
    bias: Tensor | None = None,
    border: str = "valid",
    stride: int = 1,
) -> Tensor:
    """Weight-shared 2D convolution (cross-correlation). weights: [F,F,Cin,N]."""
    f, f2, cin, n = weights.shape
    if f != f2:
        raise DimensionError(f"only square filters are supported, got {f}x{f2}")
    if x.ndim != 4 or x.shape[-1] != cin:
        raise DimensionError(f"input channels {x.shape[-1] if x.ndim else None} != weight Cin {cin}")
    wv = weights.values.reshape(1, f, f, cin, n)
    y, xt, pt, pad, out = _window_forward(x, wv, f, stride, border)
    need_w = weights.requires_grad
    if not need_w:
        pt = None
    if bias is not None:
        y = y + bias.values
    parents = (x, weights) if bias is None else (x, weights, bias)

    def backward(g):
        dx, dw = _window_backward(g, x, weights, wv, xt, pt, f, stride, pad, out, True, need_w)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    return make_result(y, parents, backward)


def local2d(
    x: Tensor,
    weights: Tensor,
    bias: Tensor | None = None,
    border: str = "valid",
    stride: int = 1,
) -> Tensor:
    """Locally connected layer: an independent filter bank per output location.

    weights: [W,W,F,F,Cin,N]; bias: [W,W,N] or None.
    """
    wo, wo2, f, f2, cin, n = weights.shape
    if f != f2 or wo != wo2:
        raise DimensionError(f"only square fields and outputs are supported, got {weights.shape}")
    if x.ndim != 4 or x.shape[-1] != cin:
        raise DimensionError(f"input channels {x.shape[-1] if x.ndim else None} != weight Cin {cin}")
    pad = _same_padding(f) if border == "same" else 0
    expected = valid_extent(x.shape[1] + 2 * pad, f, stride)
    if expected != wo:
        raise DimensionError(f"weights cover a {wo}x{wo} output but the input gives {expected}x{expected}")
    wv = weights.values.reshape(wo * wo, f, f, cin, n)
    y, xt, pt, pad, out = _window_forward(x, wv, f, stride, border)
    need_w = weights.requires_grad
    if not need_w:
        pt = None
    if bias is not None:
        y = y + bias.values
    parents = (x, weights) if bias is None else (x, weights, bias)

    def backward(g):
        dx, dw = _window_backward(g, x, weights, wv, xt, pt, f, stride, pad, out, False, need_w)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(y, parents, backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of [B,L,L,C]."""
    y = x.values.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g):
        b, h, w, c = g.shape
        return (g.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4)),)

    return make_result(y, (x,), backward)


# ----------------------------------------------------------------------------
# batch-level ops


class BatchNormState:
    """Running per-channel statistics for inference-mode batch normalisation."""

    def __init__(self, channels: int, momentum: float = 0.99, epsilon: float = 1e-5):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.epsilon = epsilon


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    update_stats: bool = True,
) -> Tensor:
    """Channel-wise batch normalisation over every axis but the last."""
    axes = tuple(range(x.ndim - 1))
    eps = state.epsilon
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatchError("batchnorm in train mode needs a batch of at least 2")
        mu = x.values.mean(axis=axes)
        centered = x.values - mu
        var = np.mean(centered * centered, axis=axes)
        if update_stats:
            m = state.momentum
            state.mean = m * state.mean + (1.0 - m) * mu
            state.var = m * state.var + (1.0 - m) * var
    else:
        mu, var = state.mean, state.var
        centered = x.values - mu
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = gamma.values * xhat + beta.values
    count = x.values.size // x.shape[-1]

    def backward(g):
        dgamma = np.sum(g * xhat, axis=axes)
        dbeta = np.sum(g, axis=axes)
        dxhat = g * gamma.values
        if training:
            dx = (inv_std / count) * (
                count * dxhat - np.sum(dxhat, axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes)
            )
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return make_result(y, (x, gamma, beta), backward)


def minibatch_disc(features: Tensor, kernel: Tensor) -> Tensor:
    """Cross-sample similarity features.

    ``M_i = features_i @ kernel`` viewed as [kernels, dim]; output
    ``o[i, b] = sum_{j != i} exp(-||M[i, b] - M[j, b]||_1)``.
    """
    n, a = features.shape
    a2, nk, dim = kernel.shape
    if a != a2:
        raise DimensionError(f"feature width {a} != kernel rows {a2}")
    if n < 2:
        raise DegenerateBatchError("minibatch discrimination needs a batch of at least 2")
    k2 = kernel.values.reshape(a, nk * dim)
    m = (features.values @ k2).reshape(n, nk, dim)
    diff = m[:, None, :, :] - m[None, :, :, :]  # [n, n, nk, dim]
    sims = np.exp(-np.abs(diff).sum(axis=-1))  # [n, n, nk]
    idx = np.arange(n)
    sims[idx, idx, :] = 0.0
    out = sims.sum(axis=1)

    def backward(g):
        # d out[i,b] / d L1[i,j,b] = -sims[i,j,b]; L1 is symmetric in (i, j)
        dl1 = -sims * g[:, None, :]
        ddiff = dl1[..., None] * np.sign(diff)
        dm = ddiff.sum(axis=1) - ddiff.sum(axis=0)
        dm2 = dm.reshape(n, nk * dim)
        return dm2 @ k2.T, (features.values.T @ dm2).reshape(kernel.shape)

    return make_result(out, (features, kernel), backward)
