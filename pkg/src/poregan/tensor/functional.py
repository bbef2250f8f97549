"""Differentiable layers and losses used by the slice-conditioned GAN.

Convolutions are cross-correlations (no kernel flip) over ``nd`` spatial
axes, with a single integer kernel size, stride and zero padding shared by
all axes.  ``conv_transpose`` is the exact adjoint of ``conv`` with respect
to its input.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Tensor, as_tensor, make_node


def _out_extent(n: int, k: int, s: int, p: int) -> int:
    span = n + 2 * p - k
    if span < 0 or span % s:
        raise ValueError(
            f"non-integral output extent: (n={n} + 2*{p} - k={k}) / s={s} + 1"
        )
    return span // s + 1


def _pad(x: np.ndarray, p: int, nd: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p)] * nd)


def _crop(x: np.ndarray, p: int, nd: int) -> np.ndarray:
    if p == 0:
        return x
    return x[(slice(None), slice(None)) + (slice(p, -p),) * nd]


def _windows(xp: np.ndarray, k: int, s: int, nd: int) -> np.ndarray:
    """Strided view [N, C, *out, *kernel] over a padded input."""
    win = sliding_window_view(xp, (k,) * nd, axis=tuple(range(2, 2 + nd)))
    return win[(slice(None), slice(None)) + (slice(None, None, s),) * nd]


def _conv_forward(x, w, s, p, nd):
    win = _windows(_pad(x, p, nd), w.shape[-1], s, nd)
    axes_x = [1] + list(range(2 + nd, 2 + 2 * nd))
    axes_w = [1] + list(range(2, 2 + nd))
    out = np.tensordot(win, w, axes=(axes_x, axes_w))  # [N, *out, F]
    return np.moveaxis(out, -1, 1)


def _conv_weight_grad(x, g, s, p, nd, k):
    win = _windows(_pad(x, p, nd), k, s, nd)
    spatial = list(range(2, 2 + nd))
    return np.tensordot(g, win, axes=([0] + spatial, [0] + spatial))  # [F, C, *k]


def _conv_input_grad(g, w, s, p, nd, in_spatial):
    """Scatter ``g`` [N, F, *out] back through weight [F, C, *k] onto the input."""
    k = w.shape[-1]
    n, out_spatial = g.shape[0], g.shape[2:]
    padded = tuple(d + 2 * p for d in in_spatial)
    dx = np.zeros((n, w.shape[1]) + padded, dtype=g.dtype)
    cols = np.tensordot(g, w, axes=([1], [0]))  # [N, *out, C, *k]
    cols = np.moveaxis(cols, 1 + nd, 1)  # [N, C, *out, *k]
    for offset in itertools.product(range(k), repeat=nd):
        target = tuple(slice(i, i + s * (o - 1) + 1, s) for i, o in zip(offset, out_spatial))
        dx[(slice(None), slice(None)) + target] += cols[(Ellipsis,) + offset]
    return _crop(dx, p, nd)


def _check_conv(x: Tensor, w: Tensor, b, nd: int, in_channel_axis: int):
    if x.ndim != nd + 2:
        raise ValueError(f"expected input [N, C, {nd} spatial], got {x.shape}")
    if w.ndim != nd + 2 or len(set(w.shape[2:])) != 1:
        raise ValueError(f"expected cubic kernel of rank {nd + 2}, got {w.shape}")
    if x.shape[1] != w.shape[in_channel_axis]:
        raise ValueError(f"channel mismatch: input {x.shape}, weight {w.shape}")
    if b is not None:
        out_channels = w.shape[1 - in_channel_axis]
        if b.shape != (out_channels,):
            raise ValueError(f"bias shape {b.shape} != ({out_channels},)")


def _bias_shape(nd):
    return (1, -1) + (1,) * nd


def conv(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """N-d convolution: x [N, C, *sp], w [F, C, k, ...], b [F]."""
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    nd = x.ndim - 2
    _check_conv(x, w, b, nd, in_channel_axis=1)
    k = w.shape[-1]
    for n in x.shape[2:]:
        _out_extent(n, k, stride, padding)
    out = _conv_forward(x.data, w.data, stride, padding, nd)
    if b is not None:
        out = out + b.data.reshape(_bias_shape(nd))
    in_spatial = x.shape[2:]

    def _bw(g):
        gx = _conv_input_grad(g, w.data, stride, padding, nd, in_spatial) if x.requires_grad else None
        gw = _conv_weight_grad(x.data, g, stride, padding, nd, k) if w.requires_grad else None
        gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd))) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, _bw)


def conv_transpose(y, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv`: y [N, F, *sp], w [F, C, k, ...] -> [N, C, ...].

    Output extent per axis is ``(n - 1) * stride + k - 2 * padding``.
    """
    y, w = as_tensor(y), as_tensor(w)
    b = None if b is None else as_tensor(b)
    nd = y.ndim - 2
    _check_conv(y, w, b, nd, in_channel_axis=0)
    k = w.shape[-1]
    out_spatial = tuple((n - 1) * stride + k - 2 * padding for n in y.shape[2:])
    if any(n < 1 for n in out_spatial):
        raise ValueError(f"transposed convolution output extent {out_spatial} is empty")
    out = _conv_input_grad(y.data, w.data, stride, padding, nd, out_spatial)
    if b is not None:
        out = out + b.data.reshape(_bias_shape(nd))

    def _bw(g):
        gy = _conv_forward(g, w.data, stride, padding, nd) if y.requires_grad else None
        gw = _conv_weight_grad(g, y.data, stride, padding, nd, k) if w.requires_grad else None
        gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd))) if b is not None and b.requires_grad else None
        return gy, gw, gb

    parents = (y, w) if b is None else (y, w, b)
    return make_node(out, parents, _bw)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    if as_tensor(x).ndim != 4:
        raise ValueError("conv2d expects [N, C, H, W]")
    return conv(x, w, b, stride, padding)


def conv3d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    if as_tensor(x).ndim != 5:
        raise ValueError("conv3d expects [N, C, D, H, W]")
    return conv(x, w, b, stride, padding)


def conv_transpose3d(y, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    if as_tensor(y).ndim != 5:
        raise ValueError("conv_transpose3d expects [N, C, D, H, W]")
    return conv_transpose(y, w, b, stride, padding)


def dense(x, w, b=None) -> Tensor:
    """x [N, I] @ w[O, I].T + b[O]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"dense shape mismatch: input {x.shape}, weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b.data

    def _bw(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    return make_node(out, (x, w) if b is None else (x, w, b), _bw)


# -- activations -------------------------------------------------------------

@dataclass(frozen=True)
class LeakyReLU:
    alpha: float = 0.2


RELU, TANH, SIGMOID = "relu", "tanh", "sigmoid"


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_node(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    # slope 0 at exactly zero, same convention as relu
    slope = np.where(pos, 1.0, np.where(x.data < 0, alpha, 0.0))
    return make_node(np.where(pos, x.data, alpha * x.data), (x,), lambda g: (g * slope,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def activation(x, kind) -> Tensor:
    if isinstance(kind, LeakyReLU):
        return leaky_relu(x, kind.alpha)
    if kind == "leaky_relu":
        return leaky_relu(x)
    table = {RELU: relu, TANH: tanh, SIGMOID: sigmoid}
    if kind not in table:
        raise ValueError(f"unknown activation {kind!r}")
    return table[kind](x)


# -- reductions, losses, shape ops -------------------------------------------

def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return make_node(np.array(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return make_node(np.array(x.data.mean()), (x,), lambda g: (np.full_like(x.data, g / n),))


def mse(a, b) -> Tensor:
    """Mean of squared elementwise differences."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def _bw(g):
        d = (2.0 * g / n) * diff
        return d, -d

    return make_node(np.array(np.mean(diff * diff)), (a, b), _bw)


def log(x, floor: float | None = None) -> Tensor:
    """Natural log.  With ``floor`` the input is clamped below first and the
    gradient vanishes where the clamp is active."""
    x = as_tensor(x)
    if floor is None:
        active = np.ones(x.shape, dtype=bool)
        v = x.data
    else:
        active = x.data > floor
        v = np.where(active, x.data, floor)
    return make_node(np.log(v), (x,), lambda g: (np.where(active, g / v, 0.0),))


def concat(a, b, axis: int = 1) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    split = a.shape[axis]
    out = np.concatenate([a.data, b.data], axis=axis)

    def _bw(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return make_node(out, (a, b), _bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),))
