"""Minimal reverse-mode autodiff over numpy arrays.

Feature maps are rank-3 arrays laid out as (batch, frames, channels).
Parameters (filters, biases, upsampling weights) are wrapped in the same
``Tensor`` class but keep their natural rank.

Only the operations the Wave-U-Net needs are provided. Every op is a pure
function of its inputs; a graph is recorded only when at least one input
requires a gradient, so inference builds no graph at all.

A recorded graph can be differentiated exactly once: ``backward`` releases
the closures it walks, and a second call on the same loss raises
``UsageError``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, SizeError, UsageError

LEAKY_SLOPE = 0.2


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[-1]

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)


@dataclass
class ConvParams:
    filters: Tensor  # (filter_size, in_channels, out_channels)
    bias: Tensor  # (out_channels,)

    @property
    def filter_size(self) -> int:
        return self.filters.shape[0]


@dataclass
class UpsampleWeights:
    w: Tensor  # (channels,), pre-sigmoid


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    return out


def _check_rank3(x: Tensor, name: str) -> None:
    if x.data.ndim != 3:
        raise ShapeError(f"{name}: expected (batch, frames, channels), got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def conv1d(x: Tensor, params: ConvParams, padding: str = "valid", name: str = "conv1d") -> Tensor:
    """1D cross-correlation (no kernel flip) plus per-channel bias.

    ``valid`` shrinks the frame count by ``filter_size - 1``; ``same`` zero-pads
    symmetrically (extra sample on the right for even filters) and keeps it.
    """
    _check_rank3(x, name)
    W, b = params.filters, params.bias
    f, cin, cout = W.shape
    if x.channels != cin:
        raise ShapeError(f"{name}: input has {x.channels} channels, filter expects {cin}")
    if padding == "same":
        left = (f - 1) // 2
        right = f - 1 - left
        xd = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    elif padding == "valid":
        left = right = 0
        xd = x.data
        if x.frames < f:
            raise SizeError(f"{name}: {x.frames} frames is fewer than filter size {f}")
    else:
        raise ValueError(f"unknown padding {padding!r}")

    batch, n = xd.shape[0], xd.shape[1]
    n_out = n - f + 1
    Wd = W.data
    out = np.empty((batch, n_out, cout), dtype=np.result_type(xd, Wd))
    out[...] = b.data
    for k in range(f):
        out += xd[:, k : k + n_out, :] @ Wd[k]

    def grad_fn(g):
        gx = gW = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xd)
            for k in range(f):
                gxp[:, k : k + n_out, :] += g @ Wd[k].T
            gx = gxp[:, left : n - right, :] if (left or right) else gxp
        if W.requires_grad:
            g2 = g.reshape(-1, cout)
            gW = np.empty_like(Wd)
            for k in range(f):
                gW[k] = xd[:, k : k + n_out, :].reshape(-1, cin).T @ g2
        if b.requires_grad:
            gb = g.sum(axis=(0, 1))
        return gx, gW, gb

    return _result(out, (x, W, b), grad_fn)


# ---------------------------------------------------------------------------
# elementwise


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data >= 0
    out = np.where(pos, x.data, slope * x.data)
    # derivative at exactly 0 takes the positive branch
    return _result(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def activation(x: Tensor, kind: str, slope: float = LEAKY_SLOPE) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


# ---------------------------------------------------------------------------
# resampling along time


def decimate(x: Tensor, strict: bool = False) -> Tensor:
    """Keep frames 0, 2, 4, ...

    With ``strict`` (context mode) the input must have an odd frame count of
    at least 3 so that the first and last frames both survive.
    """
    _check_rank3(x, "decimate")
    n = x.frames
    if strict and (n < 3 or n % 2 == 0):
        raise SizeError(f"decimate: context mode needs an odd frame count >= 3, got {n}")
    out = x.data[:, ::2, :].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, ::2, :] = g
        return (gx,)

    return _result(out, (x,), grad_fn)


def upsample_linear(x: Tensor) -> Tensor:
    """n frames -> 2n-1 frames; odd outputs are neighbour midpoints."""
    _check_rank3(x, "upsample_linear")
    n = x.frames
    if n < 2:
        raise SizeError(f"upsample_linear: needs at least 2 frames, got {n}")
    xd = x.data
    out = np.empty((xd.shape[0], 2 * n - 1, xd.shape[2]), dtype=xd.dtype)
    out[:, ::2] = xd
    out[:, 1::2] = 0.5 * (xd[:, :-1] + xd[:, 1:])

    def grad_fn(g):
        gx = g[:, ::2].copy()
        half = 0.5 * g[:, 1::2]
        gx[:, :-1] += half
        gx[:, 1:] += half
        return (gx,)

    return _result(out, (x,), grad_fn)


def upsample_learned(x: Tensor, weights: UpsampleWeights) -> Tensor:
    """Per-channel convex interpolation: mid = s*f_t + (1-s)*f_{t+1}, s = sigmoid(w)."""
    _check_rank3(x, "upsample_learned")
    n = x.frames
    if n < 2:
        raise SizeError(f"upsample_learned: needs at least 2 frames, got {n}")
    w = weights.w
    if w.shape != (x.channels,):
        raise ShapeError(f"upsample_learned: {w.shape[0]} weights for {x.channels} channels")
    xd = x.data
    s = _sigmoid(w.data)
    left, right = xd[:, :-1], xd[:, 1:]
    out = np.empty((xd.shape[0], 2 * n - 1, xd.shape[2]), dtype=np.result_type(xd, s))
    out[:, ::2] = xd
    out[:, 1::2] = s * left + (1.0 - s) * right

    def grad_fn(g):
        gx = gw = None
        gm = g[:, 1::2]
        if x.requires_grad:
            gx = g[:, ::2].copy()
            gx[:, :-1] += s * gm
            gx[:, 1:] += (1.0 - s) * gm
        if w.requires_grad:
            gw = (gm * (left - right)).sum(axis=(0, 1)) * s * (1.0 - s)
        return gx, gw

    return _result(out, (x, w), grad_fn)


def repeat_last_frame(x: Tensor) -> Tensor:
    """Append a copy of the final frame (edge extrapolation for zero-padded models)."""
    _check_rank3(x, "repeat_last_frame")
    out = np.concatenate([x.data, x.data[:, -1:]], axis=1)

    def grad_fn(g):
        gx = g[:, :-1].copy()
        gx[:, -1] += g[:, -1]
        return (gx,)

    return _result(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# cropping and skip connections


def center_crop(x: Tensor, frames: int) -> Tensor:
    _check_rank3(x, "center_crop")
    diff = x.frames - frames
    if diff < 0:
        raise SizeError(f"center_crop: cannot crop {x.frames} frames to {frames}")
    if diff % 2:
        raise SizeError(f"center_crop: odd crop difference {diff} ({x.frames} -> {frames})")
    if diff == 0:
        return x
    c = diff // 2
    out = x.data[:, c : c + frames].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, c : c + frames] = g
        return (gx,)

    return _result(out, (x,), grad_fn)


def concat_crop(high_level: Tensor, local: Tensor) -> Tensor:
    """Centre-crop ``local`` to the frame count of ``high_level``, then stack channels.

    Output channels are ``high_level`` channels followed by ``local`` channels.
    """
    _check_rank3(high_level, "concat_crop")
    cropped = center_crop(local, high_level.frames)
    ch = high_level.channels
    out = np.concatenate([high_level.data, cropped.data], axis=2)
    return _result(out, (high_level, cropped), lambda g: (g[:, :, :ch], g[:, :, ch:]))


def stack_channels(parts: Sequence[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=2)
    bounds = np.cumsum([0] + [p.channels for p in parts])
    return _result(
        out, tuple(parts), lambda g: tuple(g[:, :, bounds[i] : bounds[i + 1]] for i in range(len(parts)))
    )


# ---------------------------------------------------------------------------
# loss and differentiation


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every element; returns a 0-d tensor."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray(np.mean(diff * diff))
    k = 2.0 / count

    def grad_fn(g):
        gd = (k * g) * diff
        return gd, -gd

    return _result(out, (pred, target), grad_fn)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring a gradient.

    The graph is released afterwards; calling again on the same loss raises.
    """
    if loss._released:
        raise UsageError("backward: graph already consumed by a previous backward call")
    if not loss.requires_grad:
        raise UsageError("backward: tensor was not produced by a recorded computation")
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be a scalar, got shape {loss.shape}")

    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._released = True
