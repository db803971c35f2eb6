"""Small dense kernel: forward and reverse-mode passes for a fixed layer set.

Activations are float64 arrays shaped ``(batch, channels, length)`` until a
global pooling layer collapses them to ``(batch, features)``.  A single input
waveform is a ``(1, T)`` array; batches of waveforms are ``(B, T)``.

Parameters are held as a list aligned with the layer list; each entry is a
dict of named arrays (empty for parameter-free layers).  Only the layer kinds
below are supported; there is no general autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when layer dimensions do not compose or inputs have the wrong shape."""


@dataclass(frozen=True)
class Conv1d:
    k: int
    c_in: int
    c_out: int
    stride: int = 1
    dilation: int = 1


@dataclass(frozen=True)
class GatedConv1d:
    """``conv_a(x) * sigmoid(conv_b(x))`` with two independent kernels."""

    k: int
    c_in: int
    c_out: int
    stride: int = 1
    dilation: int = 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool1d:
    k: int
    stride: int


@dataclass(frozen=True)
class AvgPoolGlobal:
    pass


@dataclass(frozen=True)
class LogCompress:
    """Elementwise ``log(1 + x / floor)``; expects non-negative input."""

    floor: float = 1e-3


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class SoftmaxCE:
    """Terminal marker: the preceding layer's output are the logits."""


LayerSpec = Union[Conv1d, GatedConv1d, ReLU, MaxPool1d, AvgPoolGlobal, LogCompress, Dense, SoftmaxCE]
Params = list  # list[dict[str, np.ndarray]], aligned with layers


def _conv_out_len(length: int, k: int, stride: int, dilation: int) -> int:
    span = (k - 1) * dilation + 1
    if length < span:
        return 0
    return (length - span) // stride + 1


def check_layers(layers: list[LayerSpec], input_len: int) -> int:
    """Walk the layer list and return the logits width; raise on any mismatch."""
    channels, length, flat = 1, input_len, None
    for i, layer in enumerate(layers):
        if isinstance(layer, (Conv1d, GatedConv1d)):
            if flat is not None:
                raise ShapeError(f"layer {i}: convolution after global pooling")
            if layer.c_in != channels:
                raise ShapeError(f"layer {i}: expects c_in={layer.c_in}, got {channels} channels")
            length = _conv_out_len(length, layer.k, layer.stride, layer.dilation)
            if length <= 0:
                raise ShapeError(f"layer {i}: input too short for kernel")
            channels = layer.c_out
        elif isinstance(layer, MaxPool1d):
            if flat is not None:
                raise ShapeError(f"layer {i}: pooling after global pooling")
            length = _conv_out_len(length, layer.k, layer.stride, 1)
            if length <= 0:
                raise ShapeError(f"layer {i}: input too short for pooling window")
        elif isinstance(layer, AvgPoolGlobal):
            if flat is not None:
                raise ShapeError(f"layer {i}: repeated global pooling")
            flat = channels
        elif isinstance(layer, Dense):
            if flat is None:
                raise ShapeError(f"layer {i}: Dense before global pooling")
            if layer.n_in != flat:
                raise ShapeError(f"layer {i}: expects n_in={layer.n_in}, got {flat} features")
            flat = layer.n_out
        elif isinstance(layer, SoftmaxCE):
            if i != len(layers) - 1:
                raise ShapeError(f"layer {i}: SoftmaxCE must be last")
        elif not isinstance(layer, (ReLU, LogCompress)):
            raise ShapeError(f"layer {i}: unknown layer kind {type(layer).__name__}")
    if flat != 2:
        raise ShapeError(f"network produces {flat} outputs, expected 2 logits")
    return flat


def init_params(layers: list[LayerSpec], rng: np.random.Generator) -> Params:
    """He-normal weights, zero biases."""
    params: Params = []
    for layer in layers:
        if isinstance(layer, Conv1d):
            std = np.sqrt(2.0 / (layer.c_in * layer.k))
            params.append({
                "w": rng.normal(0.0, std, (layer.c_out, layer.c_in, layer.k)),
                "b": np.zeros(layer.c_out),
            })
        elif isinstance(layer, GatedConv1d):
            std = np.sqrt(2.0 / (layer.c_in * layer.k))
            params.append({
                "wa": rng.normal(0.0, std, (layer.c_out, layer.c_in, layer.k)),
                "ba": np.zeros(layer.c_out),
                "wb": rng.normal(0.0, std, (layer.c_out, layer.c_in, layer.k)),
                "bb": np.zeros(layer.c_out),
            })
        elif isinstance(layer, Dense):
            std = np.sqrt(1.0 / layer.n_in)
            params.append({
                "w": rng.normal(0.0, std, (layer.n_out, layer.n_in)),
                "b": np.zeros(layer.n_out),
            })
        else:
            params.append({})
    return params


def zeros_like_params(params: Params) -> Params:
    return [{name: np.zeros_like(arr, dtype=np.float64) for name, arr in p.items()} for p in params]


# -- convolution helpers -----------------------------------------------------

def _patches(x: np.ndarray, k: int, stride: int, dilation: int) -> np.ndarray:
    """Return contiguous patches shaped (B, L_out, C_in * k)."""
    span = (k - 1) * dilation + 1
    win = sliding_window_view(x, span, axis=2)[:, :, ::stride, ::dilation]  # (B, C, L, k)
    b, c, l_out, _ = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, l_out, c * k)


def _conv_forward(x, w, b, stride, dilation):
    c_out, c_in, k = w.shape
    cols = _patches(x, k, stride, dilation)
    out = cols @ w.reshape(c_out, c_in * k).T + b  # (B, L, C_out)
    return out.transpose(0, 2, 1), cols


def _conv_backward(grad_out, cols, w, x_shape, stride, dilation, need_params):
    c_out, c_in, k = w.shape
    g = grad_out.transpose(0, 2, 1)  # (B, L, C_out)
    gw = gb = None
    if need_params:
        gw = np.tensordot(g, cols, axes=([0, 1], [0, 1])).reshape(c_out, c_in, k)
        gb = g.sum(axis=(0, 1))
    gcols = (g @ w.reshape(c_out, c_in * k)).reshape(g.shape[0], g.shape[1], c_in, k)
    gx = np.zeros(x_shape)
    l_out = g.shape[1]
    for j in range(k):
        start = j * dilation
        stop = start + (l_out - 1) * stride + 1
        gx[:, :, start:stop:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
    return gx, gw, gb


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- forward / backward ------------------------------------------------------

def forward(layers: list[LayerSpec], params: Params, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Evaluate the network on a ``(B, T)`` batch.

    Returns logits of shape ``(B, 2)`` and a cache for the backward passes.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be (batch, T), got shape {x.shape}")
    h = x[:, None, :]
    cache = []
    for i, (layer, p) in enumerate(zip(layers, params)):
        if isinstance(layer, Conv1d):
            if h.ndim != 3 or h.shape[1] != layer.c_in:
                raise ShapeError(f"layer {i}: expected {layer.c_in} input channels, got shape {h.shape}")
            w = np.asarray(p["w"], dtype=np.float64)
            out, cols = _conv_forward(h, w, np.asarray(p["b"], dtype=np.float64), layer.stride, layer.dilation)
            cache.append((cols, w, h.shape))
            h = out
        elif isinstance(layer, GatedConv1d):
            if h.ndim != 3 or h.shape[1] != layer.c_in:
                raise ShapeError(f"layer {i}: expected {layer.c_in} input channels, got shape {h.shape}")
            wa = np.asarray(p["wa"], dtype=np.float64)
            wb = np.asarray(p["wb"], dtype=np.float64)
            a, cols = _conv_forward(h, wa, np.asarray(p["ba"], dtype=np.float64), layer.stride, layer.dilation)
            z, _ = _conv_forward(h, wb, np.asarray(p["bb"], dtype=np.float64), layer.stride, layer.dilation)
            s = _sigmoid(z)
            cache.append((cols, wa, wb, a, s, h.shape))
            h = a * s
        elif isinstance(layer, ReLU):
            mask = h > 0
            cache.append(mask)
            h = h * mask
        elif isinstance(layer, MaxPool1d):
            win = sliding_window_view(h, layer.k, axis=2)[:, :, ::layer.stride, :]
            # argmax returns the first maximal index: ties go to the lowest position
            idx = win.argmax(axis=3)
            cache.append((idx, h.shape))
            h = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
        elif isinstance(layer, AvgPoolGlobal):
            cache.append(h.shape)
            h = h.mean(axis=2)
        elif isinstance(layer, LogCompress):
            cache.append(h)
            h = np.log1p(h / layer.floor)
        elif isinstance(layer, Dense):
            if h.ndim != 2 or h.shape[1] != layer.n_in:
                raise ShapeError(f"layer {i}: expected {layer.n_in} features, got shape {h.shape}")
            w = np.asarray(p["w"], dtype=np.float64)
            cache.append((h, w))
            h = h @ w.T + np.asarray(p["b"], dtype=np.float64)
        elif isinstance(layer, SoftmaxCE):
            cache.append(None)
        else:
            raise ShapeError(f"layer {i}: unknown layer kind {type(layer).__name__}")
    if h.ndim != 2 or h.shape[1] != 2:
        raise ShapeError(f"network output has shape {h.shape}, expected (batch, 2)")
    return h, [layers, cache]


def _backward(cache, grad_logits, need_params: bool):
    layers, entries = cache
    g = np.asarray(grad_logits, dtype=np.float64)
    grads: list = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer, c = layers[i], entries[i]
        if isinstance(layer, Conv1d):
            cols, w, x_shape = c
            g, gw, gb = _conv_backward(g, cols, w, x_shape, layer.stride, layer.dilation, need_params)
            grads[i] = {"w": gw, "b": gb} if need_params else {}
        elif isinstance(layer, GatedConv1d):
            cols, wa, wb, a, s, x_shape = c
            ga = g * s
            gz = g * a * s * (1.0 - s)
            gxa, gwa, gba = _conv_backward(ga, cols, wa, x_shape, layer.stride, layer.dilation, need_params)
            gxb, gwb, gbb = _conv_backward(gz, cols, wb, x_shape, layer.stride, layer.dilation, need_params)
            g = gxa + gxb
            grads[i] = {"wa": gwa, "ba": gba, "wb": gwb, "bb": gbb} if need_params else {}
        elif isinstance(layer, ReLU):
            g = g * c
            grads[i] = {}
        elif isinstance(layer, MaxPool1d):
            idx, x_shape = c
            gx = np.zeros(x_shape)
            l_out = idx.shape[2]
            for j in range(layer.k):
                stop = j + (l_out - 1) * layer.stride + 1
                gx[:, :, j:stop:layer.stride] += np.where(idx == j, g, 0.0)
            g = gx
            grads[i] = {}
        elif isinstance(layer, AvgPoolGlobal):
            b, ch, length = c
            g = np.broadcast_to(g[:, :, None] / length, (b, ch, length))
            grads[i] = {}
        elif isinstance(layer, LogCompress):
            g = g / (c + layer.floor)
            grads[i] = {}
        elif isinstance(layer, Dense):
            h, w = c
            grads[i] = {"w": g.T @ h, "b": g.sum(axis=0)} if need_params else {}
            g = g @ w
        else:
            grads[i] = {}
        if g.shape[0] != np.asarray(grad_logits).shape[0]:
            raise ShapeError("gradient batch size does not match the cache")
    return g[:, 0, :], grads


def backward_input(cache, grad_logits: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(grad_logits * logits)`` with respect to the input, shape (B, T)."""
    _check_grad(cache, grad_logits)
    gx, _ = _backward(cache, grad_logits, need_params=False)
    return gx


def backward_params(cache, grad_logits: np.ndarray) -> Params:
    """Gradient with respect to every parameter, summed over the batch."""
    _check_grad(cache, grad_logits)
    _, grads = _backward(cache, grad_logits, need_params=True)
    return grads


def backward(cache, grad_logits: np.ndarray) -> tuple[np.ndarray, Params]:
    """Both gradients from one reverse sweep."""
    _check_grad(cache, grad_logits)
    return _backward(cache, grad_logits, need_params=True)


def _check_grad(cache, grad_logits):
    layers, entries = cache
    g = np.asarray(grad_logits)
    batch = _cache_batch(layers, entries)
    if g.ndim != 2 or g.shape != (batch, 2):
        raise ShapeError(f"grad_logits shape {g.shape} does not match logits shape ({batch}, 2)")


def _cache_batch(layers, entries) -> int:
    for layer, c in zip(reversed(layers), reversed(entries)):
        if isinstance(layer, Dense):
            return c[0].shape[0]
    raise ShapeError("cache holds no Dense layer")


# -- loss --------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, target_class: int) -> float:
    """``-log softmax(logits)[target]`` for a single 2-logit vector."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if z.shape != (2,):
        raise ShapeError(f"logits must have shape (2,), got {z.shape}")
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[target_class])


def cross_entropy_grad(logits: np.ndarray, targets) -> tuple[np.ndarray, np.ndarray]:
    """Per-example CE losses and d(loss)/d(logits) for a (B, 2) batch."""
    z = np.asarray(logits, dtype=np.float64)
    targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (z.shape[0],))
    p = softmax(z)
    m = z.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]
    losses = lse - z[np.arange(z.shape[0]), targets]
    grad = p.copy()
    grad[np.arange(z.shape[0]), targets] -= 1.0
    return losses, grad
