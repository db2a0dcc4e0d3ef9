"""Feed-forward network core: 1-D convolution over time, max pooling, ReLU,
affine and softmax layers, with forward/backward passes in float64.

Network inputs are ``(b, n_pad)`` matrices (features by frames), optionally
stacked along a leading batch axis in time-major order (all channels of frame 0 first). Affine layers flatten everything past the
batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Raised when a layer receives an input of the wrong shape."""


class ConsistencyError(ValueError):
    """Raised when a trace does not belong to the network being differentiated."""


@dataclass(frozen=True)
class Conv1D:
    num_filters: int
    filter_width: int

    def __post_init__(self):
        if self.num_filters < 1 or self.filter_width < 1:
            raise ValueError(f"invalid Conv1D {self}")


@dataclass(frozen=True)
class MaxPool:
    pool_width: int

    def __post_init__(self):
        if self.pool_width < 1:
            raise ValueError(f"invalid MaxPool {self}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Affine:
    out_dim: int

    def __post_init__(self):
        if self.out_dim < 1:
            raise ValueError(f"invalid Affine {self}")


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Union[Conv1D, MaxPool, ReLU, Affine, Softmax]

_LAYER_TYPES = {cls.__name__: cls for cls in (Conv1D, MaxPool, ReLU, Affine, Softmax)}


def layer_to_dict(layer: LayerSpec) -> dict:
    d = {"type": type(layer).__name__}
    d.update(layer.__dict__)
    return d


def layer_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    cls = _LAYER_TYPES[d.pop("type")]
    return cls(**d)


def output_shape(layer: LayerSpec, in_shape: tuple, index: int = 0) -> tuple:
    """Shape (without batch axis) produced by ``layer`` on ``in_shape``."""
    if isinstance(layer, Conv1D):
        if len(in_shape) != 2 or in_shape[1] < layer.filter_width:
            raise DimensionError(
                f"layer {index} (Conv1D width {layer.filter_width}): expected "
                f"(channels, frames>={layer.filter_width}), got {in_shape}")
        return (layer.num_filters, in_shape[1] - layer.filter_width + 1)
    if isinstance(layer, MaxPool):
        if len(in_shape) != 2 or in_shape[1] < layer.pool_width:
            raise DimensionError(
                f"layer {index} (MaxPool {layer.pool_width}): expected "
                f"(channels, frames>={layer.pool_width}), got {in_shape}")
        return (in_shape[0], in_shape[1] // layer.pool_width)
    if isinstance(layer, Affine):
        return (layer.out_dim,)
    if isinstance(layer, Softmax) and len(in_shape) != 1:
        raise DimensionError(f"layer {index} (Softmax): expected a vector, got {in_shape}")
    return tuple(in_shape)


def param_shapes(layer: LayerSpec, in_shape: tuple) -> dict:
    if isinstance(layer, Conv1D):
        return {"W": (layer.num_filters, in_shape[0], layer.filter_width),
                "b": (layer.num_filters,)}
    if isinstance(layer, Affine):
        return {"W": (layer.out_dim, int(np.prod(in_shape))), "b": (layer.out_dim,)}
    return {}


@dataclass
class Network:
    """Ordered layers plus one parameter block (dict of arrays) per layer."""

    input_shape: tuple
    layers: list
    params: list
    shapes: list = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            expected = param_shapes(layer, shapes[-1])
            got = {k: v.shape for k, v in self.params[i].items()}
            if expected != got:
                raise DimensionError(
                    f"layer {i} ({type(layer).__name__}): parameter shapes {got}, expected {expected}")
            shapes.append(output_shape(layer, shapes[-1], i))
        self.shapes = shapes

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.shapes[-1]))

    def copy(self) -> "Network":
        return Network(self.input_shape, list(self.layers),
                       [{k: v.copy() for k, v in p.items()} for p in self.params])

    def flat_params(self):
        """Yield (layer index, name, array) for every parameter array, in layer order."""
        for i, block in enumerate(self.params):
            for name in ("W", "b"):
                if name in block:
                    yield i, name, block[name]


def init_network(layers: Sequence[LayerSpec], input_shape: tuple,
                 rng: np.random.Generator) -> Network:
    """Glorot-uniform weights, zero biases."""
    params = []
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        shapes = param_shapes(layer, shape)
        block = {}
        if shapes:
            wshape = shapes["W"]
            if isinstance(layer, Conv1D):
                fan_in = wshape[1] * wshape[2]
                fan_out = wshape[0] * wshape[2]
            else:
                fan_out, fan_in = wshape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            block["W"] = rng.uniform(-limit, limit, size=wshape)
            block["b"] = np.zeros(shapes["b"])
        params.append(block)
        shape = output_shape(layer, shape, i)
    return Network(tuple(input_shape), list(layers), params)


# ---------------------------------------------------------------------------
# forward
#
# Internally, time-series activations are channel-last, (N, frames, channels),
# so that convolution reduces to contiguous im2col matmuls. The public entry
# points take and return (channels, frames) matrices.

def _to_internal(x):
    return np.ascontiguousarray(np.swapaxes(x, -1, -2)) if x.ndim >= 2 else x


def _to_public(x, layer=None):
    return np.swapaxes(x, -1, -2) if x.ndim == 3 else x


def _conv_weight(w):
    """(F, C, w) filters as an (F, w*C) matrix matching the im2col layout."""
    return w.transpose(0, 2, 1).reshape(w.shape[0], -1)


def _forward(layer, block, x):
    """Output of ``layer`` on a batched, channel-last input."""
    if isinstance(layer, Conv1D):
        n, t, c = x.shape
        width = layer.filter_width
        t_out = t - width + 1
        cols = sliding_window_view(x, width, axis=1).transpose(0, 1, 3, 2).reshape(n * t_out, width * c)
        out = cols @ _conv_weight(block["W"]).T + block["b"]
        return out.reshape(n, t_out, -1)
    if isinstance(layer, MaxPool):
        n, t, c = x.shape
        p = layer.pool_width
        t_out = t // p
        return x[:, :t_out * p].reshape(n, t_out, p, c).max(axis=2)
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0)
    if isinstance(layer, Affine):
        flat = x.reshape(x.shape[0], -1)
        return flat @ block["W"].T + block["b"]
    if isinstance(layer, Softmax):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    raise TypeError(f"unknown layer {layer!r}")


def _pool_first_max(x, out, p):
    """Mask of the first maximal position in every pooling window."""
    n, t, c = x.shape
    t_out = out.shape[1]
    xr = x[:, :t_out * p].reshape(n, t_out, p, c)
    mask = np.zeros(xr.shape, dtype=bool)
    taken = np.zeros(out.shape, dtype=bool)
    for k in range(p):
        hit = (xr[:, :, k] == out) & ~taken
        mask[:, :, k] = hit
        taken |= hit
    return mask


def _check_input(layer, shape, index, expected=None):
    if expected is not None and tuple(shape) != tuple(expected):
        raise DimensionError(
            f"layer {index} ({type(layer).__name__}): expected input shape {tuple(expected)}, got {tuple(shape)}")
    output_shape(layer, tuple(shape), index)


def layer_forward(layer: LayerSpec, block: dict, x: np.ndarray) -> np.ndarray:
    """Apply one layer to a single unbatched sample (a ``(channels, frames)``
    matrix for convolution/pooling, any array for the others)."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(layer, x.shape, 0)
    expected = param_shapes(layer, x.shape)
    got = {k: v.shape for k, v in block.items()}
    if expected != got:
        raise DimensionError(f"layer 0 ({type(layer).__name__}): parameter shapes {got}, "
                             f"expected {expected}")
    out = _forward(layer, block, _to_internal(x)[None])
    return _to_public(out)[0]


@dataclass
class Trace:
    """Per-layer activations (input first, final output last).

    Time-series activations are stored channel-last, ``(N, frames, channels)``;
    ``public(k)`` returns activation ``k`` as ``(N, channels, frames)``.
    """

    activations: list
    network_id: int
    layers: list

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    def public(self, k: int) -> np.ndarray:
        return _to_public(self.activations[k])

    def pattern(self) -> bytes:
        """Discrete branch decisions (ReLU signs, pool argmaxes) of this pass."""
        parts = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ReLU):
                parts.append(np.packbits(self.activations[i] > 0).tobytes())
            elif isinstance(layer, MaxPool):
                mask = _pool_first_max(self.activations[i], self.activations[i + 1], layer.pool_width)
                parts.append(np.argmax(mask, axis=2).astype(np.int32).tobytes())
        return b"".join(parts)


def network_forward(net: Network, x: np.ndarray) -> Trace:
    """Run ``x`` (one ``(b, n_pad)`` matrix or a batch of them) through the network."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        x = x[None]
    if x.shape[1:] != net.input_shape:
        raise DimensionError(f"layer 0 ({type(net.layers[0]).__name__}): expected input shape "
                             f"{net.input_shape}, got {x.shape[1:]}")
    activations = [_to_internal(x) if x.ndim == 3 else x]
    for i, (layer, block) in enumerate(zip(net.layers, net.params)):
        _check_input(layer, net.shapes[i], i)
        activations.append(_forward(layer, block, activations[-1]))
    return Trace(activations, id(net), list(net.layers))


# ---------------------------------------------------------------------------
# backward

def _backward(layer, block, x, out, g, need_dx=True):
    """Return (param grads dict, input grad) for a batched, channel-last layer."""
    if isinstance(layer, Conv1D):
        n, t, c = x.shape
        w = block["W"]
        f, _, width = w.shape
        t_out = t - width + 1
        g_flat = g.reshape(n * t_out, f)
        cols = sliding_window_view(x, width, axis=1).transpose(0, 1, 3, 2).reshape(n * t_out, width * c)
        dw = (g_flat.T @ cols).reshape(f, width, c).transpose(0, 2, 1)
        db = g_flat.sum(axis=0)
        dx = None
        if need_dx:
            dcols = (g_flat @ _conv_weight(w)).reshape(n, t_out, width, c)
            dx = np.zeros_like(x)
            for k in range(width):
                dx[:, k:k + t_out] += dcols[:, :, k]
        return {"W": np.ascontiguousarray(dw), "b": db}, dx
    if isinstance(layer, MaxPool):
        if not need_dx:
            return {}, None
        n, t, c = x.shape
        p = layer.pool_width
        t_out = out.shape[1]
        mask = _pool_first_max(x, out, p)
        dx = np.zeros_like(x)
        dx[:, :t_out * p] = (mask * g[:, :, None, :]).reshape(n, t_out * p, c)
        return {}, dx
    if isinstance(layer, ReLU):
        return {}, (g * (x > 0) if need_dx else None)
    if isinstance(layer, Affine):
        flat = x.reshape(x.shape[0], -1)
        dw = g.T @ flat
        db = g.sum(axis=0)
        return {"W": dw, "b": db}, ((g @ block["W"]).reshape(x.shape) if need_dx else None)
    if isinstance(layer, Softmax):
        return {}, out * (g - (g * out).sum(axis=1, keepdims=True))
    raise TypeError(f"unknown layer {layer!r}")


def network_backward(net: Network, trace: Trace, output_gradient: np.ndarray,
                     from_layer: int | None = None, input_gradient: bool = True):
    """Backpropagate ``output_gradient`` through the network.

    ``output_gradient`` is taken w.r.t. the output of layer ``from_layer - 1``
    (default: the final output) and uses the public ``(N, channels, frames)``
    layout for time-series activations. Passing ``from_layer = len(layers) - 1``
    on a softmax-headed network lets callers start from logit gradients.
    Returns ``(grads, input_gradient)`` where ``grads`` mirrors ``net.params``;
    gradients are summed over the batch, so a batch mean needs the caller to
    scale. With ``input_gradient=False`` the (unneeded) input gradient is
    skipped and returned as None.
    """
    if trace.network_id != id(net) or len(trace.activations) != len(net.layers) + 1:
        raise ConsistencyError("trace was not produced by this network")
    top = len(net.layers) if from_layer is None else from_layer
    g = np.asarray(output_gradient, dtype=np.float64)
    act = trace.public(top)
    if g.shape == act.shape[1:] and act.shape[0] == 1:
        g = g[None]
    if g.shape != act.shape:
        raise DimensionError(f"output gradient shape {g.shape} does not match {act.shape}")
    g = _to_internal(g) if g.ndim == 3 else g
    grads = [{} for _ in net.layers]
    for i in range(top - 1, -1, -1):
        need_dx = i > 0 or input_gradient
        pg, g = _backward(net.layers[i], net.params[i], trace.activations[i],
                          trace.activations[i + 1], g, need_dx)
        grads[i] = pg
    if g is not None and g.ndim == 3:
        g = _to_public(g)
    return grads, g


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class LossEval:
    """What a loss function hands to the gradient checker."""

    loss: float
    grads: list
    pattern: bytes = b""


def finite_difference_check(net: Network, loss_fn: Callable[[Network, object], LossEval],
                            sample, h: float = 1e-5) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    Coordinates whose +-h perturbation changes a discrete branch decision
    (ReLU sign, pool argmax, hinge activity; reported by ``loss_fn`` as
    ``pattern``) sit on a kink and are skipped.
    """
    base = loss_fn(net, sample)
    if not np.isfinite(base.loss):
        raise FloatingPointError("loss is not finite")
    worst = 0.0
    for i, name, arr in net.flat_params():
        analytic = base.grads[i][name]
        flat = arr.reshape(-1)
        ga = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = loss_fn(net, sample)
            flat[j] = orig - h
            minus = loss_fn(net, sample)
            flat[j] = orig
            if not (np.isfinite(plus.loss) and np.isfinite(minus.loss)):
                raise FloatingPointError("loss is not finite")
            if plus.pattern != base.pattern or minus.pattern != base.pattern:
                continue
            numeric = (plus.loss - minus.loss) / (2 * h)
            err = abs(ga[j] - numeric) / max(1e-12, abs(ga[j]) + abs(numeric))
            worst = max(worst, err)
    return worst
