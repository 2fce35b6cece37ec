"""Network specs, flat parameter layouts, initialization and masked forward passes.

All parameters of a network live in one flat float64 vector. The layout
records, for each layer, where its weight tensor and bias vector sit in
that vector. Forward passes accept either a single parameter vector of
shape ``(D,)`` or a population of shape ``(n, D)``; in the latter case
each candidate is evaluated independently with per-candidate matrix
products, so a candidate's output does not depend on how the population
was chunked.

CNNs use valid-padding convolutions followed by the configured activation,
2x2 average pooling between consecutive conv layers, and a flattened
dense head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError
from .rng import stream

ACTIVATIONS = ("tanh", "relu")
OUTPUT_TRANSFORMS = ("tanh", "identity", "logits")
INIT_SCHEMES = ("lecun_normal", "glorot_uniform", "he_normal", "uniform_small")
UNIFORM_SMALL_LIMIT = 0.1


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    For ``kind="mlp"``, ``layer_dims`` lists every width from input to
    output, e.g. ``(784, 64, 10)``. For ``kind="cnn"``, ``layer_dims``
    lists the dense head widths after flattening (usually just the
    number of classes) and the conv stack is given by ``input_shape``
    (H, W, C), ``conv_filters`` and ``filter_sizes``.
    """

    kind: str = "mlp"
    layer_dims: tuple[int, ...] = (784, 64, 10)
    activation: str = "tanh"
    output_transform: str = "logits"
    input_shape: tuple[int, ...] | None = None
    conv_filters: tuple[int, ...] = (8, 16)
    filter_sizes: tuple[int, ...] = (5, 5)

    def __post_init__(self):
        # normalise lists coming from config files
        for name in ("layer_dims", "conv_filters", "filter_sizes"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    def validate(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ConfigError(f"unknown output transform {self.output_transform!r}")
        if any(d <= 0 for d in self.layer_dims):
            raise ConfigError(f"layer widths must be positive: {self.layer_dims}")
        if self.kind == "mlp":
            if not 2 <= len(self.layer_dims) <= 5:
                raise ConfigError("mlp needs input and output widths and at most 3 hidden layers")
        elif self.kind == "cnn":
            if self.input_shape is None or len(self.input_shape) != 3:
                raise ConfigError("cnn needs input_shape=(H, W, C)")
            if len(self.conv_filters) != len(self.filter_sizes) or not self.conv_filters:
                raise ConfigError("conv_filters and filter_sizes must be non-empty and equal length")
            if len(self.layer_dims) < 1:
                raise ConfigError("cnn needs at least one dense head layer")
            h, w, _ = self.input_shape
            for i, k in enumerate(self.filter_sizes):
                if i > 0:
                    h, w = h // 2, w // 2
                h, w = h - k + 1, w - k + 1
                if h <= 0 or w <= 0:
                    raise ConfigError(f"input {self.input_shape} too small for conv stack")
        else:
            raise ConfigError(f"unknown network kind {self.kind!r}")

    @property
    def n_inputs(self) -> int:
        if self.kind == "mlp":
            return self.layer_dims[0]
        return int(np.prod(self.input_shape))

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    @property
    def example_shape(self) -> tuple[int, ...]:
        return (self.layer_dims[0],) if self.kind == "mlp" else self.input_shape

    @property
    def num_params(self) -> int:
        return param_layout(self).size

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown network fields: {sorted(unknown)}")
        return cls(**known)


class LayerEntry(NamedTuple):
    layer_id: int
    kind: str  # "weight" or "bias"
    offset: int
    length: int
    shape: tuple[int, ...]
    op: str  # "dense" or "conv"

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


class LayerLayout(tuple):
    """Ordered, contiguous tuple of :class:`LayerEntry` covering ``[0, D)``."""

    @property
    def size(self) -> int:
        return self[-1].offset + self[-1].length if self else 0

    def unpack(self, params: np.ndarray) -> list[np.ndarray]:
        """Split ``(..., D)`` into per-entry tensors of shape ``(..., *entry.shape)``."""
        lead = params.shape[:-1]
        return [params[..., e.slice].reshape(lead + e.shape) for e in self]

    def entry_index(self) -> np.ndarray:
        """Array of length D mapping each coordinate to its entry index."""
        return np.repeat(np.arange(len(self)), [e.length for e in self])


def _conv_output_hw(spec: NetworkSpec) -> list[tuple[int, int]]:
    h, w, _ = spec.input_shape
    out = []
    for i, k in enumerate(spec.filter_sizes):
        if i > 0:
            h, w = h // 2, w // 2
        h, w = h - k + 1, w - k + 1
        out.append((h, w))
    return out


def param_layout(spec: NetworkSpec) -> LayerLayout:
    entries = []
    offset = 0

    def add(layer_id, kind, shape, op):
        nonlocal offset
        length = int(np.prod(shape))
        entries.append(LayerEntry(layer_id, kind, offset, length, tuple(shape), op))
        offset += length

    layer_id = 0
    if spec.kind == "cnn":
        c_in = spec.input_shape[2]
        for f, k in zip(spec.conv_filters, spec.filter_sizes):
            add(layer_id, "weight", (k, k, c_in, f), "conv")
            add(layer_id, "bias", (f,), "conv")
            layer_id += 1
            c_in = f
        h, w = _conv_output_hw(spec)[-1]
        dims = (h * w * c_in,) + spec.layer_dims
    else:
        dims = spec.layer_dims
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        add(layer_id, "weight", (d_in, d_out), "dense")
        add(layer_id, "bias", (d_out,), "dense")
        layer_id += 1
    return LayerLayout(entries)


def _fans(entry: LayerEntry) -> tuple[int, int]:
    if entry.op == "conv":
        k1, k2, c_in, c_out = entry.shape
        return k1 * k2 * c_in, k1 * k2 * c_out
    return entry.shape


def init_params(spec: NetworkSpec, scheme: str = "lecun_normal", seed: int = 0) -> np.ndarray:
    """Draw a flat parameter vector; biases are zero, weights follow ``scheme``."""
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    rng = stream(seed, "init")
    layout = param_layout(spec)
    params = np.zeros(layout.size)
    for e in layout:
        if e.kind != "weight":
            continue
        fan_in, fan_out = _fans(e)
        if scheme == "lecun_normal":
            vals = rng.normal(0.0, np.sqrt(1.0 / fan_in), e.length)
        elif scheme == "he_normal":
            vals = rng.normal(0.0, np.sqrt(2.0 / fan_in), e.length)
        elif scheme == "glorot_uniform":
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            vals = rng.uniform(-lim, lim, e.length)
        else:
            vals = rng.uniform(-UNIFORM_SMALL_LIMIT, UNIFORM_SMALL_LIMIT, e.length)
        params[e.slice] = vals
    return params


def _activate(z, name):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _conv_valid(h, w, b):
    """h: (n, B, H, W, C); w: (n, k, k, C, F); b: (n, F) -> (n, B, H', W', F)."""
    n, batch = h.shape[:2]
    k = w.shape[1]
    win = sliding_window_view(h, (k, k), axis=(2, 3))  # (n, B, H', W', C, k, k)
    hh, ww = win.shape[2:4]
    cols = win.transpose(0, 1, 2, 3, 5, 6, 4).reshape(n, batch * hh * ww, -1)
    out = np.matmul(cols, w.reshape(n, -1, w.shape[-1]))
    return out.reshape(n, batch, hh, ww, -1) + b[:, None, None, None, :]


def _avg_pool2(h):
    n, batch, hh, ww, c = h.shape
    h = h[:, :, : hh // 2 * 2, : ww // 2 * 2]
    return h.reshape(n, batch, hh // 2, 2, ww // 2, 2, c).mean(axis=(3, 5))


def forward(spec: NetworkSpec, params: np.ndarray, mask: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Evaluate the network with weights ``params * mask``.

    ``params`` is ``(D,)`` or ``(n, D)``. ``x`` is a single example,
    a batch ``(B, *example_shape)``, or per-candidate batches
    ``(n, B, *example_shape)``. The output drops the axes that were not
    present in the inputs.
    """
    layout = param_layout(spec)
    params = np.asarray(params, dtype=np.float64)
    if params.shape[-1] != layout.size or params.ndim not in (1, 2):
        raise DimensionError(f"expected params of length {layout.size}, got shape {params.shape}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (layout.size,):
            raise DimensionError(f"mask must have shape ({layout.size},), got {mask.shape}")
        params = params * mask
    single_params = params.ndim == 1
    if single_params:
        params = params[None]
    n = params.shape[0]

    x = np.asarray(x, dtype=np.float64)
    ex_ndim = len(spec.example_shape)
    if x.shape[x.ndim - ex_ndim:] != spec.example_shape:
        raise DimensionError(f"input trailing shape {x.shape} does not match {spec.example_shape}")
    single_example = x.ndim == ex_ndim
    if single_example:
        x = x[None]
    per_candidate = x.ndim == ex_ndim + 2
    if per_candidate and (single_params or x.shape[0] != n):
        raise DimensionError("per-candidate inputs need a matching population of params")
    if x.ndim > ex_ndim + 2:
        raise DimensionError(f"too many input dims: {x.shape}")

    tensors = layout.unpack(params)
    h = x
    i = 0
    if spec.kind == "cnn":
        if not per_candidate:
            h = np.broadcast_to(h, (n,) + h.shape)
        n_conv = len(spec.conv_filters)
        for j in range(n_conv):
            if j > 0:
                h = _avg_pool2(h)
            h = _activate(_conv_valid(h, tensors[i], tensors[i + 1]), spec.activation)
            i += 2
        h = h.reshape(n, h.shape[1], -1)
    n_dense = (len(tensors) - i) // 2
    for j in range(n_dense):
        w, b = tensors[i], tensors[i + 1]
        h = np.matmul(h, w) + b[:, None, :]
        i += 2
        if j < n_dense - 1:
            h = _activate(h, spec.activation)
    if spec.output_transform == "tanh":
        h = np.tanh(h)

    if single_params and not per_candidate:
        h = h[0]
        if single_example:
            h = h[0]
    elif single_example:
        h = h[:, 0]
    return h


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean cross-entropy over the batch axis (second to last)."""
    logp = log_softmax(logits)
    idx = np.asarray(labels).reshape((1,) * (logp.ndim - 2) + (-1, 1))
    return -np.take_along_axis(logp, idx, axis=-1)[..., 0].mean(axis=-1)
