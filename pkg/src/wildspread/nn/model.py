"""Sequential network with cached forward pass and exact reverse-mode gradients."""

from __future__ import annotations

import copy
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..sampling.rng import numpy_generator
from . import layers as L

INPUT_SIZE = 31
REFERENCE_TRACE = (31, 25, 12, 7, 5, 3, 1)
REFERENCE_FLATTEN = 256
# (kind, kernel, maps) rows of the reference architecture
REFERENCE_LAYOUT = (
    ("conv", 7, 128),
    ("maxpool", 2, None),
    ("conv", 6, 64),
    ("conv", 3, 128),
    ("conv", 3, 256),
    ("maxpool", 2, None),
    ("flatten", None, None),
    ("dense", None, 1024),
    ("dense", None, 1024),
    ("dense", None, 1),
)


def reference_param_count(channels: int) -> int:
    """Closed-form parameter count of the reference network."""
    conv = [(7, channels, 128), (6, 128, 64), (3, 64, 128), (3, 128, 256)]
    dense = [(256, 1024), (1024, 1024), (1024, 1)]
    return sum(k * k * i * o + o for k, i, o in conv) + sum(i * o + o for i, o in dense)


class StaleCacheError(RuntimeError):
    pass


@dataclass
class LayerParams:
    kind: str  # conv | maxpool | flatten | dense
    activation: str = "identity"
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("conv", "maxpool", "flatten", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "dense"):
            want = 4 if self.kind == "conv" else 2
            if self.weight is None or self.weight.ndim != want:
                raise ValueError(f"{self.kind} layer needs a {want}-d weight")
            if self.bias is None or self.bias.shape != (self.weight.shape[-1],):
                raise ValueError(f"{self.kind} bias must have shape ({self.weight.shape[-1]},)")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "dense")

    def describe(self) -> dict:
        d = {"kind": self.kind, "name": self.name, "activation": self.activation}
        if self.has_params:
            d["weight_shape"] = list(self.weight.shape)
        return d


def _fingerprint(x: np.ndarray) -> tuple:
    return (x.shape, x.dtype.str, zlib.crc32(np.ascontiguousarray(x).view(np.uint8)))


@dataclass
class Model:
    """Ordered layers ending in a single sigmoid unit.

    ``forward`` maps ``(B, n, n, C)`` to probabilities ``(B,)``. Parameters are
    stored in ``dtype``; float64 is used for gradient checks.
    """

    layers: list
    input_shape: tuple
    seed: Optional[int] = None
    dtype: np.dtype = np.float32
    version: int = 0
    _cache: Optional[list] = field(default=None, repr=False)
    _cache_key: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype)
        last = self.layers[-1]
        if last.kind != "dense" or last.weight.shape[1] != 1 or last.activation != "sigmoid":
            raise ValueError("the last layer must be a 1-unit dense layer with sigmoid activation")
        self.shape_trace()

    # --- parameters -------------------------------------------------------

    def parameters(self) -> list:
        """Parameter arrays in fixed order: weight then bias per layer."""
        out = []
        for layer in self.layers:
            if layer.has_params:
                out += [layer.weight, layer.bias]
        return out

    def parameter_names(self) -> list:
        out = []
        for layer in self.layers:
            if layer.has_params:
                out += [f"{layer.name}.weight", f"{layer.name}.bias"]
        return out

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def touch(self):
        """Mark parameters as changed, invalidating any cached forward pass."""
        self.version += 1
        self._cache = None
        self._cache_key = None

    def copy(self) -> "Model":
        m = copy.copy(self)
        m.layers = [
            LayerParams(l.kind, l.activation,
                        None if l.weight is None else l.weight.copy(),
                        None if l.bias is None else l.bias.copy(), l.name)
            for l in self.layers
        ]
        m._cache = None
        m._cache_key = None
        return m

    def astype(self, dtype) -> "Model":
        m = self.copy()
        m.dtype = np.dtype(dtype)
        for l in m.layers:
            if l.has_params:
                l.weight = l.weight.astype(m.dtype)
                l.bias = l.bias.astype(m.dtype)
        return m

    # --- structure --------------------------------------------------------

    def shape_trace(self) -> list:
        """Output shape of every layer for one input sample."""
        shape = tuple(self.input_shape)
        trace = []
        for layer in self.layers:
            if layer.kind == "conv":
                kh, kw, cin, cout = layer.weight.shape
                if len(shape) != 3 or shape[2] != cin:
                    raise L.ShapeError(f"{layer.name}: input {shape} does not fit kernel {layer.weight.shape}")
                if kh > shape[0] or kw > shape[1]:
                    raise L.ShapeError(f"{layer.name}: kernel {kh}x{kw} larger than input {shape}")
                shape = (shape[0] - kh + 1, shape[1] - kw + 1, cout)
            elif layer.kind == "maxpool":
                shape = (shape[0] // 2, shape[1] // 2, shape[2])
                if shape[0] == 0 or shape[1] == 0:
                    raise L.ShapeError(f"{layer.name}: cannot pool")
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            else:
                if len(shape) != 1 or shape[0] != layer.weight.shape[0]:
                    raise L.ShapeError(f"{layer.name}: input {shape} does not fit weight {layer.weight.shape}")
                shape = (layer.weight.shape[1],)
            trace.append(shape)
        return trace

    def architecture(self) -> list:
        """(kind, kernel, maps) rows comparable with :data:`REFERENCE_LAYOUT`."""
        rows = []
        for layer in self.layers:
            if layer.kind == "conv":
                kh, kw, _, cout = layer.weight.shape
                rows.append(("conv", kh if kh == kw else (kh, kw), cout))
            elif layer.kind == "maxpool":
                rows.append(("maxpool", 2, None))
            elif layer.kind == "flatten":
                rows.append(("flatten", None, None))
            else:
                rows.append(("dense", None, layer.weight.shape[1]))
        return rows

    def describe(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "dtype": self.dtype.str,
            "layers": [l.describe() for l in self.layers],
            "n_params": self.n_params,
            "shape_trace": [list(s) for s in self.shape_trace()],
        }

    # --- forward / backward ----------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.input_shape):
            raise L.ShapeError(f"expected batch of {tuple(self.input_shape)} inputs, got {x.shape}")
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, x, per_sample: bool = False, keep_cache: bool = False):
        """Probabilities for a batch ``(B, n, n, C)``.

        ``per_sample`` computes every sample with its own matrix products, so
        each output is bit-identical whatever batch it is evaluated in.
        ``keep_cache`` stores what :meth:`backward` needs.
        """
        x = self._check_input(x)
        cache = [] if keep_cache else None
        h = x
        for layer in self.layers:
            if layer.kind == "conv":
                out, cols = L.conv2d_forward(h, layer.weight, layer.bias, layer.activation, per_sample)
                if keep_cache:
                    cache.append((cols, h.shape, out))
                h = out
            elif layer.kind == "maxpool":
                out, arg = L.maxpool2x2(h)
                if keep_cache:
                    cache.append((arg, h.shape))
                h = out
            elif layer.kind == "flatten":
                if keep_cache:
                    cache.append(h.shape)
                h = h.reshape(h.shape[0], -1)
            else:
                if layer is self.layers[-1]:
                    z = L.dense_forward(h, layer.weight, layer.bias, "identity", per_sample)
                    out = L.sigmoid(z)
                    if keep_cache:
                        cache.append((h, out))
                    h = out
                else:
                    out = L.dense_forward(h, layer.weight, layer.bias, layer.activation, per_sample)
                    if keep_cache:
                        cache.append((h, out))
                    h = out
        if keep_cache:
            self._cache = cache
            self._cache_key = (_fingerprint(x), self.version)
        return h[:, 0]

    def activation_pattern(self) -> list:
        """ReLU on/off masks and pool argmaxes of the cached forward pass."""
        if self._cache is None:
            raise StaleCacheError("no cached forward pass")
        pattern = []
        for layer, c in zip(self.layers, self._cache):
            if layer.kind == "maxpool":
                pattern.append(c[0])
            elif layer.has_params and layer.activation == "relu":
                pattern.append(c[-1] > 0)
        return pattern

    def backward(self, x, y) -> list:
        """Gradients of mean BCE for the cached forward pass on ``x``.

        The output unit's gradient is ``(p - y) / B``, the analytic derivative
        of the unclamped loss through the sigmoid.
        """
        x = self._check_input(x)
        if self._cache is None or self._cache_key != (_fingerprint(x), self.version):
            raise StaleCacheError("backward needs a cached forward pass on the same input and weights")
        y = np.asarray(y, dtype=self.dtype).reshape(-1)
        B = x.shape[0]
        if y.shape[0] != B:
            raise L.ShapeError(f"{y.shape[0]} labels for a batch of {B}")
        per_layer = []
        dh = None
        first_param = next(i for i, l in enumerate(self.layers) if l.has_params)
        for idx in range(len(self.layers) - 1, first_param - 1, -1):
            layer, c = self.layers[idx], self._cache[idx]
            if layer.kind == "dense":
                v, out = c
                if idx == len(self.layers) - 1:
                    dz = ((out[:, 0] - y) / B)[:, None].astype(self.dtype)
                else:
                    dz = dh * (out > 0) if layer.activation == "relu" else dh
                per_layer.append((v.T @ dz, dz.sum(axis=0)))
                dh = dz @ layer.weight.T if idx > first_param else None
            elif layer.kind == "flatten":
                dh = dh.reshape(c)
            elif layer.kind == "maxpool":
                arg, shape = c
                dh = L.maxpool2x2_backward(dh, arg, shape)
            else:
                cols, shape, out = c
                dz = dh * (out > 0) if layer.activation == "relu" else dh
                dk, db, dh = L.conv2d_backward(dz, cols, shape, layer.weight, need_dx=idx > first_param)
                per_layer.append((dk, db))
        return [g for pair in reversed(per_layer) for g in pair]

    def loss_and_grad(self, x, y):
        p = self.forward(x, keep_cache=True)
        grads = self.backward(x, y)
        return L.bce_loss(p, y), grads


# --- builders ---------------------------------------------------------------


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _xavier(rng, shape, fan_in, fan_out):
    return rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out))


def build_model(spec: list, input_shape, seed: int, dtype=np.float32) -> Model:
    """Build a network from ``(kind, kernel, maps)`` rows.

    Hidden conv/dense layers use ReLU and He-normal weights; the final 1-unit
    dense layer uses sigmoid and Xavier-normal weights. Biases start at 0.
    """
    dtype = np.dtype(dtype)
    shape = tuple(input_shape)
    built = []
    counts = {"conv": 0, "maxpool": 0, "flatten": 0, "dense": 0}
    for i, (kind, kernel, maps) in enumerate(spec):
        counts[kind] += 1
        name = f"{kind}{counts[kind]}"
        rng = numpy_generator(seed, "init", i)
        last = i == len(spec) - 1
        if kind == "conv":
            fan_in = kernel * kernel * shape[2]
            w = _he(rng, (kernel, kernel, shape[2], maps), fan_in)
            layer = LayerParams("conv", "relu", w.astype(dtype), np.zeros(maps, dtype), name)
            shape = (shape[0] - kernel + 1, shape[1] - kernel + 1, maps)
        elif kind == "maxpool":
            layer = LayerParams("maxpool", name=name)
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif kind == "flatten":
            layer = LayerParams("flatten", name=name)
            shape = (int(np.prod(shape)),)
        else:
            fan_in = shape[0]
            if last:
                w = _xavier(rng, (fan_in, maps), fan_in, maps)
                act = "sigmoid"
            else:
                w = _he(rng, (fan_in, maps), fan_in)
                act = "relu"
            layer = LayerParams("dense", act, w.astype(dtype), np.zeros(maps, dtype), name)
            shape = (maps,)
        built.append(layer)
    return Model(built, tuple(input_shape), seed, dtype)


def build_reference_model(C: int = 8, seed: int = 0, dtype=np.float32) -> Model:
    """The fixed 31x31xC network; its shape trace and size are asserted."""
    model = build_model(list(REFERENCE_LAYOUT), (INPUT_SIZE, INPUT_SIZE, C), seed, dtype)
    trace = model.shape_trace()
    spatial = [INPUT_SIZE] + [s[0] for s in trace if len(s) == 3]
    # conv, pool, conv, conv, conv, pool -> one entry per distinct size
    if tuple(spatial) != REFERENCE_TRACE:
        raise AssertionError(f"spatial trace {spatial} != {REFERENCE_TRACE}")
    flat = next(s for (k, _, _), s in zip(REFERENCE_LAYOUT, trace) if k == "flatten")
    if flat != (REFERENCE_FLATTEN,):
        raise AssertionError(f"flatten length {flat} != {REFERENCE_FLATTEN}")
    if model.n_params != reference_param_count(C):
        raise AssertionError(f"{model.n_params} parameters, expected {reference_param_count(C)}")
    return model


# --- inference helpers ------------------------------------------------------


def model_forward_batch(model: Model, patches, chunk: int = 64) -> np.ndarray:
    """Probabilities for ``(B, n, n, C)`` patches, each independent of the batch."""
    patches = np.asarray(patches)
    if patches.ndim != 4:
        raise L.ShapeError(f"expected (B, n, n, C) patches, got {patches.shape}")
    out = np.empty(patches.shape[0], dtype=model.dtype)
    for s in range(0, patches.shape[0], chunk):
        out[s:s + chunk] = model.forward(patches[s:s + chunk], per_sample=True)
    return out


def model_forward(model: Model, patch) -> float:
    """Probability for one ``(n, n, C)`` patch."""
    patch = np.asarray(patch)
    if patch.ndim != 3:
        raise L.ShapeError(f"expected an (n, n, C) patch, got {patch.shape}")
    return float(model_forward_batch(model, patch[None])[0])


def predict_fast(model: Model, patches, chunk: int = 128) -> np.ndarray:
    """Probabilities using whole-chunk matrix products (fastest, batch dependent in the last bits)."""
    patches = np.asarray(patches)
    out = np.empty(patches.shape[0], dtype=model.dtype)
    for s in range(0, patches.shape[0], chunk):
        out[s:s + chunk] = model.forward(patches[s:s + chunk])
    return out
