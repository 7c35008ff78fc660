"""Network description, weight quantization and single-step IF neuron dynamics."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .kernels import round_bf16

GRADED = "graded"
BINARY = "binary"
STATEFUL = "stateful"
DEPTH_FIRST = "depth_first"

_QBITS = {"bf16": 16, "int8": 8, "int4": 4}


class NumericFault(ArithmeticError):
    """A neuron state overflowed bf16 range."""


class ConfigError(ValueError):
    pass


def bf16(x) -> np.ndarray:
    return round_bf16(np.asarray(x, dtype=np.float64))


def bf16_scalar(x: float) -> float:
    return float(round_bf16(np.array([x], dtype=np.float64))[0])


@dataclass(frozen=True)
class QuantScheme:
    kind: str = "bf16"

    def __post_init__(self):
        if self.kind not in _QBITS:
            raise ConfigError(f"unknown weight scheme {self.kind!r}")

    @property
    def bits(self) -> int:
        return _QBITS[self.kind]

    @property
    def is_integer(self) -> bool:
        return self.kind != "bf16"

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1


def quantize_weights(weights: np.ndarray, scheme: QuantScheme) -> tuple[np.ndarray, float]:
    """Returns (codes, scale). bf16 codes are the rounded values with scale 1."""
    w = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NumericFault("weights must be finite")
    if not scheme.is_integer:
        return bf16(w), 1.0
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    scale = peak / scheme.qmax if peak > 0 else 1.0
    codes = np.clip(np.rint(w / scale), -scheme.qmax - 1, scheme.qmax).astype(np.int8)
    return codes, scale


def dequantize(codes: np.ndarray, scale: float, scheme: QuantScheme) -> np.ndarray:
    if not scheme.is_integer:
        return np.asarray(codes, dtype=np.float64)
    return np.asarray(codes, dtype=np.float64) * scale


def deploy_weights(weights: np.ndarray, scheme: QuantScheme) -> np.ndarray:
    """Weights as the NPE sees them: dequantized, then held in bf16."""
    codes, scale = quantize_weights(weights, scheme)
    return bf16(dequantize(codes, scale, scheme))


def neuron_update(state: float, weight: float, spike_value: float | None) -> float:
    """state + w (binary) or state + w*v (graded), each op rounded to bf16."""
    if spike_value is None:
        term = weight
    else:
        term = bf16_scalar(weight * spike_value)
    out = bf16_scalar(state + term)
    if not np.isfinite(out):
        raise NumericFault(f"neuron state overflow: {state} + {term}")
    return out


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    n_in: int = 0
    n_out: int = 0
    h: int = 0
    w: int = 0
    c_in: int = 0
    c_out: int = 0
    k: int = 1
    stride: int = 1
    spike_mode: str = GRADED
    threshold: float = 0.0
    weight_scheme: QuantScheme = field(default_factory=QuantScheme)
    execution_style: str = STATEFUL

    def __post_init__(self):
        if self.kind not in ("dense", "conv"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.spike_mode not in (GRADED, BINARY):
            raise ConfigError(f"unknown spike mode {self.spike_mode!r}")
        if self.spike_mode == BINARY and not self.threshold > 0:
            raise ConfigError("binary layers need a positive threshold")
        if self.kind == "dense":
            if self.n_in < 1 or self.n_out < 1:
                raise ConfigError(f"dense layer needs positive sizes, got {self.n_in}x{self.n_out}")
            if self.execution_style != STATEFUL:
                raise ConfigError("depth-first execution applies to conv layers only")
        else:
            if min(self.h, self.w, self.c_in, self.c_out, self.k) < 1:
                raise ConfigError("conv layer needs positive h, w, c_in, c_out, k")
            if self.stride not in (1, 2):
                raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
            if self.k > self.h or self.k > self.w:
                raise ConfigError("kernel larger than input (valid padding only)")
            if self.execution_style not in (STATEFUL, DEPTH_FIRST):
                raise ConfigError(f"unknown execution style {self.execution_style!r}")

    @classmethod
    def dense(cls, n_in: int, n_out: int, **kw) -> "LayerSpec":
        return cls("dense", n_in=n_in, n_out=n_out, **kw)

    @classmethod
    def conv(cls, h: int, w: int, c_in: int, c_out: int, k: int = 3, stride: int = 1, **kw) -> "LayerSpec":
        return cls("conv", h=h, w=w, c_in=c_in, c_out=c_out, k=k, stride=stride, **kw)

    @property
    def graded(self) -> bool:
        return self.spike_mode == GRADED

    @property
    def h_out(self) -> int:
        return (self.h - self.k) // self.stride + 1

    @property
    def w_out(self) -> int:
        return (self.w - self.k) // self.stride + 1

    @property
    def input_size(self) -> int:
        return self.n_in if self.kind == "dense" else self.h * self.w * self.c_in

    @property
    def output_size(self) -> int:
        return self.n_out if self.kind == "dense" else self.h_out * self.w_out * self.c_out

    @property
    def input_shape(self) -> tuple[int, ...]:
        return (self.n_in,) if self.kind == "dense" else (self.h, self.w, self.c_in)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return (self.n_out,) if self.kind == "dense" else (self.h_out, self.w_out, self.c_out)

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.n_in, self.n_out)
        return (self.k, self.k, self.c_in, self.c_out)

    @property
    def weight_count(self) -> int:
        return int(np.prod(self.weight_shape))


def threshold_fire(state: float, spec: LayerSpec) -> tuple[float, float | None]:
    """Returns (state after the phase, emitted magnitude or None).

    Binary: fire iff state >= threshold, reset to 0; below threshold the state
    is kept (it is cleared by the end-of-inference reset). Graded: emit the
    rectified state if it is positive, reset to 0.
    """
    if spec.spike_mode == BINARY:
        if state >= spec.threshold:
            return 0.0, 1.0
        return state, None
    if state > 0:
        return 0.0, state
    return 0.0, None


def fire_mask(states: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Vector form of threshold_fire: which neurons emit."""
    if spec.spike_mode == BINARY:
        return states >= spec.threshold
    return states > 0


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Feed-forward chain. Layer ids: 0 is the input, layers are 1..L."""

    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    weights: tuple[np.ndarray, ...] = ()
    input_mode: str = GRADED

    def __post_init__(self):
        if self.input_mode not in (GRADED, BINARY):
            raise ConfigError(f"unknown input spike mode {self.input_mode!r}")
        prev = tuple(self.input_shape)
        for i, layer in enumerate(self.layers, 1):
            if layer.input_shape != prev and layer.input_size != int(np.prod(prev)):
                raise ConfigError(
                    f"layer {i} expects input {layer.input_shape}, previous layer gives {prev}"
                )
            if layer.kind == "conv" and layer.input_shape != prev:
                raise ConfigError(f"conv layer {i} expects {layer.input_shape}, got {prev}")
            prev = layer.output_shape
        if self.weights:
            if len(self.weights) != len(self.layers):
                raise ConfigError("one weight tensor per layer required")
            for i, (layer, w) in enumerate(zip(self.layers, self.weights), 1):
                if tuple(w.shape) != layer.weight_shape:
                    raise ConfigError(f"layer {i} weights have shape {w.shape}, need {layer.weight_shape}")

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def layer_size(self, layer_id: int) -> int:
        return self.input_size if layer_id == 0 else self.layers[layer_id - 1].output_size

    def layer_graded(self, layer_id: int) -> bool:
        return self.input_mode == GRADED if layer_id == 0 else self.layers[layer_id - 1].graded

    def layer_shape(self, layer_id: int) -> tuple[int, ...]:
        return tuple(self.input_shape) if layer_id == 0 else self.layers[layer_id - 1].output_shape

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @cached_property
    def deployed(self) -> tuple[np.ndarray, ...]:
        """Per-layer bf16 weight operands (float32), dense [n_in, n_out], conv [k,k,ci,co]."""
        return tuple(
            np.ascontiguousarray(deploy_weights(w, layer.weight_scheme))
            for layer, w in zip(self.layers, self.weights)
        )

    def with_overrides(
        self,
        spike_mode: str | None = None,
        weight_scheme: str | None = None,
        conv_style: str | None = None,
        threshold: float | None = None,
    ) -> "NetworkSpec":
        layers = []
        for layer in self.layers:
            kw: dict[str, Any] = {}
            if spike_mode is not None:
                kw["spike_mode"] = spike_mode
                if spike_mode == BINARY and not layer.threshold > 0:
                    kw["threshold"] = threshold if threshold is not None else DEFAULT_BINARY_THRESHOLD
            if weight_scheme is not None:
                kw["weight_scheme"] = QuantScheme(weight_scheme)
            if conv_style is not None and layer.kind == "conv":
                kw["execution_style"] = conv_style
            layers.append(replace(layer, **kw))
        return NetworkSpec(
            self.name,
            self.input_shape,
            tuple(layers),
            self.weights,
            spike_mode if spike_mode is not None else self.input_mode,
        )


DEFAULT_BINARY_THRESHOLD = 2.0**-6


# ---- construction -------------------------------------------------------------


def random_weights(shape: Sequence[int], fan_in: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return rng.standard_normal(tuple(shape)) * (scale / np.sqrt(fan_in))


def dense_network(
    sizes: Sequence[int],
    seed: int = 0,
    spike_mode: str = GRADED,
    weight_scheme: str = "bf16",
    threshold: float = DEFAULT_BINARY_THRESHOLD,
    name: str = "dense",
    weight_scale: float = 1.0,
) -> NetworkSpec:
    """Chain of dense layers; ``sizes`` includes the input size first."""
    rng = np.random.default_rng(seed)
    layers, weights = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        layers.append(
            LayerSpec.dense(
                n_in,
                n_out,
                spike_mode=spike_mode,
                threshold=threshold if spike_mode == BINARY else 0.0,
                weight_scheme=QuantScheme(weight_scheme),
            )
        )
        weights.append(random_weights((n_in, n_out), n_in, rng, weight_scale))
    return NetworkSpec(name, (int(sizes[0]),), tuple(layers), tuple(weights), spike_mode)


def conv_network(
    input_shape: tuple[int, int, int],
    channels: Sequence[int],
    k: int = 3,
    stride: int = 1,
    seed: int = 0,
    spike_mode: str = GRADED,
    weight_scheme: str = "bf16",
    threshold: float = 0.5,
    execution_style: str = DEPTH_FIRST,
    name: str = "cnn",
) -> NetworkSpec:
    rng = np.random.default_rng(seed)
    h, w, c = input_shape
    layers, weights = [], []
    for c_out in channels:
        layer = LayerSpec.conv(
            h, w, c, c_out, k, stride,
            spike_mode=spike_mode,
            threshold=threshold if spike_mode == BINARY else 0.0,
            weight_scheme=QuantScheme(weight_scheme),
            execution_style=execution_style,
        )
        layers.append(layer)
        weights.append(random_weights(layer.weight_shape, k * k * c, rng))
        h, w, c = layer.output_shape
    return NetworkSpec(name, tuple(input_shape), tuple(layers), tuple(weights), spike_mode)


def default_benchmark_network(seed: int = 0) -> NetworkSpec:
    """256-input chain of four dense layers 256-256-256-10, graded spikes."""
    return dense_network([256, 256, 256, 256, 10], seed=seed, name="default-benchmark")


# ---- config file --------------------------------------------------------------


def network_from_dict(doc: dict, base_dir: Path | None = None) -> NetworkSpec:
    try:
        name = str(doc.get("name", "network"))
        inp = doc["input"]
        input_shape = tuple(int(d) for d in (inp["shape"] if "shape" in inp else [inp["size"]]))
        input_mode = inp.get("spike_mode", GRADED)
        seed = int(doc.get("seed", 0))
        defaults = doc.get("defaults", {})
        rng = np.random.default_rng(seed)
        layers, weights = [], []
        shape = input_shape
        for i, raw in enumerate(doc["layers"], 1):
            entry = {**defaults, **raw}
            kind = entry["kind"]
            common = dict(
                spike_mode=entry.get("spike_mode", GRADED),
                threshold=float(entry.get("threshold", 0.0)),
                weight_scheme=QuantScheme(entry.get("weights", "bf16")),
            )
            if kind == "dense":
                layer = LayerSpec.dense(int(np.prod(shape)), int(entry["n_out"]), **common)
            elif kind == "conv":
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: conv needs an (h, w, c) input")
                layer = LayerSpec.conv(
                    shape[0], shape[1], shape[2], int(entry["c_out"]), int(entry.get("k", 3)),
                    int(entry.get("stride", 1)),
                    execution_style=entry.get("execution_style", STATEFUL).replace("-", "_"),
                    **common,
                )
            else:
                raise ConfigError(f"layer {i}: unknown kind {kind!r}")
            if "weights_file" in entry:
                path = Path(entry["weights_file"])
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                w = load_tensor(path).astype(np.float64)
            else:
                fan_in = layer.n_in if kind == "dense" else layer.k * layer.k * layer.c_in
                w = random_weights(layer.weight_shape, fan_in, rng, float(entry.get("weight_scale", 1.0)))
            layers.append(layer)
            weights.append(w)
            shape = layer.output_shape
        return NetworkSpec(name, input_shape, tuple(layers), tuple(weights), input_mode)
    except KeyError as exc:
        raise ConfigError(f"network description is missing key {exc}") from None


def load_network(path: str | Path) -> NetworkSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read network {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return network_from_dict(doc.get("network", doc), path.parent)


# ---- binary tensor files ------------------------------------------------------
# 16-byte header: magic "NMT1", dtype code (u8), rank (u8), 5 x u16 dims.
# Payload is little-endian, C order.

TENSOR_MAGIC = b"NMT1"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<u2"), 3: np.dtype("i1"), 4: np.dtype("<f8")}
_CODES = {"float32": 1, "bfloat16": 2, "int8": 3, "float64": 4}
_HEADER = struct.Struct("<4sBB5H")


def save_tensor(path: str | Path, array: np.ndarray, dtype: str | None = None) -> None:
    a = np.asarray(array)
    if dtype is None:
        dtype = {np.dtype(np.float32): "float32", np.dtype(np.int8): "int8"}.get(a.dtype, "float64")
    code = _CODES[dtype]
    if a.ndim > 5 or any(d > 0xFFFF for d in a.shape):
        raise ValueError(f"tensor shape {a.shape} does not fit the header")
    dims = list(a.shape) + [0] * (5 - a.ndim)
    if dtype == "bfloat16":
        payload = (bf16(a).view(np.uint32) >> np.uint32(16)).astype("<u2")
    else:
        payload = a.astype(_DTYPES[code])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, code, a.ndim, *dims))
        fh.write(np.ascontiguousarray(payload).tobytes())


def load_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated tensor header")
    magic, code, rank, *dims = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC or code not in _DTYPES or rank > 5:
        raise ConfigError(f"{path}: not a tensor file")
    shape = tuple(dims[:rank])
    dt = _DTYPES[code]
    n = int(np.prod(shape)) if shape else 1
    body = raw[_HEADER.size:]
    if len(body) != n * dt.itemsize:
        raise ConfigError(f"{path}: payload is {len(body)} bytes, expected {n * dt.itemsize}")
    data = np.frombuffer(body, dtype=dt).reshape(shape)
    if code == 2:
        return (data.astype(np.uint32) << np.uint32(16)).view(np.float32)
    return data.copy()
