"""
Tensor NN Module

Minimal 1-D convolutional network kernels with hand-chained backpropagation
and the Adam optimizer.

Layout conventions:
- activations are batch-first numpy arrays, [B, L, C] for sequences and
  [B, F] after Flatten
- Conv1d weights are w[out_channel, in_channel, k], stride 1, zero "same"
  padding (odd kernels only)
- Flatten is position-major: feature index = x * C + c
- Dense weights are W[out, in]

Every functional kernel also accepts a single unbatched sample ([L, C] or
[F]) and returns an unbatched result.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from molcom_demod.errors import DataError, DomainError, NumericError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
WEIGHTS_FILE = "weights.bin"
WEIGHTS_FORMAT = "molcom-demod-weights"
WEIGHTS_VERSION = 1


def _as_batch(x, rank: int, name: str) -> tuple[np.ndarray, bool]:
    """Add a leading batch axis to an unbatched input; returns (batch, was_unbatched)."""
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return x[np.newaxis], True
    if x.ndim != rank:
        raise DataError(f"{name}: expected {rank - 1}-D or {rank}-D input, got shape {x.shape}")
    return x, False


def _unbatch(x: np.ndarray, was_unbatched: bool) -> np.ndarray:
    return x[0] if was_unbatched else x


# ---------------------------------------------------------------------------
# Functional kernels
# ---------------------------------------------------------------------------


def conv1d_forward(x, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    Stride-1 convolution with zero padding that keeps the length.

    out[x, co] = bias[co] + sum_{ci,k} w[co, ci, k] * in[x + k - (K-1)/2, ci]

    Args:
        x: Input [L, Cin] or [B, L, Cin]
        weights: Kernel [Cout, Cin, K], K odd
        bias: [Cout]

    Raises:
        DataError: Even kernel or inconsistent shapes
    """
    xb, single = _as_batch(x, 3, "conv1d")
    c_out, c_in, k = weights.shape
    if k % 2 == 0:
        raise DataError(f"conv1d: kernel_size must be odd, got {k}")
    if xb.shape[2] != c_in or bias.shape != (c_out,):
        raise DataError(
            f"conv1d: input channels {xb.shape[2]} / bias {bias.shape} "
            f"do not match weights {weights.shape}"
        )
    pad = (k - 1) // 2
    padded = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
    windows = sliding_window_view(padded, k, axis=1)  # [B, L, Cin, K]
    out = np.tensordot(windows, weights, axes=([2, 3], [1, 2])) + bias
    return _unbatch(out, single)


def conv1d_backward(
    grad, x, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (input, weights, bias) of conv1d_forward."""
    gb, single = _as_batch(grad, 3, "conv1d_backward")
    xb, _ = _as_batch(x, 3, "conv1d_backward")
    k = weights.shape[2]
    pad = (k - 1) // 2

    padded_x = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
    windows_x = sliding_window_view(padded_x, k, axis=1)
    grad_w = np.tensordot(gb, windows_x, axes=([0, 1], [0, 1]))
    grad_b = gb.sum(axis=(0, 1))

    # Full correlation of the upstream gradient with the flipped kernel
    padded_g = np.pad(gb, ((0, 0), (pad, pad), (0, 0)))
    windows_g = sliding_window_view(padded_g, k, axis=1)  # [B, L, Cout, K]
    grad_x = np.tensordot(windows_g, weights[:, :, ::-1], axes=([2, 3], [0, 2]))
    return _unbatch(grad_x, single), grad_w, grad_b


def maxpool1d_forward(x) -> tuple[np.ndarray, np.ndarray]:
    """
    Max pooling with kernel 2 and stride 2.

    Returns:
        Tuple of (pooled [L/2, C], argmax positions into the input's length
        axis). Ties route to the earlier position.

    Raises:
        DataError: Odd input length
    """
    xb, single = _as_batch(x, 3, "maxpool1d")
    b, length, c = xb.shape
    if length % 2:
        raise DataError(f"maxpool1d: input length must be even, got {length}")
    pairs = xb.reshape(b, length // 2, 2, c)
    which = np.argmax(pairs, axis=2)
    out = np.take_along_axis(pairs, which[:, :, np.newaxis, :], axis=2)[:, :, 0, :]
    argmax = 2 * np.arange(length // 2)[np.newaxis, :, np.newaxis] + which
    return _unbatch(out, single), _unbatch(argmax, single)


def maxpool1d_backward(grad, argmax: np.ndarray, input_len: int) -> np.ndarray:
    """Route each upstream gradient to the recorded argmax position."""
    gb, single = _as_batch(grad, 3, "maxpool1d_backward")
    ab, _ = _as_batch(argmax, 3, "maxpool1d_backward")
    if ab.shape != gb.shape:
        raise DataError(f"maxpool1d_backward: argmax {ab.shape} does not match grad {gb.shape}")
    grad_x = np.zeros((gb.shape[0], input_len, gb.shape[2]), dtype=gb.dtype)
    np.put_along_axis(grad_x, ab, gb, axis=1)
    return _unbatch(grad_x, single)


def dense_forward(x, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out = W @ in + b for W of shape [out, in]."""
    xb, single = _as_batch(x, 2, "dense")
    if xb.shape[1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise DataError(
            f"dense: input features {xb.shape[1]} / bias {bias.shape} "
            f"do not match weights {weights.shape}"
        )
    return _unbatch(xb @ weights.T + bias, single)


def dense_backward(grad, x, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (input, weights, bias) of dense_forward."""
    gb, single = _as_batch(grad, 2, "dense_backward")
    xb, _ = _as_batch(x, 2, "dense_backward")
    return _unbatch(gb @ weights, single), gb.T @ xb, gb.sum(axis=0)


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x), 0)


def relu_backward(grad, x) -> np.ndarray:
    """Subgradient 0 at x = 0."""
    return np.asarray(grad) * (np.asarray(x) > 0)


def flatten_forward(x) -> np.ndarray:
    """Position-major linearization of [B, L, C] to [B, L*C]."""
    xb, single = _as_batch(x, 3, "flatten")
    return _unbatch(xb.reshape(xb.shape[0], -1), single)


def dropout_forward(
    x, p: float, training: bool, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """
    Inverted dropout.

    In training each element is zeroed with probability p and survivors are
    scaled by 1/(1-p); in inference the input passes through unchanged.

    Returns:
        Tuple of (output, scaled keep-mask or None when no mask was drawn)
    """
    if not 0 <= p < 1:
        raise DomainError(f"dropout p must be in [0, 1), got {p}")
    x = np.asarray(x)
    if not training or p == 0:
        return x, None
    if rng is None:
        raise DataError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


def dropout_backward(grad, mask: np.ndarray | None) -> np.ndarray:
    return np.asarray(grad) if mask is None else np.asarray(grad) * mask


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """
    Cross-entropy of softmax(logits) against integer labels.

    For a single logit vector and label the result is (-log p[label],
    p - onehot). For a batch [B, C] the loss is the batch mean and the
    gradient is (p - onehot) / B.

    Raises:
        DataError: Label outside [0, C)
    """
    zb, single = _as_batch(logits, 2, "softmax_cross_entropy")
    lb = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = zb.shape
    if lb.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {lb.shape}")
    if lb.size and (lb.min() < 0 or lb.max() >= c):
        raise DataError(f"labels must lie in [0, {c})")

    shifted = zb - zb.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    losses = log_norm - shifted[rows, lb]
    probs = np.exp(shifted - log_norm[:, np.newaxis])
    grad = probs
    grad[rows, lb] -= 1
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / n


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    """Base class: forward caches what backward needs."""

    kind = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache: Any = None

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape for a per-sample input shape."""
        return input_shape

    def config(self) -> dict[str, Any]:
        return {}

    def initialize(self, rng: np.random.Generator, gain: float = 1.0, dtype=np.float32) -> None:
        pass

    def _require_cache(self) -> Any:
        if self._cache is None:
            raise DataError(f"{self.kind}: backward called without a cached forward pass")
        return self._cache

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{self.kind}({args})"


def _kaiming_uniform(rng, shape, fan_in: int, gain: float, dtype) -> np.ndarray:
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Layer):
    kind = "Conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise DomainError(f"channels must be >= 1, got ({in_channels}, {out_channels})")
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise DomainError(f"kernel_size must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.params = {
            "weight": np.zeros((out_channels, in_channels, kernel_size), dtype=np.float32),
            "bias": np.zeros(out_channels, dtype=np.float32),
        }

    def config(self) -> dict[str, Any]:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
        }

    def initialize(self, rng, gain=1.0, dtype=np.float32):
        fan_in = self.in_channels * self.kernel_size
        self.params["weight"] = _kaiming_uniform(
            rng, self.params["weight"].shape, fan_in, gain, dtype
        )
        self.params["bias"] = np.zeros(self.out_channels, dtype=dtype)

    def output_shape(self, input_shape):
        if len(input_shape) != 2 or input_shape[1] != self.in_channels:
            raise DataError(f"Conv1d expects [L, {self.in_channels}], got {list(input_shape)}")
        return (input_shape[0], self.out_channels)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return conv1d_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        x = self._require_cache()
        grad_x, self.grads["weight"], self.grads["bias"] = conv1d_backward(
            grad, x, self.params["weight"]
        )
        return grad_x


class MaxPool1d(Layer):
    kind = "MaxPool1d"

    def __init__(self, kernel_size: int = 2, stride: int = 2):
        super().__init__()
        if kernel_size != 2 or stride != 2:
            raise DomainError(f"only kernel_size=2, stride=2 pooling is supported, got ({kernel_size}, {stride})")
        self.kernel_size = kernel_size
        self.stride = stride

    def config(self):
        return {"kernel_size": self.kernel_size, "stride": self.stride}

    def output_shape(self, input_shape):
        if len(input_shape) != 2 or input_shape[0] % 2:
            raise DataError(f"MaxPool1d expects [L even, C], got {list(input_shape)}")
        return (input_shape[0] // 2, input_shape[1])

    def forward(self, x, training=False, rng=None):
        out, argmax = maxpool1d_forward(x)
        self._cache = (argmax, x.shape[-2])
        return out

    def backward(self, grad):
        argmax, length = self._require_cache()
        return maxpool1d_backward(grad, argmax, length)


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return relu_forward(x)

    def backward(self, grad):
        return relu_backward(grad, self._require_cache())


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, p: float = 0.5):
        super().__init__()
        if not 0 <= p < 1:
            raise DomainError(f"dropout p must be in [0, 1), got {p}")
        self.p = p

    def config(self):
        return {"p": self.p}

    def forward(self, x, training=False, rng=None):
        out, mask = dropout_forward(x, self.p, training, rng)
        self._cache = (mask,)
        return out

    def backward(self, grad):
        (mask,) = self._require_cache()
        return dropout_backward(grad, mask)


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return flatten_forward(x)

    def backward(self, grad):
        return np.reshape(grad, self._require_cache())


class Dense(Layer):
    kind = "Dense"

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise DomainError(f"features must be >= 1, got ({in_features}, {out_features})")
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((out_features, in_features), dtype=np.float32),
            "bias": np.zeros(out_features, dtype=np.float32),
        }

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def initialize(self, rng, gain=1.0, dtype=np.float32):
        self.params["weight"] = _kaiming_uniform(
            rng, self.params["weight"].shape, self.in_features, gain, dtype
        )
        self.params["bias"] = np.zeros(self.out_features, dtype=dtype)

    def output_shape(self, input_shape):
        if input_shape != (self.in_features,):
            raise DataError(f"Dense expects [{self.in_features}], got {list(input_shape)}")
        return (self.out_features,)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        x = self._require_cache()
        grad_x, self.grads["weight"], self.grads["bias"] = dense_backward(
            grad, x, self.params["weight"]
        )
        return grad_x


LAYER_TYPES: dict[str, type[Layer]] = {
    cls.kind: cls for cls in (Conv1d, MaxPool1d, ReLU, Dropout, Flatten, Dense)
}


def layer_from_spec(spec: dict[str, Any]) -> Layer:
    """Build a layer from {'type': ..., **config}."""
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in LAYER_TYPES:
        raise DataError(f"unknown layer type {kind!r}")
    try:
        return LAYER_TYPES[kind](**spec)
    except TypeError as e:
        raise DataError(f"invalid {kind} spec: {e}") from e


class Sequential:
    """Fixed pipeline of layers; backward runs the layers in reverse."""

    def __init__(self, layers: list[Layer], dtype=np.float32):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def specs(self) -> list[dict[str, Any]]:
        return [{"type": layer.kind, **layer.config()} for layer in self.layers]

    def parameters(self) -> dict[str, np.ndarray]:
        """Parameters keyed '<layer index>.<name>' in layer order."""
        return {
            f"{i}.{name}": value
            for i, layer in enumerate(self.layers)
            for name, value in layer.params.items()
        }

    def gradients(self) -> dict[str, np.ndarray]:
        grads = {}
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                if name not in layer.grads:
                    raise DataError(f"layer {i} ({layer.kind}) has no gradient for {name}")
                grads[f"{i}.{name}"] = layer.grads[name]
        return grads

    def astype(self, dtype) -> "Sequential":
        """Cast every parameter in place (float64 for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for name, value in layer.params.items():
                layer.params[name] = value.astype(self.dtype)
        return self

    def shapes(self, input_shape: tuple[int, ...]) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """(input, output) per-sample shapes of every layer."""
        rows = []
        shape = tuple(input_shape)
        for layer in self.layers:
            out = layer.output_shape(shape)
            rows.append((shape, out))
            shape = out
        return rows

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.forward(out, training=training, rng=rng)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def state_copy(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                key = f"{i}.{name}"
                if key not in state or state[key].shape != layer.params[name].shape:
                    raise DataError(f"state is missing {key} or has the wrong shape")
                layer.params[name] = state[key].astype(self.dtype, copy=True)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerConfig:
    """Adam hyperparameters plus per-parameter moment state."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError(f"betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if self.t < 0:
            raise DomainError(f"step counter must be >= 0, got {self.t}")


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerConfig
) -> dict[str, np.ndarray]:
    """
    One Adam update, applied in place.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

    Raises:
        NumericError: Non-finite gradient
        DataError: Gradient missing or shaped unlike its parameter
    """
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise DataError(f"gradient {name} does not match any parameter shape")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name} at step {state.t + 1}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, theta in params.items():
        if name not in grads:
            continue
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        step = m / correction1 / (np.sqrt(v / correction2) + state.epsilon)
        theta -= (state.learning_rate * step).astype(theta.dtype)
    return params


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_weights(net: Sequential, out_dir: Path) -> Path:
    """
    Write manifest.json and weights.bin (little-endian f32, manifest order).

    Returns:
        The output directory
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    layers = []
    blobs = []
    offset = 0
    for spec, layer in zip(net.specs(), net.layers, strict=True):
        tensors = []
        for name, value in layer.params.items():
            data = np.ascontiguousarray(value, dtype="<f4").ravel()
            tensors.append({"name": name, "shape": list(value.shape), "offset": offset, "length": data.size})
            offset += data.size
            blobs.append(data)
        layers.append({**spec, "tensors": tensors})

    manifest = {
        "format": WEIGHTS_FORMAT,
        "version": WEIGHTS_VERSION,
        "dtype": "f32",
        "byte_order": "little",
        "layers": layers,
        "total_length": offset,
    }
    with open(out_dir / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    blob = np.concatenate(blobs) if blobs else np.zeros(0, dtype="<f4")
    blob.astype("<f4").tofile(out_dir / WEIGHTS_FILE)
    logger.debug(f"Saved {offset} weights in {len(layers)} layers to {out_dir}")
    return out_dir


def load_weights(in_dir: Path) -> Sequential:
    """
    Rebuild a float32 network from manifest.json and weights.bin.

    Raises:
        DataError: Missing files, unknown layers or blob length mismatch
    """
    in_dir = Path(in_dir)
    try:
        with open(in_dir / MANIFEST_FILE, encoding="utf-8") as f:
            manifest = json.load(f)
        blob = np.fromfile(in_dir / WEIGHTS_FILE, dtype="<f4")
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read weights in {in_dir}: {e}") from e

    if manifest.get("format") != WEIGHTS_FORMAT or manifest.get("dtype") != "f32":
        raise DataError(f"{in_dir / MANIFEST_FILE}: not a f32 weight manifest")
    if blob.size != manifest.get("total_length"):
        raise DataError(
            f"{WEIGHTS_FILE} holds {blob.size} floats, manifest says {manifest.get('total_length')}"
        )

    layers = []
    for entry in manifest["layers"]:
        entry = dict(entry)
        tensors = entry.pop("tensors", [])
        layer = layer_from_spec(entry)
        for tensor in tensors:
            name, shape = tensor["name"], tuple(tensor["shape"])
            if name not in layer.params or layer.params[name].shape != shape:
                raise DataError(f"{layer.kind}: unexpected tensor {name} {list(shape)}")
            start = tensor["offset"]
            layer.params[name] = blob[start : start + tensor["length"]].reshape(shape).astype(np.float32)
        layers.append(layer)
    logger.debug(f"Loaded {blob.size} weights in {len(layers)} layers from {in_dir}")
    return Sequential(layers, dtype=np.float32)
