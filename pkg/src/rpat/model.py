"""Small differentiable classifiers with exact analytic gradients.

Two architectures: a fully connected network for 2-D synthetic data and a
small convolutional network (3x3 valid convolutions) for IDX images. Both
run in 64-bit, forward passes cache every intermediate, and the backward
pass accepts upstream gradients injected at any stage output, which is how
losses built on hidden perceptions propagate into the parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, NumericError

CHECKPOINT_MAGIC = b"RPCK"
CHECKPOINT_VERSION = 1

PERCEPTION_PROXIES = ("logits", "penultimate", "antepenultimate")


@dataclass(frozen=True)
class ArchitectureDescriptor:
    """Fully determines layer shapes and the parameter count."""

    kind: str  # "mlp" | "cnn"
    input_shape: tuple[int, ...]
    hidden: tuple[int, ...]  # mlp widths, or cnn channel counts
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        if self.kind not in ("mlp", "cnn"):
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if any(v < 1 for v in self.hidden):
            raise ConfigError("hidden sizes must be positive")
        if self.kind == "cnn" and len(self.input_shape) != 3:
            raise ConfigError("cnn architectures need a (h, w, c) input shape")

    def canonical_text(self) -> str:
        payload = {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "hidden": list(self.hidden),
            "num_classes": self.num_classes,
            "activation": self.activation,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_canonical_text(text: str) -> "ArchitectureDescriptor":
        d = json.loads(text)
        return ArchitectureDescriptor(
            kind=d["kind"],
            input_shape=tuple(d["input_shape"]),
            hidden=tuple(d["hidden"]),
            num_classes=d["num_classes"],
            activation=d.get("activation", "relu"),
        )


@dataclass(frozen=True)
class ModelParams:
    """Flat 64-bit parameter store; layer views are slices of `flat`."""

    flat: np.ndarray
    version: int = 0

    def __post_init__(self):
        if not np.isfinite(self.flat).all():
            raise NumericError("model parameters contain non-finite values")

    def copy(self) -> "ModelParams":
        return ModelParams(self.flat.copy(), self.version)


@dataclass(frozen=True)
class PerceptionProxy:
    """Which hidden representation stands in for the model perception."""

    selector: str = "logits"

    def __post_init__(self):
        if self.selector not in PERCEPTION_PROXIES:
            raise ConfigError(f"unknown perception proxy {self.selector!r}")


class _Cache:
    """Per-layer intermediates from one forward pass."""

    __slots__ = ("x", "inputs", "preacts", "stages", "patches")

    def __init__(self, x):
        self.x = x
        self.inputs = []  # layer input, in layer-native shape
        self.preacts = []  # z before activation
        self.stages = []  # flattened (B, k) stage output after activation
        self.patches = []  # conv im2col views (None for dense layers)


class Model:
    """Layer bookkeeping for one architecture.

    Parameters are stored flat; `weights`/`biases` return reshaped views.
    Stage ``l`` output is the post-activation output of layer ``l`` (the raw
    logits for the final layer), always flattened to (batch, features).
    """

    def __init__(self, desc: ArchitectureDescriptor, conv_kernel: int = 3):
        self.desc = desc
        self.input_dim = int(np.prod(desc.input_shape))
        self.layers = []  # ("dense", d_in, d_out) | ("conv", h, w, c_in, c_out, k)
        if desc.kind == "mlp":
            dims = [self.input_dim, *desc.hidden, desc.num_classes]
            for d_in, d_out in zip(dims[:-1], dims[1:]):
                self.layers.append(("dense", d_in, d_out))
        else:
            h, w, c = desc.input_shape
            for c_out in desc.hidden:
                if h < conv_kernel or w < conv_kernel:
                    raise ConfigError("input too small for the convolution stack")
                self.layers.append(("conv", h, w, c, c_out, conv_kernel))
                h, w, c = h - conv_kernel + 1, w - conv_kernel + 1, c_out
            self.layers.append(("dense", h * w * c, desc.num_classes))
        self._offsets = []
        pos = 0
        for spec in self.layers:
            w_shape, b_shape = self._param_shapes(spec)
            w_size, b_size = int(np.prod(w_shape)), int(np.prod(b_shape))
            self._offsets.append((pos, pos + w_size, pos + w_size + b_size, w_shape))
            pos += w_size + b_size
        self.num_params = pos

    @staticmethod
    def _param_shapes(spec):
        if spec[0] == "dense":
            _, d_in, d_out = spec
            return (d_in, d_out), (d_out,)
        _, _, _, c_in, c_out, k = spec
        return (k, k, c_in, c_out), (c_out,)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def weights(self, params: ModelParams, layer: int) -> np.ndarray:
        a, b, _, w_shape = self._offsets[layer]
        return params.flat[a:b].reshape(w_shape)

    def biases(self, params: ModelParams, layer: int) -> np.ndarray:
        _, b, c, _ = self._offsets[layer]
        return params.flat[b:c]

    def init_params(self, seed: int) -> ModelParams:
        """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        rng = np.random.default_rng(seed)
        flat = np.empty(self.num_params, dtype=np.float64)
        for layer, spec in enumerate(self.layers):
            a, b, c, w_shape = self._offsets[layer]
            fan_in = int(np.prod(w_shape[:-1]))
            bound = 1.0 / np.sqrt(fan_in)
            flat[a:b] = rng.uniform(-bound, bound, size=b - a)
            flat[b:c] = rng.uniform(-bound, bound, size=c - b)
        return ModelParams(flat)

    def zero_params(self) -> ModelParams:
        return ModelParams(np.zeros(self.num_params, dtype=np.float64))

    # -- forward / backward ------------------------------------------------

    def _check_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ContractError(
                f"batch features have dimension {X.shape[-1]}, expected {self.input_dim}"
            )
        return X

    def forward_cache(self, params: ModelParams, X: np.ndarray) -> _Cache:
        X = self._check_batch(X)
        cache = _Cache(X)
        a = X
        n_layers = self.num_layers
        for layer, spec in enumerate(self.layers):
            last = layer == n_layers - 1
            if spec[0] == "dense":
                if a.ndim != 2:
                    a = a.reshape(len(a), -1)
                cache.inputs.append(a)
                cache.patches.append(None)
                z = a @ self.weights(params, layer) + self.biases(params, layer)
            else:
                _, h, w, c_in, c_out, k = spec
                a = a.reshape(len(a), h, w, c_in)
                cache.inputs.append(a)
                win = np.lib.stride_tricks.sliding_window_view(a, (k, k), axis=(1, 2))
                patches = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
                cache.patches.append(patches)
                w_mat = self.weights(params, layer).reshape(k * k * c_in, c_out)
                z = patches.reshape(*patches.shape[:3], -1) @ w_mat + self.biases(params, layer)
            if not np.isfinite(z).all():
                raise NumericError(f"non-finite values in layer {layer} ({spec[0]})")
            cache.preacts.append(z)
            out = z if last else np.maximum(z, 0.0)
            cache.stages.append(out.reshape(len(X), -1))
            a = out
        return cache

    def forward(self, params: ModelParams, X: np.ndarray) -> np.ndarray:
        """Logits, one row of num_classes entries per input."""
        X2 = self._check_batch(X)
        logits = self.forward_cache(params, X2).stages[-1]
        return logits[0] if np.asarray(X).ndim == 1 else logits

    def backward(self, params: ModelParams, cache: _Cache, taps: dict[int, np.ndarray]):
        """Reverse pass with upstream gradients injected at stage outputs.

        `taps` maps a layer index to dL/d(stage output), flattened. Returns
        (flat parameter gradient, per-example input gradient).
        """
        grad = np.zeros(self.num_params, dtype=np.float64)
        batch = len(cache.x)
        g = None  # dL/d(stage output) of the layer being processed
        for layer in range(self.num_layers - 1, -1, -1):
            spec = self.layers[layer]
            tap = taps.get(layer)
            if tap is not None:
                tap = tap.reshape(batch, -1)
                g = tap.copy() if g is None else g + tap
            if g is None:
                continue
            z = cache.preacts[layer]
            gz = g.reshape(z.shape)
            if layer != self.num_layers - 1:
                gz = gz * (z > 0.0)
            a, b, c, w_shape = self._offsets[layer]
            if spec[0] == "dense":
                inp = cache.inputs[layer]
                grad[a:b] = (inp.T @ gz).reshape(-1)
                grad[b:c] = gz.sum(axis=0)
                g = gz @ self.weights(params, layer).T
            else:
                _, h, w, c_in, c_out, k = spec
                patches = cache.patches[layer]
                p_flat = patches.reshape(-1, k * k * c_in)
                gz_flat = gz.reshape(-1, c_out)
                grad[a:b] = (p_flat.T @ gz_flat).reshape(-1)
                grad[b:c] = gz_flat.sum(axis=0)
                w_mat = self.weights(params, layer).reshape(k * k * c_in, c_out)
                dpatches = (gz_flat @ w_mat.T).reshape(batch, h - k + 1, w - k + 1, k, k, c_in)
                da = np.zeros((batch, h, w, c_in), dtype=np.float64)
                for i in range(k):
                    for j in range(k):
                        da[:, i : i + h - k + 1, j : j + w - k + 1, :] += dpatches[:, :, :, i, j, :]
                g = da
        dX = np.zeros_like(cache.x) if g is None else g.reshape(batch, -1)
        return grad, dX

    # -- perception ----------------------------------------------------------

    def perception_layer(self, proxy: PerceptionProxy) -> int:
        depth = {"logits": 1, "penultimate": 2, "antepenultimate": 3}[proxy.selector]
        layer = self.num_layers - depth
        if layer < 0:
            raise ConfigError(
                f"proxy {proxy.selector!r} needs at least {depth} layers, "
                f"architecture has {self.num_layers}"
            )
        return layer

    def perception_from_cache(self, cache: _Cache, proxy: PerceptionProxy) -> np.ndarray:
        return cache.stages[self.perception_layer(proxy)]

    def perception(self, params: ModelParams, X: np.ndarray, proxy: PerceptionProxy) -> np.ndarray:
        X2 = self._check_batch(X)
        out = self.perception_from_cache(self.forward_cache(params, X2), proxy)
        return out[0] if np.asarray(X).ndim == 1 else out


def softmax(z: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax along the last axis; safe for extreme logits."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predict(model: Model, params: ModelParams, x: np.ndarray):
    """Argmax class (ties go to the lowest index). Works on one example or a batch."""
    logits = model.forward(params, x)
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)


# -- loss specifications for the generic gradient entry points ---------------


def ce_loss_spec(logits: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch; returns (value, dL/dlogits)."""
    n = len(logits)
    logp = log_softmax(logits)
    value = -logp[np.arange(n), y].mean()
    dlogits = (softmax(logits) - np.eye(logits.shape[1])[y]) / n
    return value, dlogits


def squared_loss_spec(logits: np.ndarray, targets: np.ndarray):
    """0.5 * mean over batch of the squared error against target vectors."""
    n = len(logits)
    diff = logits - targets
    return 0.5 * (diff**2).sum() / n, diff / n


def constant_loss_spec(logits: np.ndarray, y) -> tuple[float, np.ndarray]:
    return 0.0, np.zeros_like(logits)


def grad_params(model: Model, params: ModelParams, X: np.ndarray, y, loss_spec=ce_loss_spec):
    """Loss value and exact flat parameter gradient for the given loss."""
    cache = model.forward_cache(params, X)
    value, dlogits = loss_spec(cache.stages[-1], y)
    grad, _ = model.backward(params, cache, {model.num_layers - 1: dlogits})
    return value, grad


def grad_input(model: Model, params: ModelParams, X: np.ndarray, y, loss_spec=ce_loss_spec):
    """Loss value and exact per-example input gradient for the given loss."""
    cache = model.forward_cache(params, X)
    value, dlogits = loss_spec(cache.stages[-1], y)
    _, dX = model.backward(params, cache, {model.num_layers - 1: dlogits})
    return value, dX


# -- checkpoint format --------------------------------------------------------
#
# magic "RPCK" | u32 format version | u64 descriptor length | descriptor as
# canonical JSON | u64 parameter count | parameters as little-endian float64
# in descriptor order | u64 metadata length | metadata as canonical JSON.
# All integer fields little-endian; the round trip is bit-exact.


def save_checkpoint(path: str, desc: ArchitectureDescriptor, params: ModelParams, metadata: dict):
    meta_text = json.dumps(metadata, sort_keys=True, separators=(",", ":"))
    desc_text = desc.canonical_text()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        desc_bytes = desc_text.encode("utf-8")
        f.write(struct.pack("<Q", len(desc_bytes)))
        f.write(desc_bytes)
        f.write(struct.pack("<Q", params.flat.size))
        f.write(params.flat.astype("<f8").tobytes())
        meta_bytes = meta_text.encode("utf-8")
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)


def load_checkpoint(path: str):
    """Read a checkpoint; returns (descriptor, params, metadata)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        (desc_len,) = struct.unpack("<Q", f.read(8))
        desc = ArchitectureDescriptor.from_canonical_text(f.read(desc_len).decode("utf-8"))
        (count,) = struct.unpack("<Q", f.read(8))
        flat = np.frombuffer(f.read(count * 8), dtype="<f8").astype(np.float64)
        (meta_len,) = struct.unpack("<Q", f.read(8))
        metadata = json.loads(f.read(meta_len).decode("utf-8"))
    expected = Model(desc).num_params
    if count != expected:
        raise ConfigError(f"checkpoint has {count} parameters, descriptor implies {expected}")
    return desc, ModelParams(flat, version=int(metadata.get("version", 0))), metadata


def bump_version(params: ModelParams) -> ModelParams:
    return replace(params, version=params.version + 1)
