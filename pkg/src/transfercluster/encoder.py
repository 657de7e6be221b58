"""The embedding network: a small dense trunk plus a linear bottleneck.

The trunk is a stack of fully connected layers with elementwise
activations; the bottleneck is an affine map installed from a PCA fit
and fine-tuned afterwards like any other layer.  Forward and backward
passes are plain numpy; backward returns exact analytic gradients.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureMatrix, LabeledSet
from .errors import DataError, NumericalError, ParameterError
from .seeding import rng_for

_CHECKPOINT_MAGIC = b"DTCE"
_CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "linear": (lambda x: x, lambda y: np.ones_like(y)),
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
}
_ACTIVATION_TAGS = {"linear": 0, "tanh": 1}
_TAG_ACTIVATIONS = {v: k for k, v in _ACTIVATION_TAGS.items()}


@dataclass
class LayerParams:
    weights: np.ndarray   # (out, in)
    bias: np.ndarray      # (out,)
    activation: str = "tanh"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ParameterError("layer weights must be (out, in) with matching bias")
        if self.activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation '{self.activation}'")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ParameterError("layer parameters must be finite")


@dataclass
class EncoderParams:
    """Trunk layers plus an optional bottleneck ``(A, b)``."""

    layers: list[LayerParams] = field(default_factory=list)
    bottleneck: tuple[np.ndarray, np.ndarray] | None = None
    input_dim: int | None = None   # required when there are no layers

    def __post_init__(self):
        dim = self.input_dim
        for i, layer in enumerate(self.layers):
            if dim is not None and layer.weights.shape[1] != dim:
                raise ParameterError(
                    f"layer {i} expects input dim {layer.weights.shape[1]}, got {dim}"
                )
            dim = layer.weights.shape[0]
        if self.bottleneck is not None:
            a, b = self.bottleneck
            a = np.asarray(a, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if a.ndim != 2 or b.shape != (a.shape[0],):
                raise ParameterError("bottleneck must be (A: (c, d), b: (c,))")
            if dim is not None and a.shape[1] != dim:
                raise ParameterError(
                    f"bottleneck expects input dim {a.shape[1]}, trunk emits {dim}"
                )
            self.bottleneck = (a, b)

    @property
    def trunk_output_dim(self) -> int | None:
        if self.layers:
            return self.layers[-1].weights.shape[0]
        return self.input_dim

    @property
    def output_dim(self) -> int | None:
        if self.bottleneck is not None:
            return self.bottleneck[0].shape[0]
        return self.trunk_output_dim

    def copy(self) -> "EncoderParams":
        layers = [LayerParams(l.weights.copy(), l.bias.copy(), l.activation)
                  for l in self.layers]
        bn = None
        if self.bottleneck is not None:
            bn = (self.bottleneck[0].copy(), self.bottleneck[1].copy())
        return EncoderParams(layers, bn, self.input_dim)


@dataclass
class EncoderGradients:
    """Gradients mirroring the shape of :class:`EncoderParams`."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    bottleneck: tuple[np.ndarray, np.ndarray] | None


@dataclass
class PcaModel:
    """Principal directions of mean-centered data, rows orthonormal."""

    mean: np.ndarray
    components: np.ndarray          # (c, d)
    explained_variance: np.ndarray  # (c,), nonincreasing

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, projected: np.ndarray) -> np.ndarray:
        return projected @ self.components + self.mean


def _as_values(batch) -> np.ndarray:
    if isinstance(batch, FeatureMatrix):
        return batch.values
    return np.asarray(batch, dtype=np.float64)


def _forward_trace(encoder: EncoderParams, x: np.ndarray):
    """Forward pass keeping per-layer inputs and activation outputs."""
    inputs = []
    h = x
    for layer in encoder.layers:
        inputs.append(h)
        act, _ = _ACTIVATIONS[layer.activation]
        h = act(h @ layer.weights.T + layer.bias)
    trunk_out = h
    if encoder.bottleneck is not None:
        a, b = encoder.bottleneck
        h = trunk_out @ a.T + b
    return h, inputs, trunk_out


def forward(encoder: EncoderParams, batch):
    """Embed a batch; emits bottleneck coordinates once one is installed.

    Accepts a FeatureMatrix (returned as a FeatureMatrix with the same
    ids) or a plain array (returned as an array).
    """
    values = _as_values(batch)
    if values.ndim != 2:
        raise ParameterError(f"batch must be 2-D, got shape {values.shape}")
    expected = encoder.layers[0].weights.shape[1] if encoder.layers else encoder.input_dim
    if expected is not None and values.shape[1] != expected:
        raise ParameterError(
            f"batch dim {values.shape[1]} does not match encoder input dim {expected}"
        )
    out, _, _ = _forward_trace(encoder, values)
    if isinstance(batch, FeatureMatrix):
        return FeatureMatrix(out, batch.ids)
    return out


def backward(encoder: EncoderParams, batch, upstream: np.ndarray):
    """Backpropagate ``upstream`` (N x output_dim) through the encoder.

    Returns ``(EncoderGradients, input_gradients)``.
    """
    x = _as_values(batch)
    upstream = np.asarray(upstream, dtype=np.float64)
    _, inputs, trunk_out = _forward_trace(encoder, x)
    if upstream.shape != (x.shape[0], encoder.output_dim):
        raise ParameterError(
            f"upstream gradient shape {upstream.shape} does not match "
            f"({x.shape[0]}, {encoder.output_dim})"
        )
    grad = upstream
    bottleneck_grads = None
    if encoder.bottleneck is not None:
        a, _ = encoder.bottleneck
        bottleneck_grads = (grad.T @ trunk_out, grad.sum(axis=0))
        grad = grad @ a

    layer_grads: list[tuple[np.ndarray, np.ndarray]] = []
    # Activation outputs per layer: inputs[i+1] is layer i's output,
    # except the last, whose output is trunk_out.
    outputs = inputs[1:] + [trunk_out]
    for layer, layer_in, layer_out in zip(reversed(encoder.layers),
                                          reversed(inputs), reversed(outputs)):
        _, dact = _ACTIVATIONS[layer.activation]
        pre_grad = grad * dact(layer_out)
        layer_grads.append((pre_grad.T @ layer_in, pre_grad.sum(axis=0)))
        grad = pre_grad @ layer.weights
    layer_grads.reverse()
    return EncoderGradients(layer_grads, bottleneck_grads), grad


def fit_pca(features, n_components: int) -> PcaModel:
    """Top principal directions via eigendecomposition of the covariance.

    Uses the sample covariance (N-1 denominator).  Sign convention: the
    largest-magnitude entry of each component is positive.
    """
    x = _as_values(features)
    n, d = x.shape
    if not 1 <= n_components <= min(n, d):
        raise ParameterError(
            f"n_components must be in [1, {min(n, d)}], got {n_components}"
        )
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    components = eigvecs[:, order].T.copy()
    explained = np.clip(eigvals[order], 0.0, None)
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, components, explained)


def install_bottleneck(encoder: EncoderParams, pca: PcaModel) -> EncoderParams:
    """Append the PCA projection as a permanent affine head.

    After installation, forward(x) equals the PCA projection of the
    trunk output.  Trunk parameters are preserved bitwise.
    """
    if encoder.bottleneck is not None:
        raise ParameterError("bottleneck already installed")
    trunk_dim = encoder.trunk_output_dim
    if trunk_dim is not None and pca.components.shape[1] != trunk_dim:
        raise ParameterError(
            f"PCA input dim {pca.components.shape[1]} does not match "
            f"trunk output dim {trunk_dim}"
        )
    out = encoder.copy()
    out.bottleneck = (pca.components.copy(), -pca.components @ pca.mean)
    return out


@dataclass
class PretrainConfig:
    hidden: tuple[int, ...] = (64,)
    activation: str = "tanh"
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("pretraining needs at least one epoch")
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be positive")


@dataclass
class PretrainResult:
    encoder: EncoderParams
    head_weights: np.ndarray
    head_bias: np.ndarray
    epoch_losses: list[float]


def _init_trunk(input_dim, config: PretrainConfig, sample: np.ndarray, seed: int):
    """Glorot init rescaled so each unit's preactivation has unit spread."""
    layers = []
    h = sample
    dim = input_dim
    for li, width in enumerate(config.hidden):
        rng = rng_for(seed, "pretrain-init", li)
        limit = np.sqrt(6.0 / (dim + width))
        w = rng.uniform(-limit, limit, size=(width, dim))
        b = np.zeros(width)
        pre = h @ w.T + b
        spread = np.maximum(pre.std(axis=0), 1e-3)
        w /= spread[:, None]
        b /= spread
        layer = LayerParams(w, b, config.activation)
        layers.append(layer)
        act, _ = _ACTIVATIONS[layer.activation]
        h = act(h @ layer.weights.T + layer.bias)
        dim = width
    return layers, h


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def classifier_logits(encoder: EncoderParams, head_weights, head_bias, batch):
    """Logits of the temporary classification head over trunk features."""
    return _as_values(forward(encoder, _as_values(batch))) @ head_weights.T + head_bias


def pretrain_classifier(labeled: LabeledSet, config: PretrainConfig | None = None,
                        seed: int = 0) -> PretrainResult:
    """Train trunk + softmax head with cross-entropy on the labelled set."""
    config = config or PretrainConfig()
    n_classes = labeled.n_classes
    if n_classes < 2:
        raise ParameterError("pretraining needs at least 2 classes")
    x = labeled.features.values
    y = labeled.labels
    n, input_dim = x.shape

    layers, _ = _init_trunk(input_dim, config, x, seed)
    encoder = EncoderParams(layers, None, input_dim)
    trunk_dim = encoder.trunk_output_dim
    rng = rng_for(seed, "pretrain-head")
    limit = np.sqrt(6.0 / (trunk_dim + n_classes))
    head_w = rng.uniform(-limit, limit, size=(n_classes, trunk_dim))
    head_b = np.zeros(n_classes)

    params = [l.weights for l in encoder.layers] + [l.bias for l in encoder.layers]
    params += [head_w, head_b]
    velocity = [np.zeros_like(p) for p in params]
    batch_size = min(config.batch_size, n)
    losses = []
    for epoch in range(config.epochs):
        order = rng_for(seed, "pretrain-shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            xb, yb = x[rows], y[rows]
            trunk_out = _as_values(forward(encoder, xb))
            logits = trunk_out @ head_w.T + head_b
            probs = _softmax(logits)
            batch_n = len(rows)
            loss = -np.log(probs[np.arange(batch_n), yb] + 1e-300).mean()
            epoch_loss += loss
            n_batches += 1
            dlogits = probs.copy()
            dlogits[np.arange(batch_n), yb] -= 1.0
            dlogits /= batch_n
            grad_head_w = dlogits.T @ trunk_out
            grad_head_b = dlogits.sum(axis=0)
            grads_enc, _ = backward(encoder, xb, dlogits @ head_w)
            flat_grads = [g for g, _ in grads_enc.layers] + [g for _, g in grads_enc.layers]
            flat_grads += [grad_head_w, grad_head_b]
            for p, v, g in zip(params, velocity, flat_grads):
                v *= config.momentum
                v += g
                p -= config.learning_rate * v
        mean_loss = epoch_loss / n_batches
        if not np.isfinite(mean_loss):
            raise NumericalError(f"pretraining diverged at epoch {epoch}")
        losses.append(float(mean_loss))
    return PretrainResult(encoder, head_w, head_b, losses)


def pretrain_encoder(labeled: LabeledSet, config: PretrainConfig | None = None,
                     seed: int = 0) -> EncoderParams:
    """Pretrain on the labelled classes; the classification head is discarded."""
    return pretrain_classifier(labeled, config, seed).encoder


def save_encoder(path, encoder: EncoderParams) -> None:
    """Write a versioned binary checkpoint (magic ``DTCE``)."""
    input_dim = encoder.layers[0].weights.shape[1] if encoder.layers else encoder.input_dim
    if input_dim is None:
        raise ParameterError("cannot checkpoint an encoder with unknown input dim")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sBIB", _CHECKPOINT_MAGIC, _CHECKPOINT_VERSION,
                             input_dim, len(encoder.layers)))
        for layer in encoder.layers:
            out_dim, in_dim = layer.weights.shape
            fh.write(struct.pack("<IIB", in_dim, out_dim,
                                 _ACTIVATION_TAGS[layer.activation]))
        has_bn = encoder.bottleneck is not None
        fh.write(struct.pack("<B", 1 if has_bn else 0))
        if has_bn:
            a, _ = encoder.bottleneck
            fh.write(struct.pack("<II", a.shape[1], a.shape[0]))
        for layer in encoder.layers:
            fh.write(layer.weights.astype("<f8").tobytes())
            fh.write(layer.bias.astype("<f8").tobytes())
        if has_bn:
            a, b = encoder.bottleneck
            fh.write(a.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_encoder(path) -> EncoderParams:
    """Load a checkpoint written by :func:`save_encoder`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    offset = struct.calcsize("<4sBIB")
    if len(blob) < offset:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, input_dim, n_layers = struct.unpack_from("<4sBIB", blob)
    if magic != _CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != _CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    shapes = []
    for _ in range(n_layers):
        in_dim, out_dim, tag = struct.unpack_from("<IIB", blob, offset)
        offset += struct.calcsize("<IIB")
        if tag not in _TAG_ACTIVATIONS:
            raise DataError(f"{path}: unknown activation tag {tag}")
        shapes.append((in_dim, out_dim, _TAG_ACTIVATIONS[tag]))
    (has_bn,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    bn_shape = None
    if has_bn:
        bn_shape = struct.unpack_from("<II", blob, offset)
        offset += struct.calcsize("<II")

    def take(count):
        nonlocal offset
        end = offset + 8 * count
        if end > len(blob):
            raise DataError(f"{path}: truncated at offset {offset}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset = end
        return arr.astype(np.float64)

    layers = []
    for in_dim, out_dim, act in shapes:
        w = take(in_dim * out_dim).reshape(out_dim, in_dim)
        b = take(out_dim)
        layers.append(LayerParams(w, b, act))
    bottleneck = None
    if has_bn:
        d, c = bn_shape
        a = take(d * c).reshape(c, d)
        b = take(c)
        bottleneck = (a, b)
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return EncoderParams(layers, bottleneck, int(input_dim))
