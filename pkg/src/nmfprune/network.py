"""Small feedforward networks with maskable linear and conv layers.

Backpropagation is written out by hand. Convolution runs as im2col followed
by a matrix product, so the 2D weight view used for scoring and masking
(out_ch x in_ch*kh*kw) is the same array the forward pass multiplies with.
Losses are softmax cross-entropy with mean reduction over the batch.

A Network instance is single-writer: forward/backward mutate per-layer caches
and gradient buffers, so one instance must not be driven from two threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .masking import LayerSparsity, Mask, SparsityReport
from .seeds import derive_seed


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int
    # None resolves to True unless this is the network's last weighted layer
    # (the final classifier stays dense by default).
    prunable: bool | None = None

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ValueError(f"Linear dimensions must be positive, got {self}")


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    prunable: bool | None = None

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w) < 1:
            raise ValueError(f"Conv2d dimensions must be positive, got {self}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"Conv2d stride/padding invalid: {self}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Union[Linear, Conv2d, ReLU, Flatten]


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold (N, C, H, W) into (N*out_h*out_w, C*kh*kw) patch rows."""
    n, c, h, w = x.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    img = np.pad(x, [(0, 0), (0, 0), (padding, padding), (padding, padding)])
    cols = np.empty((n, c, kh, kw, out_h, out_w))
    for i in range(kh):
        i_max = i + stride * out_h
        for j in range(kw):
            j_max = j + stride * out_w
            cols[:, :, i, j, :, :] = img[:, :, i:i_max:stride, j:j_max:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, c * kh * kw)


def col2im(
    cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, padding: int
) -> np.ndarray:
    """Fold patch-row gradients back onto the (N, C, H, W) input, accumulating
    where patches overlap."""
    n, c, h, w = x_shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    cols = cols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        i_max = i + stride * out_h
        for j in range(kw):
            j_max = j + stride * out_w
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j, :, :]
    if padding == 0:
        return img
    return img[:, :, padding:-padding, padding:-padding]


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = np.sqrt(6.0 / shape[1])  # shape is (out, fan_in)
    return rng.uniform(-bound, bound, shape)


class _LinearLayer:
    kind = "linear"

    def __init__(self, layer_id: str, spec: Linear, prunable: bool, rng: np.random.Generator):
        self.layer_id = layer_id
        self.spec = spec
        self.prunable = prunable
        self.weights = _kaiming_uniform(rng, (spec.out_features, spec.in_features))
        self.bias = np.zeros(spec.out_features)
        self.grad_weights: np.ndarray | None = None
        self.grad_bias: np.ndarray | None = None
        self.mask: np.ndarray | None = None
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2:
            raise ValueError(f"{self.layer_id}: expected 2D input, got shape {x.shape}")
        if x.shape[1] != self.spec.in_features:
            raise ValueError(
                f"{self.layer_id}: expected {self.spec.in_features} features, got {x.shape[1]}"
            )
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grad_weights = dout.T @ self._x
        self.grad_bias = dout.sum(axis=0)
        return dout @ self.weights


class _ConvLayer:
    kind = "conv"

    def __init__(self, layer_id: str, spec: Conv2d, prunable: bool, rng: np.random.Generator):
        self.layer_id = layer_id
        self.spec = spec
        self.prunable = prunable
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        # Flattened 2D view: out_ch x (in_ch * kh * kw).
        self.weights = _kaiming_uniform(rng, (spec.out_channels, fan_in))
        self.bias = np.zeros(spec.out_channels)
        self.grad_weights: np.ndarray | None = None
        self.grad_bias: np.ndarray | None = None
        self.mask: np.ndarray | None = None
        self._cols: np.ndarray | None = None
        self._x_shape: tuple | None = None

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        s = self.spec
        out_h = (h + 2 * s.padding - s.kernel_h) // s.stride + 1
        out_w = (w + 2 * s.padding - s.kernel_w) // s.stride + 1
        if out_h < 1 or out_w < 1:
            raise ValueError(f"{self.layer_id}: kernel does not fit a {h}x{w} input")
        return out_h, out_w

    def forward(self, x: np.ndarray) -> np.ndarray:
        s = self.spec
        if x.ndim != 4:
            raise ValueError(f"{self.layer_id}: expected 4D input, got shape {x.shape}")
        n, c, h, w = x.shape
        if c != s.in_channels:
            raise ValueError(f"{self.layer_id}: expected {s.in_channels} channels, got {c}")
        out_h, out_w = self.output_hw(h, w)
        cols = im2col(x, s.kernel_h, s.kernel_w, s.stride, s.padding)
        self._cols = cols
        self._x_shape = x.shape
        out = cols @ self.weights.T + self.bias  # (N*oh*ow, out_ch)
        return out.reshape(n, out_h, out_w, s.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        s = self.spec
        dout_flat = dout.transpose(0, 2, 3, 1).reshape(-1, s.out_channels)
        self.grad_weights = dout_flat.T @ self._cols
        self.grad_bias = dout_flat.sum(axis=0)
        dcols = dout_flat @ self.weights
        return col2im(dcols, self._x_shape, s.kernel_h, s.kernel_w, s.stride, s.padding)


class _ReLULayer:
    kind = "relu"
    prunable = False

    def __init__(self, layer_id: str):
        self.layer_id = layer_id
        self._active: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._active = x > 0
        return np.where(self._active, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._active, dout, 0.0)


class _FlattenLayer:
    kind = "flatten"
    prunable = False

    def __init__(self, layer_id: str):
        self.layer_id = layer_id
        self._x_shape: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._x_shape)


_WEIGHTED = (_LinearLayer, _ConvLayer)


def _validate_chain(specs: list[LayerSpec]) -> None:
    """Reject statically detectable shape breaks between consecutive layers.

    Tracks whether the data flowing between layers is a feature vector or an
    image stack; ReLU preserves either, Flatten turns images into vectors.
    Spatial sizes depend on the input and are checked at forward time.
    """
    state: tuple[str, int | None] | None = None  # ("vec", features) or ("img", channels)
    prev: LayerSpec | None = None
    for spec in specs:
        if isinstance(spec, Linear):
            if state is not None and state[0] == "img":
                raise ValueError(f"incompatible layer pair: {prev} -> {spec} (flatten first)")
            if state is not None and state[0] == "vec" and state[1] is not None:
                if state[1] != spec.in_features:
                    raise ValueError(
                        f"incompatible layer pair: {prev} -> {spec} "
                        f"({state[1]} features flow into in_features={spec.in_features})"
                    )
            state = ("vec", spec.out_features)
        elif isinstance(spec, Conv2d):
            if state is not None and state[0] == "vec":
                raise ValueError(f"incompatible layer pair: {prev} -> {spec}")
            if state is not None and state[0] == "img" and state[1] != spec.in_channels:
                raise ValueError(
                    f"incompatible layer pair: {prev} -> {spec} "
                    f"({state[1]} channels flow into in_channels={spec.in_channels})"
                )
            state = ("img", spec.out_channels)
        elif isinstance(spec, Flatten):
            state = ("vec", None) if state is None or state[0] == "img" else state
        # ReLU preserves whatever state holds.
        prev = spec


class Network:
    """Ordered layer stack with cached activations for one backward pass."""

    def __init__(self, layers: list, specs: list[LayerSpec], seed: int):
        self.layers = layers
        self.specs = specs
        self.seed = seed
        self._logits: np.ndarray | None = None
        self._batch_size: int | None = None
        self._cache_fresh = False

    @property
    def input_kind(self) -> str:
        """"image" when the first weighted layer is a conv, else "vector"."""
        for layer in self.layers:
            if isinstance(layer, _ConvLayer):
                return "image"
            if isinstance(layer, _LinearLayer):
                return "vector"
        return "vector"

    @property
    def weighted_layers(self) -> list:
        return [l for l in self.layers if isinstance(l, _WEIGHTED)]

    @property
    def prunable_layers(self) -> list:
        return [l for l in self.weighted_layers if l.prunable]

    @property
    def masked_layers(self) -> list:
        return [l for l in self.weighted_layers if l.mask is not None]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run the batch through every layer; returns logits and caches the
        activations needed by backward."""
        x = np.asarray(x, dtype=np.float64)
        out = x
        for layer in self.layers:
            out = layer.forward(out)
        if out.ndim != 2:
            raise ValueError(f"network output must be 2D logits, got shape {out.shape}")
        self._logits = out
        self._batch_size = x.shape[0]
        self._cache_fresh = True
        return out

    def backward(self, labels: np.ndarray) -> float:
        """Backprop mean softmax cross-entropy; fills every layer's gradient
        buffers and returns the batch loss."""
        if not self._cache_fresh:
            raise RuntimeError("stale forward cache: call forward() after any weight update")
        labels = np.asarray(labels)
        if labels.shape[0] != self._batch_size:
            raise ValueError(
                f"labels length {labels.shape[0]} does not match cached batch "
                f"of {self._batch_size}"
            )
        loss, dlogits = softmax_cross_entropy(self._logits, labels)
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss

    def invalidate_cache(self) -> None:
        self._cache_fresh = False


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = float(-log_probs[np.arange(n), labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def init_network(specs: list[LayerSpec], seed: int) -> Network:
    """Build a network from layer specs with seeded fan-in-scaled uniform
    weights and zero biases.

    The last weighted layer defaults to non-prunable (it is the classifier);
    pass an explicit ``prunable=`` on the spec to override either direction.
    """
    specs = list(specs)
    weighted_positions = [i for i, s in enumerate(specs) if isinstance(s, (Linear, Conv2d))]
    if not weighted_positions:
        raise ValueError("network needs at least one weighted layer")
    _validate_chain(specs)

    last_weighted = weighted_positions[-1]
    rng = np.random.default_rng(derive_seed(seed, "init"))
    layers: list = []
    for i, spec in enumerate(specs):
        if isinstance(spec, Linear):
            prunable = spec.prunable if spec.prunable is not None else i != last_weighted
            layers.append(_LinearLayer(f"layer{i}_linear", spec, prunable, rng))
        elif isinstance(spec, Conv2d):
            prunable = spec.prunable if spec.prunable is not None else i != last_weighted
            layers.append(_ConvLayer(f"layer{i}_conv", spec, prunable, rng))
        elif isinstance(spec, ReLU):
            layers.append(_ReLULayer(f"layer{i}_relu"))
        elif isinstance(spec, Flatten):
            layers.append(_FlattenLayer(f"layer{i}_flatten"))
        else:
            raise ValueError(f"unknown layer spec {spec!r}")
    return Network(layers, specs, seed)


def convert_to_masked(net: Network, masks: dict[str, Mask]) -> Network:
    """Attach immutable masks to every prunable layer and zero the pruned
    weights (in place). Returns ``net``.

    Every prunable layer must have a shape-matching mask; masks naming
    non-prunable or unknown layers are rejected.
    """
    prunable_ids = {l.layer_id for l in net.prunable_layers}
    unknown = set(masks) - prunable_ids
    if unknown:
        raise ValueError(f"masks for non-prunable or unknown layers: {sorted(unknown)}")
    missing = prunable_ids - set(masks)
    if missing:
        raise ValueError(f"missing masks for prunable layers: {sorted(missing)}")
    for layer in net.prunable_layers:
        bits = masks[layer.layer_id].bits
        if bits.shape != layer.weights.shape:
            raise ValueError(
                f"mask shape {bits.shape} does not match weights "
                f"{layer.weights.shape} for layer {layer.layer_id!r}"
            )
        frozen = bits.copy()
        frozen.flags.writeable = False
        layer.mask = frozen
        layer.weights *= layer.mask
    net.invalidate_cache()
    return net


def count_zero_weights(net: Network) -> SparsityReport:
    """Sparsity recomputed from the actual weight values of prunable layers
    (not from masks)."""
    prunable = net.prunable_layers
    if not prunable:
        raise ValueError("network has no prunable layers")
    per_layer: dict[str, LayerSparsity] = {}
    global_zeros = 0
    global_total = 0
    for layer in prunable:
        zeros = int(np.count_nonzero(layer.weights == 0.0))
        total = int(layer.weights.size)
        per_layer[layer.layer_id] = LayerSparsity(zeros=zeros, total=total, sparsity=zeros / total)
        global_zeros += zeros
        global_total += total
    return SparsityReport(
        per_layer=per_layer,
        global_zeros=global_zeros,
        global_total=global_total,
        global_sparsity=global_zeros / global_total,
    )


@dataclass(frozen=True)
class FlopsEstimate:
    dense_flops: int
    sparse_flops: int


def flops_estimate(net: Network, input_shape: tuple[int, ...]) -> FlopsEstimate:
    """Forward-pass FLOPs for one sample at 2 ops per multiply-accumulate.

    ``input_shape`` excludes the batch dimension: (features,) for vector
    input, (channels, height, width) for images. The sparse figure counts
    only multiply-accumulates whose weight survives the layer's mask, so a
    layer without a mask contributes its dense cost. Bias additions and
    activations are not counted.
    """
    shape = tuple(int(d) for d in input_shape)
    dense = 0
    sparse = 0
    for layer in net.layers:
        if isinstance(layer, _LinearLayer):
            if len(shape) != 1 or shape[0] != layer.spec.in_features:
                raise ValueError(f"{layer.layer_id}: input shape {shape} does not fit")
            nnz = (
                int(np.count_nonzero(layer.mask)) if layer.mask is not None
                else layer.weights.size
            )
            dense += 2 * layer.weights.size
            sparse += 2 * nnz
            shape = (layer.spec.out_features,)
        elif isinstance(layer, _ConvLayer):
            if len(shape) != 3 or shape[0] != layer.spec.in_channels:
                raise ValueError(f"{layer.layer_id}: input shape {shape} does not fit")
            out_h, out_w = layer.output_hw(shape[1], shape[2])
            positions = out_h * out_w
            nnz = (
                int(np.count_nonzero(layer.mask)) if layer.mask is not None
                else layer.weights.size
            )
            dense += 2 * layer.weights.size * positions
            sparse += 2 * nnz * positions
            shape = (layer.spec.out_channels, out_h, out_w)
        elif isinstance(layer, _FlattenLayer):
            shape = (int(np.prod(shape)),)
        # ReLU leaves the shape unchanged and costs nothing by convention.
    return FlopsEstimate(dense_flops=dense, sparse_flops=sparse)
