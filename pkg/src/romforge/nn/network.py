"""Network assembly: layer specs, parameter initialization, autoencoder builder."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from . import _kernels
from .layers import (
    Activation,
    Conv2D,
    ConvTranspose2D,
    Dense,
    Flatten,
    MaxPool2D,
    Reshape,
    mse_grad,
    mse_loss,
)
from .optim import he_normal_init

__all__ = [
    "LayerSpec",
    "Network",
    "CaeNetwork",
    "build_layer",
    "build_network",
    "build_paper_cae",
    "parameter_count",
    "loss_and_gradients",
    "seed_key",
]


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description; enough to rebuild and count parameters.

    ``units`` is the output-channel/feature count for conv/dense kinds and
    ``in_units`` the resolved input side, so parameter shapes follow from the
    spec alone.  ``target`` is the output shape for reshape layers.
    """

    kind: str  # conv | conv_transpose | maxpool | dense | flatten | reshape | activation
    units: int = 0
    in_units: int = 0
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    activation: str = "identity"
    alpha: float = 0.25
    target: tuple = ()

    def __post_init__(self):
        kinds = ("conv", "conv_transpose", "maxpool", "dense", "flatten", "reshape", "activation")
        if self.kind not in kinds:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if any(v < 1 for v in self.kernel) or any(v < 1 for v in self.stride):
            raise ValueError("kernel and stride entries must be positive")
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "stride", tuple(self.stride))
        object.__setattr__(self, "target", tuple(self.target))

    def param_shapes(self):
        kh, kw = self.kernel
        if self.kind in ("conv", "conv_transpose"):
            return [(kh, kw, self.in_units, self.units), (self.units,)]
        if self.kind == "dense":
            return [(self.units, self.in_units), (self.units,)]
        return []

    def fan_in(self):
        kh, kw = self.kernel
        if self.kind in ("conv", "conv_transpose"):
            return kh * kw * self.in_units
        if self.kind == "dense":
            return self.in_units
        return 0


def parameter_count(specs):
    """Total trainable scalars implied by a spec list."""
    return sum(int(np.prod(s)) for spec in specs for s in spec.param_shapes())


def seed_key(seed, *extra):
    """Flatten a seed plus qualifiers into a tuple of ints for default_rng."""
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    return tuple(int(v) for v in base + extra)


def build_layer(spec, seed):
    """Instantiate one layer; weights He-normal, biases zero."""
    if spec.kind == "activation":
        return Activation(spec.activation, spec.alpha)
    if spec.kind == "maxpool":
        return MaxPool2D(spec.kernel, spec.stride)
    if spec.kind == "flatten":
        return Flatten()
    if spec.kind == "reshape":
        return Reshape(spec.target)
    shapes = spec.param_shapes()
    W = he_normal_init(shapes[0], spec.fan_in(), seed)
    b = np.zeros(shapes[1])
    if spec.kind == "dense":
        return Dense(W, b)
    if spec.kind == "conv":
        return Conv2D(W, b, spec.stride)
    return ConvTranspose2D(W, b, spec.stride)


class Network:
    """Ordered layer stack with shared forward/backward plumbing."""

    def __init__(self, specs, layers):
        self.specs = list(specs)
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def output_shapes(self, in_shape):
        shapes = []
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
            shapes.append(in_shape)
        return shapes


def build_network(specs, seed):
    """Materialize a Network from specs; layer i gets sub-seed (seed, i)."""
    layers = [build_layer(spec, seed_key(seed, i)) for i, spec in enumerate(specs)]
    return Network(specs, layers)


class CaeNetwork:
    """Encoder/decoder pair sharing one parameter store."""

    def __init__(self, encoder, decoder, code_dim):
        self.encoder = encoder
        self.decoder = decoder
        self.code_dim = code_dim
        # the gradient w.r.t. the network input is never consumed
        if encoder.layers and hasattr(encoder.layers[0], "needs_input_grad"):
            encoder.layers[0].needs_input_grad = False

    def encode(self, x):
        return self.encoder.forward(x)

    def decode(self, a):
        return self.decoder.forward(a)

    def forward(self, x):
        return self.decode(self.encode(x))

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def grads(self):
        return self.encoder.grads() + self.decoder.grads()

    @property
    def parameter_count(self):
        return parameter_count(self.encoder.specs) + parameter_count(self.decoder.specs)

    def get_weights(self):
        return [p.copy() for p in self.params()]

    def set_weights(self, weights):
        params = self.params()
        if len(weights) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(weights)}")
        for p, w in zip(params, weights):
            if p.shape != w.shape:
                raise ValueError(f"weight shape {w.shape} != parameter shape {p.shape}")
            p[...] = w


def _scaled(units, width_scale):
    return max(1, round(units * width_scale))


def paper_cae_specs(h, w, c, k, width_scale=1.0):
    """Layer specs for the two-stage conv autoencoder (see `build_paper_cae`)."""
    if h % 4 or w % 4:
        raise ValueError(f"grid {h}x{w} must be divisible by 4 (two 2x poolings)")
    if k < 1:
        raise ValueError(f"code dimension must be >= 1, got {k}")
    if not 0 < width_scale <= 1:
        raise ValueError(f"width_scale must lie in (0, 1], got {width_scale}")
    f1 = _scaled(64, width_scale)
    f2 = _scaled(32, width_scale)
    d1 = _scaled(128, width_scale)
    hq, wq = h // 4, w // 4
    flat = hq * wq * f2

    lrelu = dict(activation="leaky_relu", alpha=0.25)
    encoder = [
        LayerSpec("conv", units=f1, in_units=c, kernel=(3, 3), stride=(1, 1)),
        LayerSpec("activation", **lrelu),
        LayerSpec("maxpool", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("conv", units=f2, in_units=f1, kernel=(3, 3), stride=(1, 1)),
        LayerSpec("activation", **lrelu),
        LayerSpec("maxpool", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("flatten"),
        LayerSpec("dense", units=d1, in_units=flat),
        LayerSpec("activation", **lrelu),
        LayerSpec("dense", units=k, in_units=d1),
        LayerSpec("activation", **lrelu),
    ]
    decoder = [
        LayerSpec("dense", units=d1, in_units=k),
        LayerSpec("activation", **lrelu),
        LayerSpec("dense", units=flat, in_units=d1),
        LayerSpec("activation", **lrelu),
        LayerSpec("reshape", target=(hq, wq, f2)),
        LayerSpec("conv_transpose", units=f2, in_units=f2, kernel=(3, 3), stride=(2, 2)),
        LayerSpec("activation", **lrelu),
        LayerSpec("conv_transpose", units=f1, in_units=f2, kernel=(3, 3), stride=(2, 2)),
        LayerSpec("activation", **lrelu),
        LayerSpec("conv_transpose", units=c, in_units=f1, kernel=(3, 3), stride=(1, 1)),
        LayerSpec("activation", activation="sigmoid"),
    ]
    return encoder, decoder


def build_paper_cae(h, w, c, k, width_scale=1.0, seed=0):
    """Two-conv-block autoencoder for (h, w, c) fields with code size k.

    At width_scale 1 on 64x64x2 inputs the layer output sizes run
    64x64x64 -> 32x32x64 -> 32x32x32 -> 16x16x32 -> 8192 -> 128 -> k on the
    encoder side and mirror back up through transpose convolutions, ending
    in a sigmoid.  ``width_scale`` shrinks filter counts and the dense width
    proportionally for desk-scale runs.
    """
    enc_specs, dec_specs = paper_cae_specs(h, w, c, k, width_scale)
    encoder = build_network(enc_specs, seed_key(seed, 0))
    decoder = build_network(dec_specs, seed_key(seed, 1))
    return CaeNetwork(encoder, decoder, k)


def loss_and_gradients(network, x, target):
    """Forward + reverse pass; returns (mse, parameter gradients).

    Raises TrainingError naming the offending layer if any parameter
    gradient turns non-finite.
    """
    pred = network.forward(x)
    loss = mse_loss(pred, target)
    dcode = network.decoder.backward(mse_grad(pred, target))
    network.encoder.backward(dcode)
    grads = network.grads()
    for layer in network.encoder.layers + network.decoder.layers:
        for g in layer.grads():
            if not _kernels.all_finite(g.reshape(-1)):
                raise TrainingError(f"non-finite gradient in layer {layer.name!r}")
    return loss, grads
