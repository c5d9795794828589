"""Minimal deterministic neural-network engine (float64, reverse mode)."""

from .layers import (
    Activation,
    Conv2D,
    ConvTranspose2D,
    Dense,
    Flatten,
    MaxPool2D,
    Reshape,
    conv2d_forward,
    conv2d_transpose_forward,
    dense_forward,
    leaky_relu,
    maxpool2d_forward,
    mse_grad,
    mse_loss,
    sigmoid,
)
from .network import (
    CaeNetwork,
    LayerSpec,
    Network,
    build_layer,
    build_network,
    build_paper_cae,
    loss_and_gradients,
    paper_cae_specs,
    parameter_count,
    seed_key,
)
from .optim import AdamState, adam_step, he_normal_init

__all__ = [
    "Activation",
    "AdamState",
    "CaeNetwork",
    "Conv2D",
    "ConvTranspose2D",
    "Dense",
    "Flatten",
    "LayerSpec",
    "MaxPool2D",
    "Network",
    "Reshape",
    "adam_step",
    "build_layer",
    "build_network",
    "build_paper_cae",
    "conv2d_forward",
    "conv2d_transpose_forward",
    "dense_forward",
    "he_normal_init",
    "leaky_relu",
    "loss_and_gradients",
    "maxpool2d_forward",
    "mse_grad",
    "mse_loss",
    "paper_cae_specs",
    "parameter_count",
    "seed_key",
    "sigmoid",
]
