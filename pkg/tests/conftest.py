"""Shared builders for small test models and images."""

import numpy as np

from pdrkit.classifier import LayerSpec, init_params


def build_tiny_conv(seed=0, size=12, k=3):
    """Conv net on 3 x size x size inputs, small enough for fast attack loops."""
    layers = [
        LayerSpec("conv", "conv1", in_channels=3, out_channels=2, kernel=3, pad=1),
        LayerSpec("relu", "relu1"),
        LayerSpec("avgpool", "pool1", pool=2),
        LayerSpec("conv", "conv2", in_channels=2, out_channels=2, kernel=3, pad=1),
        LayerSpec("relu", "relu2"),
        LayerSpec("avgpool", "pool2", pool=2),
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "dense", in_features=2 * (size // 4) ** 2, out_features=k),
    ]
    return init_params(layers, (3, size, size), k, seed)


def build_linear(seed=0, size=12, k=2):
    """Dense-only model: logits are an affine map of the flattened image."""
    layers = [
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "dense", in_features=3 * size * size, out_features=k),
    ]
    return init_params(layers, (3, size, size), k, seed)


def interior_image(seed=0, size=12, lo=0.2, hi=0.8):
    """Image comfortably inside [0,1] so small steps never hit the box."""
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(3, size, size))
