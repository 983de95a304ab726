"""Differentiable structural similarity (SSIM) for channels-first images.

Local luminance/contrast/structure statistics are taken over a Gaussian
window slid across each channel (valid positions only, no padding), scored
with the standard stability constants, and averaged into a single scalar.
Everything is built from tensor primitives, so the score is differentiable
with respect to both images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .autograd import Tensor, conv2d

ImageLike = Union[Tensor, np.ndarray]


@dataclass
class SsimConfig:
    """Windowing and stability parameters.

    ``c1`` and ``c2`` default to ``(0.01 * L)**2`` and ``(0.03 * L)**2``
    where ``L`` is the dynamic range of the images (1.0 for [0, 1] data).
    """

    window_size: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    c1: Optional[float] = None
    c2: Optional[float] = None

    def __post_init__(self):
        if self.window_size % 2 == 0 or self.window_size < 3:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.c1 is None:
            self.c1 = (0.01 * self.dynamic_range) ** 2
        if self.c2 is None:
            self.c2 = (0.03 * self.dynamic_range) ** 2
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("stability constants c1 and c2 must be positive")


@dataclass
class SsimResult:
    """Mean score plus the per-window map it was averaged from."""

    mean: Tensor
    score_map: Tensor


def gaussian_window(size: int, sigma: float) -> Tensor:
    """Normalized 2-D Gaussian weights; entries sum to 1."""
    if size % 2 == 0 or size < 3:
        raise ValueError(f"gaussian_window: size must be odd and >= 3, got {size}")
    if sigma <= 0:
        raise ValueError(f"gaussian_window: sigma must be positive, got {sigma}")
    half = size // 2
    coords = np.arange(size, dtype=np.float64) - half
    grid = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2.0 * sigma ** 2))
    return Tensor(grid / grid.sum())


def _as_image(value: ImageLike, name: str) -> Tensor:
    t = value if isinstance(value, Tensor) else Tensor(value)
    if t.data.ndim != 3:
        raise ValueError(f"ssim: {name} must be (channels, height, width), got shape {t.shape}")
    return t


def _depthwise_pair(size: int, sigma: float, channels: int) -> tuple[Tensor, Tensor]:
    """Column and row conv weights for one separable Gaussian blur per channel.

    The 2-D window factors into an outer product of the same 1-D profile, so
    two thin convolutions compute the windowed moments much faster than one
    dense k*k filter.
    """
    half = size // 2
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-coords ** 2 / (2.0 * sigma ** 2))
    g /= g.sum()
    col = np.zeros((channels, channels, size, 1))
    row = np.zeros((channels, channels, 1, size))
    for c in range(channels):
        col[c, c, :, 0] = g
        row[c, c, 0, :] = g
    return Tensor(col), Tensor(row)


def ssim(x: ImageLike, y: ImageLike, cfg: Optional[SsimConfig] = None) -> SsimResult:
    """Structural similarity between two images.

    Per window: ``((2 mu_x mu_y + c1)(2 cov_xy + c2)) /
    ((mu_x^2 + mu_y^2 + c1)(var_x + var_y + c2))``, with Gaussian-weighted
    moments, scored per channel and averaged over every valid window.
    """
    cfg = cfg or SsimConfig()
    xt = _as_image(x, "x")
    yt = _as_image(y, "y")
    if xt.shape != yt.shape:
        raise ValueError(f"ssim: shape mismatch {xt.shape} vs {yt.shape}")
    channels, height, width = xt.shape
    if height < cfg.window_size or width < cfg.window_size:
        raise ValueError(
            f"ssim: image {height}x{width} smaller than window {cfg.window_size}")

    col, row = _depthwise_pair(cfg.window_size, cfg.sigma, channels)

    def blur(img: Tensor) -> Tensor:
        return conv2d(conv2d(img, col), row)

    mu_x = blur(xt)
    mu_y = blur(yt)
    var_x = blur(xt * xt) - mu_x * mu_x
    var_y = blur(yt * yt) - mu_y * mu_y
    cov_xy = blur(xt * yt) - mu_x * mu_y

    luminance = (mu_x * mu_y * 2.0 + cfg.c1) / (mu_x * mu_x + mu_y * mu_y + cfg.c1)
    structure = (cov_xy * 2.0 + cfg.c2) / (var_x + var_y + cfg.c2)
    score_map = luminance * structure
    return SsimResult(mean=score_map.mean(), score_map=score_map)


def ssim_gradient(x_adv: ImageLike, x: ImageLike,
                  cfg: Optional[SsimConfig] = None) -> Tensor:
    """Gradient of the mean score with respect to ``x_adv`` (``x`` held fixed)."""
    data = x_adv.data if isinstance(x_adv, Tensor) else np.asarray(x_adv, dtype=np.float64)
    leaf = Tensor(data, requires_grad=True)
    reference = Tensor(x.data if isinstance(x, Tensor) else x)
    ssim(leaf, reference, cfg).mean.backward()
    return Tensor(leaf.grad)
