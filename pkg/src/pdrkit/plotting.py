"""Figure rendering for sweep reports and single attacks.

Everything draws through the Agg backend and writes straight to files,
so rendering works the same headless as it does locally.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first
import numpy as np  # noqa: E402

from .harness import SweepReport  # noqa: E402


def _curves_by_method(report: SweepReport):
    methods = sorted({p.method for p in report.points})
    for method in methods:
        points = sorted((p for p in report.points if p.method == method),
                        key=lambda p: p.hyper)
        yield method, [p.asr for p in points], [p.mean_ssim for p in points]


def plot_tradeoff(report: SweepReport, path: str, title: str = "") -> str:
    """Success rate against mean similarity, one line per method."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for method, xs, ys in _curves_by_method(report):
        ax.plot(xs, ys, marker="o", label=method)
    ax.set_xlabel("attack success rate")
    ax.set_ylabel("mean SSIM")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_overlay(reports: Sequence[Tuple[str, SweepReport]], path: str,
                 title: str = "") -> str:
    """Several reports on one axes, labels prefixing each method name."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, report in reports:
        for method, xs, ys in _curves_by_method(report):
            name = label if label == method else f"{label}: {method}"
            ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("attack success rate")
    ax.set_ylabel("mean SSIM")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _to_hwc(image: np.ndarray) -> np.ndarray:
    return np.clip(np.transpose(image, (1, 2, 0)), 0.0, 1.0)


def plot_attack_panel(x: np.ndarray, x_adv: np.ndarray, path: str,
                      title: str = "") -> str:
    """Original, adversarial, and amplified absolute difference, side by side."""
    diff = np.abs(x_adv - x)
    peak = diff.max()
    scaled = diff / peak if peak > 0 else diff
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.4))
    for ax, img, name in zip(
            axes,
            (_to_hwc(x), _to_hwc(x_adv), _to_hwc(scaled)),
            ("original", "adversarial", "|difference| (rescaled)")):
        ax.imshow(img, interpolation="nearest")
        ax.set_title(name, fontsize=10)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
