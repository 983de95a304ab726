"""Baseline iterative attacks: FGSM family, input diversity, translation
smoothing, and intermediate-feature attacks.

All attacks are pure functions of (model, sample, config): randomness comes
only from the config seed, every iterate is projected back into the
epsilon-ball intersected with [0, 1], and success is always judged on the
final untransformed adversarial image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .autograd import Tensor, bilinear_resize, dot, l2_norm, pad2d
from .classifier import (
    DEFAULT_ILA_LAYER,
    ModelParams,
    cross_entropy,
    forward,
    forward_with_intermediate,
    predict,
)
from .ssim import ssim

METHODS = ("fgsm", "ifgsm", "mifgsm", "dim", "tim", "tidim", "ilap", "ilaf")


@dataclass
class KernelSpec:
    kind: str = "gaussian"   # gaussian | delta
    size: int = 7
    sigma: float = 3.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "delta"):
            raise ValueError(f"kernel kind must be gaussian or delta, got {self.kind!r}")
        if self.size % 2 == 0 or self.size < 1:
            raise ValueError(f"kernel size must be odd, got {self.size}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError(f"kernel sigma must be positive, got {self.sigma}")

    def realize(self) -> np.ndarray:
        """Kernel weights; always sum to 1."""
        if self.kind == "delta":
            grid = np.zeros((self.size, self.size))
            grid[self.size // 2, self.size // 2] = 1.0
            return grid
        coords = np.arange(self.size, dtype=np.float64) - self.size // 2
        grid = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2)
                      / (2.0 * self.sigma ** 2))
        return grid / grid.sum()


@dataclass
class AttackConfig:
    method: str = "ifgsm"
    eps: float = 16 / 255
    alpha: Optional[float] = None    # default max(eps/10, 1/255)
    iters: int = 20
    m: float = 1.0                   # momentum decay (mifgsm)
    p: float = 0.5                   # transform probability (dim, tidim)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    c: float = 1.0                   # ilaf balance constant
    layer: str = DEFAULT_ILA_LAYER   # ila feature layer
    seed: int = 0
    early_stop: bool = False
    record_trajectory: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.iters < 0:
            raise ValueError(f"iters must be >= 0, got {self.iters}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.m < 0:
            raise ValueError(f"momentum decay must be >= 0, got {self.m}")

    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else max(self.eps / 10, 1 / 255)


@dataclass
class AttackResult:
    x_adv: np.ndarray
    predicted: int
    success: bool            # predicted != y
    iterations_used: int
    final_loss: float
    ssim_vs_original: float
    linf_vs_original: float
    degenerate: bool = False
    trajectory: Optional[List[np.ndarray]] = None


def clip_ball(x_adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Project onto the L-inf ball of radius eps around x, then into [0, 1]."""
    if x_adv.shape != x.shape:
        raise ValueError(f"clip_ball: shape mismatch {x_adv.shape} vs {x.shape}")
    return np.minimum(np.maximum(x_adv, np.maximum(x - eps, 0.0)),
                      np.minimum(x + eps, 1.0))


def input_diversity(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Random resize-and-pad applied with probability p; identity otherwise.

    The transformed image keeps its shape: it is shrunk to a uniformly drawn
    size of at least 90% per side, then zero-padded back at a uniform offset.
    Differentiable with respect to x.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"input_diversity: p must be in [0, 1], got {p}")
    if rng.random() >= p:
        return x
    _, height, width = x.shape
    new_h = int(rng.integers(math.ceil(0.9 * height), height + 1))
    new_w = int(rng.integers(math.ceil(0.9 * width), width + 1))
    top = int(rng.integers(0, height - new_h + 1))
    left = int(rng.integers(0, width - new_w + 1))
    resized = bilinear_resize(x, new_h, new_w)
    return pad2d(resized, top, height - new_h - top, left, width - new_w - left)


def smooth_gradient(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-padding per-channel convolution of a gradient field with a kernel.

    Zero kernel entries contribute nothing, so a delta kernel returns the
    gradient bit-for-bit unchanged.
    """
    size = kernel.shape[0]
    half = size // 2
    _, height, width = grad.shape
    padded = np.pad(grad, ((0, 0), (half, half), (half, half)))
    out = np.zeros_like(grad)
    for i in range(size):
        for j in range(size):
            w = kernel[i, j]
            if w == 0.0:
                continue
            out += w * padded[:, i:i + height, j:j + width]
    return out


def _loss_gradient(model: ModelParams, x_adv: np.ndarray, y: int,
                   transform: Optional[Callable[[Tensor], Tensor]]) -> Tuple[np.ndarray, float]:
    leaf = Tensor(x_adv, requires_grad=True)
    view = transform(leaf) if transform is not None else leaf
    loss = cross_entropy(forward(model, view), y)
    loss.backward()
    return leaf.grad, loss.item()


def _finish(model: ModelParams, x: np.ndarray, x_adv: np.ndarray, y: int,
            iterations_used: int, final_loss: float, degenerate: bool,
            trajectory: Optional[List[np.ndarray]]) -> AttackResult:
    predicted = predict(model, x_adv)
    return AttackResult(
        x_adv=x_adv,
        predicted=predicted,
        success=predicted != y,
        iterations_used=iterations_used,
        final_loss=final_loss,
        ssim_vs_original=ssim(x_adv, x).mean.item(),
        linf_vs_original=float(np.abs(x_adv - x).max()),
        degenerate=degenerate,
        trajectory=trajectory,
    )


def _ascend(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig,
            steps: int, alpha: float, momentum: float,
            diversity: bool, kernel: Optional[np.ndarray]) -> AttackResult:
    """Shared sign-ascent driver for the FGSM family."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    x_adv = x.copy()
    velocity = np.zeros_like(x)
    degenerate = False
    loss = 0.0
    trajectory = [x_adv.copy()] if cfg.record_trajectory else None
    used = 0
    for _ in range(steps):
        transform = (lambda t: input_diversity(t, cfg.p, rng)) if diversity else None
        grad, loss = _loss_gradient(model, x_adv, y, transform)
        if kernel is not None:
            grad = smooth_gradient(grad, kernel)
        if momentum > 0.0:
            norm = np.abs(grad).sum()
            if norm == 0.0:
                degenerate = True
                velocity = momentum * velocity
            else:
                velocity = momentum * velocity + grad / norm
            step_dir = np.sign(velocity)
        else:
            if not grad.any():
                degenerate = True
            step_dir = np.sign(grad)
        x_adv = clip_ball(x_adv + alpha * step_dir, x, cfg.eps)
        used += 1
        if trajectory is not None:
            trajectory.append(x_adv.copy())
        if cfg.early_stop and predict(model, x_adv) != y:
            break
    return _finish(model, x, x_adv, y, used, loss, degenerate, trajectory)


def fgsm(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig) -> AttackResult:
    """One signed-gradient step of size eps."""
    return _ascend(model, x, y, cfg, steps=1, alpha=cfg.eps,
                   momentum=0.0, diversity=False, kernel=None)


def ifgsm(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig) -> AttackResult:
    return _ascend(model, x, y, cfg, steps=cfg.iters, alpha=cfg.step_size(),
                   momentum=0.0, diversity=False, kernel=None)


def mifgsm(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig) -> AttackResult:
    """Accumulates L1-normalized gradients with decay m before taking the sign."""
    return _ascend(model, x, y, cfg, steps=cfg.iters, alpha=cfg.step_size(),
                   momentum=cfg.m, diversity=False, kernel=None)


def dim(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig) -> AttackResult:
    """I-FGSM on randomly resized-and-padded views of the current iterate."""
    return _ascend(model, x, y, cfg, steps=cfg.iters, alpha=cfg.step_size(),
                   momentum=0.0, diversity=True, kernel=None)


def tim(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig) -> AttackResult:
    """I-FGSM with the gradient smoothed by a translation kernel."""
    return _ascend(model, x, y, cfg, steps=cfg.iters, alpha=cfg.step_size(),
                   momentum=0.0, diversity=False, kernel=cfg.kernel.realize())


def tidim(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig) -> AttackResult:
    """Input diversity plus gradient smoothing."""
    return _ascend(model, x, y, cfg, steps=cfg.iters, alpha=cfg.step_size(),
                   momentum=0.0, diversity=True, kernel=cfg.kernel.realize())


def ilap_loss(f_ref: Tensor, f_x: Tensor, f_adv: Tensor) -> Tensor:
    """Negative projection of the adversarial feature shift onto the reference shift."""
    d_ref = (f_ref - f_x).flatten()
    d_adv = (f_adv - f_x).flatten()
    return -dot(d_ref, d_adv)


def ilaf_loss(f_ref: Tensor, f_x: Tensor, f_adv: Tensor, c: float) -> Tensor:
    """Norm-ratio term balanced against cosine alignment by the constant c."""
    d_ref = (f_ref - f_x).flatten()
    d_adv = (f_adv - f_x).flatten()
    norm_ref = l2_norm(d_ref)
    norm_adv = l2_norm(d_adv)
    if norm_ref.item() == 0.0:
        raise ValueError("ilaf_loss: reference feature shift has zero norm")
    if norm_adv.item() == 0.0:
        raise ValueError("ilaf_loss: adversarial feature shift has zero norm")
    ratio = norm_adv / norm_ref
    alignment = dot(d_adv / norm_adv, d_ref / norm_ref)
    return -(ratio * c) - alignment


def ila_attack(model: ModelParams, x: np.ndarray, y: int, x_ref: np.ndarray,
               cfg: AttackConfig) -> AttackResult:
    """Feature-space refinement seeded at a reference adversarial example.

    Starts from x_ref and descends the projection (ilap) or flexible (ilaf)
    loss at the configured layer, staying inside the eps-ball around x.
    """
    x = np.asarray(x, dtype=np.float64)
    alpha = cfg.step_size()
    _, f_x = forward_with_intermediate(model, x, cfg.layer)
    _, f_ref = forward_with_intermediate(model, x_ref, cfg.layer)
    f_x = Tensor(f_x.data)
    f_ref = Tensor(f_ref.data)
    x_adv = clip_ball(np.asarray(x_ref, dtype=np.float64), x, cfg.eps)
    trajectory = [x_adv.copy()] if cfg.record_trajectory else None
    loss_value = 0.0
    used = 0
    for _ in range(cfg.iters):
        leaf = Tensor(x_adv, requires_grad=True)
        _, f_adv = forward_with_intermediate(model, leaf, cfg.layer)
        if cfg.method == "ilap":
            loss = ilap_loss(f_ref, f_x, f_adv)
        else:
            loss = ilaf_loss(f_ref, f_x, f_adv, cfg.c)
        loss.backward()
        loss_value = loss.item()
        x_adv = clip_ball(x_adv - alpha * np.sign(leaf.grad), x, cfg.eps)
        used += 1
        if trajectory is not None:
            trajectory.append(x_adv.copy())
        if cfg.early_stop and predict(model, x_adv) != y:
            break
    return _finish(model, x, x_adv, y, used, loss_value, False, trajectory)


def run_attack(model: ModelParams, x: np.ndarray, y: int, cfg: AttackConfig,
               x_ref: Optional[np.ndarray] = None) -> AttackResult:
    """Dispatch a configured attack; generates the ILA reference when missing."""
    if cfg.method in ("ilap", "ilaf"):
        if x_ref is None:
            ref_cfg = AttackConfig(method="ifgsm", eps=cfg.eps, alpha=cfg.alpha,
                                   iters=cfg.iters, seed=cfg.seed)
            x_ref = ifgsm(model, x, y, ref_cfg).x_adv
        return ila_attack(model, x, y, x_ref, cfg)
    fn = {"fgsm": fgsm, "ifgsm": ifgsm, "mifgsm": mifgsm,
          "dim": dim, "tim": tim, "tidim": tidim}[cfg.method]
    return fn(model, x, y, cfg)
