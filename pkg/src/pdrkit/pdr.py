"""Perceptual-distortion-reduction attack loop.

The attack maximizes a joint objective: a misclassification term wrapped
from one of the baseline attacks plus an adaptively weighted perceptual
term, ``L_mis + lambda_k * (ssim(x_adv, x) - T)``. An optimizer (Adam by
default) ascends it, the penalty factor follows its own gradient with a
non-negativity clamp, and every iterate is projected back into the
epsilon-ball. The loop stops once the sample is misclassified while the
similarity threshold is met, or at the iteration cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .attacks import (
    AttackConfig,
    AttackResult,
    KernelSpec,
    clip_ball,
    ifgsm,
    ilaf_loss,
    ilap_loss,
    input_diversity,
    smooth_gradient,
)
from .autograd import Tensor
from .classifier import (
    DEFAULT_ILA_LAYER,
    ModelParams,
    cross_entropy,
    forward,
    forward_with_intermediate,
)
from .ssim import ssim

MIS_CHOICES = ("ce", "ensemble-ce", "dim-ce", "tidim-ce", "ilap", "ilaf")
LAMBDA_MODES = ("adaptive", "constant", "off")
OPTIMIZERS = ("adam", "momentum-sgd")


@dataclass
class AdamConfig:
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_a: float = 1e-8

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"adam alpha must be positive, got {self.alpha}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.eps_a <= 0:
            raise ValueError(f"adam eps_a must be positive, got {self.eps_a}")


@dataclass
class PdrConfig:
    # penalty defaults are calibrated to the bundled desk-scale classifier,
    # whose cross-entropy gradients are far smaller than ImageNet-scale ones
    lambda0: float = 2.0
    lr_lambda: float = 50.0
    t: float = 0.92                  # perceptual threshold
    adam: AdamConfig = field(default_factory=AdamConfig)
    max_iters: int = 150
    eps: float = 16 / 255            # outer L-inf safeguard; math.inf disables it
    mis: str = "ce"
    lambda_mode: str = "adaptive"
    optimizer: str = "adam"
    sgd_lr: float = 0.01
    sgd_momentum: float = 0.9
    p: float = 0.5                   # view probability for dim-ce / tidim-ce
    kernel: KernelSpec = field(default_factory=KernelSpec)
    c: float = 1.0                   # ilaf balance constant
    layer: str = DEFAULT_ILA_LAYER
    seed: int = 0
    success_only: bool = False       # terminate on misclassification alone
    record_trajectory: bool = False

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError(f"lambda0 must be >= 0, got {self.lambda0}")
        if self.lr_lambda < 0:
            raise ValueError(f"lr_lambda must be >= 0, got {self.lr_lambda}")
        if not 0 < self.t <= 1:
            raise ValueError(f"threshold t must be in (0, 1], got {self.t}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive (math.inf allowed), got {self.eps}")
        if self.mis not in MIS_CHOICES:
            raise ValueError(f"unknown mis objective {self.mis!r}; choose from {MIS_CHOICES}")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.sgd_lr <= 0 or self.sgd_momentum < 0:
            raise ValueError("sgd_lr must be positive and sgd_momentum >= 0")
        if not 0 <= self.p <= 1:
            raise ValueError(f"p must be in [0, 1], got {self.p}")


@dataclass
class PdrIteration:
    k: int
    l_mis: float
    l_pd: float
    lam: float
    predicted: int


@dataclass
class PdrTrace:
    iterations: List[PdrIteration] = field(default_factory=list)

    def lambdas(self) -> List[float]:
        return [record.lam for record in self.iterations]


class Adam:
    """Bias-corrected Adam, minimization convention."""

    def __init__(self, shape: Tuple[int, ...], cfg: Optional[AdamConfig] = None):
        self.cfg = cfg or AdamConfig()
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.k = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if grad.shape != x.shape:
            raise ValueError(f"adam: gradient shape {grad.shape} != x shape {x.shape}")
        c = self.cfg
        self.k += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        m_hat = self.m / (1 - c.beta1 ** self.k)
        v_hat = self.v / (1 - c.beta2 ** self.k)
        return x - c.alpha * m_hat / (np.sqrt(v_hat) + c.eps_a)


class MomentumSgd:
    """Heavy-ball gradient descent: v <- momentum*v + g; x <- x - lr*v."""

    def __init__(self, shape: Tuple[int, ...], lr: float = 0.01, momentum: float = 0.9):
        if lr <= 0 or momentum < 0:
            raise ValueError("lr must be positive and momentum >= 0")
        self.lr = lr
        self.momentum = momentum
        self.v = np.zeros(shape)

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if grad.shape != x.shape:
            raise ValueError(f"momentum-sgd: gradient shape {grad.shape} != x shape {x.shape}")
        self.v = self.momentum * self.v + grad
        return x - self.lr * self.v


def lambda_update(lam: float, l_pd: float, t: float, lr_lambda: float) -> float:
    """One gradient step on the penalty factor, clamped at zero.

    The factor's partial derivative of the joint objective is ``l_pd - t``,
    so the factor grows while similarity is below threshold and shrinks
    (never below 0) once similarity exceeds it.
    """
    return max(0.0, lam - lr_lambda * (l_pd - t))


MisFn = Callable[[Tensor], Tuple[Tensor, Optional[int]]]


def _build_mis(model: ModelParams, x: np.ndarray, y: int, cfg: PdrConfig,
               models: Optional[Sequence[ModelParams]],
               x_ref: Optional[np.ndarray],
               rng: np.random.Generator) -> Tuple[MisFn, np.ndarray]:
    """Misclassification objective (maximization convention) plus the start iterate.

    Returns a closure mapping the current iterate to (objective value,
    predicted class when the pass already yields untransformed logits).
    """
    start = np.asarray(x, dtype=np.float64).copy()

    if cfg.mis == "ce":
        def fn(leaf: Tensor):
            logits = forward(model, leaf)
            return cross_entropy(logits, y), int(np.argmax(logits.data))
        return fn, start

    if cfg.mis == "ensemble-ce":
        ensemble = list(models) if models else [model]

        def fn(leaf: Tensor):
            predicted = None
            total = None
            for member in ensemble:
                logits = forward(member, leaf)
                if member is ensemble[0]:
                    predicted = int(np.argmax(logits.data))
                loss = cross_entropy(logits, y)
                total = loss if total is None else total + loss
            return total / float(len(ensemble)), predicted
        return fn, start

    if cfg.mis in ("dim-ce", "tidim-ce"):
        def fn(leaf: Tensor):
            view = input_diversity(leaf, cfg.p, rng)
            logits = forward(model, view)
            predicted = int(np.argmax(logits.data)) if view is leaf else None
            return cross_entropy(logits, y), predicted
        return fn, start

    # feature-space objectives seed the loop at the reference example, since
    # the flexible loss is undefined when the adversarial feature shift is zero
    if x_ref is None:
        ref_cfg = AttackConfig(method="ifgsm", eps=cfg.eps if math.isfinite(cfg.eps) else 16 / 255,
                               seed=cfg.seed)
        x_ref = ifgsm(model, x, y, ref_cfg).x_adv
    _, f_x = forward_with_intermediate(model, x, cfg.layer)
    _, f_ref = forward_with_intermediate(model, x_ref, cfg.layer)
    f_x = Tensor(f_x.data)
    f_ref = Tensor(f_ref.data)
    start = clip_ball(np.asarray(x_ref, dtype=np.float64), start, cfg.eps)

    if cfg.mis == "ilap":
        def fn(leaf: Tensor):
            logits, f_adv = forward_with_intermediate(model, leaf, cfg.layer)
            return -ilap_loss(f_ref, f_x, f_adv), int(np.argmax(logits.data))
        return fn, start

    def fn(leaf: Tensor):
        logits, f_adv = forward_with_intermediate(model, leaf, cfg.layer)
        return -ilaf_loss(f_ref, f_x, f_adv, cfg.c), int(np.argmax(logits.data))
    return fn, start


def l_total(x_adv, x, y: int, model: ModelParams, lam: float, t: float,
            mis: str = "ce", cfg: Optional[PdrConfig] = None,
            models: Optional[Sequence[ModelParams]] = None,
            x_ref: Optional[np.ndarray] = None) -> Tensor:
    """Joint objective ``L_mis + lam * (ssim(x_adv, x) - t)``, maximization convention.

    Differentiable with respect to x_adv; with ``lam == 0`` the perceptual
    term is skipped entirely and the value equals the misclassification
    objective exactly.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if not 0 < t <= 1:
        raise ValueError(f"t must be in (0, 1], got {t}")
    cfg = cfg or PdrConfig(t=t, mis=mis)
    x = np.asarray(x, dtype=np.float64)
    leaf = x_adv if isinstance(x_adv, Tensor) else Tensor(x_adv)
    fn, _ = _build_mis(model, x, y, cfg, models, x_ref,
                       np.random.default_rng(cfg.seed))
    value, _ = fn(leaf)
    if lam != 0.0:
        value = value + (ssim(leaf, Tensor(x)).mean - t) * lam
    return value


def penalty_objective(x_adv, x, y: int, model: ModelParams, lam: float,
                      t: float) -> Tensor:
    """Exact-penalty reading, minimization convention.

    ``-L_mis + lam * max(t - ssim, 0)``; the hinge is inactive (and its
    subgradient zero) whenever similarity meets the threshold.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    leaf = x_adv if isinstance(x_adv, Tensor) else Tensor(x_adv)
    mis = cross_entropy(forward(model, leaf), y)
    hinge = ((ssim(leaf, Tensor(x)).mean - t) * -1.0).relu()
    return -mis + hinge * lam


def pdr_attack(model: ModelParams, x: np.ndarray, y: int, cfg: Optional[PdrConfig] = None,
               models: Optional[Sequence[ModelParams]] = None,
               x_ref: Optional[np.ndarray] = None) -> Tuple[AttackResult, PdrTrace]:
    """Run the joint-objective attack loop.

    Per iteration: evaluate the misclassification and perceptual terms at
    the current iterate, stop if the termination condition already holds,
    otherwise take one optimizer step on the combined gradient, update the
    penalty factor (adaptive mode only), and project back into the feasible
    box. The trace records every evaluated iteration.
    """
    cfg = cfg or PdrConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("pdr_attack: x must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    mis_fn, x_adv = _build_mis(model, x, y, cfg, models, x_ref, rng)
    lam = 0.0 if cfg.lambda_mode == "off" else cfg.lambda0
    if cfg.optimizer == "adam":
        stepper = Adam(x.shape, cfg.adam)
    else:
        stepper = MomentumSgd(x.shape, cfg.sgd_lr, cfg.sgd_momentum)
    smooth_mis = cfg.mis == "tidim-ce"
    kernel = cfg.kernel.realize() if smooth_mis else None

    trace = PdrTrace()
    trajectory = [x_adv.copy()] if cfg.record_trajectory else None
    steps = 0
    terminated = False
    l_mis_value = 0.0
    l_pd_value = 0.0
    predicted = -1

    for k in range(cfg.max_iters):
        leaf = Tensor(x_adv, requires_grad=True)
        mis_loss, predicted = mis_fn(leaf)
        mis_loss.backward()
        g_mis = leaf.grad
        l_mis_value = mis_loss.item()
        if predicted is None:
            predicted = int(np.argmax(forward(model, x_adv).data))

        pd_leaf = Tensor(x_adv, requires_grad=lam > 0.0)
        pd_mean = ssim(pd_leaf, Tensor(x)).mean
        l_pd_value = pd_mean.item()

        trace.iterations.append(PdrIteration(k, l_mis_value, l_pd_value, lam, predicted))
        if predicted != y and (cfg.success_only or l_pd_value >= cfg.t):
            terminated = True
            break

        if smooth_mis:
            g_mis = smooth_gradient(g_mis, kernel)
        gradient = -g_mis
        if lam > 0.0:
            pd_mean.backward()
            gradient = gradient - lam * pd_leaf.grad

        x_adv = clip_ball(stepper.step(x_adv, gradient), x, cfg.eps)
        if cfg.lambda_mode == "adaptive":
            lam = lambda_update(lam, l_pd_value, cfg.t, cfg.lr_lambda)
        steps += 1
        if trajectory is not None:
            trajectory.append(x_adv.copy())

    if not terminated:
        # the loop exhausted its budget after stepping; score the final iterate
        final_leaf = Tensor(x_adv)
        mis_loss, predicted = mis_fn(final_leaf)
        l_mis_value = mis_loss.item()
        if predicted is None:
            predicted = int(np.argmax(forward(model, x_adv).data))
        l_pd_value = ssim(x_adv, x).mean.item()

    total = l_mis_value + lam * (l_pd_value - cfg.t)
    result = AttackResult(
        x_adv=x_adv,
        predicted=predicted,
        success=predicted != y,
        iterations_used=steps,
        final_loss=total,
        ssim_vs_original=l_pd_value,
        linf_vs_original=float(np.abs(x_adv - x).max()),
        degenerate=False,
        trajectory=trajectory,
    )
    return result, trace


def constant_lambda_attack(model: ModelParams, x: np.ndarray, y: int,
                           cfg: PdrConfig) -> Tuple[AttackResult, PdrTrace]:
    """Ablation variant: the penalty factor stays at lambda0 for the whole run."""
    if cfg.lambda_mode != "constant":
        raise ValueError("constant_lambda_attack requires lambda_mode='constant'")
    return pdr_attack(model, x, y, cfg)
