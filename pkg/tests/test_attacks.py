import numpy as np
import pytest
from conftest import build_linear, build_tiny_conv, interior_image

from pdrkit.attacks import (
    AttackConfig,
    KernelSpec,
    clip_ball,
    dim,
    fgsm,
    ifgsm,
    ila_attack,
    ilaf_loss,
    ilap_loss,
    input_diversity,
    mifgsm,
    run_attack,
    smooth_gradient,
    tidim,
    tim,
)
from pdrkit.autograd import Tensor, finite_diff_check
from pdrkit.classifier import cross_entropy, forward, forward_with_intermediate, predict

RNG = np.random.default_rng(20240814)


def trajectories_equal(a, b):
    assert len(a.trajectory) == len(b.trajectory)
    for step_a, step_b in zip(a.trajectory, b.trajectory):
        np.testing.assert_array_equal(step_a, step_b)


# clip_ball

def test_clip_ball_noop_inside():
    x = interior_image(1)
    x_adv = x + RNG.uniform(-0.01, 0.01, size=x.shape)
    np.testing.assert_array_equal(clip_ball(x_adv, x, 0.05), x_adv)


def test_clip_ball_saturation():
    x = np.full((3, 4, 4), 0.5)
    out = clip_ball(np.ones_like(x), x, 0.1)
    np.testing.assert_allclose(out, 0.6, atol=1e-15)


def test_clip_ball_idempotent():
    for _ in range(10):
        x = RNG.uniform(size=(3, 5, 5))
        v = RNG.uniform(-1, 2, size=x.shape)
        once = clip_ball(v, x, 0.07)
        np.testing.assert_array_equal(clip_ball(once, x, 0.07), once)


def test_clip_ball_respects_unit_box():
    x = RNG.uniform(size=(3, 5, 5))
    out = clip_ball(RNG.uniform(-2, 3, size=x.shape), x, 0.9)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_clip_ball_shape_mismatch():
    with pytest.raises(ValueError, match="clip_ball"):
        clip_ball(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)), 0.1)


# fgsm

def test_fgsm_zero_strength():
    model = build_tiny_conv(1)
    x = interior_image(2)
    result = fgsm(model, x, 0, AttackConfig(method="fgsm", eps=0.0))
    np.testing.assert_array_equal(result.x_adv, x)


def test_fgsm_matches_closed_form_on_linear_model():
    model = build_linear(3)
    x = interior_image(3)
    w = model.weights["dense.weight"]
    # for a 2-class affine model and label 0 the input gradient of the loss
    # is p1 * (w1 - w0), so its sign is sign(w1 - w0)
    direction = np.sign(w[1] - w[0]).reshape(x.shape)
    eps = 8 / 255
    expected = clip_ball(x + eps * direction, x, eps)
    result = fgsm(model, x, 0, AttackConfig(method="fgsm", eps=eps))
    np.testing.assert_array_equal(result.x_adv, expected)


def test_fgsm_step_magnitude():
    model = build_linear(4)
    x = interior_image(4, lo=0.3, hi=0.7)
    eps = 4 / 255
    result = fgsm(model, x, 0, AttackConfig(method="fgsm", eps=eps))
    delta = np.abs(result.x_adv - x)
    w = model.weights["dense.weight"]
    live = (w[1] != w[0]).reshape(x.shape)
    np.testing.assert_allclose(delta[live], eps, atol=1e-15)


def test_fgsm_zero_gradient_degenerate():
    model = build_tiny_conv(5)
    for name in model.weights:
        model.weights[name] = np.zeros_like(model.weights[name])
    x = interior_image(5)
    result = fgsm(model, x, 0, AttackConfig(method="fgsm"))
    assert result.degenerate
    np.testing.assert_array_equal(result.x_adv, x)


# ifgsm

def test_ifgsm_single_step_equals_fgsm():
    model = build_tiny_conv(6)
    x = interior_image(6)
    eps = 16 / 255
    a = fgsm(model, x, 1, AttackConfig(method="fgsm", eps=eps, record_trajectory=True))
    b = ifgsm(model, x, 1, AttackConfig(method="ifgsm", eps=eps, alpha=eps, iters=1,
                                        record_trajectory=True))
    np.testing.assert_array_equal(a.x_adv, b.x_adv)
    trajectories_equal(a, b)


def test_ifgsm_iterates_stay_feasible():
    model = build_tiny_conv(7)
    x = RNG.uniform(size=(3, 12, 12))
    eps = 16 / 255
    result = ifgsm(model, x, 0, AttackConfig(eps=eps, iters=12, record_trajectory=True))
    for step in result.trajectory:
        assert np.abs(step - x).max() <= eps + 1e-9
        assert step.min() >= 0.0 and step.max() <= 1.0


def test_ifgsm_loss_monotone_on_linear_model():
    model = build_linear(8)
    x = interior_image(8)
    result = ifgsm(model, x, 0, AttackConfig(eps=0.1, iters=10, record_trajectory=True))
    losses = [cross_entropy(forward(model, step), 0).item() for step in result.trajectory]
    assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] > losses[0]


# mifgsm

def test_mifgsm_zero_momentum_reduces_to_ifgsm():
    model = build_tiny_conv(9)
    x = interior_image(9)
    cfg = dict(eps=16 / 255, iters=10, record_trajectory=True)
    a = ifgsm(model, x, 2, AttackConfig(method="ifgsm", **cfg))
    b = mifgsm(model, x, 2, AttackConfig(method="mifgsm", m=0.0, **cfg))
    trajectories_equal(a, b)


def test_mifgsm_unit_momentum_on_constant_field_reduces_to_ifgsm():
    # affine 2-class model: the gradient is always a positive multiple of
    # w1 - w0, so the accumulated velocity never changes sign
    model = build_linear(10)
    x = interior_image(10, lo=0.4, hi=0.6)
    cfg = dict(eps=0.05, iters=8, record_trajectory=True)
    a = ifgsm(model, x, 0, AttackConfig(method="ifgsm", **cfg))
    b = mifgsm(model, x, 0, AttackConfig(method="mifgsm", m=1.0, **cfg))
    trajectories_equal(a, b)


def test_mifgsm_matches_reference_recomputation():
    model = build_tiny_conv(11)
    x = interior_image(11)
    y, m, eps, iters = 1, 0.9, 16 / 255, 10
    cfg = AttackConfig(method="mifgsm", eps=eps, m=m, iters=iters)
    alpha = cfg.step_size()
    # straight-line reimplementation of the momentum recursion
    x_ref = x.copy()
    velocity = np.zeros_like(x)
    for _ in range(iters):
        leaf = Tensor(x_ref, requires_grad=True)
        cross_entropy(forward(model, leaf), y).backward()
        velocity = m * velocity + leaf.grad / np.abs(leaf.grad).sum()
        x_ref = np.minimum(np.maximum(x_ref + alpha * np.sign(velocity),
                                      np.maximum(x - eps, 0.0)),
                           np.minimum(x + eps, 1.0))
    result = mifgsm(model, x, y, cfg)
    np.testing.assert_allclose(result.x_adv, x_ref, atol=1e-12)


# input diversity

def test_input_diversity_probability_zero_is_identity():
    x = Tensor(interior_image(12))
    out = input_diversity(x, 0.0, np.random.default_rng(0))
    assert out is x


def test_input_diversity_deterministic_and_shape_preserving():
    x = interior_image(13)
    a = input_diversity(Tensor(x), 1.0, np.random.default_rng(5)).data
    b = input_diversity(Tensor(x), 1.0, np.random.default_rng(5)).data
    np.testing.assert_array_equal(a, b)
    assert a.shape == x.shape


def test_input_diversity_gradient():
    x = interior_image(14, size=10)

    def f(t):
        view = input_diversity(t, 1.0, np.random.default_rng(7))
        return (view * Tensor(np.random.default_rng(8).normal(size=x.shape))).sum()

    assert finite_diff_check(f, x) < 1e-6


def test_input_diversity_rejects_bad_p():
    with pytest.raises(ValueError, match="p must be"):
        input_diversity(Tensor(interior_image()), 1.5, np.random.default_rng(0))


# dim / tim / tidim

def test_dim_probability_zero_reduces_to_ifgsm():
    model = build_tiny_conv(15)
    x = interior_image(15)
    cfg = dict(eps=16 / 255, iters=10, seed=3, record_trajectory=True)
    a = ifgsm(model, x, 0, AttackConfig(method="ifgsm", **cfg))
    b = dim(model, x, 0, AttackConfig(method="dim", p=0.0, **cfg))
    trajectories_equal(a, b)


def test_dim_deterministic_and_success_on_untransformed():
    model = build_tiny_conv(16)
    x = interior_image(16)
    cfg = AttackConfig(method="dim", eps=16 / 255, iters=8, seed=11)
    a, b = dim(model, x, 0, cfg), dim(model, x, 0, cfg)
    np.testing.assert_array_equal(a.x_adv, b.x_adv)
    assert a.predicted == predict(model, a.x_adv)
    assert a.success == (a.predicted != 0)


def test_kernel_normalisation():
    for spec in [KernelSpec("gaussian", 7, 3.0), KernelSpec("delta", 5, 1.0),
                 KernelSpec("gaussian", 15, 3.0)]:
        assert abs(spec.realize().sum() - 1.0) < 1e-12


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelSpec("gaussian", 6, 3.0)
    with pytest.raises(ValueError):
        KernelSpec("box", 7, 3.0)
    with pytest.raises(ValueError):
        KernelSpec("gaussian", 7, 0.0)


def test_smoothing_preserves_interior_mass():
    g = np.zeros((3, 16, 16))
    g[:, 4:12, 4:12] = np.random.default_rng(2).normal(size=(3, 8, 8))
    smoothed = smooth_gradient(g, KernelSpec("gaussian", 7, 3.0).realize())
    assert abs(smoothed.sum() - g.sum()) < 1e-10


def test_tim_delta_kernel_reduces_to_ifgsm():
    model = build_tiny_conv(17)
    x = interior_image(17)
    cfg = dict(eps=16 / 255, iters=10, record_trajectory=True)
    a = ifgsm(model, x, 1, AttackConfig(method="ifgsm", **cfg))
    b = tim(model, x, 1, AttackConfig(method="tim", kernel=KernelSpec("delta", 7), **cfg))
    trajectories_equal(a, b)


def test_tidim_delta_and_p_zero_reduces_to_ifgsm():
    model = build_tiny_conv(18)
    x = interior_image(18)
    cfg = dict(eps=16 / 255, iters=10, seed=2, record_trajectory=True)
    a = ifgsm(model, x, 1, AttackConfig(method="ifgsm", **cfg))
    b = tidim(model, x, 1, AttackConfig(method="tidim", p=0.0,
                                        kernel=KernelSpec("delta", 7), **cfg))
    trajectories_equal(a, b)


# ila losses

def test_ilap_loss_cases():
    f_x = Tensor(np.zeros(4))
    f_ref = Tensor([1.0, 0.0, 0.0, 0.0])
    assert ilap_loss(f_ref, f_x, Tensor(np.zeros(4))).item() == 0.0
    assert ilap_loss(f_ref, f_x, f_ref).item() == -1.0  # -(norm of shift)^2
    orthogonal = Tensor([0.0, 2.0, 0.0, 0.0])
    assert ilap_loss(f_ref, f_x, orthogonal).item() == 0.0


def test_ilap_loss_general_value():
    f_x = Tensor(RNG.normal(size=6))
    f_ref = Tensor(RNG.normal(size=6))
    f_adv = Tensor(RNG.normal(size=6))
    expected = -np.dot(f_ref.data - f_x.data, f_adv.data - f_x.data)
    assert ilap_loss(f_ref, f_x, f_adv).item() == pytest.approx(expected, abs=1e-12)


def test_ilaf_loss_aligned_cases():
    f_x = Tensor(np.zeros(3))
    d = Tensor([0.0, 3.0, 4.0])
    for c in (1.0, 2.5):
        assert ilaf_loss(d, f_x, d, c).item() == pytest.approx(-c - 1.0, abs=1e-12)
        assert ilaf_loss(d, f_x, -d, c).item() == pytest.approx(-c + 1.0, abs=1e-12)


def test_ilaf_loss_matches_recomputation():
    f_x = Tensor(RNG.normal(size=5))
    f_ref = Tensor(RNG.normal(size=5))
    f_adv = Tensor(RNG.normal(size=5))
    c = 1.7
    d_ref = f_ref.data - f_x.data
    d_adv = f_adv.data - f_x.data
    expected = (-c * np.linalg.norm(d_adv) / np.linalg.norm(d_ref)
                - np.dot(d_adv / np.linalg.norm(d_adv), d_ref / np.linalg.norm(d_ref)))
    assert ilaf_loss(f_ref, f_x, f_adv, c).item() == pytest.approx(expected, abs=1e-12)


def test_ilaf_loss_zero_norm_errors():
    f_x = Tensor(np.zeros(3))
    d = Tensor([1.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="reference"):
        ilaf_loss(f_x, f_x, d, 1.0)
    with pytest.raises(ValueError, match="adversarial"):
        ilaf_loss(d, f_x, f_x, 1.0)


# ila attack

def test_ila_zero_iterations_returns_clipped_reference():
    model = build_tiny_conv(19)
    x = interior_image(19)
    x_ref = np.clip(x + 0.3, 0, 1)  # deliberately outside the ball
    cfg = AttackConfig(method="ilap", eps=0.05, iters=0)
    result = ila_attack(model, x, 0, x_ref, cfg)
    np.testing.assert_array_equal(result.x_adv, clip_ball(x_ref, x, 0.05))


def test_ilap_projection_improves_on_linear_features():
    model = build_linear(20, k=3)
    x = interior_image(20)
    ref_cfg = AttackConfig(method="ifgsm", eps=0.08, iters=5)
    x_ref = ifgsm(model, x, 0, ref_cfg).x_adv
    cfg = AttackConfig(method="ilap", eps=0.08, iters=10, layer="dense",
                       record_trajectory=True)
    result = ila_attack(model, x, 0, x_ref, cfg)

    def projection(x_adv):
        _, f_x = forward_with_intermediate(model, x, "dense")
        _, f_ref = forward_with_intermediate(model, x_ref, "dense")
        _, f_adv = forward_with_intermediate(model, x_adv, "dense")
        return np.dot(f_ref.data - f_x.data, f_adv.data - f_x.data)

    values = [projection(step) for step in result.trajectory]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] > values[0]


def test_ila_respects_ball_around_original():
    model = build_tiny_conv(21)
    x = interior_image(21)
    x_ref = np.clip(x + 0.2, 0, 1)
    cfg = AttackConfig(method="ilaf", eps=0.05, iters=6)
    result = ila_attack(model, x, 0, x_ref, cfg)
    assert np.abs(result.x_adv - x).max() <= 0.05 + 1e-9


# dispatch plus universal invariants

def test_run_attack_generates_ila_reference():
    model = build_tiny_conv(22)
    x = interior_image(22)
    cfg = AttackConfig(method="ilap", eps=16 / 255, iters=6)
    auto = run_attack(model, x, 0, cfg)
    ref = ifgsm(model, x, 0, AttackConfig(method="ifgsm", eps=cfg.eps, iters=6))
    explicit = ila_attack(model, x, 0, ref.x_adv, cfg)
    np.testing.assert_array_equal(auto.x_adv, explicit.x_adv)


def test_config_validation():
    with pytest.raises(ValueError, match="unknown method"):
        AttackConfig(method="pgd")
    with pytest.raises(ValueError):
        AttackConfig(eps=-0.1)
    with pytest.raises(ValueError):
        AttackConfig(p=1.2)
    with pytest.raises(ValueError):
        AttackConfig(m=-0.5)
    with pytest.raises(ValueError):
        AttackConfig(iters=-1)
    with pytest.raises(ValueError):
        AttackConfig(alpha=0.0)


@pytest.mark.parametrize("method", ["fgsm", "ifgsm", "mifgsm", "dim", "tim",
                                    "tidim", "ilap", "ilaf"])
def test_universal_invariants_and_determinism(method):
    model = build_tiny_conv(23)
    eps = 16 / 255
    cfg = AttackConfig(method=method, eps=eps, iters=6, seed=5)
    for seed in (31, 32):
        x = np.clip(interior_image(seed, lo=0.0, hi=1.0), 0, 1)
        a = run_attack(model, x, 0, cfg)
        b = run_attack(model, x, 0, cfg)
        np.testing.assert_array_equal(a.x_adv, b.x_adv)
        assert a.linf_vs_original <= eps + 1e-9
        assert np.abs(a.x_adv - x).max() <= eps + 1e-9
        assert a.x_adv.min() >= 0.0 and a.x_adv.max() <= 1.0
        assert a.success == (a.predicted != 0)
        assert a.iterations_used >= 1
