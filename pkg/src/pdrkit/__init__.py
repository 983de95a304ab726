"""Adversarial example generation with a perceptual penalty.

The package trains a small CNN on a synthetic image dataset, attacks it
with the classic iterative gradient methods, and wraps those attacks in
a joint objective that trades attack strength against structural
similarity under an adaptively weighted penalty.
"""

from .attacks import (
    METHODS,
    AttackConfig,
    AttackResult,
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
from .autograd import NonDifferentiableError, Tensor, finite_diff_check
from .classifier import (
    DEFAULT_ILA_LAYER,
    LayerSpec,
    ModelParams,
    TrainConfig,
    accuracy,
    cross_entropy,
    default_layers,
    ensemble_loss,
    forward,
    forward_with_intermediate,
    init_params,
    load_model,
    predict,
    save_model,
    train,
)
from .dataset import Dataset, DatasetSpec, gen_dataset, load_dataset, save_dataset
from .harness import (
    CurvePoint,
    ParetoComparison,
    SampleRecord,
    SweepReport,
    asr,
    emit_csv,
    pareto_compare,
    read_curve_csv,
    read_records_csv,
    sweep,
)
from .pdr import (
    Adam,
    AdamConfig,
    MomentumSgd,
    PdrConfig,
    PdrTrace,
    constant_lambda_attack,
    l_total,
    lambda_update,
    pdr_attack,
    penalty_objective,
)
from .ssim import SsimConfig, SsimResult, gaussian_window, ssim, ssim_gradient

__version__ = "0.1.0"
