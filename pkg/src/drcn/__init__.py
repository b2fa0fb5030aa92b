"""Recursive convolutional super-resolution toolkit."""

from .autodiff import (
    ConvLayer,
    GradCheckReport,
    GradTape,
    Tensor,
    add,
    backward,
    check_gradients,
    conv2d_same,
    mse_loss,
    relu,
    scale,
    sum_squares,
    weighted_sum,
)
from .checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, DimensionError, NumericalError, UsageError
from .image import (
    EvalPair,
    ImagePlane,
    bicubic_resize,
    crop_border,
    extract_patches,
    load_luminance,
    make_eval_pair,
    modulo_crop,
    to_luminance,
)
from .metrics import EvalReport, QualityScore, evaluate_dataset, psnr, ssim
from .model import (
    DrcnParams,
    ForwardResult,
    ModelConfig,
    config_of,
    embed,
    forward,
    init_params,
    parameter_counts,
    receptive_field,
    reconstruct,
    recurse,
)
from .training import (
    OptimizerState,
    TrainConfig,
    TrainReport,
    alpha_schedule,
    loss_l1,
    loss_l2,
    loss_total,
    lr_schedule,
    sgd_step,
    train,
)

__version__ = "0.1.0"
