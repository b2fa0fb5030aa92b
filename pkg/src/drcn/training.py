"""The training loop: composite loss, SGD with momentum, schedules,
patch-batch sampling, validation-driven termination, and checkpointing.

Everything downstream of the seed is deterministic: dataset split, weight
init, patch shuffles, and therefore checkpoints and the epoch log.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import GradTape, Tensor, add, backward, mse_loss, scale, sum_squares
from .checkpoint import save_checkpoint, write_atomic
from .errors import ConfigError, DataError, NumericalError
from .image import (
    EvalPair,
    ImagePlane,
    crop_border,
    extract_patches,
    list_image_files,
    load_luminance,
    make_eval_pair,
)
from .metrics import psnr
from .model import DrcnParams, ModelConfig, forward, init_params, receptive_field


@dataclass
class TrainConfig:
    train_dir: str
    val_dir: str | None = None
    recursions: int = 16
    filters: int = 256
    scale: int = 2
    lr_init: float = 0.01
    lr_drop_factor: float = 10.0
    lr_patience_epochs: int = 5
    lr_floor: float = 1e-6
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch_size: int = 64
    patch_size: int = 41
    patch_stride: int = 21
    alpha_init: float = 1.0
    alpha_decay_per_epoch: float = 0.9
    seed: int = 0
    max_epochs: int | None = None
    val_fraction: float = 0.1

    def validate(self) -> None:
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        for name in ("lr_init", "lr_drop_factor", "lr_floor", "batch_size", "patch_size", "patch_stride"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.recursions < 1 or self.filters < 1:
            raise ConfigError("recursions and filters must be >= 1")
        if self.lr_patience_epochs < 1:
            raise ConfigError(f"lr_patience_epochs must be >= 1, got {self.lr_patience_epochs}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.alpha_init <= 1.0:
            raise ConfigError(f"alpha_init must be in [0, 1], got {self.alpha_init}")
        if not 0.0 <= self.alpha_decay_per_epoch <= 1.0:
            raise ConfigError(f"alpha_decay_per_epoch must be in [0, 1], got {self.alpha_decay_per_epoch}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patch_size < receptive_field(self.recursions):
            warnings.warn(
                f"patch size {self.patch_size} is below the receptive field "
                f"{receptive_field(self.recursions)} of a {self.recursions}-recursion model",
                stacklevel=2,
            )

    def model_config(self) -> ModelConfig:
        return ModelConfig(recursions=self.recursions, filters=self.filters)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        """Load a config whose keys are exactly the TrainConfig field names."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"config {path} has unknown keys: {', '.join(unknown)}")
        if "train_dir" not in raw:
            raise ConfigError(f"config {path} is missing required key train_dir")
        try:
            config = cls(**raw)
            config.validate()
        except TypeError as exc:
            raise ConfigError(f"config {path} is invalid: {exc}") from exc
        return config


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    lr: float
    alpha: float
    epochs_since_improvement: int = 0
    best_val_loss: float = math.inf

    @classmethod
    def create(cls, params: DrcnParams, lr: float, alpha: float) -> "OptimizerState":
        velocity = {name: np.zeros_like(t.data) for name, t in params.named_tensors().items()}
        return cls(velocity=velocity, lr=lr, alpha=alpha)


@dataclass
class EpochRecord:
    epoch: int
    loss_l1: float
    loss_l2: float
    loss_total: float
    val_loss: float
    val_psnr: float
    lr: float
    alpha: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "loss_l1": self.loss_l1,
                "loss_l2": self.loss_l2,
                "loss_total": self.loss_total,
                "val_loss": self.val_loss,
                "val_psnr": self.val_psnr,
                "lr": self.lr,
                "alpha": self.alpha,
            }
        )


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    termination_reason: str = ""


def loss_l1(predictions: Sequence[Tensor], target: Tensor, n: int) -> Tensor:
    """Per-recursion supervision: every prediction scored against the
    target, each term weighted by 1/(2 D N)."""
    d = len(predictions)
    if d < 1:
        raise ValueError("loss_l1 needs at least one prediction")
    total = mse_loss(predictions[0], target, divisor=float(d * n))
    for pred in predictions[1:]:
        total = add(total, mse_loss(pred, target, divisor=float(d * n)))
    return total


def loss_l2(final: Tensor, target: Tensor, n: int) -> Tensor:
    """Ensemble supervision: the combined output scored with weight 1/(2N)."""
    return mse_loss(final, target, divisor=float(n))


def loss_total(l1: Tensor, l2: Tensor, params: DrcnParams, alpha: float, beta: float) -> Tensor:
    """alpha*l1 + (1-alpha)*l2 + beta*||w||^2 over convolution weights.

    Biases and ensemble weights are excluded from the decay term.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if beta < 0.0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    data_term = add(scale(l1, alpha), scale(l2, 1.0 - alpha))
    weights = params.conv_weight_tensors()
    decay = sum_squares(weights[0])
    for w in weights[1:]:
        decay = add(decay, sum_squares(w))
    return add(data_term, scale(decay, beta))


def sgd_step(
    params: DrcnParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    momentum: float = 0.9,
) -> None:
    """v <- momentum*v - lr*g; theta <- theta + v, in place.

    Weight decay is not applied here; it enters through the loss gradient.
    """
    for name, tensor in params.named_tensors().items():
        g = grads.get(name)
        if g is None:
            continue
        v = state.velocity[name]
        np.multiply(v, momentum, out=v)
        v -= (state.lr * g).astype(v.dtype, copy=False)
        tensor.data += v


def alpha_schedule(epoch: int, config: TrainConfig) -> float:
    """Geometric decay of the per-recursion loss weight, clamped to [0, 1]."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return min(1.0, max(0.0, config.alpha_init * config.alpha_decay_per_epoch**epoch))


def lr_schedule(state: OptimizerState, val_loss: float, config: TrainConfig) -> bool:
    """Patience-based decay; returns True when training should terminate.

    An improvement resets the patience counter; ``lr_patience_epochs``
    stagnant epochs divide the rate by ``lr_drop_factor``; a rate below
    ``lr_floor`` terminates.
    """
    if val_loss < state.best_val_loss:
        state.best_val_loss = val_loss
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
        if state.epochs_since_improvement >= config.lr_patience_epochs:
            state.lr /= config.lr_drop_factor
            state.epochs_since_improvement = 0
    return state.lr < config.lr_floor


def _load_pairs(files: Sequence[Path], scale: int) -> list[EvalPair]:
    pairs = []
    for path in files:
        try:
            pairs.append(make_eval_pair(load_luminance(path), scale))
        except DataError as exc:
            warnings.warn(f"skipping {path.name}: {exc}", stacklevel=2)
    return pairs


def _patch_arrays(pairs: Sequence[EvalPair], size: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    inputs, targets = [], []
    for pair in pairs:
        for patch_in, patch_hr in extract_patches(pair.input, pair.ground_truth, size, stride):
            inputs.append(patch_in)
            targets.append(patch_hr)
    if not inputs:
        raise DataError("no training patches: every image is smaller than the patch size")
    x = np.stack(inputs)[:, None].astype(np.float32)
    y = np.stack(targets)[:, None].astype(np.float32)
    return x, y


def _validate(
    params: DrcnParams,
    val_pairs: Sequence[EvalPair],
    alpha: float,
    config: TrainConfig,
) -> tuple[float, float]:
    """Mean composite loss and mean PSNR over the validation images."""
    model_config = config.model_config()
    d = config.recursions
    n = len(val_pairs)
    sum_l1 = 0.0
    sum_l2 = 0.0
    psnrs = []
    for pair in val_pairs:
        x = Tensor(pair.input.data[None, None].astype(np.float32))
        y = pair.ground_truth.data[None, None]
        result = forward(x, params, model_config)
        for pred in result.predictions:
            diff = pred.data.astype(np.float64) - y
            sum_l1 += 0.5 * float(np.vdot(diff, diff)) / (d * n)
        diff = result.final.data.astype(np.float64) - y
        sum_l2 += 0.5 * float(np.vdot(diff, diff)) / n
        predicted = crop_border(ImagePlane(result.final.data[0, 0].astype(np.float64)), config.scale)
        truth = crop_border(ImagePlane(y[0, 0]), config.scale)
        psnrs.append(psnr(truth, predicted))
    decay = sum(float(np.vdot(w.data, w.data)) for w in params.conv_weight_tensors())
    val_loss = alpha * sum_l1 + (1.0 - alpha) * sum_l2 + config.weight_decay * decay
    finite = [p for p in psnrs if math.isfinite(p)]
    val_psnr = sum(finite) / len(finite) if finite else math.inf
    return val_loss, val_psnr


def train(
    config: TrainConfig,
    out_dir: str | Path | None = None,
    initial_params: DrcnParams | None = None,
    echo: Callable[[str], None] | None = None,
) -> tuple[DrcnParams, TrainReport]:
    """Run the full procedure and return the trained parameters.

    With ``out_dir`` set, improvements and the terminal epoch write
    ``epoch_<n>.drcn`` plus ``best.drcn``, and every epoch appends one JSON
    record to ``train_log.jsonl``.  Identical configs and seeds reproduce
    these files byte for byte.
    """
    config.validate()
    say = echo if echo is not None else lambda _msg: None
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    train_files = list_image_files(config.train_dir)
    if not train_files:
        raise DataError(f"no PNG/BMP images found in training directory {config.train_dir}")
    if config.val_dir is not None:
        val_files = list_image_files(config.val_dir)
        if not val_files:
            raise DataError(f"no PNG/BMP images found in validation directory {config.val_dir}")
    elif len(train_files) == 1:
        warnings.warn("single training image: validating on the training image", stacklevel=2)
        val_files = list(train_files)
    else:
        holdout = max(1, round(config.val_fraction * len(train_files)))
        holdout = min(holdout, len(train_files) - 1)
        val_files = train_files[-holdout:]
        train_files = train_files[:-holdout]

    train_pairs = _load_pairs(train_files, config.scale)
    val_pairs = _load_pairs(val_files, config.scale)
    if not train_pairs or not val_pairs:
        raise DataError("no usable images after degradation (all too small or unreadable)")
    x_all, y_all = _patch_arrays(train_pairs, config.patch_size, config.patch_stride)
    say(f"{len(train_pairs)} training images -> {len(x_all)} patches; {len(val_pairs)} validation images")

    params = initial_params if initial_params is not None else init_params(config.model_config(), config.seed)
    model_config = config.model_config()
    state = OptimizerState.create(params, config.lr_init, config.alpha_init)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    log_lines: list[str] = []

    def emit_checkpoint(name: str) -> None:
        if out_path is not None:
            save_checkpoint(out_path / name, params, config.scale)

    def flush_log() -> None:
        if out_path is not None:
            write_atomic(out_path / "train_log.jsonl", ("".join(log_lines)).encode("utf-8"))

    epoch = 0
    termination = ""
    n_patches = len(x_all)
    while True:
        alpha = alpha_schedule(epoch, config)
        state.alpha = alpha
        lr_this_epoch = state.lr
        order = rng.permutation(n_patches)
        sums = np.zeros(3)
        for start in range(0, n_patches, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = Tensor(x_all[idx])
            y = Tensor(y_all[idx])
            with GradTape() as tape:
                result = forward(x, params, model_config)
                l1 = loss_l1(result.predictions, y, len(idx))
                l2 = loss_l2(result.final, y, len(idx))
                total = loss_total(l1, l2, params, alpha, config.weight_decay)
            values = (float(l1.data), float(l2.data), float(total.data))
            if not all(math.isfinite(v) for v in values):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} (l1={values[0]}, l2={values[1]}, total={values[2]})"
                )
            backward(total, tape)
            grads = {name: t.grad for name, t in params.named_tensors().items() if t.grad is not None}
            sgd_step(params, grads, state, config.momentum)
            sums += np.array(values) * len(idx)
        mean_l1, mean_l2, mean_total = sums / n_patches

        val_loss, val_psnr = _validate(params, val_pairs, alpha, config)
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        improved = val_loss < state.best_val_loss
        terminate = lr_schedule(state, val_loss, config)

        record = EpochRecord(
            epoch=epoch,
            loss_l1=mean_l1,
            loss_l2=mean_l2,
            loss_total=mean_total,
            val_loss=val_loss,
            val_psnr=val_psnr,
            lr=lr_this_epoch,
            alpha=alpha,
        )
        report.epochs.append(record)
        log_lines.append(record.to_json() + "\n")
        flush_log()
        say(
            f"epoch {epoch}: L={mean_total:.6f} val_loss={val_loss:.6f} "
            f"val_psnr={val_psnr:.2f} lr={lr_this_epoch:g} alpha={alpha:.4f}"
        )
        if improved:
            emit_checkpoint(f"epoch_{epoch}.drcn")
            emit_checkpoint("best.drcn")
        if terminate:
            termination = "lr_floor"
        elif config.max_epochs is not None and epoch + 1 >= config.max_epochs:
            termination = "max_epochs"
        if termination:
            emit_checkpoint(f"epoch_{epoch}.drcn")
            if out_path is not None and not (out_path / "best.drcn").exists():
                emit_checkpoint("best.drcn")
            break
        epoch += 1

    report.termination_reason = termination
    say(f"training finished: {termination} after {len(report.epochs)} epochs")
    return params, report
