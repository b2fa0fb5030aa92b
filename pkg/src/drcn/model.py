"""The recursive super-resolution network.

Two embedding convolutions lift the interpolated input into feature space,
one shared 3x3 convolution is applied recursively, and a shared two-layer
reconstruction head turns every recursion's features into a full-size
prediction.  Each prediction adds the input back (skip-connection), so the
head learns a residual.  The final output is a learned weighted sum of all
per-recursion predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .autodiff import ConvLayer, Tensor, add, conv2d_same, relu, weighted_sum
from .errors import DimensionError

KERNEL = 3


@dataclass(frozen=True)
class ModelConfig:
    recursions: int = 16
    filters: int = 256
    in_channels: int = 1
    out_channels: int = 1
    precision: str = "float32"

    def __post_init__(self):
        if self.recursions < 1:
            raise ValueError(f"recursions must be >= 1, got {self.recursions}")
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)


@dataclass
class DrcnParams:
    """Full parameter set: four private conv layers, one shared recursive
    layer reused for every recursion, and the ensemble weight vector."""

    embed1: ConvLayer
    embed2: ConvLayer
    recursive: ConvLayer
    recon1: ConvLayer
    recon2: ConvLayer
    ensemble_w: Tensor

    @property
    def recursions(self) -> int:
        return self.ensemble_w.shape[0]

    def named_tensors(self) -> dict[str, Tensor]:
        """Parameters in fixed declaration order (also the checkpoint order)."""
        out: dict[str, Tensor] = {}
        for name in ("embed1", "embed2", "recursive", "recon1", "recon2"):
            layer: ConvLayer = getattr(self, name)
            out[f"{name}.weights"] = layer.weights
            out[f"{name}.bias"] = layer.bias
        out["ensemble_w"] = self.ensemble_w
        return out

    def conv_weight_tensors(self) -> list[Tensor]:
        """The weight-decay set: convolution weights only, no biases."""
        return [
            self.embed1.weights,
            self.embed2.weights,
            self.recursive.weights,
            self.recon1.weights,
            self.recon2.weights,
        ]


@dataclass
class ForwardResult:
    predictions: list[Tensor]
    final: Tensor
    hidden_states: list[Tensor] | None = None


def config_of(params: DrcnParams, precision: str | None = None) -> ModelConfig:
    """Reconstruct the architecture hyperparameters from a parameter set."""
    if precision is None:
        precision = params.embed1.weights.dtype.name
    return ModelConfig(
        recursions=params.recursions,
        filters=params.recursive.out_channels,
        in_channels=params.embed1.in_channels,
        out_channels=params.recon2.out_channels,
        precision=precision,
    )


def init_params(config: ModelConfig, seed: int) -> DrcnParams:
    """Fresh parameters for a given architecture.

    Non-recursive conv weights draw from Normal(0, sqrt(2 / fan_in)), the
    usual scheme for ReLU layers; all biases start at zero.  The recursive
    layer starts as an exact identity: zero everywhere except a 1.0 center
    tap on each channel-diagonal position, so that repeated application is
    a fixed point until training moves it.  Ensemble weights start uniform
    at 1/D so the initial final output is the plain average.
    """
    rng = np.random.default_rng(seed)
    dt = config.dtype
    f = config.filters

    def he_layer(c_in: int, c_out: int) -> ConvLayer:
        std = math.sqrt(2.0 / (KERNEL * KERNEL * c_in))
        w = rng.normal(0.0, std, size=(c_out, c_in, KERNEL, KERNEL)).astype(dt)
        return ConvLayer(
            Tensor(w, requires_grad=True),
            Tensor(np.zeros(c_out, dtype=dt), requires_grad=True),
        )

    # Draw order is fixed (embed1, embed2, recon1, recon2) so a seed pins
    # every weight bit-exactly.
    embed1 = he_layer(config.in_channels, f)
    embed2 = he_layer(f, f)
    recon1 = he_layer(f, f)
    recon2 = he_layer(f, config.out_channels)

    rec_w = np.zeros((f, f, KERNEL, KERNEL), dtype=dt)
    center = KERNEL // 2
    for c in range(f):
        rec_w[c, c, center, center] = 1.0
    recursive = ConvLayer(
        Tensor(rec_w, requires_grad=True),
        Tensor(np.zeros(f, dtype=dt), requires_grad=True),
    )

    ensemble = Tensor(
        np.full(config.recursions, 1.0 / config.recursions, dtype=dt), requires_grad=True
    )
    return DrcnParams(
        embed1=embed1,
        embed2=embed2,
        recursive=recursive,
        recon1=recon1,
        recon2=recon2,
        ensemble_w=ensemble,
    )


def embed(x: Tensor, params: DrcnParams) -> Tensor:
    """Two conv+ReLU stages mapping the input image into feature space."""
    h = relu(conv2d_same(x, params.embed1))
    return relu(conv2d_same(h, params.embed2))


def recurse(h_prev: Tensor, params: DrcnParams) -> Tensor:
    """One application of the shared inference convolution plus ReLU."""
    return relu(conv2d_same(h_prev, params.recursive))


def reconstruct(x: Tensor, h_d: Tensor, params: DrcnParams) -> Tensor:
    """Turn one recursion's features into a prediction.

    The hidden reconstruction stage keeps its ReLU; the output convolution
    is linear so the residual may go negative, and the input is added back.
    """
    hidden = relu(conv2d_same(h_d, params.recon1))
    residual = conv2d_same(hidden, params.recon2)
    return add(x, residual)


def forward(
    x: Tensor,
    params: DrcnParams,
    config: ModelConfig | None = None,
    *,
    ensemble: Literal["learned", "uniform"] = "learned",
    keep_hidden: bool = False,
) -> ForwardResult:
    """Run the network: embed, recurse D times, reconstruct every recursion,
    and combine the predictions.

    ``ensemble="uniform"`` replaces the learned combination weights with a
    plain 1/D average (used by the ensemble ablation); predictions are
    unaffected by the choice.
    """
    if config is None:
        config = config_of(params)
    if x.data.ndim != 4:
        raise DimensionError(f"input must be (batch, channel, h, w), got shape {x.shape}")
    if x.shape[1] != config.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels but model expects {config.in_channels}"
        )
    d = config.recursions
    if params.recursions != d:
        raise DimensionError(
            f"config says {d} recursions but params carry {params.recursions} ensemble weights"
        )

    h = embed(x, params)
    hidden = [h] if keep_hidden else None
    predictions: list[Tensor] = []
    for _ in range(d):
        h = recurse(h, params)
        if hidden is not None:
            hidden.append(h)
        predictions.append(reconstruct(x, h, params))

    if ensemble == "learned":
        weights: Tensor | list[float] = params.ensemble_w
    elif ensemble == "uniform":
        weights = Tensor(np.full(d, 1.0 / d, dtype=x.dtype))
    else:
        raise ValueError(f"unknown ensemble mode {ensemble!r}")
    final = weighted_sum(predictions, weights)
    return ForwardResult(predictions=predictions, final=final, hidden_states=hidden)


def receptive_field(recursions: int) -> int:
    """Spatial extent of input pixels reaching one output pixel.

    The longest input-to-output chain passes recursions + 4 convolutions
    (two embedding, two reconstruction) and each 3x3 layer adds 2 pixels.
    """
    if recursions < 1:
        raise ValueError(f"recursions must be >= 1, got {recursions}")
    return 2 * (recursions + 4) + 1


def _layer_count(c_in: int, c_out: int) -> int:
    return c_out * c_in * KERNEL * KERNEL + c_out


def parameter_counts(config: ModelConfig) -> tuple[int, int]:
    """(shared, unshared_equivalent) parameter totals.

    ``shared`` is the exact element count of DrcnParams.  The unshared
    equivalent models an expanded network where every depth-d prediction
    chain owns its d private inference convolutions, D(D+1)/2 copies in
    total, with embedding and reconstruction still shared; that count grows
    quadratically in D while the shared count only gains one ensemble
    scalar per extra recursion.
    """
    f = config.filters
    d = config.recursions
    recursive = _layer_count(f, f)
    shared = (
        _layer_count(config.in_channels, f)
        + _layer_count(f, f)
        + recursive
        + _layer_count(f, f)
        + _layer_count(f, config.out_channels)
        + d
    )
    unshared = shared - recursive + recursive * (d * (d + 1) // 2)
    return shared, unshared
