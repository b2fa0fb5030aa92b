"""PSNR and SSIM, plus the dataset evaluation harness.

Both metrics quantize the planes to 8-bit levels first and use a peak of
255, matching the public benchmark convention for luminance-only scoring.
Dataset evaluation runs images in parallel but aggregates in sorted-name
order, so reports are deterministic.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .autodiff import Tensor
from .checkpoint import write_atomic
from .errors import ConfigError, DataError, DimensionError
from .image import ImagePlane, crop_border, list_image_files, load_luminance, make_eval_pair, quantize_u8
from .model import DrcnParams, config_of, forward

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class QualityScore:
    psnr: float  # decibels, may be math.inf
    ssim: float


def psnr(a: ImagePlane, b: ImagePlane) -> float:
    """10*log10(255^2 / MSE) over 8-bit-quantized planes; inf when equal."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"psnr dims differ: {a.data.shape} vs {b.data.shape}")
    qa = quantize_u8(a.data).astype(np.float64)
    qb = quantize_u8(b.data).astype(np.float64)
    mse = float(np.mean((qa - qb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g1 = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g1, g1)
    return win / win.sum()


def ssim(a: ImagePlane, b: ImagePlane) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window.

    Windowed moments are taken over the valid region only, with the
    standard constants C1 = (0.01*255)^2 and C2 = (0.03*255)^2.
    """
    if a.data.shape != b.data.shape:
        raise DimensionError(f"ssim dims differ: {a.data.shape} vs {b.data.shape}")
    h, w = a.data.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DimensionError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")
    x = quantize_u8(a.data).astype(np.float64)
    y = quantize_u8(b.data).astype(np.float64)
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2

    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid") - mu_x * mu_x
    yy = convolve2d(y * y, win, mode="valid") - mu_y * mu_y
    xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def quality(a: ImagePlane, b: ImagePlane) -> QualityScore:
    return QualityScore(psnr=psnr(a, b), ssim=ssim(a, b))


@dataclass
class EvalRow:
    file: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def included_rows(self) -> list[EvalRow]:
        return [r for r in self.rows if math.isfinite(r.psnr_db)]

    @property
    def excluded(self) -> int:
        """Rows with zero error (infinite PSNR), kept out of the means."""
        return len(self.rows) - len(self.included_rows)

    @property
    def count(self) -> int:
        return len(self.included_rows)

    @property
    def mean_psnr(self) -> float:
        rows = self.included_rows
        return sum(r.psnr_db for r in rows) / len(rows) if rows else math.nan

    @property
    def mean_ssim(self) -> float:
        rows = self.included_rows
        return sum(r.ssim for r in rows) / len(rows) if rows else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["file", "psnr_db", "ssim"])
        for r in self.rows:
            psnr_text = "inf" if math.isinf(r.psnr_db) else f"{r.psnr_db:.6f}"
            writer.writerow([r.file, psnr_text, f"{r.ssim:.6f}"])
        return buf.getvalue()

    def summary(self) -> dict:
        mean_psnr = self.mean_psnr
        mean_ssim = self.mean_ssim
        return {
            "count": self.count,
            "mean_psnr": None if math.isnan(mean_psnr) else round(mean_psnr, 6),
            "mean_ssim": None if math.isnan(mean_ssim) else round(mean_ssim, 6),
            "excluded": self.excluded,
        }

    def write_csv(self, path: str | Path) -> None:
        write_atomic(path, self.to_csv().encode("utf-8"))

    def write_summary_json(self, path: str | Path) -> None:
        write_atomic(path, (json.dumps(self.summary()) + "\n").encode("utf-8"))


def predict_plane(params: DrcnParams, plane: ImagePlane) -> ImagePlane:
    """Final model output for one already-interpolated luminance plane."""
    config = config_of(params)
    x = Tensor(plane.data[None, None].astype(config.dtype))
    result = forward(x, params, config)
    return ImagePlane(result.final.data[0, 0].astype(np.float64))


def thread_cap(n_items: int) -> int:
    """Worker count for per-image parallelism; DRCN_THREADS caps it."""
    env = os.environ.get("DRCN_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"DRCN_THREADS must be a positive integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError(f"DRCN_THREADS must be a positive integer, got {env!r}")
    else:
        cap = min(4, os.cpu_count() or 1)
    return max(1, min(cap, n_items))


def evaluate_dataset(
    model: DrcnParams | str | None,
    directory: str | Path,
    scale: int,
    crop: int | None = None,
) -> EvalReport:
    """Score every readable image in a directory.

    ``model`` is a parameter set, or None / "bicubic" for the interpolation
    baseline (the degraded input scored as-is).  Each image is modulo-
    cropped and degraded, predicted, border-cropped by ``crop`` pixels
    (default: the scale factor), and scored.  Unreadable or undersized
    images are skipped and recorded.
    """
    if isinstance(model, str):
        if model != "bicubic":
            raise ValueError(f"model must be DrcnParams or 'bicubic', got {model!r}")
        model = None
    if crop is None:
        crop = scale
    files = list_image_files(directory)
    if not files:
        raise DataError(f"no PNG/BMP images found in {directory}")

    def score(path: Path) -> EvalRow | tuple[str, str]:
        try:
            pair = make_eval_pair(load_luminance(path), scale)
            predicted = pair.input if model is None else predict_plane(model, pair.input)
            truth = crop_border(pair.ground_truth, crop)
            predicted = crop_border(predicted, crop)
            return EvalRow(file=path.name, psnr_db=psnr(truth, predicted), ssim=ssim(truth, predicted))
        except (DataError, DimensionError) as exc:
            return (path.name, str(exc))

    report = EvalReport()
    with ThreadPoolExecutor(max_workers=thread_cap(len(files))) as pool:
        for outcome in pool.map(score, files):
            if isinstance(outcome, EvalRow):
                report.rows.append(outcome)
            else:
                report.skipped.append(outcome)
    return report
