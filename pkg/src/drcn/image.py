"""Image ingestion and the degradation/evaluation protocol.

Planes are single-channel float64 arrays in [0, 1]; values are only clamped
when quantizing at I/O boundaries, so intermediate results may leave the
range.  Luminance follows the BT.601 studio-swing convention (16..235
mapped into [0, 1]), matching the benchmark evaluation lineage.  Resampling
uses the Keys cubic kernel (a = -0.5), separable, with source-coordinate
clamping at edges and kernel widening for antialiased downscales.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .checkpoint import write_atomic
from .errors import DataError, DimensionError

SUPPORTED_SUFFIXES = (".png", ".bmp")

# BT.601 studio-swing RGB (in [0,1]) -> YCbCr (in 0..255 terms).
_YCBCR_MATRIX = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
)
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)


@dataclass
class ImagePlane:
    data: np.ndarray  # (height, width) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"a plane must be 2-d and non-empty, got shape {arr.shape}")
        self.data = arr

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class EvalPair:
    """Ground-truth luminance and the interpolated low-resolution input."""

    ground_truth: ImagePlane
    input: ImagePlane
    scale: int


def quantize_u8(data: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round to 8-bit levels (half rounds up)."""
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def to_luminance(r: ImagePlane, g: ImagePlane, b: ImagePlane) -> ImagePlane:
    """BT.601 luma: Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255."""
    if not (r.data.shape == g.data.shape == b.data.shape):
        raise DimensionError("channel planes must share dimensions")
    y = (65.481 * r.data + 128.553 * g.data + 24.966 * b.data + 16.0) / 255.0
    return ImagePlane(y)


def rgb_to_ycbcr(r: ImagePlane, g: ImagePlane, b: ImagePlane) -> tuple[ImagePlane, ImagePlane, ImagePlane]:
    if not (r.data.shape == g.data.shape == b.data.shape):
        raise DimensionError("channel planes must share dimensions")
    stacked = np.stack([r.data, g.data, b.data], axis=-1)
    ycc = (stacked @ _YCBCR_MATRIX.T + _YCBCR_OFFSET) / 255.0
    return ImagePlane(ycc[..., 0]), ImagePlane(ycc[..., 1]), ImagePlane(ycc[..., 2])


def ycbcr_to_rgb(y: ImagePlane, cb: ImagePlane, cr: ImagePlane) -> tuple[ImagePlane, ImagePlane, ImagePlane]:
    if not (y.data.shape == cb.data.shape == cr.data.shape):
        raise DimensionError("channel planes must share dimensions")
    stacked = np.stack([y.data, cb.data, cr.data], axis=-1) * 255.0 - _YCBCR_OFFSET
    rgb = stacked @ _YCBCR_INVERSE.T
    return ImagePlane(rgb[..., 0]), ImagePlane(rgb[..., 1]), ImagePlane(rgb[..., 2])


def cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Keys cubic, a = -0.5: exact interpolation of constants and ramps."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    near = (1.5 * ax - 2.5) * ax * ax + 1.0
    far = ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _axis_weights(n_in: int, n_out: int, antialias: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-output source indices (clamped) and normalized kernel weights."""
    scale = n_out / n_in
    if antialias and scale < 1.0:
        width = 4.0 / scale

        def kern(u: np.ndarray) -> np.ndarray:
            return scale * cubic_kernel(scale * u)

    else:
        width = 4.0
        kern = cubic_kernel

    # Center-aligned source coordinate of each output sample.
    u = (np.arange(n_out, dtype=np.float64) + 0.5) / scale - 0.5
    support = int(np.ceil(width)) + 2
    left = np.floor(u - width / 2.0).astype(np.int64) + 1
    indices = left[:, None] + np.arange(support)[None, :]
    weights = kern(u[:, None] - indices)
    weights /= weights.sum(axis=1, keepdims=True)
    indices = np.clip(indices, 0, n_in - 1)
    return indices, weights


def _resample_axis(data: np.ndarray, n_out: int, axis: int, antialias: bool) -> np.ndarray:
    indices, weights = _axis_weights(data.shape[axis], n_out, antialias)
    moved = np.moveaxis(data, axis, 0)
    gathered = moved[indices]  # (n_out, support, ...)
    out = np.einsum("os,os...->o...", weights, gathered)
    return np.moveaxis(out, 0, axis)


def bicubic_resize(plane: ImagePlane, out_w: int, out_h: int, *, antialias: bool = True) -> ImagePlane:
    """Separable cubic resampling to (out_w, out_h).

    Downscales widen the kernel by the inverse scale factor (antialiasing);
    edges replicate by clamping source coordinates.  Constants are preserved
    exactly and identity resizes copy the input.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output dims must be >= 1, got {out_w}x{out_h}")
    data = plane.data
    if out_h != plane.height:
        data = _resample_axis(data, out_h, 0, antialias)
    if out_w != plane.width:
        data = _resample_axis(data, out_w, 1, antialias)
    return ImagePlane(data)


def modulo_crop(plane: ImagePlane, scale: int) -> ImagePlane:
    """Crop (top-left anchored) so both dims are divisible by ``scale``."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    w = (plane.width // scale) * scale
    h = (plane.height // scale) * scale
    if w < 1 or h < 1:
        raise DataError(
            f"plane of {plane.width}x{plane.height} is too small to crop to a multiple of {scale}"
        )
    return ImagePlane(plane.data[:h, :w])


def crop_border(plane: ImagePlane, pixels: int) -> ImagePlane:
    """Remove ``pixels`` rows/columns from every side."""
    if pixels < 0:
        raise ValueError(f"crop must be >= 0, got {pixels}")
    if pixels == 0:
        return ImagePlane(plane.data)
    if 2 * pixels >= min(plane.width, plane.height):
        raise DataError(
            f"cannot crop {pixels} pixels per side from a {plane.width}x{plane.height} plane"
        )
    return ImagePlane(plane.data[pixels:-pixels, pixels:-pixels])


def make_eval_pair(hr: ImagePlane, scale: int) -> EvalPair:
    """Degrade a ground-truth plane: crop to a multiple of ``scale``,
    bicubic-downsample, then bicubic-upsample back to full size."""
    if scale not in (2, 3, 4):
        raise ValueError(f"scale must be 2, 3 or 4, got {scale}")
    hr_crop = modulo_crop(hr, scale)
    lr = bicubic_resize(hr_crop, hr_crop.width // scale, hr_crop.height // scale)
    upscaled = bicubic_resize(lr, hr_crop.width, hr_crop.height)
    return EvalPair(ground_truth=hr_crop, input=upscaled, scale=scale)


def extract_patches(
    input_plane: ImagePlane,
    target_plane: ImagePlane,
    size: int = 41,
    stride: int = 21,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Grid-aligned co-located crops of the input and target planes.

    Yields floor((w-size)/stride + 1) * floor((h-size)/stride + 1) pairs;
    an undersized image yields none, with a warning.
    """
    if input_plane.data.shape != target_plane.data.shape:
        raise DimensionError("input and target planes must share dimensions")
    h, w = input_plane.data.shape
    if h < size or w < size:
        warnings.warn(
            f"image of {w}x{h} is smaller than the {size}x{size} patch size, skipping",
            stacklevel=2,
        )
        return []
    pairs = []
    for top in range(0, h - size + 1, stride):
        for left in range(0, w - size + 1, stride):
            pairs.append(
                (
                    input_plane.data[top : top + size, left : left + size].copy(),
                    target_plane.data[top : top + size, left : left + size].copy(),
                )
            )
    return pairs


def _check_suffix(path: Path) -> None:
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise DataError(f"unsupported image format {path.suffix!r} for {path} (PNG/BMP only)")


def read_planes(path: str | Path) -> list[ImagePlane]:
    """Decode a PNG/BMP file into [gray] or [r, g, b] planes in [0, 1]."""
    path = Path(path)
    _check_suffix(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("1", "L", "I", "I;16", "F"):
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
                return [ImagePlane(arr)]
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            return [ImagePlane(arr[..., 0]), ImagePlane(arr[..., 1]), ImagePlane(arr[..., 2])]
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def load_luminance(path: str | Path) -> ImagePlane:
    """Luminance plane of an image file; grayscale sources pass through."""
    planes = read_planes(path)
    if len(planes) == 1:
        return planes[0]
    return to_luminance(*planes)


def write_png(path: str | Path, planes: ImagePlane | list[ImagePlane]) -> None:
    """Write an 8-bit grayscale (one plane) or RGB (three planes) PNG."""
    path = Path(path)
    if isinstance(planes, ImagePlane):
        img = Image.fromarray(quantize_u8(planes.data), mode="L")
    elif len(planes) == 3:
        stacked = np.stack([quantize_u8(p.data) for p in planes], axis=-1)
        img = Image.fromarray(stacked, mode="RGB")
    else:
        raise ValueError(f"write_png takes one plane or three, got {len(planes)}")
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    write_atomic(path, buf.getvalue())


def list_image_files(directory: str | Path) -> list[Path]:
    """Sorted PNG/BMP paths in a directory; errors if it does not exist."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"image directory not found: {directory}")
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES
    )
