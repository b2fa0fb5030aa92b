"""Command-line interface: train / sr / eval / analyze.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Unknown flags are rejected.  The environment
variable DRCN_THREADS (positive integer) caps internal parallelism.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import image as img
from . import metrics as met
from .autodiff import Tensor
from .errors import ConfigError, DataError, DimensionError, NumericalError, UsageError
from .model import config_of, forward, parameter_counts, receptive_field
from .training import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage by default; this tool reserves 2 for
    data errors, so usage problems exit 1 instead."""

    def error(self, message: str) -> "NoReturn":  # noqa: F821
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drcn", description="Recursive convolutional super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True, help="JSON file with TrainConfig fields")
    p_train.add_argument("--out", required=True, help="output directory for checkpoints and the epoch log")
    p_train.add_argument("--resume", help="checkpoint to resume from (architecture must match the config)")
    p_train.set_defaults(func=cmd_train)

    p_sr = sub.add_parser("sr", help="super-resolve one image with a trained model")
    p_sr.add_argument("--model", required=True, help="checkpoint path")
    p_sr.add_argument("--input", required=True, help="input image (treated as already interpolated)")
    p_sr.add_argument("--output", required=True, help="output PNG path")
    p_sr.add_argument("--dump-intermediate", metavar="DIR", help="write every per-recursion prediction here")
    p_sr.add_argument(
        "--upscale-first",
        type=int,
        metavar="N",
        help="bicubic-upscale the input by N before running the model",
    )
    p_sr.set_defaults(func=cmd_sr)

    p_eval = sub.add_parser("eval", help="score a dataset directory (PSNR/SSIM)")
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="checkpoint path")
    group.add_argument("--bicubic", action="store_true", help="score the interpolation baseline")
    p_eval.add_argument("--dataset", required=True, help="directory of ground-truth images")
    p_eval.add_argument("--scale", type=int, required=True, choices=(2, 3, 4))
    p_eval.add_argument("--crop", type=int, help="border crop per side before scoring (default: scale)")
    p_eval.add_argument("--report", required=True, help="CSV output path; a .json summary lands beside it")
    p_eval.set_defaults(func=cmd_eval)

    p_an = sub.add_parser("analyze", help="receptive field and parameter accounting")
    p_an.add_argument("--recursions", type=int, required=True)
    p_an.add_argument("--filters", type=int, default=256)
    p_an.add_argument("--channels", type=int, default=1)
    p_an.set_defaults(func=cmd_analyze)

    return parser


def cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig.from_json(args.config)
    initial = None
    if args.resume:
        params, meta = ckpt.load_checkpoint(args.resume)
        mismatches = []
        for field, expected in (
            ("recursions", config.recursions),
            ("filters", config.filters),
            ("scale", config.scale),
        ):
            found = getattr(meta, field)
            if found != expected:
                mismatches.append(f"{field}: checkpoint {found} vs config {expected}")
        if mismatches:
            raise ConfigError(f"cannot resume from {args.resume}: " + "; ".join(mismatches))
        initial = params
    train(config, out_dir=args.out, initial_params=initial, echo=print)
    return 0


def _clamped_plane(data: np.ndarray) -> img.ImagePlane:
    return img.ImagePlane(np.clip(data.astype(np.float64), 0.0, 1.0))


def cmd_sr(args: argparse.Namespace) -> int:
    params, _meta = ckpt.load_checkpoint(args.model)
    config = config_of(params)
    planes = img.read_planes(args.input)

    if args.upscale_first is not None:
        if args.upscale_first < 1:
            raise ConfigError(f"--upscale-first must be >= 1, got {args.upscale_first}")
        n = args.upscale_first
        planes = [img.bicubic_resize(p, p.width * n, p.height * n) for p in planes]

    if len(planes) == 1:
        luma = planes[0]
        chroma = None
    else:
        luma, cb, cr = img.rgb_to_ycbcr(*planes)
        chroma = (cb, cr)

    x = Tensor(luma.data[None, None].astype(config.dtype))
    result = forward(x, params, config)

    if args.dump_intermediate:
        dump_dir = Path(args.dump_intermediate)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for i, pred in enumerate(result.predictions, start=1):
            img.write_png(dump_dir / f"rec_{i:02d}.png", _clamped_plane(pred.data[0, 0]))

    out_luma = _clamped_plane(result.final.data[0, 0])
    if chroma is None:
        img.write_png(args.output, out_luma)
    else:
        rgb = img.ycbcr_to_rgb(out_luma, chroma[0], chroma[1])
        img.write_png(args.output, [_clamped_plane(p.data) for p in rgb])
    print(f"wrote {args.output} ({out_luma.width}x{out_luma.height})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if args.bicubic:
        model = None
    else:
        model, _meta = ckpt.load_checkpoint(args.model)
    report = met.evaluate_dataset(model, args.dataset, args.scale, crop=args.crop)
    csv_path = Path(args.report)
    json_path = csv_path.with_suffix(".json") if csv_path.suffix != ".json" else csv_path.with_suffix(".summary.json")
    report.write_csv(csv_path)
    report.write_summary_json(json_path)
    for name, reason in report.skipped:
        print(f"skipped {name}: {reason}", file=sys.stderr)
    summary = report.summary()
    print(
        f"count={summary['count']} mean_psnr={summary['mean_psnr']} "
        f"mean_ssim={summary['mean_ssim']} excluded={summary['excluded']}"
    )
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.recursions < 1:
        raise ConfigError(f"--recursions must be >= 1, got {args.recursions}")
    if args.filters < 1 or args.channels < 1:
        raise ConfigError("--filters and --channels must be >= 1")

    from .model import ModelConfig

    rows = []
    seen = set()
    for d in [args.recursions, 1, 6, 11, 16]:
        if d in seen:
            continue
        seen.add(d)
        config = ModelConfig(
            recursions=d, filters=args.filters, in_channels=args.channels, out_channels=args.channels
        )
        shared, unshared = parameter_counts(config)
        rows.append((d, receptive_field(d), shared, unshared, unshared / shared))

    header = f"{'D':>4} {'rf':>5} {'shared':>14} {'unshared_equiv':>16} {'ratio':>8}"
    print(header)
    for d, rf, shared, unshared, ratio in rows:
        print(f"{d:>4} {rf:>5} {shared:>14,} {unshared:>16,} {ratio:>8.2f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, DimensionError) as exc:
        print(f"drcn: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"drcn: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"drcn: numerical failure: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    raise SystemExit(main())
