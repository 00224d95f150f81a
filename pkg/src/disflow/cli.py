"""Command-line interface: flow computation, stereo disparity, multi-frame
chaining, and end-point-error evaluation.

Exit codes: 0 on success, 1 for computation errors (bad dimensions,
numerical failure), 2 for usage and I/O errors.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

import numpy as np

from . import flowio, metrics, pipeline
from .core import DisParams, ParameterError, build_pyramid, coarsest_scale_for

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2


def _parse_norm(text: str):
    if text == "l2" or text == "l1":
        return text, 1.0
    if text.startswith("huber"):
        if ":" in text:
            _, _, b = text.partition(":")
            try:
                return "huber", float(b)
            except ValueError:
                raise ParameterError(f"bad Huber threshold in --norm {text!r}")
        return "huber", 1.0
    raise ParameterError(f"--norm must be l2, l1, or huber:B, got {text!r}")


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", type=int, choices=(1, 2, 3, 4),
                   help="operating point (default 2); explicit flags override")
    p.add_argument("--patch-size", type=int, help="template patch edge in pixels")
    p.add_argument("--overlap", type=float, help="patch overlap fraction in [0,1)")
    p.add_argument("--iters", type=int, help="inverse-search iterations per patch")
    p.add_argument("--finest-scale", type=int, help="finest pyramid level computed")
    p.add_argument("--coarsest-scale", type=int,
                   help="coarsest pyramid level (default derived from width)")
    p.add_argument("--no-variational", action="store_true",
                   help="skip the variational refinement stage")
    p.add_argument("--bidirectional", action="store_true",
                   help="merge forward and backward matches during densification")
    p.add_argument("--norm", default=None,
                   help="residual norm: l2, l1, or huber:B (default l2)")
    p.add_argument("--threads", type=int, default=1,
                   help="threads for the patch-optimization loop (default 1)")


def _params_from_args(args, width: int, stereo: bool = False) -> DisParams:
    preset = args.preset if args.preset is not None else 2
    params = DisParams.preset(preset, width=width, stereo=stereo)
    if args.patch_size is not None:
        params = replace(params, patch_size=args.patch_size)
    if args.overlap is not None:
        params = replace(params, overlap=args.overlap)
    if args.iters is not None:
        params = replace(params, iterations=args.iters)
    if args.finest_scale is not None:
        params = replace(params, finest_scale=args.finest_scale)
    if args.coarsest_scale is not None:
        params = replace(params, coarsest_scale=args.coarsest_scale)
    elif args.patch_size is not None or args.finest_scale is not None:
        derived = max(
            coarsest_scale_for(width, params.patch_size, 8.0), params.finest_scale
        )
        params = replace(params, coarsest_scale=derived)
    if args.no_variational:
        params = params.without_variational()
    if args.bidirectional:
        params = replace(params, bidirectional=True)
    if args.norm is not None:
        norm, b = _parse_norm(args.norm)
        params = replace(params, residual_norm=norm, huber_b=b)
    params.validate()
    return params


def _load_frames(paths):
    return [flowio.read_image(p) for p in paths]


def _cmd_compute(args) -> int:
    if args.time:
        pipeline.warmup(args.threads)  # JIT compile outside the timed region
    t0 = time.perf_counter()
    img1, img2 = _load_frames([args.frame1, args.frame2])
    params = _params_from_args(args, width=img1.shape[1])
    pyr1 = build_pyramid(img1, params.coarsest_scale, params.downscale)
    pyr2 = build_pyramid(img2, params.coarsest_scale, params.downscale)
    t1 = time.perf_counter()
    flow = pipeline.dis_flow_on_pyramids(pyr1, pyr2, params, threads=args.threads)
    t2 = time.perf_counter()
    flowio.write_flo(flow, args.out)
    if args.viz:
        flowio.write_image(flowio.flow_to_color(flow), args.viz)
    if args.time:
        print(f"preprocessing_ms={1000.0 * (t1 - t0):.3f}")
        print(f"flow_ms={1000.0 * (t2 - t1):.3f}")
    return EXIT_OK


def _cmd_stereo(args) -> int:
    if args.time:
        pipeline.warmup(args.threads)
    t0 = time.perf_counter()
    left, right = _load_frames([args.left, args.right])
    params = _params_from_args(args, width=left.shape[1], stereo=True)
    t1 = time.perf_counter()
    flow = pipeline.dis_stereo(left, right, params, threads=args.threads)
    t2 = time.perf_counter()
    flowio.write_flo(flow, args.out)
    if args.viz:
        flowio.write_image(flowio.flow_to_color(flow), args.viz)
    if args.time:
        print(f"preprocessing_ms={1000.0 * (t1 - t0):.3f}")
        print(f"flow_ms={1000.0 * (t2 - t1):.3f}")
    return EXIT_OK


def _cmd_chain(args) -> int:
    frames = _load_frames(args.frames)
    shape0 = frames[0].shape
    for i, frame in enumerate(frames[1:], start=1):
        if frame.shape != shape0:
            raise ValueError(
                f"frame {i} ({args.frames[i]}) is {frame.shape[1]}x{frame.shape[0]}, "
                f"expected {shape0[1]}x{shape0[0]}"
            )
    params = _params_from_args(args, width=shape0[1])
    flow = pipeline.dis_flow(frames[0], frames[1], params, threads=args.threads)
    for i in range(1, len(frames) - 1):
        step = pipeline.dis_flow(frames[i], frames[i + 1], params, threads=args.threads)
        flow = pipeline.compose_flows(flow, step)
    flowio.write_flo(flow, args.out)
    return EXIT_OK


def _cmd_epe(args) -> int:
    gt = flowio.read_flo(args.gt)
    est = flowio.read_flo(args.est)
    stats = metrics.endpoint_error(gt, est)
    print(f"all:    epe={stats.epe_all:.4f}  count={stats.valid_pixel_count}")
    print(f"s0-10:  epe={stats.epe_s0_10:.4f}  count={stats.count_s0_10}")
    print(f"s10-40: epe={stats.epe_s10_40:.4f}  count={stats.count_s10_40}")
    print(f"s40+:   epe={stats.epe_s40:.4f}  count={stats.count_s40}")
    print(f"epe_all={stats.epe_all:.6f}")
    print(f"epe_s0_10={stats.epe_s0_10:.6f}")
    print(f"epe_s10_40={stats.epe_s10_40:.6f}")
    print(f"epe_s40={stats.epe_s40:.6f}")
    print(f"valid_pixels={stats.valid_pixel_count}")

    err_map = metrics.endpoint_error_map(gt, est)
    errors = err_map[np.isfinite(err_map)]
    thresholds = None
    if args.thresholds:
        thresholds = [float(t) for t in args.thresholds.split(",") if t]
    if thresholds or args.report:
        from . import report as report_mod

        thresholds = thresholds or list(report_mod.DEFAULT_THRESHOLDS)
        fractions = metrics.error_threshold_curve(errors, thresholds)
        for t, frac in zip(thresholds, fractions):
            print(f"frac_above_{t:g}={frac:.6f}")
        if args.report:
            paths = report_mod.write_epe_report(
                args.report, stats, errors, thresholds, fractions
            )
            for p in paths:
                print(f"report: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disflow",
        description="Dense optical flow by fast inverse patch search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="dense flow between two frames")
    p.add_argument("frame1")
    p.add_argument("frame2")
    p.add_argument("--out", required=True, help="output .flo path")
    p.add_argument("--viz", help="also write a color-wheel rendering (PPM)")
    p.add_argument("--time", action="store_true",
                   help="print preprocessing and flow wall-clock times (ms)")
    _add_param_flags(p)
    p.set_defaults(func=_cmd_compute)

    p = sub.add_parser("stereo", help="horizontal-only disparity for a rectified pair")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("--out", required=True, help="output .flo path (v plane is zero)")
    p.add_argument("--viz", help="also write a color-wheel rendering (PPM)")
    p.add_argument("--time", action="store_true",
                   help="print preprocessing and flow wall-clock times (ms)")
    _add_param_flags(p)
    p.set_defaults(func=_cmd_stereo)

    p = sub.add_parser("chain", help="flow from the first to the last of N frames")
    p.add_argument("frames", nargs="+", help="two or more frames in temporal order")
    p.add_argument("--out", required=True, help="output .flo path")
    _add_param_flags(p)
    p.set_defaults(func=_cmd_chain)

    p = sub.add_parser("epe", help="end-point-error statistics of est against gt")
    p.add_argument("gt", help="ground-truth .flo")
    p.add_argument("est", help="estimated .flo")
    p.add_argument("--thresholds", help="comma-separated error thresholds (px)")
    p.add_argument("--report", metavar="DIR",
                   help="write CSV tables and figures into DIR")
    p.set_defaults(func=_cmd_epe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (flowio.FileFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PermissionError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"error (params): {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, AssertionError) as exc:
        print(f"error (compute): {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
