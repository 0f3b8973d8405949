"""Command-line interface.

Every artifact is accompanied by a ``<artifact>.json`` sidecar holding the
exact argument list, the seed and the package version, so a run can be
repeated with ``nssc replay <sidecar>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .denoise import DepthMap, denoise_map, inpaint
from .inference import InferenceConfig
from .io import read_dictionary, read_map, write_dictionary, write_map, write_pgm
from .learning import TrainConfig, train
from .metrics import format_psnr, psnr
from .stereo import (
    DisparityField,
    PottsConfig,
    StereoConfig,
    StereoPair,
    bad_pixel_rate,
    two_layer_infer,
)
from .synth import (
    corrupt_sparse,
    piecewise_constant_map,
    piecewise_disparity,
    random_dot_stereogram,
    specular_corruption,
)

log = logging.getLogger("nssc")


class CommandError(RuntimeError):
    pass


def _patch_dims(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("patch dims must be positive")
    return h, w


def _default_workers():
    return os.cpu_count() or 1


def _add_inference_args(p):
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--sigma0-sq", type=float, default=0.01)
    p.add_argument("--init-var", type=float, default=1.0)
    p.add_argument("--outer-iters", type=int, default=20,
                   help="max alternations of code and variance updates")
    p.add_argument("--inner-iters", type=int, default=2000)
    p.add_argument("--inner-tol", type=float, default=1e-8)


def _inference_cfg(args):
    return InferenceConfig(lam=args.lam, sigma0_sq=args.sigma0_sq,
                           init_var=args.init_var,
                           max_outer_iters=args.outer_iters,
                           inner_max_iters=args.inner_iters,
                           inner_tol=args.inner_tol)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes for patch inference "
                        "(default: all CPUs)")
    p.add_argument("--format", choices=("pgm", "pfm"), default="pfm",
                   help="format of the main output map")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nssc",
        description="Sparse coding with non-stationary noise for depth maps.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a dictionary from depth maps")
    p.add_argument("maps", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True, help="dictionary file")
    p.add_argument("--trace", type=Path, help="energy trace CSV")
    p.add_argument("--patch", type=_patch_dims, default=(16, 16))
    p.add_argument("--atoms", type=int, default=256)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--approach", type=int, choices=(1, 2), default=1)
    p.add_argument("--no-sentinel", action="store_true",
                   help="do not treat value 0 as a missing pixel")
    p.add_argument("--map-scale", type=float, default=1.0,
                   help="divide raw map values by this factor")
    _add_inference_args(p)
    _add_common(p)

    for name in ("denoise", "inpaint"):
        p = sub.add_parser(name, help=f"{name} a depth map")
        p.add_argument("input", type=Path)
        p.add_argument("--dict", dest="dictionary", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--variance", type=Path, help="variance map PFM")
        p.add_argument("--reference", type=Path,
                       help="clean map for the PSNR report")
        p.add_argument("--report", type=Path, help="PSNR report CSV")
        p.add_argument("--stride", type=int, default=1)
        p.add_argument("--peak", type=float, default=None,
                       help="PSNR peak (default: reference dynamic range)")
        p.add_argument("--fixed-var", type=float, default=None,
                       help="use fixed-variance sparse coding instead")
        if name == "inpaint":
            grp = p.add_mutually_exclusive_group(required=True)
            grp.add_argument("--mask", type=Path,
                             help="map whose nonzero pixels are inpainted")
            grp.add_argument("--mask-from-variance", type=Path,
                             help="variance map to threshold into a mask")
            p.add_argument("--mask-threshold", type=float, default=0.0)
        _add_inference_args(p)
        _add_common(p)

    p = sub.add_parser("stereo", help="two-layer stereo matching")
    p.add_argument("left", type=Path)
    p.add_argument("right", type=Path)
    p.add_argument("--dict", dest="dictionary", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--variance", type=Path)
    p.add_argument("--trace", type=Path, help="per-iteration CSV")
    p.add_argument("--gt", type=Path, help="ground-truth disparity")
    p.add_argument("--gt-scale", type=float, default=1.0)
    p.add_argument("--disp-scale", type=float, default=1.0,
                   help="multiply labels by this when writing a PGM")
    p.add_argument("--dmin", type=int, default=0)
    p.add_argument("--dmax", type=int, default=15)
    p.add_argument("--outer", type=int, default=3)
    p.add_argument("--potts-k", type=float, default=20.0)
    p.add_argument("--contrast-thresh", type=float, default=5.0)
    p.add_argument("--rho-sq", type=float, default=100.0,
                   help="stationary data-term variance")
    p.add_argument("--rho-floor", type=float, default=1.0,
                   help="floor on rho(sigma)^2 as a fraction of --rho-sq")
    p.add_argument("--stride", type=int, default=1)
    _add_inference_args(p)
    _add_common(p)

    p = sub.add_parser("eval", help="compare two maps")
    p.add_argument("estimate", type=Path)
    p.add_argument("reference", type=Path)
    p.add_argument("--peak", type=float, default=None)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--scale", type=float, default=1.0,
                   help="divide both maps' raw values by this")
    p.add_argument("--zero-is-missing", action="store_true",
                   help="exclude reference pixels equal to 0")
    p.add_argument("--report", type=Path)

    p = sub.add_parser("synth", help="write synthetic test data")
    p.add_argument("kind", choices=("depth", "stereo"))
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_patch_dims, default=None,
                   help="HxW (default 100x100 depth, 64x96 stereo)")
    p.add_argument("--labels", type=int, default=8)
    p.add_argument("--fraction", type=float, default=None,
                   help="corrupted fraction (default 0.01 depth, 0.02 stereo)")

    p = sub.add_parser("replay", help="re-run the command recorded in a sidecar")
    p.add_argument("sidecar", type=Path)
    return parser


def _write_sidecar(artifact: Path, argv, args, extra=None):
    record = {
        "argv": list(argv),
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "config": {k: (str(v) if isinstance(v, Path) else v)
                   for k, v in vars(args).items()},
    }
    if extra:
        record.update(extra)
    Path(str(artifact) + ".json").write_text(
        json.dumps(record, indent=2, sort_keys=True, default=str) + "\n"
    )


def _workers(args):
    return args.workers if args.workers else _default_workers()


def cmd_learn(args, argv):
    maps = [read_map(p, scale=args.map_scale) for p in args.maps]
    cfg = TrainConfig(
        patch_dims=args.patch, atom_count=args.atoms, batch_size=args.batch,
        learning_rate=args.lr, num_iterations=args.iters,
        missing_pixel_mode=args.approach, rng_seed=args.seed,
        inference=_inference_cfg(args),
        sentinel=None if args.no_sentinel else 0.0,
    )
    report = train(maps, cfg)
    write_dictionary(args.out, report.dictionary)
    _write_sidecar(args.out, argv, args,
                   {"train_config": asdict(cfg)})
    trace = args.trace or Path(str(args.out) + ".energy.csv")
    with open(trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_energy"])
        for i, e in enumerate(report.mean_energy):
            w.writerow([i, repr(e)])
    _write_sidecar(trace, argv, args)
    print(f"learned {report.dictionary.atom_count} atoms of "
          f"{args.patch[0]}x{args.patch[1]} in {report.iterations} iterations; "
          f"final mean energy {report.mean_energy[-1] if report.mean_energy else float('nan'):.6g}")
    return 0


def _psnr_report(args, argv, rows):
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["map", "psnr_db"])
            for name, value in rows:
                w.writerow([name, format_psnr(value)])
        _write_sidecar(args.report, argv, args)
    for name, value in rows:
        print(f"PSNR {name}: {format_psnr(value)} dB")


def cmd_denoise(args, argv):
    dictionary = read_dictionary(args.dictionary)
    dmap = read_map(args.input)
    cfg = _inference_cfg(args)
    if args.command == "inpaint":
        if args.mask is not None:
            mask = read_map(args.mask).values != 0
        else:
            var = read_map(args.mask_from_variance).values
            mask = var > args.mask_threshold
        result = inpaint(dmap, mask, dictionary, cfg, stride=args.stride,
                         workers=_workers(args))
        if result.unfilled.any():
            log.warning("%d pixels could not be filled",
                        int(result.unfilled.sum()))
    else:
        result = denoise_map(dmap, dictionary, cfg, stride=args.stride,
                             fixed_var=args.fixed_var, workers=_workers(args))
    write_map(args.out, result.denoised.values, fmt=args.format)
    _write_sidecar(args.out, argv, args,
                   {"unfilled": int(result.unfilled.sum())})
    variance = args.variance or Path(str(args.out) + ".variance.pfm")
    write_map(variance, result.variance_map, fmt="pfm")
    _write_sidecar(variance, argv, args)
    if args.reference is not None:
        ref = read_map(args.reference).values
        _psnr_report(args, argv, [
            ("input", psnr(dmap.values, ref, args.peak)),
            ("output", psnr(result.denoised.values, ref, args.peak)),
        ])
    return 0


def cmd_stereo(args, argv):
    dictionary = read_dictionary(args.dictionary)
    pair = StereoPair(read_map(args.left).values, read_map(args.right).values)
    cfg = StereoConfig(
        d_min=args.dmin, d_max=args.dmax,
        potts=PottsConfig(args.potts_k, args.contrast_thresh, args.rho_sq),
        inference=_inference_cfg(args), outer=args.outer, stride=args.stride,
        rho_floor_frac=args.rho_floor, workers=_workers(args),
    )
    gt = exclude = None
    if args.gt is not None:
        gmap = read_map(args.gt, zero_is_missing=True, scale=args.gt_scale)
        exclude = gmap.mask
        gt = DisparityField(
            np.clip(np.rint(gmap.values), args.dmin, args.dmax).astype(int),
            args.dmin, args.dmax,
        )
    result = two_layer_infer(pair, dictionary, cfg, gt=gt, exclude_mask=exclude)
    labels = result.disparity.labels
    if args.format == "pgm":
        write_pgm(args.out, labels * args.disp_scale)
    else:
        write_map(args.out, labels.astype(float), fmt="pfm")
    _write_sidecar(args.out, argv, args)
    variance = args.variance or Path(str(args.out) + ".variance.pfm")
    write_map(variance, result.variance, fmt="pfm")
    _write_sidecar(variance, argv, args)
    trace = args.trace or Path(str(args.out) + ".trace.csv")
    cols = ["iteration", "energy", "changed", "bad_pixel"]
    with open(trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in result.trace:
            w.writerow([repr(row[c]) if isinstance(row.get(c), float) else row.get(c, "")
                        for c in cols])
    _write_sidecar(trace, argv, args)
    for row in result.trace:
        msg = f"iteration {row['iteration']}: energy {row['energy']:.6g}, changed {row['changed']}"
        if "bad_pixel" in row:
            msg += f", bad pixels {100 * row['bad_pixel']:.2f}%"
        print(msg)
    return 0


def cmd_eval(args, argv):
    est = read_map(args.estimate, scale=args.scale).values
    ref_map = read_map(args.reference, zero_is_missing=args.zero_is_missing,
                       scale=args.scale)
    ref = ref_map.values
    mask = ref_map.mask if args.zero_is_missing else None
    value = psnr(est, ref, args.peak, mask)
    bad = bad_pixel_rate(est, ref, args.threshold, mask)
    print(f"PSNR: {format_psnr(value)} dB")
    print(f"bad pixels (>{args.threshold}): {100 * bad:.4f}%")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["psnr_db", "bad_pixel_rate"])
            w.writerow([format_psnr(value), repr(bad)])
        _write_sidecar(args.report, argv, args)
    return 0


def cmd_synth(args, argv):
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.kind == "depth":
        shape = args.size or (100, 100)
        clean = piecewise_constant_map(shape, rng)
        noisy, corrupted, _ = corrupt_sparse(clean, rng, args.fraction or 0.01)
        files = {"clean.pfm": clean, "noisy.pfm": noisy,
                 "corrupted.pfm": corrupted.astype(float)}
        for name, grid in files.items():
            write_map(out / name, grid, fmt="pfm")
            _write_sidecar(out / name, argv, args)
    else:
        shape = args.size or (64, 96)
        gt = piecewise_disparity(shape, args.labels, rng)
        left, right = random_dot_stereogram(gt, rng)
        left, _ = specular_corruption(left, rng, args.fraction or 0.02)
        write_pgm(out / "left.pgm", left, maxval=255)
        write_pgm(out / "right.pgm", right, maxval=255)
        write_pgm(out / "gt.pgm", gt, maxval=255)
        for name in ("left.pgm", "right.pgm", "gt.pgm"):
            _write_sidecar(out / name, argv, args)
    print(f"wrote synthetic {args.kind} data to {out}")
    return 0


COMMANDS = {
    "learn": cmd_learn,
    "denoise": cmd_denoise,
    "inpaint": cmd_denoise,
    "stereo": cmd_stereo,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def _validate_paths(args):
    for key in ("maps",):
        for p in getattr(args, key, None) or []:
            if not p.is_file():
                raise CommandError(f"input file not found: {p}")
    for key in ("input", "dictionary", "left", "right", "gt", "reference",
                "estimate", "mask", "mask_from_variance", "sidecar"):
        p = getattr(args, key, None)
        if isinstance(p, Path) and not p.is_file():
            raise CommandError(f"input file not found: {p}")
    for key in ("out", "trace", "variance", "report"):
        p = getattr(args, key, None)
        if isinstance(p, Path) and not p.parent.exists():
            raise CommandError(f"output directory does not exist: {p.parent}")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate_paths(args)
        if args.command == "replay":
            record = json.loads(args.sidecar.read_text())
            return main(record["argv"])
        return COMMANDS[args.command](args, argv)
    except Exception as err:  # noqa: BLE001 - reported as a machine-readable line
        line = json.dumps({"error": type(err).__name__, "message": str(err)})
        print(f"error: {line}", file=sys.stderr)
        log.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
