"""Command line entry point: ``gnfield reconstruct | render | eval | info``."""
from __future__ import annotations

import argparse
import io as _io
import json
import logging
import sys
from pathlib import Path

import numba
import numpy as np

from . import config as config_mod
from .io import (CheckpointError, DatasetError, atomic_write_text, encode_image, focal_from_fov,
                 load_checkpoint, load_dataset, read_checkpoint_header, save_checkpoint,
                 srgb_to_linear, write_image)
from .rays import Camera
from .render import foreground_mask, psnr, render_view
from .solver import solve_hierarchy


def _color(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated values")
    return tuple(vals)


def _set_threads(n):
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def cmd_reconstruct(args) -> int:
    cfg, load = config_mod.load_config(args.config, seed=args.seed, threads=args.threads,
                                       levels=args.levels, iters_per_level=args.iters)
    _set_threads(cfg.threads)
    dataset = load_dataset(args.dataset, args.split, cfg.background, load["srgb"], load["downscale"])
    holdout = None
    if args.holdout_split:
        hold = load_dataset(args.dataset, args.holdout_split, cfg.background, load["srgb"],
                            load["downscale"])
        if len(hold) == 0:
            raise DatasetError(f"holdout split {args.holdout_split!r} is empty")

        def holdout(scene):
            return float(np.mean([psnr(render_view(scene, c, False, cfg.background), img)
                                  for c, img in zip(hold.cameras, hold.images)]))

    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")

    def snapshot(level, scene):
        if args.snapshots:
            save_checkpoint(scene, out.with_name(f"{out.stem}.level{level}{out.suffix}"))

    buf = _io.StringIO()
    scene, report = solve_hierarchy(dataset, cfg, on_level_end=snapshot, holdout=holdout,
                                    log_stream=buf)
    save_checkpoint(scene, out)
    atomic_write_text(log_path, buf.getvalue())
    print(f"wrote {out} ({len(report.rows)} iterations, final objective "
          f"{report.rows[-1].objective:.6g})" if report.rows else f"wrote {out}")
    return 0


def _load_pose_file(path) -> list:
    meta = json.loads(Path(path).read_text())
    frames = meta.get("frames", [meta])
    cams = []
    for fr in frames:
        w = int(fr.get("width", meta.get("width", 0)))
        h = int(fr.get("height", meta.get("height", w)))
        angle = fr.get("camera_angle_x", meta.get("camera_angle_x"))
        if not w or angle is None:
            raise DatasetError(f"{path}: pose entries need width and camera_angle_x")
        cams.append(Camera(np.array(fr["transform_matrix"], float), focal_from_fov(angle, w), w, h))
    return cams


def _cameras(args, background, srgb):
    if args.pose:
        cams = _load_pose_file(args.pose)
        return cams, [f"pose_{i:03d}" for i in range(len(cams))], None
    if not args.dataset:
        raise DatasetError("give --dataset (with --split) or --pose")
    ds = load_dataset(args.dataset, args.split, background, srgb, args.downscale)
    idx = range(len(ds)) if args.index is None else [args.index]
    if args.index is not None and not 0 <= args.index < len(ds):
        raise DatasetError(f"index {args.index} outside split of {len(ds)} views")
    return [ds.cameras[i] for i in idx], [ds.names[i] for i in idx], [ds.images[i] for i in idx]


def cmd_render(args) -> int:
    _set_threads(args.threads)
    scene = load_checkpoint(args.checkpoint)
    cams, names, _ = _cameras(args, args.background, args.srgb)
    out = Path(args.out)
    for cam, name in zip(cams, names):
        img = render_view(scene, cam, not args.no_threshold, args.background)
        write_image(out / f"{Path(name).name}.png", img, args.srgb)
    print(f"rendered {len(cams)} view(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    _set_threads(args.threads)
    scene = load_checkpoint(args.checkpoint)
    cams, names, images = _cameras(args, args.background, args.srgb)
    if not cams:
        raise DatasetError(f"split {args.split!r} has no views")
    if images is None:
        raise DatasetError("eval needs a dataset split with images")
    scores = []
    for cam, name, img in zip(cams, names, images):
        pred = render_view(scene, cam, not args.no_threshold, args.background)
        if args.quantize:
            # score the 8-bit image that `render` would write, read back like the targets
            stored = encode_image(pred, args.srgb) / 255.0
            pred = srgb_to_linear(stored) if args.srgb else stored
        mask = foreground_mask(scene, cam) if args.masked else None
        value = psnr(pred, img, mask)
        scores.append(value)
        print(f"{name} {value:.4f}")
    print(f"mean {float(np.mean(scores)):.4f}")
    return 0


def cmd_info(args) -> int:
    hdr = read_checkpoint_header(args.checkpoint)
    print(json.dumps({
        "version": hdr.version, "dims": list(hdr.dims), "aabb_min": list(hdr.aabb_min),
        "aabb_max": list(hdr.aabb_max),
        "layers": [{"face_res": s, "half_extent": h} for s, h in hdr.layers],
        "n_params": hdr.n_params, "payload_bytes": hdr.payload_bytes}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gnfield", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reconstruct", help="fit a scene to a posed image set",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="config file keys:\n" + config_mod.__doc__.split("::", 1)[1])
    r.add_argument("--dataset", required=True, help="directory holding transforms_<split>.json")
    r.add_argument("--config", help="YAML/JSON config file (keys listed below)")
    r.add_argument("--out", required=True, help="checkpoint path to write")
    r.add_argument("--split", default="train", help="training split name (default: train)")
    r.add_argument("--holdout-split", help="split scored each iteration (adds holdout_psnr)")
    r.add_argument("--log", help="iteration log path (default: <out>.log.jsonl)")
    r.add_argument("--snapshots", action="store_true", help="also save a checkpoint per level")
    r.add_argument("--seed", type=int, help="override config seed")
    r.add_argument("--threads", type=int, help="worker threads (overrides config)")
    r.add_argument("--levels", type=int, help="override config levels")
    r.add_argument("--iters", type=int, help="override config iters_per_level")
    r.set_defaults(func=cmd_reconstruct)

    for name, func, helptext in (("render", cmd_render, "render views of a checkpoint to PNG"),
                                 ("eval", cmd_eval, "PSNR of a checkpoint against a split")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint", required=True, help="scene checkpoint")
        s.add_argument("--dataset", help="dataset directory providing cameras (and images)")
        s.add_argument("--split", default="test", help="dataset split (default: test)")
        s.add_argument("--index", type=int, help="single view index within the split")
        s.add_argument("--downscale", type=int, default=1, help="integer image downscale")
        s.add_argument("--no-threshold", action="store_true",
                       help="keep grid contributions below the 0.7 opacity threshold")
        s.add_argument("--background", type=_color, default=(1.0, 1.0, 1.0),
                       help="background color r,g,b (default 1,1,1)")
        s.add_argument("--no-srgb", dest="srgb", action="store_false",
                       help="treat images as linear (no sRGB decode/encode)")
        s.add_argument("--threads", type=int, default=None, help="worker threads")
        if name == "render":
            s.add_argument("--pose", help="JSON pose file instead of a dataset split")
            s.add_argument("--out", required=True, help="output directory")
        else:
            s.set_defaults(pose=None)
            s.add_argument("--no-quantize", dest="quantize", action="store_false",
                           help="score float renders instead of their 8-bit encoding")
            s.add_argument("--masked", action="store_true",
                           help="score only pixels in the scene's foreground mask")
        s.set_defaults(func=func)

    i = sub.add_parser("info", help="print checkpoint header without reading the payload")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (CheckpointError, DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
