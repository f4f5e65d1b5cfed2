"""Command-line entry point.

Subcommands: synth, stylize, lift, warp, inspect-mask, eval. Every command
writes a JSON run report with the resolved configuration echoed for
provenance; wall-clock timings go to a separate timings.json so reports
stay byte-reproducible. Exit codes: 0 success, 1 configuration/usage
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import rasters
from .attention import attention_scores, toy_semantic_transfer
from .config import PipelineConfig, load_config
from .diffusion import analytic_denoiser, make_schedule
from .errors import (ConfigValidationError, EngineError, InvalidParamsError,
                     MalformedHeaderError, MissingFileError)
from .lift import (
    LiftConfig,
    LiftResult,
    build_palette_gmm,
    diffusion_fill_refiner,
    lift_sequence,
    toy_diffusion_refiner,
)
from .metrics import depth_metrics, pose_auc, pose_errors, psnr, ssim
from .rasters import DepthMap, ImageBuffer
from .scene import CameraPose, SceneManifest, load_scene, save_scene
from .segmatch import UnmatchedPolicy, build_attention_mask, downsample_map, match_classes
from .synth import SynthConfig, make_trajectory, room_planes, synth_scene
from .warp import (
    Strategy,
    flow_from_pointmaps,
    importance_from_depth,
    softmax_splat,
)

_POLICY = {"global": UnmatchedPolicy.GLOBAL_ATTEND,
           "keep": UnmatchedPolicy.KEEP_SOURCE}
_STRATEGY = {"last": Strategy.LAST_ONLY, "all": Strategy.ALL_HISTORY,
             "ours": Strategy.LAST_PLUS_TWO_RANDOM}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigValidationError(message)


def _jsonable(value):
    """Make report values strict-JSON safe; non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    return value


def _write_report(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigValidationError(
            f"--size must look like 64x64, got '{text}'") from exc
    return w, h


def _parse_matches(pairs: list[str]) -> list[tuple[str, str]]:
    out = []
    for item in pairs:
        if "=" not in item:
            raise ConfigValidationError(
                f"--match needs src=style, got '{item}'")
        s, t = item.split("=", 1)
        out.append((s.strip(), t.strip()))
    return out


def _resolve_threads(flag: int | None) -> int | None:
    if flag is not None:
        value = flag
    else:
        env = os.environ.get("RESTYLE_THREADS")
        if env is None:
            return None
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigValidationError(
                f"RESTYLE_THREADS must be an integer, got '{env}'") from exc
    if value < 1:
        raise ConfigValidationError("threads must be >= 1")
    return value


def _load_image(path: str) -> ImageBuffer:
    buf = rasters.read_raster(path)
    if not isinstance(buf, ImageBuffer):
        raise MalformedHeaderError(f"{path}: expected an image raster")
    return buf


def _load_depth(path: str) -> DepthMap:
    buf = rasters.read_raster(path)
    if not isinstance(buf, DepthMap):
        raise MalformedHeaderError(f"{path}: expected a depth raster")
    return buf


def _load_pose_list(path: str) -> list[CameraPose]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingFileError(f"pose file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedHeaderError(f"{path}: pose file must be a JSON list")
    poses = []
    for i, entry in enumerate(data):
        try:
            rot = np.asarray(entry["R"], dtype=np.float64).reshape(3, 3)
            trans = np.asarray(entry["t"], dtype=np.float64)
            poses.append(CameraPose(rot, trans))
        except (KeyError, TypeError, ValueError, InvalidParamsError) as exc:
            raise MalformedHeaderError(
                f"{path}: pose {i} malformed: {exc}") from exc
    return poses


def _mask_image(mask: np.ndarray) -> ImageBuffer:
    return ImageBuffer(mask.astype(np.float32)[..., None])


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    width, height = _parse_size(args.size)
    trajectory = make_trajectory(args.trajectory, args.frames, args.travel)
    synth_cfg = SynthConfig(width=width, height=height,
                            planes=room_planes(args.palette),
                            trajectory=trajectory, noise_level=args.noise)
    manifest, gt = synth_scene(synth_cfg, args.seed)
    out = Path(args.out)
    save_scene(manifest, out / "manifest.json")
    gt_files = []
    if args.ground_truth:
        for i in range(len(manifest.frames) - 1):
            rel = f"gt/flow_{i:03d}_to_{i + 1:03d}.rsfl"
            (out / "gt").mkdir(parents=True, exist_ok=True)
            rasters.write_raster(gt.flow(i, i + 1), out / rel)
            gt_files.append(rel)
    _write_report(out / "report.json", {
        "command": "synth",
        "frames": len(manifest.frames),
        "resolution": f"{width}x{height}",
        "trajectory": args.trajectory,
        "travel": args.travel,
        "palette": args.palette,
        "noise": args.noise,
        "seed": args.seed,
        "ground_truth": gt_files,
        "manifest": "manifest.json",
    })
    print(f"synth: wrote {len(manifest.frames)} frames to {out}")
    return 0


def _cmd_stylize(args) -> int:
    scene = load_scene(args.scene)
    style_scene = load_scene(args.style_scene)
    src = scene.frames[_check_frame(args.frame, scene, "--frame")]
    sty = style_scene.frames[_check_frame(args.style_frame, style_scene,
                                          "--style-frame")]
    match = match_classes(src.segmentation, sty.segmentation,
                          _parse_matches(args.match), _POLICY[args.unmatched])
    output = toy_semantic_transfer(src.image, sty.image, src.segmentation,
                                   sty.segmentation, match, args.patch,
                                   args.temperature)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rasters.write_raster(output, out / "stylized.rsim")
    rasters.write_raster(output, out / "stylized.png")
    _write_report(out / "report.json", {
        "command": "stylize",
        "scene": str(args.scene),
        "frame": args.frame,
        "style_scene": str(args.style_scene),
        "style_frame": args.style_frame,
        "patch": args.patch,
        "temperature": args.temperature,
        "unmatched": args.unmatched,
        "matches": sorted(f"{s}={t}" for s, t in match.pairs),
        "outputs": ["stylized.rsim", "stylized.png"],
    })
    print(f"stylize: wrote {out / 'stylized.rsim'}")
    return 0


def _check_frame(index: int, scene: SceneManifest, flag: str) -> int:
    if not 0 <= index < len(scene.frames):
        raise ConfigValidationError(
            f"{flag} must be in 0..{len(scene.frames) - 1}, got {index}")
    return index


def _resolved_pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = {
        ("warp", "strategy"): args.strategy,
        ("warp", "gamma"): args.gamma,
        ("warp", "sharpness"): args.beta,
        ("warp", "eps_cov"): args.eps_cov,
        ("warp", "direction"): args.direction,
        ("diffusion", "strength"): args.strength,
        ("diffusion", "steps"): args.steps,
    }
    for (section, key), value in over.items():
        if value is not None:
            setattr(getattr(cfg, section), key, value)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.threads = _resolve_threads(args.threads)
    return cfg.validate()


def _cmd_lift(args) -> int:
    cfg = _resolved_pipeline_config(args)
    scene = load_scene(args.scene)
    seed_index = _check_frame(args.seed_frame, scene, "--seed-frame")
    stylized_seed = _load_image(args.stylized)

    if args.refiner == "fill":
        refiner = diffusion_fill_refiner()
    else:
        schedule = make_schedule(cfg.diffusion.steps, cfg.diffusion.kind,
                                 beta_start=cfg.diffusion.beta_start,
                                 beta_end=cfg.diffusion.beta_end)
        gmm = build_palette_gmm(stylized_seed,
                                scene.frames[seed_index].segmentation)
        refiner = toy_diffusion_refiner(analytic_denoiser(gmm, schedule),
                                        schedule, cfg.diffusion.strength,
                                        depth_gain=args.depth_gain)

    lift_cfg = LiftConfig(strategy=_STRATEGY[cfg.warp.strategy],
                          gamma=cfg.warp.gamma, sharpness=cfg.warp.sharpness,
                          eps_cov=cfg.warp.eps_cov,
                          direction=cfg.warp.direction,
                          allow_gaps=args.allow_gaps,
                          z_min=cfg.warp.z_min,
                          flow_margin=cfg.warp.flow_margin)
    rng = np.random.default_rng(cfg.seed)
    started = time.perf_counter()
    result = lift_sequence(scene, stylized_seed, seed_index, refiner,
                           lift_cfg, rng)
    elapsed = time.perf_counter() - started

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame_files, mask_files = _write_lift_outputs(result, out)
    _write_report(out / "report.json", {
        "command": "lift",
        "scene": str(args.scene),
        "seed_frame": seed_index,
        "refiner": args.refiner,
        "allow_gaps": args.allow_gaps,
        "depth_gain": args.depth_gain,
        "config": cfg.to_dict(),
        "selections": {str(i): list(s) for i, s in result.selections.items()},
        "coverage": {str(i): c for i, c in result.coverage.items()},
        "frames": frame_files,
        "masks": mask_files,
        "timings_file": "timings.json",
    })
    _write_report(out / "timings.json",
                  {"lift_seconds": elapsed, "frames": len(result.stylized)})
    print(f"lift: stylized {len(result.stylized)} frames into {out}")
    return 0


def _write_lift_outputs(result: LiftResult, out: Path):
    frame_files, mask_files = [], []
    for index, image in result.frames():
        name = f"stylized_{index:03d}.rsim"
        rasters.write_raster(image, out / name)
        frame_files.append(name)
        mask_name = f"mask_{index:03d}.rsim"
        rasters.write_raster(_mask_image(result.masks[index]), out / mask_name)
        mask_files.append(mask_name)
    return frame_files, mask_files


def _cmd_warp(args) -> int:
    scene = load_scene(args.scene)
    src = scene.frames[_check_frame(args.source, scene, "--source")]
    dst = scene.frames[_check_frame(args.target, scene, "--target")]
    flow = flow_from_pointmaps(src.pointmap, dst.pose, dst.intrinsics)
    warped = softmax_splat(src.image, flow, importance_from_depth(src.depth),
                           args.eps_cov, args.beta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rasters.write_raster(flow, out / "flow.rsfl")
    rasters.write_raster(warped.image, out / "warped.rsim")
    rasters.write_raster(_mask_image(warped.mask), out / "mask.rsim")
    _write_report(out / "report.json", {
        "command": "warp",
        "scene": str(args.scene),
        "source": args.source,
        "target": args.target,
        "sharpness": args.beta,
        "eps_cov": args.eps_cov,
        "coverage": warped.coverage(),
        "dropped_mass": warped.dropped_mass,
        "outputs": ["flow.rsfl", "warped.rsim", "mask.rsim"],
    })
    print(f"warp: coverage {warped.coverage():.3f}, wrote {out}")
    return 0


def _token_means(image: ImageBuffer, d: int) -> np.ndarray:
    """Mean color per cell of a d x d token grid, one row per token."""
    data = image.data.astype(np.float64)
    return data.reshape(d, image.height // d, d, image.width // d,
                        image.channels).mean(axis=(1, 3)).reshape(d * d, -1)


def _cmd_inspect_mask(args) -> int:
    scene = load_scene(args.scene)
    style_scene = load_scene(args.style_scene)
    src = scene.frames[_check_frame(args.frame, scene, "--frame")]
    sty = style_scene.frames[_check_frame(args.style_frame, style_scene,
                                          "--style-frame")]
    d = args.d
    if src.image.width % d or src.image.height % d:
        raise ConfigValidationError(
            f"--d {d} must divide the {src.image.width}x{src.image.height} frame")
    match = match_classes(src.segmentation, sty.segmentation,
                          _parse_matches(args.match), _POLICY[args.unmatched])
    src_d = downsample_map(src.segmentation, d)
    sty_d = downsample_map(sty.segmentation, d)
    mask = build_attention_mask(src_d, sty_d, match)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rasters.write_raster(ImageBuffer(mask.bits.astype(np.float32)[..., None]),
                         out / "mask.rsim")

    feats_src = _token_means(src.image, d)
    feats_sty = _token_means(sty.image, d)
    scores = attention_scores(feats_src / args.temperature, feats_sty, mask)

    queries = args.query or [f"{d // 2},{d // 2}"]
    score_files = []
    for q in queries:
        try:
            row, col = (int(v) for v in q.split(","))
        except ValueError as exc:
            raise ConfigValidationError(
                f"--query needs row,col, got '{q}'") from exc
        if not (0 <= row < d and 0 <= col < d):
            raise ConfigValidationError(f"--query {q} outside 0..{d - 1}")
        name = f"scores_r{row}_c{col}.rsim"
        grid = scores[row * d + col].reshape(d, d)
        grid = grid / grid.max() if grid.max() > 0 else grid
        rasters.write_raster(ImageBuffer(grid.astype(np.float32)[..., None]),
                             out / name)
        score_files.append(name)

    _write_report(out / "report.json", {
        "command": "inspect-mask",
        "d": d,
        "temperature": args.temperature,
        "unmatched": args.unmatched,
        "matches": sorted(f"{s}={t}" for s, t in match.pairs),
        "row_support": [int(n) for n in mask.bits.sum(axis=1)],
        "outputs": ["mask.rsim"] + score_files,
    })
    print(f"inspect-mask: wrote {out / 'mask.rsim'}")
    return 0


def _parse_thresholds(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigValidationError(
            f"{flag} must be comma-separated numbers, got '{text}'") from exc
    if not values:
        raise ConfigValidationError(f"{flag} needs at least one threshold")
    return values


def _cmd_eval(args) -> int:
    report: dict = {"command": "eval"}
    ran_any = False
    if args.pred_depth or args.ref_depth:
        if not (args.pred_depth and args.ref_depth):
            raise ConfigValidationError(
                "--pred-depth and --ref-depth go together")
        pred = _load_depth(args.pred_depth)
        ref = _load_depth(args.ref_depth)
        dm = depth_metrics(pred, ref)
        report["depth"] = {"AbsRel": dm.abs_rel, "SqRel": dm.sq_rel,
                           "delta1": dm.delta1,
                           "valid_pixels": dm.valid_pixels}
        ran_any = True
    if args.images:
        a = _load_image(args.images[0])
        b = _load_image(args.images[1])
        report["images"] = {"PSNR": psnr(a, b), "SSIM": ssim(a, b)}
        ran_any = True
    if args.pred_poses or args.ref_poses:
        if not (args.pred_poses and args.ref_poses):
            raise ConfigValidationError(
                "--pred-poses and --ref-poses go together")
        est = _load_pose_list(args.pred_poses)
        ref_poses = _load_pose_list(args.ref_poses)
        mode = "relative" if args.relative else "absolute"
        errs = pose_errors(est, ref_poses, mode=mode)
        pose_report = {
            "mode": mode,
            "rotation_deg": list(errs.rotation_deg),
            "translation_cm": list(errs.translation_cm),
        }
        for tau in _parse_thresholds(args.auc_rot, "--auc-rot"):
            pose_report[f"rot_auc_{tau:g}deg"] = pose_auc(
                list(errs.rotation_deg), tau)
        for tau in _parse_thresholds(args.auc_trans, "--auc-trans"):
            pose_report[f"trans_auc_{tau:g}cm"] = pose_auc(
                list(errs.translation_cm), tau)
        report["poses"] = pose_report
        ran_any = True
    if not ran_any:
        raise ConfigValidationError(
            "eval needs at least one input group: depth, images, or poses")
    if args.out:
        _write_report(Path(args.out), report)
        print(f"eval: wrote {args.out}")
    else:
        print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="stylelift",
                     description="Semantic appearance transfer and "
                                 "multi-view style lifting, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", default="64x64")
    p.add_argument("--trajectory", default="pan",
                   choices=["still", "pan", "pan_return", "orbit"])
    p.add_argument("--travel", type=float, default=0.6)
    p.add_argument("--palette", default="daylight")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--ground-truth", action=argparse.BooleanOptionalAction,
                   default=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("stylize", help="toy semantic appearance transfer")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--style-scene", required=True)
    p.add_argument("--style-frame", type=int, default=0)
    p.add_argument("--match", action="append", default=[],
                   metavar="SRC=STYLE")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--unmatched", choices=["global", "keep"], default="global")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stylize)

    p = sub.add_parser("lift", help="propagate a stylized seed frame")
    p.add_argument("--scene", required=True)
    p.add_argument("--seed-frame", type=int, default=0)
    p.add_argument("--stylized", required=True)
    p.add_argument("--strategy", choices=["last", "all", "ours"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eps-cov", type=float)
    p.add_argument("--direction", choices=["forward", "backward", "both"])
    p.add_argument("--strength", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--refiner", choices=["fill", "toy"], default="fill")
    p.add_argument("--depth-gain", type=float, default=0.0)
    p.add_argument("--allow-gaps", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lift)

    p = sub.add_parser("warp", help="forward-warp one frame into another")
    p.add_argument("--scene", required=True)
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--eps-cov", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("inspect-mask", help="emit the token attention mask")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--style-scene", required=True)
    p.add_argument("--style-frame", type=int, default=0)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--match", action="append", default=[],
                   metavar="SRC=STYLE")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--unmatched", choices=["global", "keep"], default="global")
    p.add_argument("--query", action="append", metavar="ROW,COL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inspect_mask)

    p = sub.add_parser("eval", help="depth / image / pose metrics")
    p.add_argument("--pred-depth")
    p.add_argument("--ref-depth")
    p.add_argument("--images", nargs=2, metavar=("A", "B"))
    p.add_argument("--pred-poses")
    p.add_argument("--ref-poses")
    p.add_argument("--relative", action="store_true")
    p.add_argument("--auc-rot", default="5,10,15")
    p.add_argument("--auc-trans", default="1,2,5")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
