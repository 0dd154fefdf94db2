"""Command-line entry point: ``tabletopseg <subcommand> [options]``.

Exit codes: 0 success, 1 a threshold check failed (``--assert-f``, the
gradient suite, the benchmark), 2 an input/output or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_THRESHOLD, EXIT_IO = 0, 1, 2


class CliError(Exception):
    """An input/output or configuration problem (exit code 2)."""


def _flat_config(args) -> dict:
    from .pipeline import load_config_file, parse_config_text

    flat = load_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        flat.update(parse_config_text(item))
    return flat


def _pipeline_config(args, mode: str):
    from .pipeline import PipelineConfig

    flat = _flat_config(args)
    flat.pop("mode", None)
    return PipelineConfig.from_flat(flat, mode=mode, seed=args.seed, threads=args.threads,
                                    input_dir=str(args.input), output_dir=str(args.output))


def _check_f(mean: dict, assert_f: float | None) -> int:
    if assert_f is None:
        return EXIT_OK
    f = mean["overlap"]["f"]
    if f < assert_f:
        print(f"overlap F {f:.2f} below required {assert_f:.2f}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def _print_mean(mean: dict) -> None:
    o, b = mean["overlap"], mean["boundary"]
    print(f"overlap  P {o['p']:6.2f}  R {o['r']:6.2f}  F {o['f']:6.2f}")
    print(f"boundary P {b['p']:6.2f}  R {b['r']:6.2f}  F {b['f']:6.2f}")


# subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    from .io import save_scene, save_tensor
    from .pipeline import PREDICTION_FILES, build_params, noise_seed, scene_config_from, split_sections
    from .scenegen import NoiseConfig, apply_noise, generate_scene, ideal_observation

    flat = _flat_config(args)
    config = scene_config_from(flat)
    noise = None
    if args.with_predictions:
        vals = dict(split_sections(flat).get("noise", {}))
        vals.pop("enabled", None)
        noise = build_params(NoiseConfig, vals, "noise")
    out = Path(args.output)
    for seed in range(args.seed, args.seed + args.count):
        sample = generate_scene(config, seed)
        d = save_scene(sample, out / f"scene_{seed:05d}")
        if noise is not None:
            obs = apply_noise(sample, ideal_observation(sample), noise, seed=noise_seed(args.seed, seed))
            save_tensor(d / PREDICTION_FILES["probs"], obs.probs.astype(np.float32))
            save_tensor(d / PREDICTION_FILES["dirs"], obs.dirs.astype(np.float32))
            save_tensor(d / PREDICTION_FILES["offsets"], obs.offsets.astype(np.float32))
        print(f"{d.name}: {sample.num_objects} objects")
    return EXIT_OK


def _segment(args, mode: str) -> int:
    from .pipeline import run_pipeline

    config = _pipeline_config(args, mode)
    result = run_pipeline(config)
    for name, err in result.errors.items():
        print(f"{name}: {err}", file=sys.stderr)
    if result.report["images"]:
        _print_mean(result.report["mean"])
    if not result.ok:
        return EXIT_IO
    return _check_f(result.report["mean"], args.assert_f)


def cmd_segment2d(args) -> int:
    return _segment(args, "vote2d")


def cmd_segment3d(args) -> int:
    return _segment(args, "vote3d")


def _label_files(path) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise CliError(f"{p} does not exist")
    return sorted(p.glob("*.pgm"))


def cmd_imp(args) -> int:
    from .imp import MorphParams, process_masks
    from .io import read_pgm, write_pgm
    from .pipeline import build_params, split_sections

    params = build_params(MorphParams, split_sections(_flat_config(args)).get("imp", {}), "imp")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for f in _label_files(args.input):
        write_pgm(out / f.name, process_masks(read_pgm(f).astype(np.int64), params))
    return EXIT_OK


def _gt_labels(gt_root: Path, name: str) -> np.ndarray:
    from .io import is_scene_dir, load_scene, read_pgm

    if is_scene_dir(gt_root / name):
        return load_scene(gt_root / name).gt_labels
    f = gt_root / f"{name}.pgm"
    if f.exists():
        return read_pgm(f).astype(np.int64)
    raise CliError(f"no ground truth for {name} under {gt_root}")


def cmd_eval(args) -> int:
    from .io import read_pgm
    from .metrics import default_slack, evaluate
    from .pipeline import build_report, write_report

    flat = _flat_config(args)
    slack = args.slack if args.slack is not None else flat.get("metrics.slack")
    objective = flat.get("metrics.objective", "f")
    names, reports = [], []
    for f in _label_files(args.pred):
        pred = read_pgm(f).astype(np.int64)
        gt = _gt_labels(Path(args.gt), f.stem)
        if gt.shape != pred.shape:
            raise CliError(f"{f.stem}: prediction {pred.shape} and ground truth {gt.shape} differ in shape")
        s = default_slack(*gt.shape) if slack is None else int(slack)
        names.append(f.stem)
        reports.append(evaluate(pred, gt, s, objective))
    if not reports:
        raise CliError(f"no label maps under {args.pred}")
    report = build_report(names, reports, config_hash="")
    if args.output:
        write_report(args.output, report)
    _print_mean(report["mean"])
    return _check_f(report["mean"], args.assert_f)


def cmd_augment(args) -> int:
    from .augment import AugmentParams, augment_mask, crop_box, crop_mask, prepare_rrn_crop
    from .core import object_ids
    from .io import is_scene_dir, load_scene, read_pgm, save_tensor, write_pgm
    from .pipeline import build_params, split_sections

    vals = split_sections(_flat_config(args)).get("augment", {})
    params = build_params(AugmentParams, {**vals, "rng_seed": args.seed}, "augment")
    src = Path(args.input)
    if is_scene_dir(src):
        sample = load_scene(src)
        labels, rgb = sample.gt_labels, sample.rgb
    elif src.is_file():
        labels, rgb = read_pgm(src).astype(np.int64), None
    else:
        raise CliError(f"{src} is neither a scene bundle nor a label map")
    if rgb is None:
        rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    rng = params.rng()
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for obj in object_ids(labels):
        gt = labels == obj
        for k in range(args.per_mask):
            pert = augment_mask(gt, params, rng)
            if not pert.any():
                continue  # the perturbation erased the mask; nothing to crop
            stem = out / f"obj{int(obj):03d}_{k:02d}"
            save_tensor(Path(f"{stem}_crop.uotf"), prepare_rrn_crop(rgb, pert, args.padding))
            box = crop_box(pert, args.padding)
            write_pgm(Path(f"{stem}_mask.pgm"), crop_mask(pert, box).astype(np.uint16))
            write_pgm(Path(f"{stem}_gt.pgm"), crop_mask(gt, box).astype(np.uint16))
            count += 1
    print(f"{count} training triples written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import LOSS_NAMES, TOLERANCE, run_gradient_suite, suite_passes

    summary = run_gradient_suite(cases=args.cases, seed=args.seed, size=args.size)
    print(f"{'loss':<8} {'max rel err':>12} {'checked':>8} {'kinks':>6}")
    for name in LOSS_NAMES:
        s = summary[name]
        print(f"{name:<8} {s['max_rel_error']:>12.3e} {s['checked']:>8d} {s['kinks']:>6d}")
    ok = suite_passes(summary, TOLERANCE)
    print(("PASS" if ok else "FAIL") + f": max relative error < {TOLERANCE:g}")
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_viz(args) -> int:
    from .core import project
    from .io import is_scene_dir, load_scene, read_pgm
    from .scenegen import ideal_observation
    from .viz import render, save_png

    src = Path(args.labels)
    sample = None
    if args.scene:
        if not is_scene_dir(args.scene):
            raise CliError(f"{args.scene} is not a scene bundle")
        sample = load_scene(args.scene)
    if is_scene_dir(src):
        sample = sample or load_scene(src)
        labels = sample.gt_labels
    elif src.is_file():
        labels = read_pgm(src).astype(np.int64)
    else:
        raise CliError(f"{src} does not exist")
    rgb = sample.rgb if (sample is not None and args.blend) else None
    votes = None
    if args.votes:
        if sample is None:
            raise CliError("--votes needs a scene bundle (--scene)")
        obs = ideal_observation(sample)
        fg = labels >= 2
        votes = project((obs.cloud.xyz + obs.offsets)[fg], sample.intrinsics)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    save_png(args.output, render(labels, rgb, votes))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import format_benchmark, run_benchmark

    result = run_benchmark(seed=args.seed, repeats=args.repeats)
    print(format_benchmark(result))
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if result["passed"] else EXIT_THRESHOLD


# parser -------------------------------------------------------------------

def _add_config(p) -> None:
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabletopseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, seed_default=0):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=seed_default)
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate synthetic scene bundles")
    p.add_argument("--count", type=int, default=10, help="scenes with seeds seed..seed+count-1")
    p.add_argument("--output", "-o", type=Path, required=True)
    p.add_argument("--with-predictions", action="store_true",
                   help="also store noisy prediction fields (noise.* keys)")
    _add_config(p)

    for name, func, what in (("segment2d", cmd_segment2d, "2D Hough voting"),
                             ("segment3d", cmd_segment3d, "3D mean-shift clustering")):
        p = add(name, func, f"segment scene bundles with {what}")
        p.add_argument("--input", "-i", type=Path, required=True)
        p.add_argument("--output", "-o", type=Path, required=True)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--assert-f", type=float, help="fail unless mean overlap F reaches this")
        _add_config(p)

    p = add("imp", cmd_imp, "clean label maps (open, close, largest component)")
    p.add_argument("--input", "-i", type=Path, required=True, help="PGM file or directory")
    p.add_argument("--output", "-o", type=Path, required=True)
    _add_config(p)

    p = add("eval", cmd_eval, "score predicted label maps against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="directory of <name>.pgm")
    p.add_argument("--gt", type=Path, required=True, help="scene bundles or <name>.pgm files")
    p.add_argument("--output", "-o", type=Path, help="directory for report.json and report.csv")
    p.add_argument("--slack", type=int)
    p.add_argument("--assert-f", type=float)
    _add_config(p)

    p = add("augment", cmd_augment, "perturbed-mask training crops from a label map")
    p.add_argument("--input", "-i", type=Path, required=True, help="scene bundle or PGM label map")
    p.add_argument("--output", "-o", type=Path, required=True)
    p.add_argument("--per-mask", type=int, default=1)
    p.add_argument("--padding", type=float, default=0.25)
    _add_config(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every loss")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--size", type=int, default=8)

    p = add("viz", cmd_viz, "render a label map to PNG")
    p.add_argument("--labels", type=Path, required=True, help="PGM label map or scene bundle")
    p.add_argument("--scene", type=Path, help="scene bundle for RGB and votes")
    p.add_argument("--output", "-o", type=Path, required=True)
    p.add_argument("--votes", action="store_true", help="overlay projected center votes")
    p.add_argument("--blend", action="store_true", help="blend over the scene RGB")

    p = add("bench", cmd_bench, "time vote3d at 640x480, numba against numpy", seed_default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--json", type=Path, help="also write the timings as JSON")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, OSError, ValueError) as exc:  # config, tensor and manifest errors are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
