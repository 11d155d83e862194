"""Feature stacks, dataset splits and statistics for time-lapse camera imagery.

Exit codes: 0 success, 1 partial failure (see the skip report), 2 bad
configuration or unsatisfiable constraints.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import gradcheck
from .container import ContainerError
from .ingest import ImageDecodeError, ManifestError, load_manifest, validate_images
from .pipeline import (ConfigError, PipelineConfig, export_debug, fitness, load_config_file,
                       run_split, run_stack, run_stats)
from .split import AnnotationError, InfeasiblePartition

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _emit(args, payload: dict, text: str):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _forced(values):
    out = {}
    for item in values or ():
        cam, sep, slot = item.rpartition("=")
        if not sep or not cam:
            raise ConfigError(f"--force expects CAMERA=SUBSET, got {item!r}")
        out[cam] = slot if slot in ("train", "val", "test") else int(slot)
    return out or None


def _config(args, command) -> PipelineConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    keys = ("manifest", "out_dir", "window", "policy", "chroma_threshold", "stride", "ridge",
            "jobs", "labels", "index", "clusters", "sizes", "max_eval_fraction")
    overrides = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "debug_png", False):
        overrides["debug_png"] = True
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    if getattr(args, "classes", None):
        overrides["classes"] = tuple(c.strip() for c in args.classes.split(",") if c.strip())
    if getattr(args, "term_weights", None):
        overrides["term_weights"] = tuple(args.term_weights)
    forced = _forced(getattr(args, "force", None))
    if forced:
        merged = dict(file_values.get("forced", {}))
        merged.update(forced)
        overrides["forced"] = merged
    return PipelineConfig.from_sources(command, file_values, **overrides)


def cmd_ingest(args) -> int:
    cfg = _config(args, "ingest")
    manifest = load_manifest(cfg.manifest, cfg.modality_policy)
    problems = validate_images(manifest) if args.check_images else []
    cams = {}
    for cam in sorted(manifest.frames):
        frames = manifest.frames[cam]
        day = sum(1 for f in frames if f.modality.value == "day")
        cams[cam] = {"frames": len(frames), "day": day, "night": len(frames) - day}
    lines = [f"{cam}: {c['frames']} frames ({c['day']} day, {c['night']} night)"
             for cam, c in cams.items()]
    lines += [f"problem: {p}" for p in problems]
    _emit(args, {"cameras": cams, "frames": len(manifest), "problems": problems},
          "\n".join(lines) if lines else "empty manifest")
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_stack(args) -> int:
    summary = run_stack(_config(args, "stack"))
    _emit(args, summary, f"written {summary['written']}, skipped {summary['skipped']}, "
                         f"failed {summary['failed']} -> {summary['out_dir']}")
    return EXIT_PARTIAL if summary["failed"] else EXIT_OK


def cmd_split(args) -> int:
    partition, report = run_split(_config(args, "split"))
    lines = [f"{name:5s} {', '.join(report['subsets'][name]['cameras'])} "
             f"({report['subsets'][name]['images']} images)" for name in ("train", "val", "test")]
    t = partition.terms
    lines.append(f"objective {partition.objective:.6g} = class {t.class_var:.6g} + "
                 f"size {t.size_var:.6g} + day/night {t.ratio_var:.6g}")
    lines.append(f"{partition.feasible}/{partition.evaluated} candidates feasible")
    _emit(args, report, "\n".join(lines))
    return EXIT_OK


def cmd_stats(args) -> int:
    out = run_stats(_config(args, "stats"))
    _emit(args, out, f"{out['cameras']} cameras, {out['images']} images, "
                     f"{out['objects']} objects -> {out['csv']}")
    return EXIT_OK


def cmd_fitness(args) -> int:
    value = fitness(args.map50, args.map50_95)
    _emit(args, {"fitness": value}, f"{value:.6g}")
    return EXIT_OK


def cmd_weights_demo(args) -> int:
    results = gradcheck.run_suite(range(args.seed, args.seed + args.seeds))
    rows, payload, ok = [], {}, True
    for scheme, blocks in results.items():
        for name, r in blocks.items():
            ok &= r.passed
            payload[f"{scheme}.{name}"] = {"passed": r.passed, "checked": r.checked,
                                           "skipped": r.skipped, "max_rel_err": r.max_rel_err}
            rows.append(f"{'PASS' if r.passed else 'FAIL'}  {scheme:5s} {name:6s} "
                        f"checked={r.checked} skipped={r.skipped} max_rel_err={r.max_rel_err:.2e}")
    _emit(args, payload, "\n".join(rows))
    return EXIT_OK if ok else EXIT_PARTIAL


def cmd_export(args) -> int:
    paths = export_debug(args.stack, args.out_dir)
    _emit(args, {"files": [str(p) for p in paths]}, "\n".join(str(p) for p in paths))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    common.add_argument("--config", type=Path, help="JSON config; command-line flags win")

    def manifest_args(p):
        p.add_argument("manifest", type=Path, nargs="?", help="JSON-lines manifest")
        p.add_argument("--policy", choices=("chroma", "clock"), help="day/night rule (default chroma)")
        p.add_argument("--chroma-threshold", type=float, help="mean channel spread below which a frame is night (default 8)")

    parser = argparse.ArgumentParser(prog="tlstack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a manifest")
    manifest_args(p)
    p.add_argument("--check-images", action="store_true", help="decode every image and check sizes")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stack", parents=[common], help="write 5-plane feature stacks")
    manifest_args(p)
    p.add_argument("-o", "--out-dir", type=Path)
    p.add_argument("-k", "--window", type=int, help="prior frames per background (default 12)")
    p.add_argument("--stride", type=int, help="pixel stride for the colour fit (default 4)")
    p.add_argument("--ridge", type=float, help="ridge term for the colour fit (default 1e-6)")
    p.add_argument("-j", "--jobs", type=int, help="worker threads (default: all cores)")
    p.add_argument("--debug-png", action="store_true", help="also write PNG views of each stack")
    p.set_defaults(func=cmd_stack)

    for name, func, help_ in (("split", cmd_split, "partition cameras into train/val/test"),
                              ("stats", cmd_stats, "per-camera annotation table and figures")):
        p = sub.add_parser(name, parents=[common], help=help_)
        manifest_args(p)
        p.add_argument("--labels", type=Path, help="directory of YOLO label files")
        p.add_argument("--index", type=Path, help="file listing labelled images without label files")
        p.add_argument("--classes", help="comma-separated class names (default Adult,Chick,Egg)")
        p.add_argument("-o", "--out-dir", type=Path)
        p.add_argument("--clusters", type=int, help="number of size clusters (default 3)")
        p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
        if name == "split":
            p.add_argument("--sizes", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
            p.add_argument("--force", action="append", metavar="CAMERA=SUBSET",
                           help="pin a camera to train/val/test (or 1/2/3); repeatable")
            p.add_argument("--max-eval-fraction", type=float,
                           help="reject val/test sets above this share of images (default 0.25)")
            p.add_argument("--term-weights", type=float, nargs=3, metavar=("CLASS", "SIZE", "RATIO"))
        p.set_defaults(func=func)

    p = sub.add_parser("fitness", parents=[common], help="combine mAP values into the fitness score")
    p.add_argument("map50", type=float, help="mAP@0.5")
    p.add_argument("map50_95", type=float, help="mAP@0.05:0.95")
    p.set_defaults(func=cmd_fitness)

    p = sub.add_parser("weights-demo", parents=[common], help="gradient-check the weighting layers")
    p.add_argument("--seeds", type=int, default=10, help="number of random seeds (default 10)")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.set_defaults(func=cmd_weights_demo)

    p = sub.add_parser("export", parents=[common], help="write PNGs of a TLF5 stack")
    p.add_argument("stack", type=Path)
    p.add_argument("-o", "--out-dir", type=Path, default=Path("."))
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContainerError, ImageDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except (ConfigError, InfeasiblePartition, ManifestError, AnnotationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
