"""Command line entry point: ``poselab <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Outputs land under ``$POSELAB_OUTPUT`` (default ``./runs``) unless ``-o``
names a location.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..augmentation import Sample, augment_epoch
from ..dataset_io import (
    DatasetManifest, ManifestEntry, parse_cambridge, parse_seven_scenes, read_manifest, write_manifest,
)
from ..imaging import read_image, write_png
from ..loss_optim import NumericalError
from ..model import load_checkpoint
from ..synthetic import (
    SceneConfig, TrajectoryConfig, generate_dataset, render, scene_from_provenance,
)
from .config import ConfigError, ExperimentConfig, _coerce, parse_key_values
from .data import prepare_split
from .evaluate import EvalReport
from .experiment import evaluate, output_root, run_experiment
from .tables import LAYOUTS, emit_table

log = logging.getLogger("poselab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 means a data error here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers

def _pairs(items, target, what: str) -> dict:
    """``key=value`` strings typed against the fields of a dataclass instance."""
    out = {}
    defaults = vars(target)
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or key not in defaults:
            raise UsageError(f"bad {what} setting {item!r}; known keys: {', '.join(sorted(defaults))}")
        out[key] = _coerce(raw, defaults[key], key, what)
    return out


def manifest_images(m: DatasetManifest) -> list:
    """Read the frames of ``m``; synthetic manifests without files are re-rendered."""
    missing = [e for e in m.entries if not m.resolve(e).exists()]
    if not missing:
        return [read_image(m.resolve(e)) for e in m.entries]
    if m.source_format == "synthetic" and not any(e.synthetic for e in m.entries):
        scene = scene_from_provenance(m.provenance)
        return [render(e.pose, scene) for e in m.entries]
    raise FileNotFoundError(f"{len(missing)} image(s) missing, first: {m.resolve(missing[0])}")


def _default_column(layout: str, cfg: ExperimentConfig) -> str:
    if layout == "table1":
        return "Centered Crop" if cfg.preprocessing == "centered_crop" else "Whole Field of View"
    if layout == "table2":
        if not cfg.augment:
            return "Baseline"
        return "Baseline-Augmented" if cfg.preprocessing == "centered_crop" else "Whole view-Augmented"
    if layout in ("table3", "table4"):
        return "Baseline" if cfg.head == "fc" else f"Length {cfg.sequence_length}"
    if layout == "table5":
        return "Combined"
    return LAYOUTS[layout]["columns"][0]


def _default_row(cfg: ExperimentConfig) -> str:
    if cfg.dataset == "synthetic":
        return f"synthetic-{cfg.scene.get('seed', 0)}"
    path = Path(cfg.train_manifest)
    return path.parent.name if path.stem in ("train", "test") and path.parent.name else path.stem


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    if args.format == "7scenes":
        m = parse_seven_scenes(args.root, args.split, split_file=args.split_file, invert=args.invert)
    else:
        m = parse_cambridge(args.root, args.split)
    # store absolute image paths so the manifest can live anywhere
    m.entries = [ManifestEntry(e.sequence_id, e.frame_index, str(m.resolve(e).resolve()), e.pose, e.synthetic)
                 for e in m.entries]
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(m, out)
    print(f"{out}: {len(m)} frames, {m.skipped} skipped")
    return EXIT_OK


def cmd_synth(args) -> int:
    scene = SceneConfig(**_pairs(args.scene, SceneConfig(), "scene"))
    traj = TrajectoryConfig(**_pairs(args.trajectory, TrajectoryConfig(), "trajectory"))
    out = Path(args.output) if args.output else output_root() / "synthetic"
    train, test = generate_dataset(scene, traj, rng_seed=args.seed)
    for m in (train, test):
        if not args.no_images:
            for e in m.entries:
                path = out / e.path
                path.parent.mkdir(parents=True, exist_ok=True)
                write_png(render(e.pose, scene), path)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(m, out / f"{m.split}.manifest")
        print(f"{out / (m.split + '.manifest')}: {len(m)} frames")
    return EXIT_OK


def cmd_augment(args) -> int:
    m = read_manifest(args.manifest)
    lo, hi = args.range
    images = manifest_images(m)
    originals = [e for e in m.entries if not e.synthetic]
    samples = [Sample(img, e.pose, e.sequence_id, e.frame_index)
               for img, e in zip(images, m.entries) if not e.synthetic]
    rotated = augment_epoch(samples, (lo, hi), rng_seed=args.seed, epoch=args.epoch)[len(samples):]
    out = Path(args.output) if args.output else output_root() / f"{m.name}-augmented"
    (out / "aug").mkdir(parents=True, exist_ok=True)
    entries = [ManifestEntry(e.sequence_id, e.frame_index, str(m.resolve(e).resolve()), e.pose)
               for e in originals]
    for i, (e, s) in enumerate(zip(originals, rotated)):
        rel = f"aug/{i:06d}.png"
        write_png(s.image, out / rel)
        entries.append(ManifestEntry(e.sequence_id, e.frame_index, rel, s.label, synthetic=True))
    prov = dict(m.provenance)
    prov.update({"augment.range": f"{lo} {hi}", "augment.seed": args.seed, "augment.epoch": args.epoch,
                 "augment.order": "rotate the original frame, then preprocess"})
    aug = DatasetManifest(m.name, m.split, m.source_format, entries, prov)
    write_manifest(aug, out / f"{m.split}.manifest")
    print(f"{out / (m.split + '.manifest')}: {len(originals)} originals + {len(rotated)} rotated")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    overrides = parse_key_values("\n".join(args.set or []), "--set")
    if overrides:
        cfg = ExperimentConfig.from_mapping({**parse_key_values(cfg.to_text()), **overrides}, "--set")
    out = Path(args.output) if args.output else output_root() / cfg.name
    result = run_experiment(cfg, out)
    s = result.summary
    print(f"{cfg.name}: test median {s['test_median_position_m']:.4f} m, "
          f"{s['test_median_orientation_deg']:.4f} deg; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    m = read_manifest(args.manifest)
    mode = args.preprocessing or extra.get("preprocessing", "whole_fov")
    if m.source_format == "synthetic" and any(not m.resolve(e).exists() for e in m.entries):
        split = prepare_split(m, mode, scene_from_provenance(m.provenance))
    else:
        m.validate(check_paths=True)
        split = prepare_split(m, mode)
    report = evaluate(model, split)
    print(f"{args.manifest}: median {report.median_position:.4f} m, {report.median_orientation:.4f} deg "
          f"over {len(report.position_errors)} predictions")
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(json.dumps({"checkpoint": str(args.checkpoint), "manifest": str(args.manifest),
                                                 "preprocessing": mode, "report": report.to_dict()}, indent=1),
                                     encoding="utf-8")
    return EXIT_OK


def collect_runs(runs_dir, layout: str) -> dict:
    """Grid ``group -> row -> column -> EvalReport`` from every report.json below ``runs_dir``."""
    grid: dict = {}
    paths = sorted(Path(runs_dir).rglob("report.json"))
    if not paths:
        raise FileNotFoundError(f"no report.json under {runs_dir}")
    for path in paths:
        data = json.loads(path.read_text(encoding="utf-8"))
        cfg = ExperimentConfig.from_mapping(data["config"], str(path))
        group = cfg.table_group
        row = cfg.table_row or _default_row(cfg)
        col = cfg.table_column or _default_column(layout, cfg)
        cells = grid.setdefault(group, {}).setdefault(row, {})
        if col in cells:
            raise ValueError(f"{path}: a second run for row {row!r}, column {col!r}")
        cells[col] = EvalReport.from_dict(data["test"])
    return grid


def cmd_report(args) -> int:
    table = emit_table(collect_runs(args.runs, args.layout), args.layout, args.rounding)
    print(table.markdown, end="")
    if args.output:
        prefix = Path(args.output)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        prefix.with_suffix(".md").write_text(table.markdown, encoding="utf-8")
        prefix.with_suffix(".csv").write_text(table.csv, encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poselab", description="Camera pose regression experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="convert a 7-Scenes or Cambridge dataset to a manifest")
    s.add_argument("format", choices=("7scenes", "cambridge"))
    s.add_argument("root")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--split", choices=("train", "test"), default="train")
    s.add_argument("--split-file", default=None)
    s.add_argument("--invert", action="store_true", help="7-Scenes poses are world-to-camera")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="render a synthetic planar scene")
    s.add_argument("--scene", nargs="*", metavar="KEY=VALUE")
    s.add_argument("--trajectory", nargs="*", metavar="KEY=VALUE")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-images", action="store_true", help="write manifests only")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("augment", help="write one rotated copy of every frame")
    s.add_argument("--manifest", required=True)
    s.add_argument("--range", nargs=2, type=float, default=(-20.0, 20.0), metavar=("LO", "HI"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epoch", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train and evaluate one experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--preprocessing", choices=("centered_crop", "whole_fov", "random_crop"))
    s.add_argument("-o", "--output", help="write the report as JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="collect runs into a results table")
    s.add_argument("--layout", choices=sorted(LAYOUTS), default="table1")
    s.add_argument("--runs", required=True)
    s.add_argument("--rounding", choices=("truncate", "round"), default="truncate")
    s.add_argument("-o", "--output", help="path prefix for .md and .csv")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"poselab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"poselab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"poselab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
