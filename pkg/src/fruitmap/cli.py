"""Command-line pipeline: simulate, map, align, eval, report.

One executable wires the whole pipeline so a scan can be turned into an
evaluated branch map without touching Python. Every subcommand reads an
optional JSON config file; a flag given on the command line beats the
config file, which beats the built-in default. Outputs are deterministic
functions of (input bytes, config, seed), and every JSON product embeds a
provenance block naming the config digest, the seed, and the tool version.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error. All
diagnostics go to standard error; data products only ever go to files.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .alignment import cross_side_transform, merge_maps, transform_map
from .dataset import DatasetError, load_dataset, load_ground_truth
from .evaluation import (
    MATCH_TOLERANCE,
    emit_report,
    evaluate_map,
    report_from_json,
    report_to_json,
    write_scatter,
)
from .mapping import (
    CROSS_SIDE_RADIUS,
    WITHIN_SIDE_RADIUS,
    MergeConfig,
    build_side_map,
    config_digest,
    load_branch_map,
    save_branch_map,
)
from .simulator import OrchardSpec, export_dataset, generate_scene, plan_trajectory
from .spherefit import FitConfig

__all__ = ["main"]

logger = logging.getLogger("fruitmap.cli")

_CONFIG_SECTIONS = ("simulate", "fit", "merge", "eval")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"config {path}: top level must be a JSON object")
    for key, section in doc.items():
        if key not in _CONFIG_SECTIONS:
            raise ValueError(
                f"config {path}: unknown section {key!r} "
                f"(expected one of {', '.join(_CONFIG_SECTIONS)})"
            )
        if not isinstance(section, dict):
            raise ValueError(f"config {path}: section {key!r} must be an object")
    return doc


def _dataclass_kwargs(section: Mapping[str, object], cls: type, where: str) -> dict:
    """Config section to constructor kwargs; JSON lists become tuples."""
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in section.items():
        if key not in known:
            raise ValueError(f"unknown {where} option {key!r}")
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    return kwargs


def _merge_config(section: Mapping[str, object], radius_key: str, default: float) -> MergeConfig:
    allowed = {"within_radius", "cross_radius", "averaging"}
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown merge option(s): {', '.join(sorted(unknown))}")
    return MergeConfig(
        merge_radius=float(section.get(radius_key, default)),
        averaging=str(section.get("averaging", "pairwise")),
    )


def _doc_digest(doc: object) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _provenance(digest: str, seed: int | None) -> dict:
    return {"config_digest": digest, "seed": seed, "tool_version": __version__}


def _write_json(path: Path | str, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------- subcommands

def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    kwargs = _dataclass_kwargs(config.get("simulate", {}), OrchardSpec, "simulate")
    if args.seed is not None:
        kwargs["rng_seed"] = args.seed
    spec = OrchardSpec(**kwargs)
    scene, truth = generate_scene(spec)
    trajectory = plan_trajectory(spec)
    dataset = export_dataset(
        scene,
        trajectory,
        truth,
        args.out,
        extra_manifest={"provenance": _provenance(config_digest(spec), spec.rng_seed)},
    )
    n_frames = sum(len(f) for f in dataset.frames.values())
    logger.info("wrote dataset %s (%d frames) to %s", dataset.dataset_id, n_frames, args.out)
    return 0


def _cmd_map(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    fit_kwargs = _dataclass_kwargs(config.get("fit", {}), FitConfig, "fit")
    if args.seed is not None:
        fit_kwargs["rng_seed"] = args.seed
    fit_cfg = FitConfig(**fit_kwargs)
    merge_cfg = _merge_config(config.get("merge", {}), "within_radius", WITHIN_SIDE_RADIUS)
    dataset = load_dataset(args.dataset)
    branch_map = build_side_map(dataset, args.side, fit_cfg, merge_cfg)
    branch_map = dataclasses.replace(
        branch_map,
        provenance={**branch_map.provenance, "tool_version": __version__},
    )
    save_branch_map(args.out, branch_map)
    logger.info("side %s: %d tracks -> %s", args.side, len(branch_map.tracks), args.out)
    return 0


def _cmd_align(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    merge_cfg = _merge_config(config.get("merge", {}), "cross_radius", CROSS_SIDE_RADIUS)
    map_a = load_branch_map(args.map_a)
    map_b = load_branch_map(args.map_b)
    dataset = load_dataset(args.dataset)
    for label in (map_a.frame_label, map_b.frame_label):
        if label not in dataset.fiducials:
            raise DatasetError(
                f"no fiducial for side {label!r} in dataset {args.dataset}"
            )
    b_to_a = cross_side_transform(
        dataset.fiducials[map_a.frame_label], dataset.fiducials[map_b.frame_label]
    )
    merged = merge_maps(map_a, transform_map(map_b, b_to_a, map_a.frame_label), merge_cfg)
    merged = dataclasses.replace(
        merged,
        provenance={
            **merged.provenance,
            "seed": args.seed,
            "tool_version": __version__,
        },
    )
    save_branch_map(args.out, merged)
    logger.info(
        "merged %d + %d tracks into %d -> %s",
        len(map_a.tracks), len(map_b.tracks), len(merged.tracks), args.out,
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    section = config.get("eval", {})
    unknown = set(section) - {"tolerance", "size_mode"}
    if unknown:
        raise ValueError(f"unknown eval option(s): {', '.join(sorted(unknown))}")
    tolerance = args.tolerance if args.tolerance is not None else float(
        section.get("tolerance", MATCH_TOLERANCE)
    )
    size_mode = args.size_mode if args.size_mode is not None else str(
        section.get("size_mode", "relative")
    )
    branch_map = load_branch_map(args.map)
    truth = load_ground_truth(Path(args.truth))
    report = evaluate_map(branch_map, truth, tolerance=tolerance, size_mode=size_mode)
    doc = json.loads(report_to_json(report))
    doc["provenance"] = _provenance(
        _doc_digest({"tolerance": tolerance, "size_mode": size_mode}), args.seed
    )
    _write_json(args.out, doc)
    logger.info(
        "tp=%d fp=%d fn=%d f1=%.3f -> %s", report.tp, report.fp, report.fn,
        report.f1, args.out,
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    report = report_from_json(Path(args.eval).read_text(encoding="utf-8"))
    if args.format == "csv":
        emit_report(report, args.out, fmt="csv")
    else:
        doc = json.loads(report_to_json(report))
        doc["provenance"] = _provenance(_doc_digest({"format": "json"}), args.seed)
        _write_json(args.out, doc)
    if args.scatter is not None:
        write_scatter(report, args.scatter)
        logger.info("scatter (%d rows) -> %s", len(report.size_pairs), args.scatter)
    logger.info("report (%s) -> %s", args.format, args.out)
    return 0


# -------------------------------------------------------------------- wiring

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fruitmap",
        description="Map, size, and evaluate fruitlets along a scanned branch.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file", default=None)
    common.add_argument("--seed", type=int, default=None, help="override the base RNG seed")
    common.add_argument(
        "--log-level",
        choices=("debug", "info", "warning", "error"),
        default="warning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render a synthetic scan dataset")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("map", parents=[common], help="build one side's branch map")
    p.add_argument("--dataset", required=True, help="scan dataset directory")
    p.add_argument("--side", required=True, help="side label, e.g. A")
    p.add_argument("--out", required=True, help="branch map JSON to write")
    p.set_defaults(handler=_cmd_map)

    p = sub.add_parser("align", parents=[common], help="merge two side maps into one frame")
    p.add_argument("--map-a", required=True, help="reference-side branch map JSON")
    p.add_argument("--map-b", required=True, help="branch map JSON to fold in")
    p.add_argument("--dataset", required=True, help="dataset holding the fiducial records")
    p.add_argument("--out", required=True, help="merged branch map JSON to write")
    p.set_defaults(handler=_cmd_align)

    p = sub.add_parser("eval", parents=[common], help="score a branch map against ground truth")
    p.add_argument("--map", required=True, help="branch map JSON")
    p.add_argument("--truth", required=True, help="ground truth JSON")
    p.add_argument("--tolerance", type=float, default=None, help="match radius in meters")
    p.add_argument(
        "--size-mode", choices=("relative", "mean_normalized"), default=None,
        help="size RMSE normalization",
    )
    p.add_argument("--out", required=True, help="evaluation report JSON to write")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render an evaluation report")
    p.add_argument("--eval", required=True, help="evaluation report JSON")
    p.add_argument("--format", choices=("json", "csv"), required=True)
    p.add_argument("--out", required=True, help="file to write")
    p.add_argument("--scatter", default=None, help="optional matched-sizes CSV")
    p.set_defaults(handler=_cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse prints its own diagnostics; usage errors are validation errors
        return 0 if exc.code == 0 else 1
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        return args.handler(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
