"""Command-line interface: generate / run / report.

Configs are JSON files whose keys mirror the config dataclass fields;
unknown keys are rejected with the list of valid alternatives. Exit codes:
0 success, 1 runtime error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from .core import GridMeta, ValidationError
from .extract import ExtractionConfig
from .grid_io import write_grid_file
from .pipeline import RunConfig, run_pipeline
from .synth import DistortionSpec, SynthConfig, generate_dataset
from .uncertainty import PresenceConfig, RegionSpec

log = logging.getLogger("bevcal")


class ConfigError(ValueError):
    """Bad configuration file or keys; maps to exit code 2."""


def _build(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context} must be an object")
    valid = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in valid:
            raise ConfigError(
                f"unknown config key {key!r} in {context}; valid keys: {', '.join(sorted(valid))}"
            )
    try:
        return cls(**data)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def load_synth_config(path, seed_override: int | None = None) -> SynthConfig:
    data = _load_json(path)
    valid = {f.name for f in dataclasses.fields(SynthConfig)}
    for key in data:
        if key not in valid:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(valid))}"
            )
    kwargs = dict(data)
    kwargs["meta"] = _build(GridMeta, data.get("meta", {}), "meta")
    if "distortion" in data:
        kwargs["distortion"] = _build(DistortionSpec, data["distortion"], "distortion")
    if seed_override is not None:
        kwargs["rng_seed"] = seed_override
    return _build_from_kwargs(SynthConfig, kwargs, "synth config")


def _build_from_kwargs(cls, kwargs: dict, context: str):
    try:
        return cls(**kwargs)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


def load_run_config(
    path, seed_override: int | None = None, threads_override: int | None = None
) -> RunConfig:
    data = _load_json(path)
    valid = {
        "dataset_dir",
        "output_dir",
        "extraction",
        "presence",
        "regions",
        "split",
        "timesteps_to_evaluate",
        "variants",
        "obj_cal_base",
        "scene_svg_count",
        "pixel_stride",
    }
    for key in data:
        if key not in valid:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(valid))}"
            )
    for required in ("dataset_dir", "output_dir"):
        if required not in data:
            raise ConfigError(f"missing required config key {required!r}")

    split = data.get("split", {})
    if not isinstance(split, dict) or set(split) - {"calibration_fraction", "seed"}:
        raise ConfigError("split must be an object with keys calibration_fraction, seed")

    kwargs = {
        "dataset_dir": Path(data["dataset_dir"]),
        "output_dir": Path(data["output_dir"]),
        "extraction": _build(ExtractionConfig, data.get("extraction", {}), "extraction"),
        "presence": _build(PresenceConfig, data.get("presence", {}), "presence"),
        "regions": tuple(
            _build(RegionSpec, r, f"regions[{i}]") for i, r in enumerate(data.get("regions", []))
        ),
        "calibration_fraction": split.get("calibration_fraction", 0.2),
        "split_seed": split.get("seed", 0),
    }
    if seed_override is not None:
        kwargs["split_seed"] = seed_override
    if threads_override is not None:
        kwargs["threads"] = threads_override
    for key in ("timesteps_to_evaluate", "variants"):
        if key in data:
            kwargs[key] = tuple(data[key])
    for key in ("obj_cal_base", "scene_svg_count", "pixel_stride"):
        if key in data:
            kwargs[key] = data[key]
    return _build_from_kwargs(RunConfig, kwargs, "run config")


def cmd_generate(args) -> int:
    config = load_synth_config(args.config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = generate_dataset(config)
    manifest = {"config_hash": _config_hash(args.config), "frames": []}
    for frame in frames:
        name = f"{frame.episode_id}_{frame.frame_id}.bevg"
        write_grid_file(frame, out_dir / name)
        manifest["frames"].append(
            {"frame_id": frame.frame_id, "episode_id": frame.episode_id, "file": name}
        )
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d frames to %s", len(frames), out_dir)
    print(f"generated {len(frames)} frames in {out_dir}")
    return 0


def _config_hash(path) -> str:
    doc = _load_json(path)
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(canonical).hexdigest()


def cmd_run(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.threads)
    metrics_path = run_pipeline(cfg)
    print(f"metrics written to {metrics_path}")
    return 0


def cmd_report(args) -> int:
    metrics_path = Path(args.results_dir) / "metrics.csv"
    if not metrics_path.exists():
        print(f"error: no metrics.csv in {args.results_dir}", file=sys.stderr)
        return 2
    with open(metrics_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if args.csv:
        with open(metrics_path) as fh:
            sys.stdout.write(fh.read())
        return 0

    variants = []
    table: dict[str, dict[str, str]] = {}
    for row in rows:
        if row["variant"] not in variants:
            variants.append(row["variant"])
        table.setdefault(row["metric"], {})[row["variant"]] = row["value"]
    name_w = max((len(m) for m in table), default=6) + 2
    col_w = 14
    header = "metric".ljust(name_w) + "".join(v.rjust(col_w) for v in variants)
    print(header)
    print("-" * len(header))
    for metric in sorted(table):
        cells = []
        for v in variants:
            raw = table[metric].get(v, "")
            try:
                cells.append(f"{float(raw):.6f}".rjust(col_w))
            except ValueError:
                cells.append(raw.rjust(col_w))
        print(metric.ljust(name_w) + "".join(cells))
    return 0


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevcal",
        description="Object-level uncertainty and calibration from BEV occupancy grids",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (0 = auto)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--verbose", action="store_true", help="verbose logging")

    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="generate a synthetic dataset")
    gen.add_argument("--config", required=True, help="synthesis config (JSON)")
    gen.add_argument("--out", default="dataset", help="output directory for BEVG files")
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", parents=[common], help="run the full pipeline")
    run.add_argument("--config", required=True, help="run config (JSON)")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", parents=[common], help="summarize a results directory")
    rep.add_argument("results_dir", help="directory holding metrics.csv")
    rep.add_argument("--csv", action="store_true", help="echo metrics.csv verbatim")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 1
        if args.verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
