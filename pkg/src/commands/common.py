"""Helpers shared by the CLI commands: resolving worlds, thresholds and the run config."""
import argparse
import json
import logging
from pathlib import Path

from config import BackendKind, EvaluationConfig, RunConfig, SyntheticWorldConfig
from utils.models import CorpusManifest

_RUN_CONFIG_FIELDS = {"out", "backend", "strategy", "level", "threshold", "calibrate", "qfs", "gain", "seed",
                      "workers", "use_mask", "manifest"}


def build_run_config(args: argparse.Namespace, world: SyntheticWorldConfig | None = None,
                     threshold: float | None = None) -> RunConfig:
    values = vars(args)
    known = {key: values[key] for key in _RUN_CONFIG_FIELDS if values.get(key) is not None}
    if threshold is not None:
        known["threshold"] = threshold
    inputs = {key: value for key, value in values.items()
              if key not in _RUN_CONFIG_FIELDS | {"command", "verbose"} and value is not None}
    return RunConfig(command=args.command, world=world.to_dict() if world else None, inputs=inputs, **known)


def start_run(args: argparse.Namespace, world: SyntheticWorldConfig | None = None,
              threshold: float | None = None) -> RunConfig:
    """Resolve the run config and persist it before any work starts."""
    run_config = build_run_config(args, world, threshold)
    path = run_config.save(args.out)
    logging.info(f"Run config {run_config.fingerprint()[:12]} written to {path}")
    return run_config


def resolve_world(args: argparse.Namespace, manifest: CorpusManifest | None = None,
                  default: SyntheticWorldConfig | None = None) -> SyntheticWorldConfig | None:
    """World for the synthetic backend, with generator overrides applied; None for adapters."""
    if args.backend != BackendKind.SYNTHETIC:
        return None
    if args.world:
        world = SyntheticWorldConfig.load(args.world)
    elif manifest is not None and manifest.world_config is not None:
        world = manifest.world_config
    else:
        world = default or SyntheticWorldConfig()

    leakage, blur = world.generator_leakage, world.generator_blur
    if args.tuned:
        tuned = json.loads(Path(args.tuned).read_text())
        leakage, blur = tuned["generator_leakage"], tuned["generator_blur"]
    if args.leakage is not None:
        leakage = args.leakage
    if args.blur is not None:
        blur = args.blur
    return world.with_generator(leakage, blur)


def resolve_threshold(args: argparse.Namespace) -> float | None:
    if getattr(args, "threshold", None) is not None:
        return args.threshold
    if getattr(args, "threshold_file", None):
        return float(json.loads(Path(args.threshold_file).read_text())["threshold"])
    return None


def evaluation_config(args: argparse.Namespace, threshold: float | None) -> EvaluationConfig:
    return EvaluationConfig(
        strategy=args.strategy,
        level=args.level,
        seed=args.seed,
        threshold=threshold,
        use_mask=args.use_mask,
        workers=args.workers,
        frames_per_video=args.frames_per_video,
        sample_budget=args.sample_budget,
    )
