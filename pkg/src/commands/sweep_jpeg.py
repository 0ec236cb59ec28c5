import argparse

from commands.common import evaluation_config, resolve_threshold, resolve_world, start_run
from utils.backend import make_backend
from utils.corpus import read_manifest
from utils.evaluate import jpeg_robustness_sweep
from utils.reports import write_sweep


def run(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    world = resolve_world(args, manifest)
    threshold = resolve_threshold(args)
    run_config = start_run(args, world, threshold)

    backend, preprocessor = make_backend(args.backend, world)
    try:
        sweep = jpeg_robustness_sweep(manifest, backend, preprocessor, list(args.qfs),
                                      evaluation_config(args, threshold), run_config.fingerprint())
    finally:
        backend.close()

    print(sweep.summary().to_string(index=False))
    print(write_sweep(sweep, args.out))
    return 0
