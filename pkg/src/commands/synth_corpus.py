import argparse
import logging

from commands.common import resolve_world, start_run
from utils.corpus import build_synthetic_corpus, write_corpus
from utils.evaluate import benchmark


def run(args: argparse.Namespace) -> int:
    preset = benchmark(args.benchmark, seed=args.seed)
    world = resolve_world(args, default=preset.world)
    if world is None:
        logging.error("Error in synth-corpus: corpora are only built in the synthetic world")
        return 2
    start_run(args, world)

    manifest = build_synthetic_corpus(
        world,
        n_identities=args.identities or preset.n_identities,
        n_real=preset.n_real if args.real is None else args.real,
        n_fake=preset.n_fake if args.fake is None else args.fake,
        delta=preset.delta if args.delta is None else args.delta,
        pool_size=args.pool_size or preset.pool_size,
        frames_per_video=args.frames_per_video,
    )
    path = write_corpus(manifest, args.out)
    n_fake = sum(1 for e in manifest.tests if e.label == "fake")
    logging.info(f"Wrote {len(manifest.entries)} entries ({len(manifest.tests)} tests, {n_fake} fake) to {path}")
    print(path)
    return 0
