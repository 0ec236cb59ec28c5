import argparse
import logging

from commands.common import resolve_world, start_run
from config import BackendKind, EvaluationConfig
from utils.backend import SyntheticBackend, SyntheticPreprocessor
from utils.corpus import CorpusLoader, read_manifest
from utils.evaluate import finetune_ablation, reconstruction_comparison
from utils.finetune import finetune_synthetic_generator, make_training_set
from utils.reports import write_finetune, write_finetune_ablation


def run(args: argparse.Namespace) -> int:
    if args.backend != BackendKind.SYNTHETIC:
        logging.error("Error in finetune: fine-tuning schedules for external generators belong to the adapter")
        return 2
    if args.ablation and not args.manifest:
        logging.error("Error in finetune: --ablation needs a --manifest to evaluate on")
        return 2
    manifest = read_manifest(args.manifest) if args.manifest else None
    world = resolve_world(args, manifest)
    run_config = start_run(args, world)

    training = make_training_set(world, n_identities=args.identities, n_variants=args.variants)
    result = finetune_synthetic_generator(world, training, search=args.search, budget=args.budget,
                                          workers=args.workers)
    path = write_finetune(result, args.out)

    if args.ablation:
        tuned = SyntheticBackend(world.with_generator(result.leakage, result.blur))
        pretrained, preprocessor = SyntheticBackend(world), SyntheticPreprocessor(world)
        ablation = finetune_ablation(manifest, pretrained, tuned, preprocessor,
                                     EvaluationConfig(seed=args.seed, workers=args.workers),
                                     run_config.fingerprint())
        ref = CorpusLoader(manifest).load(manifest.reference_pool(manifest.identities[0])[0])
        comparison = reconstruction_comparison(ref, preprocessor, {"pretrained": pretrained, "finetuned": tuned})
        write_finetune_ablation(ablation, comparison, args.out)
        for (generator, use_mask), report in ablation.reports.items():
            logging.info(f"{generator} generator, mask {'on' if use_mask else 'off'}: AUC {report.auc:.4f}")

    print(path)
    return 0
