import argparse
import logging

from commands.common import evaluation_config, resolve_threshold, resolve_world, start_run
from utils.backend import make_backend
from utils.corpus import read_manifest
from utils.evaluate import run_evaluation
from utils.metrics import calibrate_threshold
from utils.reports import write_calibration, write_eval_report


def run(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    world = resolve_world(args, manifest)
    threshold = resolve_threshold(args)
    run_config = start_run(args, world, threshold)

    backend, preprocessor = make_backend(args.backend, world)
    try:
        report = run_evaluation(manifest, backend, preprocessor, evaluation_config(args, threshold),
                                run_config.fingerprint())
    finally:
        backend.close()

    if args.calibrate:
        calibration = calibrate_threshold(report.real_scores, report.fake_scores)
        report.threshold = calibration.threshold
        report.balanced_accuracy = calibration.balanced_accuracy
        write_calibration(calibration, report.real_scores, report.fake_scores, args.out, run_config.fingerprint())

    path = write_eval_report(report, args.out)
    accuracy = "n/a" if report.balanced_accuracy is None else f"{report.balanced_accuracy:.4f}"
    logging.info(f"AUC {report.auc:.4f} (degenerate={report.degenerate}), balanced accuracy {accuracy}")
    print(path)
    return 0
