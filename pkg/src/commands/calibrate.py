import argparse
import logging

from commands.common import evaluation_config, resolve_world, start_run
from utils.backend import make_backend
from utils.corpus import read_manifest
from utils.evaluate import run_evaluation
from utils.metrics import calibrate_threshold
from utils.reports import write_calibration, write_eval_report


def run(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    world = resolve_world(args, manifest)
    run_config = start_run(args, world)

    backend, preprocessor = make_backend(args.backend, world)
    try:
        report = run_evaluation(manifest, backend, preprocessor, evaluation_config(args, None),
                                run_config.fingerprint())
    finally:
        backend.close()

    calibration = calibrate_threshold(report.real_scores, report.fake_scores)
    report.threshold = calibration.threshold
    report.balanced_accuracy = calibration.balanced_accuracy
    write_eval_report(report, args.out, name="calibration_report")
    path = write_calibration(calibration, report.real_scores, report.fake_scores, args.out, run_config.fingerprint())
    logging.info(f"Threshold {calibration.threshold:.6f} (real q95 {calibration.real_q95:.6f}, "
                 f"fake q5 {calibration.fake_q5:.6f}), balanced accuracy {calibration.balanced_accuracy:.4f}")
    print(path)
    return 0
