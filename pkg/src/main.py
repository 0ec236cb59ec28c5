import argparse
import logging
import sys

from config import Config, Level, SearchMethod, Strategy
from commands import calibrate, detect, evaluate, finetune, sweep_jpeg, synth_corpus

COMMANDS = {
    "synth-corpus": synth_corpus,
    "detect": detect,
    "evaluate": evaluate,
    "sweep-jpeg": sweep_jpeg,
    "calibrate": calibrate,
    "finetune": finetune,
}


def parse_qfs(text: str) -> tuple[int, ...]:
    try:
        qfs = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--qfs expects comma-separated integers, got {text!r}")
    if not qfs or any(not 1 <= q <= 100 for q in qfs):
        raise argparse.ArgumentTypeError(f"quality factors must lie in [1, 100], got {text!r}")
    return qfs


def add_threshold_args(parser: argparse.ArgumentParser, allow_calibrate: bool):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=float)
    group.add_argument("--threshold-file", help="threshold.json written by calibrate")
    if allow_calibrate:
        group.add_argument("--calibrate", action="store_true", help="Calibrate the threshold on this run's scores")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="Output directory")
    common.add_argument("--backend", default="synthetic", help="synthetic | adapter:<spec.json>")
    common.add_argument("--world", help="world_config.json for the synthetic backend")
    common.add_argument("--seed", type=int, default=1234)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--gain", type=float, default=Config.DEFAULT_GAIN, help="Diff visualization gain")
    common.add_argument("--no-mask", dest="use_mask", action="store_false", help="Compare whole images")
    common.add_argument("--leakage", type=float, help="Override the synthetic generator leakage")
    common.add_argument("--blur", type=float, help="Override the synthetic generator blur")
    common.add_argument("--tuned", help="tuned_generator.json from a finetune run")
    common.add_argument("--verbose", action="store_true")

    evaluation = argparse.ArgumentParser(add_help=False)
    evaluation.add_argument("--manifest", required=True, help="Corpus manifest (.jsonl)")
    evaluation.add_argument("--strategy", type=Strategy, choices=list(Strategy), default=Strategy.FRONTAL)
    evaluation.add_argument("--level", type=Level, choices=list(Level), default=Level.FRAME)
    evaluation.add_argument("--frames-per-video", type=int, default=Config.FRAMES_PER_VIDEO)
    evaluation.add_argument("--sample-budget", type=int, help="Total tests, split evenly over identities")

    parser = argparse.ArgumentParser(description="Reference-assisted face-swap detection by identity difference")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", parents=[common], help="Materialize a synthetic corpus")
    p.add_argument("--benchmark", default="standard")
    p.add_argument("--identities", type=int)
    p.add_argument("--real", type=int)
    p.add_argument("--fake", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--frames-per-video", type=int, default=1)

    p = sub.add_parser("detect", parents=[common], help="Score one reference/test pair")
    add_threshold_args(p, allow_calibrate=False)
    p.add_argument("ref")
    p.add_argument("test")

    p = sub.add_parser("evaluate", parents=[common, evaluation], help="AUC over a corpus")
    add_threshold_args(p, allow_calibrate=True)

    p = sub.add_parser("sweep-jpeg", parents=[common, evaluation], help="JPEG robustness sweep")
    add_threshold_args(p, allow_calibrate=False)
    p.add_argument("--qfs", type=parse_qfs, default=Config.DEFAULT_QFS)

    sub.add_parser("calibrate", parents=[common, evaluation], help="Calibrate a decision threshold")

    p = sub.add_parser("finetune", parents=[common], help="Tune the synthetic generator's imperfections")
    p.add_argument("--manifest", help="Take the world config from this manifest")
    p.add_argument("--search", type=SearchMethod, choices=list(SearchMethod), default=SearchMethod.COORDINATE_DESCENT)
    p.add_argument("--budget", type=int, default=40)
    p.add_argument("--identities", type=int, default=10)
    p.add_argument("--variants", type=int, default=4)
    p.add_argument("--ablation", action="store_true",
                   help="Evaluate pretrained and tuned generators with and without the mask on --manifest")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        force=True,
    )
    try:
        return COMMANDS[args.command].run(args)
    except Exception as e:
        logging.error(f"Error in {args.command}: {str(e)}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
