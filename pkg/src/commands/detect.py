import argparse
import logging

from commands.common import resolve_threshold, resolve_world, start_run
from config import BackendKind, Config
from utils.backend import make_backend
from utils.errors import PreprocessingError
from utils.imaging import load_image
from utils.quantify import detect
from utils.reports import write_detection


def run(args: argparse.Namespace) -> int:
    """Exit status 0 for a real verdict, 1 for fake, 2 on any error."""
    try:
        ref, test = load_image(args.ref), load_image(args.test)
    except OSError as e:
        logging.error(f"Error in detect: cannot read input image: {str(e)}")
        return 2

    threshold = resolve_threshold(args)
    if threshold is None:
        threshold = Config.REAL_BACKEND_THRESHOLD
        if args.backend == BackendKind.SYNTHETIC:
            logging.warning("No calibrated threshold given for the synthetic backend; "
                            f"falling back to {threshold}")

    world = resolve_world(args)
    start_run(args, world, threshold)
    backend, preprocessor = make_backend(args.backend, world, use_mask=args.use_mask)
    try:
        result = detect(ref, test, backend, preprocessor, threshold)
    except PreprocessingError as e:
        logging.error(f"Error in detect: preprocessing failed: {str(e)}")
        return 2
    finally:
        backend.close()

    record = write_detection(result, args.out, args.gain)
    print(f"{record['verdict']} score={record['score']:.6f} threshold={threshold:.6f}")
    return 1 if result.is_fake else 0
