from concurrent.futures import ThreadPoolExecutor
import logging

from utils.backend import GeneratorBackend
from utils.errors import BackendError, ShapeError
from utils.models import Image, ReconstructionQuad

# name -> (identity source, attribute source)
GENERATIONS = {
    "i_rr": ("ref", "ref"),
    "i_tr": ("test", "ref"),
    "i_tt": ("test", "test"),
    "i_rt": ("ref", "test"),
}


def _run_stage(stage: str, fn, *args):
    try:
        return fn(*args)
    except Exception as e:
        logging.error(f"Error in {stage}: {str(e)}")
        raise BackendError(str(e), stage=stage) from e


def reconstruct_quad(ref: Image, test: Image, backend: GeneratorBackend, parallel: bool = False) -> ReconstructionQuad:
    """The four attribute-aligned generations of a reference/test pair.

    Each image is encoded exactly once; the embeddings are shared by every
    generation that uses them.
    """
    resolution = backend.working_resolution()
    for name, image in (("ref", ref), ("test", test)):
        if image.size != resolution:
            raise ShapeError(f"{name} image is {image.size}, backend works at {resolution}")

    ids = {
        "ref": _run_stage("encode ref identity", backend.encode_identity, ref),
        "test": _run_stage("encode test identity", backend.encode_identity, test),
    }
    atts = {
        "ref": _run_stage("encode ref attributes", backend.encode_attributes, ref),
        "test": _run_stage("encode test attributes", backend.encode_attributes, test),
    }

    def generate(name: str) -> Image:
        id_source, att_source = GENERATIONS[name]
        return _run_stage(f"generate {name}", backend.generate, ids[id_source], atts[att_source])

    if parallel and backend.thread_safe:
        with ThreadPoolExecutor(max_workers=len(GENERATIONS)) as pool:
            images = dict(zip(GENERATIONS, pool.map(generate, GENERATIONS)))
    else:
        images = {name: generate(name) for name in GENERATIONS}

    return ReconstructionQuad(
        **images,
        z_id_ref=ids["ref"],
        z_id_test=ids["test"],
        z_att_ref=atts["ref"],
        z_att_test=atts["test"],
    )
