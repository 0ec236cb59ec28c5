"""Turning a reconstruction quad into the identity-difference score.

ref space compares i_rr and i_tr against the reference image, test space
compares i_tt and i_rt against the test image; both under the face mask of
the image they are compared with.
"""
import logging

import numpy as np

from config import Config, Space
from utils.backend import FacePreprocessor, GeneratorBackend
from utils.errors import PreprocessingError
from utils.imaging import masked_l2, pixel_diff
from utils.models import (
    DetectionResult,
    DiffIdScore,
    DistanceTriple,
    FaceMask,
    IdentityEmbedding,
    Image,
    ReconstructionQuad,
)
from utils.reconstruction import reconstruct_quad


def distance_triple(original: Image, quad: ReconstructionQuad, mask: FaceMask, space: Space) -> DistanceTriple:
    space = Space(space)
    if space == Space.REF:
        recon, recon_id = quad.i_rr, quad.i_tr
    else:
        recon, recon_id = quad.i_tt, quad.i_rt
    return DistanceTriple(
        l_recon=masked_l2(recon, original, mask),
        l_recon_id=masked_l2(recon_id, original, mask),
        l_id=masked_l2(recon, recon_id, mask),
        space=space,
    )


def angle_from_triple(t: DistanceTriple, eps: float = Config.EPS) -> float:
    """Angle at the original image between the two reconstruction errors (law of cosines)."""
    if t.l_recon < eps or t.l_recon_id < eps:
        return 0.0
    cosine = (t.l_recon ** 2 + t.l_recon_id ** 2 - t.l_id ** 2) / (2.0 * t.l_recon * t.l_recon_id)
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))


def combine_components(ratio_ref: float, ratio_test: float, theta_ref: float, theta_test: float) -> float:
    return ratio_ref * ratio_test * (theta_ref + theta_test) / 2.0


def diffid_metric(ref_triple: DistanceTriple, test_triple: DistanceTriple, eps: float = Config.EPS) -> DiffIdScore:
    if ref_triple.space != Space.REF or test_triple.space != Space.TEST:
        raise ValueError(f"Expected (ref, test) triples, got ({ref_triple.space}, {test_triple.space})")
    ratio_ref = ref_triple.l_id / max(ref_triple.l_recon, eps)
    ratio_test = test_triple.l_id / max(test_triple.l_recon, eps)
    theta_ref = angle_from_triple(ref_triple, eps)
    theta_test = angle_from_triple(test_triple, eps)
    return DiffIdScore(
        ratio_ref=ratio_ref,
        ratio_test=ratio_test,
        theta_ref=theta_ref,
        theta_test=theta_test,
        value=combine_components(ratio_ref, ratio_test, theta_ref, theta_test),
        ref_triple=ref_triple,
        test_triple=test_triple,
    )


def cosine_similarity(a: IdentityEmbedding, b: IdentityEmbedding) -> float:
    norm_a, norm_b = a.norm, b.norm
    if norm_a == 0 or norm_b == 0:
        raise ValueError("Cosine similarity is undefined for a zero-norm embedding")
    if a.vector.shape != b.vector.shape:
        raise ValueError(f"Embedding dimensions differ: {a.vector.shape} vs {b.vector.shape}")
    return float(np.clip(np.dot(a.vector, b.vector) / (norm_a * norm_b), -1.0, 1.0))


def iesim_from_embeddings(z_ref: IdentityEmbedding, z_test: IdentityEmbedding) -> float:
    return 1.0 - cosine_similarity(z_ref, z_test)


def iesim_score(ref: Image, test: Image, backend: GeneratorBackend) -> float:
    return iesim_from_embeddings(backend.encode_identity(ref), backend.encode_identity(test))


def _preprocess(preprocessor: FacePreprocessor, image: Image, name: str):
    try:
        return preprocessor.detect_align(image)
    except PreprocessingError as e:
        logging.error(f"Error in detect_align ({name}): {str(e)}")
        raise


def detect(ref: Image, test: Image, backend: GeneratorBackend, preprocessor: FacePreprocessor,
           threshold: float, eps: float = Config.EPS) -> DetectionResult:
    """Preprocess, reconstruct, quantify; the test is called fake when the score exceeds threshold."""
    ref_aligned, ref_mask, ref_yaw = _preprocess(preprocessor, ref, "ref")
    test_aligned, test_mask, test_yaw = _preprocess(preprocessor, test, "test")

    quad = reconstruct_quad(ref_aligned, test_aligned, backend)
    score = diffid_metric(
        distance_triple(ref_aligned, quad, ref_mask, Space.REF),
        distance_triple(test_aligned, quad, test_mask, Space.TEST),
        eps,
    )
    return DetectionResult(
        score=score,
        is_fake=score.value > threshold,
        threshold=threshold,
        quad=quad,
        diff_ref=pixel_diff(quad.i_rr, quad.i_tr),
        diff_test=pixel_diff(quad.i_tt, quad.i_rt),
        diff_recon=pixel_diff(quad.i_rr, ref_aligned),
        iesim=iesim_from_embeddings(quad.z_id_ref, quad.z_id_test),
        ref_yaw=ref_yaw,
        test_yaw=test_yaw,
    )
