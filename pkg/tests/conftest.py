import numpy as np
import pytest

from config import SyntheticWorldConfig
from utils.backend import SyntheticBackend, SyntheticPreprocessor
from utils.corpus import build_synthetic_corpus
from utils.models import Image
from utils.synthetic import draw_attributes, draw_identity, seed_for, synth_make_fake, synth_render


def uniform_image(value: float, size: int = 4) -> Image:
    return Image(np.full((size, size, 3), value))


def sample_pair(cfg: SyntheticWorldConfig, identity: int, delta: float = 0.0, other_identity: int | None = None):
    """(ref, test) images: test is a real or fake render of `identity` (or of other_identity) with fresh attributes."""
    mu, detail = draw_identity(cfg, identity)
    ref_seed, test_seed = seed_for(cfg.seed, identity, 0), seed_for(cfg.seed, identity, 1)
    ref = synth_render(mu, draw_attributes(cfg, ref_seed), cfg, detail, ref_seed)
    if other_identity is not None:
        mu, detail = draw_identity(cfg, other_identity)
    test = synth_make_fake(mu, draw_attributes(cfg, test_seed), delta, cfg, f"id{identity:03d}", detail, test_seed).image
    return ref, test


@pytest.fixture
def world() -> SyntheticWorldConfig:
    return SyntheticWorldConfig()


@pytest.fixture
def noiseless_world() -> SyntheticWorldConfig:
    """Default generator imperfections, noiseless identity encoder."""
    return SyntheticWorldConfig(encoder_noise=0.0)


@pytest.fixture
def perfect_world() -> SyntheticWorldConfig:
    return SyntheticWorldConfig(encoder_noise=0.0, generator_leakage=0.0, generator_blur=0.0)


@pytest.fixture
def synthetic_stack(world):
    return SyntheticBackend(world), SyntheticPreprocessor(world)


@pytest.fixture
def small_manifest(world):
    return build_synthetic_corpus(world, n_identities=3, n_real=3, n_fake=3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240501)
