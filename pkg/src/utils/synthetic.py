"""Synthetic face-swap world with exactly known identity and attribute latents.

Pure helpers (no backend or file I/O). A rendered face is a smooth background
driven by the attribute latent plus d_id compact "landmark" bumps whose
amplitudes come from the identity latent. Expression attributes bend the
landmark geometry (entanglement), yaw shifts landmarks sideways and dims the
averted side (occlusion).

Attribute layout:
    attr[0]   yaw / 90
    attr[1]   background gradient
    attr[2]   background tint
    attr[3]   background clutter level
    attr[4:]  expression
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.ndimage import gaussian_filter

from config import Config, SyntheticWorldConfig
from utils.errors import BackendError, ShapeError
from utils.imaging import dilate_mask
from utils.models import (
    AttributeEmbedding,
    FaceMask,
    IdentityEmbedding,
    Image,
    SyntheticLatent,
    SyntheticSample,
)

FEATURE_GAIN = 0.12
FEATURE_RADIUS = 0.065
FEATURE_SHIFT_PX = 1.5
FEATURE_SCALE_RANGE = 0.2
YAW_SHIFT = 0.12
# Yaw (degrees) at which an outermost landmark is fully dimmed.
OCCLUSION_YAW = 30.0
BACKGROUND_LEVEL = 0.45
N_LAYOUT_ATTRS = 4

# Stream tags for np.random.default_rng([seed, tag, ...]).
_LAYOUT, _IDENTITY, _ATTRIBUTES, _ENCODER, _FAKE_DIRECTION = range(5)


@dataclass(frozen=True, eq=False)
class WorldLayout:
    centers: np.ndarray          # (d_id, 2) landmark centers, (row, col)
    sides: np.ndarray            # (d_id,) horizontal side in [-1, 1]
    colors: np.ndarray           # (d_id, 3)
    pos_coupling: np.ndarray     # (d_id, 2, n_expr)
    scale_coupling: np.ndarray   # (d_id, n_expr)
    leakage: np.ndarray          # (d_id, d_att)
    nuisance: np.ndarray         # (d_id, k) orthonormal columns
    nuisance_coupling: np.ndarray  # (k, d_att)
    clutter_texture: np.ndarray  # (S, S)
    outside_face: np.ndarray     # (S, S) bool
    rows: np.ndarray
    cols: np.ndarray
    radius: float


@lru_cache(maxsize=16)
def world_layout(seed: int, d_id: int, d_att: int, image_size: int) -> WorldLayout:
    rng = np.random.default_rng([seed, _LAYOUT])
    size = image_size
    n_side = math.ceil(math.sqrt(d_id))
    grid = np.linspace(0.27 * size, 0.73 * size, n_side) if n_side > 1 else np.array([size / 2])
    centers = np.array([(r, c) for r in grid for c in grid][:d_id], dtype=np.float64)
    sides = (centers[:, 1] - size / 2) / (0.23 * size)

    n_expr = d_att - N_LAYOUT_ATTRS
    k = max(1, min(4, d_id // 4))
    nuisance, _ = np.linalg.qr(rng.standard_normal((d_id, k)))

    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    period = 4.0
    phases = rng.uniform(0, 2 * np.pi, size=2)
    clutter_texture = np.sin(2 * np.pi * cols / period + phases[0]) * np.sin(2 * np.pi * rows / period + phases[1])
    outside_face = ((rows - size / 2) / (0.47 * size)) ** 2 + ((cols - size / 2) / (0.44 * size)) ** 2 > 1.0

    return WorldLayout(
        centers=centers,
        sides=np.clip(sides, -1.0, 1.0),
        colors=0.6 + 0.4 * rng.random((d_id, 3)),
        pos_coupling=rng.standard_normal((d_id, 2, n_expr)) / math.sqrt(n_expr),
        scale_coupling=rng.standard_normal((d_id, n_expr)) / math.sqrt(n_expr),
        leakage=rng.standard_normal((d_id, d_att)) / math.sqrt(d_att),
        nuisance=nuisance,
        nuisance_coupling=rng.standard_normal((k, d_att)) / math.sqrt(d_att),
        clutter_texture=clutter_texture,
        outside_face=outside_face,
        rows=rows,
        cols=cols,
        radius=FEATURE_RADIUS * size,
    )


def layout_for(cfg: SyntheticWorldConfig) -> WorldLayout:
    return world_layout(cfg.seed, cfg.d_id, cfg.d_att, cfg.image_size)


def _check_latents(mu: np.ndarray, attr: np.ndarray, cfg: SyntheticWorldConfig):
    if np.shape(mu) != (cfg.d_id,):
        raise ShapeError(f"Identity latent must have shape ({cfg.d_id},), got {np.shape(mu)}")
    if np.shape(attr) != (cfg.d_att,):
        raise ShapeError(f"Attribute latent must have shape ({cfg.d_att},), got {np.shape(attr)}")


def project_out_nuisance(z: np.ndarray, cfg: SyntheticWorldConfig) -> np.ndarray:
    """Remove the attribute-sensitive subspace; identity when it is disabled."""
    if cfg.encoder_attribute_bias == 0:
        return np.asarray(z, dtype=np.float64)
    basis = layout_for(cfg).nuisance
    return z - basis @ (basis.T @ z)


def seed_for(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ====================================================================
# Geometry
# ====================================================================

def landmark_geometry(attr: np.ndarray, cfg: SyntheticWorldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Landmark centers and radii for an attribute latent."""
    layout = layout_for(cfg)
    expr = np.asarray(attr[N_LAYOUT_ATTRS:], dtype=np.float64)
    scale_px = cfg.image_size / 64
    offsets = FEATURE_SHIFT_PX * scale_px * np.tanh(cfg.entanglement * np.einsum("kce,e->kc", layout.pos_coupling, expr))
    scales = 1.0 + FEATURE_SCALE_RANGE * np.tanh(cfg.entanglement * (layout.scale_coupling @ expr))
    centers = layout.centers + offsets
    centers[:, 1] += YAW_SHIFT * cfg.image_size * attr[0]
    return centers, layout.radius * scales


def landmark_visibility(yaw_deg: float, cfg: SyntheticWorldConfig) -> np.ndarray:
    layout = layout_for(cfg)
    return 1.0 - cfg.yaw_occlusion * np.clip(yaw_deg / OCCLUSION_YAW * layout.sides, 0.0, 1.0)


def visible_landmark_count(yaw_deg: float, cfg: SyntheticWorldConfig) -> int:
    return int(np.sum(landmark_visibility(yaw_deg, cfg) >= 1.0))


def _bumps(attr: np.ndarray, cfg: SyntheticWorldConfig) -> np.ndarray:
    layout = layout_for(cfg)
    centers, radii = landmark_geometry(attr, cfg)
    r2 = (layout.rows[None] - centers[:, 0, None, None]) ** 2 + (layout.cols[None] - centers[:, 1, None, None]) ** 2
    return np.clip(1.0 - r2 / radii[:, None, None] ** 2, 0.0, None) ** 2


def landmark_supports(attr: np.ndarray, cfg: SyntheticWorldConfig) -> np.ndarray:
    """(d_id, S, S) boolean supports of each landmark."""
    return _bumps(attr, cfg) > 0


# ====================================================================
# Rendering
# ====================================================================

def render_pixels(mu: np.ndarray, attr: np.ndarray, cfg: SyntheticWorldConfig, detail: float = 1.0) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    attr = np.asarray(attr, dtype=np.float64)
    _check_latents(mu, attr, cfg)
    layout = layout_for(cfg)
    size = cfg.image_size

    x = layout.cols / (size - 1) * 2.0 - 1.0
    tint = np.array([1.0, 0.0, -1.0])
    background = (
        BACKGROUND_LEVEL
        + 0.1 * np.tanh(attr[1]) * x[..., None]
        + 0.08 * np.tanh(attr[2]) * tint
    )
    clutter = cfg.background_clutter * np.tanh(attr[3]) * layout.clutter_texture * layout.outside_face
    background = background + clutter[..., None]

    amplitudes = FEATURE_GAIN * detail * mu * landmark_visibility(attr[0] * 90.0, cfg)
    face = np.einsum("k,kij,kc->ijc", amplitudes, _bumps(attr, cfg), layout.colors)
    return np.clip(background + face, 0.0, 1.0)


def synth_render(mu: np.ndarray, attr: np.ndarray, cfg: SyntheticWorldConfig,
                 detail: float = 1.0, sample_seed: int = 0) -> Image:
    pixels = render_pixels(mu, attr, cfg, detail)
    return Image(pixels, latent=SyntheticLatent(mu, attr, detail=detail, sample_seed=sample_seed))


def draw_identity(cfg: SyntheticWorldConfig, identity_index: int) -> tuple[np.ndarray, float]:
    """Identity latent and rendering detail scale for one identity."""
    rng = np.random.default_rng([cfg.seed, _IDENTITY, identity_index])
    mu = project_out_nuisance(rng.standard_normal(cfg.d_id), cfg)
    half_log = 0.5 * math.log(cfg.detail_spread)
    detail = float(math.exp(rng.uniform(-half_log, half_log)))
    return mu, detail


def draw_attributes(cfg: SyntheticWorldConfig, sample_seed: int, yaw_deg: float | None = None) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, _ATTRIBUTES, sample_seed])
    attr = cfg.attribute_spread * rng.standard_normal(cfg.d_att)
    yaw = rng.uniform(-cfg.yaw_range, cfg.yaw_range)
    attr[0] = (yaw if yaw_deg is None else yaw_deg) / 90.0
    return attr


def fake_direction(cfg: SyntheticWorldConfig, sample_seed: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, _FAKE_DIRECTION, sample_seed])
    u = project_out_nuisance(rng.standard_normal(cfg.d_id), cfg)
    return u / np.linalg.norm(u)


def synth_make_real(mu: np.ndarray, attr: np.ndarray, cfg: SyntheticWorldConfig, identity_label: str,
                    detail: float = 1.0, sample_seed: int = 0) -> SyntheticSample:
    image = synth_render(mu, attr, cfg, detail, sample_seed)
    return SyntheticSample(image, np.asarray(mu), np.asarray(attr), 0.0, False, identity_label, detail, sample_seed)


def synth_make_fake(source_mu: np.ndarray, target_attr: np.ndarray, delta: float, cfg: SyntheticWorldConfig,
                    identity_label: str = "", detail: float = 1.0, sample_seed: int = 0) -> SyntheticSample:
    """Render source_mu with an identity loss of magnitude delta onto target_attr."""
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    source_mu = np.asarray(source_mu, dtype=np.float64)
    if delta == 0:
        return synth_make_real(source_mu, target_attr, cfg, identity_label, detail, sample_seed)
    lost = source_mu + delta * fake_direction(cfg, sample_seed)
    image = synth_render(lost, target_attr, cfg, detail, sample_seed)
    return SyntheticSample(image, source_mu, np.asarray(target_attr), float(delta), True, identity_label, detail, sample_seed)


# ====================================================================
# Encoders and generator
# ====================================================================

def _latent_of(image: Image, stage: str) -> SyntheticLatent:
    if image.latent is None:
        raise BackendError("image carries no synthetic latent (foreign image)", stage=stage)
    return image.latent


def synth_encode_identity(image: Image | SyntheticSample, cfg: SyntheticWorldConfig, draw: int = 0) -> IdentityEmbedding:
    """Ground-truth identity latent plus the attribute-dependent part and noise of the encoder."""
    if isinstance(image, SyntheticSample):
        image = image.image
    latent = _latent_of(image, "encode_identity")
    _check_latents(latent.mu, latent.attr, cfg)
    z = np.array(latent.mu, dtype=np.float64)
    if cfg.encoder_attribute_bias > 0:
        layout = layout_for(cfg)
        z = z + cfg.encoder_attribute_bias * layout.nuisance @ (layout.nuisance_coupling @ latent.attr)
    if cfg.encoder_noise > 0:
        rng = np.random.default_rng([cfg.seed, _ENCODER, latent.sample_seed, draw])
        scale = cfg.encoder_noise
        if cfg.encoder_pose_noise > 0:
            hidden = 1.0 - landmark_visibility(float(latent.attr[0]) * 90.0, cfg)
            scale = scale * (1.0 + cfg.encoder_pose_noise * hidden)
        z = z + scale * rng.standard_normal(cfg.d_id)
    return IdentityEmbedding(z, seed=latent.sample_seed)


def synth_encode_attributes(image: Image | SyntheticSample, cfg: SyntheticWorldConfig) -> AttributeEmbedding:
    if isinstance(image, SyntheticSample):
        image = image.image
    latent = _latent_of(image, "encode_attributes")
    _check_latents(latent.mu, latent.attr, cfg)
    return AttributeEmbedding(latent.attr, yaw=float(latent.attr[0]) * 90.0, detail=latent.detail, seed=latent.sample_seed)


def effective_identity(zid: IdentityEmbedding, zatt: AttributeEmbedding, cfg: SyntheticWorldConfig) -> np.ndarray:
    """Identity latent the generator actually renders: nuisance removed, attributes leaked in."""
    z = project_out_nuisance(zid.vector, cfg)
    if cfg.generator_leakage > 0:
        z = z + cfg.generator_leakage * (layout_for(cfg).leakage @ zatt.vector)
    return z


def synth_generate(zid: IdentityEmbedding, zatt: AttributeEmbedding, cfg: SyntheticWorldConfig) -> Image:
    if zid.vector.shape != (cfg.d_id,) or zatt.vector.shape != (cfg.d_att,):
        raise ShapeError(
            f"Embeddings {zid.vector.shape}/{zatt.vector.shape} do not match world ({cfg.d_id},)/({cfg.d_att},)"
        )
    z = effective_identity(zid, zatt, cfg)
    pixels = render_pixels(z, zatt.vector, cfg, zatt.detail)
    if cfg.generator_blur > 0:
        pixels = np.clip(gaussian_filter(pixels, sigma=(cfg.generator_blur, cfg.generator_blur, 0), mode="nearest"), 0.0, 1.0)
    sample_seed = seed_for(zid.seed or 0, zatt.seed or 0, 7)
    return Image(pixels, latent=SyntheticLatent(z, zatt.vector, detail=zatt.detail, sample_seed=sample_seed))


def synth_face_mask(image: Image, cfg: SyntheticWorldConfig) -> FaceMask:
    """Union of landmark supports, slightly dilated."""
    latent = _latent_of(image, "face_mask")
    supports = landmark_supports(latent.attr, cfg).any(axis=0)
    return dilate_mask(FaceMask(supports), Config.dilation_radius(cfg.image_size))
