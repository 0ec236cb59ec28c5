"""Pixel-level primitives: differences, masked distances, mask dilation,
diff visualizations and JPEG/PNG round trips.

Pure functions over immutable Image / FaceMask values (no backend imports).
"""
import io
import json
import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL.PngImagePlugin import PngInfo
from scipy.ndimage import gaussian_filter

from config import Config
from utils.errors import EmptyMaskError, ShapeError
from utils.models import DiffImage, FaceMask, Image, SyntheticLatent

LATENT_KEY = "synthetic-latent"


def _check_same_size(a: Image, b: Image):
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"Image dimensions differ: {a.pixels.shape} vs {b.pixels.shape}")


def _check_mask(a: Image, m: FaceMask):
    if m.size != a.size:
        raise ShapeError(f"Mask {m.size} does not match image {a.size}")
    if m.support == 0:
        raise EmptyMaskError("Mask has no set pixel; distance is undefined over an empty support")


def pixel_diff(a: Image, b: Image) -> DiffImage:
    _check_same_size(a, b)
    return DiffImage(np.abs(a.pixels - b.pixels))


def masked_difference(a: Image, b: Image, m: FaceMask) -> np.ndarray:
    """Flattened vector of (a - b) over the masked pixel-channels."""
    _check_same_size(a, b)
    _check_mask(a, m)
    return (a.pixels - b.pixels)[m.values].ravel()


def masked_l2(a: Image, b: Image, m: FaceMask) -> float:
    return float(np.linalg.norm(masked_difference(a, b, m)))


def dilate_mask(m: FaceMask, radius: float, threshold: float = Config.DILATION_THRESHOLD) -> FaceMask:
    """Grow the mask by Gaussian-blurring the binary field and thresholding.

    The blur is normalized to its own peak, so a pixel at distance `radius`
    from an isolated set pixel sits exactly at `threshold`.
    """
    if radius <= 0:
        return FaceMask(m.values)
    sigma = radius / math.sqrt(2.0 * math.log(1.0 / threshold))
    blurred = gaussian_filter(m.values.astype(np.float64), sigma, mode="constant")

    half = int(4.0 * sigma + 0.5) + 1
    impulse = np.zeros((2 * half + 1, 2 * half + 1))
    impulse[half, half] = 1.0
    peak = gaussian_filter(impulse, sigma, mode="constant")[half, half]

    return FaceMask(m.values | (blurred / peak >= threshold))


def render_diff_visualization(d: DiffImage, gain: float = Config.DEFAULT_GAIN) -> Image:
    if gain < 1:
        raise ValueError(f"Visualization gain must be >= 1, got {gain}")
    return Image(np.clip(gain * d.values, 0.0, 1.0))


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(array: np.ndarray) -> np.ndarray:
    return np.asarray(array, dtype=np.float64) / 255.0


def jpeg_degrade(i: Image, qf: int) -> Image:
    """Encode at JPEG quality qf and decode back; synthetic latents travel along."""
    if isinstance(qf, bool) or int(qf) != qf or not 1 <= qf <= 100:
        raise ValueError(f"JPEG quality factor must be an integer in [1, 100], got {qf}")
    buffer = io.BytesIO()
    PILImage.fromarray(to_uint8(i.pixels)).save(buffer, format="JPEG", quality=int(qf))
    buffer.seek(0)
    with PILImage.open(buffer) as decoded:
        pixels = from_uint8(np.asarray(decoded.convert("RGB")))
    return Image(pixels, latent=i.latent)


# ====================================================================
# Persistence
# ====================================================================

def _latent_to_text(latent: SyntheticLatent) -> str:
    return json.dumps({
        "mu": latent.mu.tolist(),
        "attr": latent.attr.tolist(),
        "detail": latent.detail,
        "sample_seed": latent.sample_seed,
    })


def _latent_from_text(text: str) -> SyntheticLatent:
    data = json.loads(text)
    return SyntheticLatent(
        mu=np.array(data["mu"]),
        attr=np.array(data["attr"]),
        detail=float(data["detail"]),
        sample_seed=int(data["sample_seed"]),
    )


def save_image(image: Image, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = None
    if image.latent is not None:
        info = PngInfo()
        info.add_text(LATENT_KEY, _latent_to_text(image.latent))
    PILImage.fromarray(to_uint8(image.pixels)).save(path, format="PNG", pnginfo=info)
    return path


def load_image(path: str | Path) -> Image:
    with PILImage.open(path) as raw:
        latent_text = getattr(raw, "text", {}).get(LATENT_KEY)
        pixels = from_uint8(np.asarray(raw.convert("RGB")))
    latent = _latent_from_text(latent_text) if latent_text else None
    return Image(pixels, latent=latent)


def save_mask(mask: FaceMask, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(mask.values.astype(np.uint8) * 255).save(path, format="PNG")
    return path


def load_mask(path: str | Path) -> FaceMask:
    with PILImage.open(path) as raw:
        return FaceMask(np.asarray(raw.convert("L")) >= 128)
