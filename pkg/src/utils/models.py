from dataclasses import dataclass, field
import math

import numpy as np
import pandas as pd

from config import Label, Role, Space, SyntheticWorldConfig
from utils.errors import ManifestError, ShapeError


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SyntheticLatent:
    """Ground-truth latents carried alongside a synthetic image."""

    mu: np.ndarray
    attr: np.ndarray
    detail: float = 1.0
    sample_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen_array(self.mu))
        object.__setattr__(self, "attr", _frozen_array(self.attr))
        if self.mu.ndim != 1 or self.attr.ndim != 1:
            raise ShapeError("Latent vectors must be one-dimensional")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.attr))):
            raise ValueError("Latent vectors must be finite")


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray
    latent: SyntheticLatent | None = None

    def __post_init__(self):
        pixels = _frozen_array(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ShapeError(f"Image pixels must be H x W x 3, got {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("Image pixels must be finite")
        if pixels.min() < 0 or pixels.max() > 1:
            raise ValueError(f"Image pixels must lie in [0, 1], got [{pixels.min()}, {pixels.max()}]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.height, self.width

    def same_pixels(self, other: "Image") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True, eq=False)
class FaceMask:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values, dtype=bool)
        if values.ndim != 2:
            raise ShapeError(f"FaceMask must be H x W, got {values.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def full(cls, height: int, width: int) -> "FaceMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def size(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def support(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True, eq=False)
class DiffImage:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ShapeError(f"DiffImage must be H x W x 3, got {values.shape}")
        if values.min() < 0 or values.max() > 1:
            raise ValueError("DiffImage values must lie in [0, 1]")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class IdentityEmbedding:
    vector: np.ndarray
    # Seed combined into renders generated from this embedding, when the source was synthetic.
    seed: int | None = None
    normalized: bool = False

    def __post_init__(self):
        vector = _frozen_array(self.vector)
        if vector.ndim != 1:
            raise ShapeError(f"IdentityEmbedding must be a vector, got shape {vector.shape}")
        if not np.all(np.isfinite(vector)):
            raise ValueError("IdentityEmbedding entries must be finite")
        object.__setattr__(self, "vector", vector)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass(frozen=True, eq=False)
class AttributeEmbedding:
    vector: np.ndarray
    yaw: float | None = None
    detail: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        vector = _frozen_array(self.vector)
        if vector.ndim != 1:
            raise ShapeError(f"AttributeEmbedding must be a vector, got shape {vector.shape}")
        if not np.all(np.isfinite(vector)):
            raise ValueError("AttributeEmbedding entries must be finite")
        object.__setattr__(self, "vector", vector)


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    image: Image
    mu: np.ndarray
    attr: np.ndarray
    delta: float
    is_fake: bool
    identity_label: str
    detail: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if (self.delta == 0) == self.is_fake:
            raise ValueError("A sample is fake exactly when delta > 0")

    @property
    def yaw(self) -> float:
        return float(self.attr[0]) * 90.0


@dataclass(frozen=True, eq=False)
class ReconstructionQuad:
    i_rr: Image
    i_tr: Image
    i_tt: Image
    i_rt: Image
    z_id_ref: IdentityEmbedding
    z_id_test: IdentityEmbedding
    z_att_ref: AttributeEmbedding
    z_att_test: AttributeEmbedding

    @property
    def images(self) -> dict[str, Image]:
        return {"i_rr": self.i_rr, "i_tr": self.i_tr, "i_tt": self.i_tt, "i_rt": self.i_rt}


@dataclass(frozen=True)
class DistanceTriple:
    l_recon: float
    l_recon_id: float
    l_id: float
    space: Space

    def __post_init__(self):
        for name in ("l_recon", "l_recon_id", "l_id"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    def is_feasible(self, tol: float = 1e-9) -> bool:
        return abs(self.l_recon - self.l_recon_id) - tol <= self.l_id <= self.l_recon + self.l_recon_id + tol


@dataclass(frozen=True)
class DiffIdScore:
    ratio_ref: float
    ratio_test: float
    theta_ref: float
    theta_test: float
    value: float
    ref_triple: DistanceTriple
    test_triple: DistanceTriple

    def components(self) -> dict[str, float]:
        """Every quantity the metric-component ablation scores on."""
        return {
            "l_ref_id": self.ref_triple.l_id,
            "l_test_id": self.test_triple.l_id,
            "l_ref_recon": self.ref_triple.l_recon,
            "l_test_recon": self.test_triple.l_recon,
            "ratio_ref": self.ratio_ref,
            "ratio_test": self.ratio_test,
            "theta_ref": self.theta_ref,
            "theta_test": self.theta_test,
            "ratio_ref_theta_ref": self.ratio_ref * self.theta_ref,
            "ratio_product": self.ratio_ref * self.ratio_test,
            "metric": self.value,
        }


@dataclass(frozen=True, eq=False)
class DetectionResult:
    score: DiffIdScore
    is_fake: bool
    threshold: float
    quad: ReconstructionQuad
    diff_ref: DiffImage
    diff_test: DiffImage
    diff_recon: DiffImage
    iesim: float
    ref_yaw: float
    test_yaw: float

    @property
    def verdict(self) -> str:
        return Label.FAKE.value if self.is_fake else Label.REAL.value

    def to_record(self, artifacts: dict[str, str] | None = None) -> dict:
        return {
            "score": self.score.value,
            "verdict": self.verdict,
            "threshold": self.threshold,
            "components": self.score.components(),
            "ref_triple": [self.score.ref_triple.l_recon, self.score.ref_triple.l_recon_id, self.score.ref_triple.l_id],
            "test_triple": [self.score.test_triple.l_recon, self.score.test_triple.l_recon_id, self.score.test_triple.l_id],
            "iesim": self.iesim,
            "ref_yaw": self.ref_yaw,
            "test_yaw": self.test_yaw,
            "z_id_ref": self.quad.z_id_ref.vector.tolist(),
            "z_id_test": self.quad.z_id_test.vector.tolist(),
            "z_id_normalized": self.quad.z_id_ref.normalized,
            "artifacts": artifacts or {},
        }


@dataclass(frozen=True)
class FinetuneLosses:
    l_id: float
    l_att_pixel: float
    l_att_perceptual: float
    total: float

    @classmethod
    def combine(cls, l_id: float, l_att_pixel: float, l_att_perceptual: float,
                id_weight: float = 1.0, att_weight: float = 1.0) -> "FinetuneLosses":
        total = id_weight * l_id + att_weight * (l_att_pixel + l_att_perceptual)
        return cls(l_id, l_att_pixel, l_att_perceptual, total)


@dataclass(frozen=True)
class CorpusEntry:
    entry_id: str
    identity_label: str
    role: Role
    label: Label
    video_id: str
    frame_index: int
    yaw: float
    path: str | None = None
    seed: int | None = None
    delta: float = 0.0
    identity_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "label", Label(self.label))
        if self.path is None and self.seed is None:
            raise ManifestError(f"Entry {self.entry_id} has neither a path nor a synthetic seed")
        if self.delta < 0:
            raise ManifestError(f"Entry {self.entry_id} has negative delta {self.delta}")
        if self.seed is not None and (self.delta > 0) != (self.label == Label.FAKE):
            raise ManifestError(f"Entry {self.entry_id}: synthetic entries are fake exactly when delta > 0")

    @property
    def is_synthetic(self) -> bool:
        return self.path is None

    def to_dict(self) -> dict:
        source = {"path": self.path} if self.path is not None else {
            "seed": self.seed,
            "delta": self.delta,
            "identity_seed": self.identity_seed,
        }
        return {
            "entry_id": self.entry_id,
            "identity_label": self.identity_label,
            "role": self.role.value,
            "label": self.label.value,
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "yaw": self.yaw,
            "source": source,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusEntry":
        source = data["source"]
        return cls(
            entry_id=data["entry_id"],
            identity_label=data["identity_label"],
            role=Role(data["role"]),
            label=Label(data["label"]),
            video_id=data["video_id"],
            frame_index=int(data["frame_index"]),
            yaw=float(data["yaw"]),
            path=source.get("path"),
            seed=source.get("seed"),
            delta=float(source.get("delta", 0.0)),
            identity_seed=source.get("identity_seed"),
        )


@dataclass
class CorpusManifest:
    entries: list[CorpusEntry]
    world_config: SyntheticWorldConfig | None = None
    dataset_root: str | None = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {key: value for key, value in entry.to_dict().items() if key != "source"}
            | {"path": entry.path, "seed": entry.seed, "delta": entry.delta}
            for entry in self.entries
        ])

    @property
    def tests(self) -> list[CorpusEntry]:
        return [e for e in self.entries if e.role == Role.TEST]

    def reference_pool(self, identity_label: str) -> list[CorpusEntry]:
        return [
            e for e in self.entries
            if e.role == Role.REFERENCE_POOL and e.identity_label == identity_label and e.label == Label.REAL
        ]

    @property
    def identities(self) -> list[str]:
        return sorted({e.identity_label for e in self.entries})


@dataclass
class EvalReport:
    auc: float
    per_identity_auc: dict[str, float]
    real_scores: list[float]
    fake_scores: list[float]
    threshold: float | None
    config_fingerprint: str
    n_failed: int = 0
    degenerate: bool = False
    balanced_accuracy: float | None = None
    component_aucs: dict[str, float] = field(default_factory=dict)
    iesim_auc: float | None = None
    level: str = "frame"
    n_total: int = 0
    entries: pd.DataFrame | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "per_identity_auc": self.per_identity_auc,
            "real_scores": self.real_scores,
            "fake_scores": self.fake_scores,
            "threshold": self.threshold,
            "balanced_accuracy": self.balanced_accuracy,
            "config_fingerprint": self.config_fingerprint,
            "n_failed": self.n_failed,
            "n_total": self.n_total,
            "degenerate": self.degenerate,
            "component_aucs": self.component_aucs,
            "iesim_auc": self.iesim_auc,
            "level": self.level,
        }
