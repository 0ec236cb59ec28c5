from dataclasses import asdict, dataclass, field, fields, replace
from enum import StrEnum
import hashlib
import json
import math
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()


class Space(StrEnum):
    REF = "ref"
    TEST = "test"


class Role(StrEnum):
    REFERENCE_POOL = "reference-pool"
    TEST = "test"


class Label(StrEnum):
    REAL = "real"
    FAKE = "fake"


class Strategy(StrEnum):
    RANDOM = "random"
    FRONTAL = "frontal"
    SAME_ORIENTATION = "same-orientation"


class Level(StrEnum):
    FRAME = "frame"
    VIDEO = "video"


class SearchMethod(StrEnum):
    GRID = "grid"
    COORDINATE_DESCENT = "coordinate-descent"


class BackendKind(StrEnum):
    SYNTHETIC = "synthetic"
    ADAPTER = "adapter"


class Config:
    EPS = 1e-8
    # Dilation radius is given at 224 px and scaled to the working resolution.
    DILATION_RADIUS_AT_224 = 4.0
    DILATION_THRESHOLD = 0.1
    DEFAULT_GAIN = 5.0
    FINETUNE_GAIN = 10.0
    REAL_BACKEND_THRESHOLD = 0.6
    DEFAULT_QFS = tuple(range(20, 101, 5))
    FRAMES_PER_VIDEO = 20
    FRONTAL_YAW = 5.0
    SAME_ORIENTATION_YAW = 5.0
    KAPPA_BOUNDS = (0.0, 1.0)
    BETA_BOUNDS = (0.0, 4.0)
    ADAPTER_MODEL_DIR = os.getenv("IDLOSS_ADAPTER_MODEL_DIR")
    # Seconds to wait for one adapter response.
    ADAPTER_TIMEOUT = 300.0

    @classmethod
    def dilation_radius(cls, image_size: int) -> float:
        return cls.DILATION_RADIUS_AT_224 * image_size / 224

    @classmethod
    def default_qfs(cls) -> list[int]:
        return list(cls.DEFAULT_QFS)


def _check_finite(name: str, value: float):
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")


@dataclass(frozen=True)
class SyntheticWorldConfig:
    """Parameters of the synthetic face-swap world.

    entanglement couples expression attributes into feature geometry,
    encoder_noise is the identity encoder's per-call noise scale,
    generator_leakage and generator_blur are the generator's imperfections.
    encoder_pose_noise scales the encoder noise up on landmarks the yaw occludes.
    The remaining fields default to values that switch their effect off.
    """

    d_id: int = 16
    d_att: int = 8
    image_size: int = 64
    entanglement: float = 0.5
    encoder_noise: float = 0.05
    generator_leakage: float = 0.1
    generator_blur: float = 1.0
    seed: int = 1234
    encoder_attribute_bias: float = 0.0
    yaw_range: float = 30.0
    yaw_occlusion: float = 0.0
    background_clutter: float = 0.0
    attribute_spread: float = 1.0
    detail_spread: float = 1.0
    encoder_pose_noise: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            _check_finite(f.name, getattr(self, f.name))
        if self.d_id < 1:
            raise ValueError(f"d_id must be positive, got {self.d_id}")
        if self.d_att < 5:
            raise ValueError(f"d_att must be at least 5 (yaw, background, clutter, expression), got {self.d_att}")
        if self.image_size < 16:
            raise ValueError(f"image_size must be at least 16, got {self.image_size}")
        if not 0 <= self.generator_leakage <= 1:
            raise ValueError(f"generator_leakage must be in [0, 1], got {self.generator_leakage}")
        if not 0 <= self.yaw_occlusion <= 1:
            raise ValueError(f"yaw_occlusion must be in [0, 1], got {self.yaw_occlusion}")
        if not 0 <= self.yaw_range <= 90:
            raise ValueError(f"yaw_range must be in [0, 90], got {self.yaw_range}")
        for name in ("entanglement", "encoder_noise", "generator_blur", "encoder_attribute_bias", "background_clutter",
                     "encoder_pose_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.attribute_spread <= 0:
            raise ValueError(f"attribute_spread must be > 0, got {self.attribute_spread}")
        if self.detail_spread < 1:
            raise ValueError(f"detail_spread must be >= 1, got {self.detail_spread}")

    def with_generator(self, leakage: float, blur: float) -> "SyntheticWorldConfig":
        return replace(self, generator_leakage=float(leakage), generator_blur=float(blur))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticWorldConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown world config keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticWorldConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EvaluationConfig:
    strategy: Strategy = Strategy.FRONTAL
    level: Level = Level.FRAME
    seed: int = 1234
    threshold: float | None = None
    use_mask: bool = True
    workers: int = 1
    frames_per_video: int = Config.FRAMES_PER_VIDEO
    sample_budget: int | None = None
    eps: float = Config.EPS

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.frames_per_video < 1:
            raise ValueError(f"frames_per_video must be >= 1, got {self.frames_per_video}")
        if self.sample_budget is not None and self.sample_budget < 1:
            raise ValueError(f"sample_budget must be >= 1, got {self.sample_budget}")


@dataclass(frozen=True)
class RunConfig:
    """Every choice a CLI command was run with, resolved before any work starts."""

    command: str
    out: str
    backend: str = BackendKind.SYNTHETIC.value
    strategy: Strategy = Strategy.FRONTAL
    level: Level = Level.FRAME
    threshold: float | None = None
    calibrate: bool = False
    qfs: tuple[int, ...] = Config.DEFAULT_QFS
    gain: float = Config.DEFAULT_GAIN
    seed: int = 1234
    workers: int = 1
    use_mask: bool = True
    manifest: str | None = None
    world: dict | None = None
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["qfs"] = list(self.qfs)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        data["strategy"] = Strategy(data["strategy"])
        data["level"] = Level(data["level"])
        data["qfs"] = tuple(data["qfs"])
        return cls(**data)

    def fingerprint(self) -> str:
        """SHA-256 over the canonical JSON of everything but the output directory."""
        data = self.to_dict()
        data.pop("out")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def evaluation(self) -> EvaluationConfig:
        return EvaluationConfig(
            strategy=self.strategy,
            level=self.level,
            seed=self.seed,
            threshold=self.threshold,
            use_mask=self.use_mask,
            workers=self.workers,
        )

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / "run_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path
