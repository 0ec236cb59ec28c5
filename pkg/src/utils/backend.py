from abc import ABC, abstractmethod
import itertools
import json
import logging
import os
from pathlib import Path
import queue
import subprocess
import tempfile
import threading

import numpy as np

from config import BackendKind, Config, SyntheticWorldConfig
from utils.errors import BackendError, PreprocessingError
from utils.imaging import load_image, load_mask, save_image
from utils.models import AttributeEmbedding, FaceMask, IdentityEmbedding, Image
from utils import synthetic


class GeneratorBackend(ABC):
    """Identity encoder, attribute encoder and face-swap generator G(Z_id, Z_att)."""

    thread_safe: bool = True
    normalizes_identity: bool = False

    @abstractmethod
    def encode_identity(self, image: Image) -> IdentityEmbedding:
        pass

    @abstractmethod
    def encode_attributes(self, image: Image) -> AttributeEmbedding:
        pass

    @abstractmethod
    def generate(self, zid: IdentityEmbedding, zatt: AttributeEmbedding) -> Image:
        pass

    @abstractmethod
    def working_resolution(self) -> tuple[int, int]:
        pass

    def clone(self) -> "GeneratorBackend":
        return self

    def close(self):
        pass


class FacePreprocessor(ABC):
    @abstractmethod
    def detect_align(self, image: Image) -> tuple[Image, FaceMask, float]:
        """Aligned face at working resolution, its face mask and yaw in degrees."""
        pass


# ====================================================================
# Synthetic world
# ====================================================================

class SyntheticBackend(GeneratorBackend):
    def __init__(self, cfg: SyntheticWorldConfig | None = None):
        self.cfg = cfg or SyntheticWorldConfig()

    def encode_identity(self, image: Image, draw: int = 0) -> IdentityEmbedding:
        return synthetic.synth_encode_identity(image, self.cfg, draw=draw)

    def encode_attributes(self, image: Image) -> AttributeEmbedding:
        return synthetic.synth_encode_attributes(image, self.cfg)

    def generate(self, zid: IdentityEmbedding, zatt: AttributeEmbedding) -> Image:
        return synthetic.synth_generate(zid, zatt, self.cfg)

    def working_resolution(self) -> tuple[int, int]:
        return self.cfg.image_size, self.cfg.image_size

    def with_generator(self, leakage: float, blur: float) -> "SyntheticBackend":
        return SyntheticBackend(self.cfg.with_generator(leakage, blur))


class SyntheticPreprocessor(FacePreprocessor):
    """Synthetic faces are born aligned; the mask is computed from the landmark layout."""

    def __init__(self, cfg: SyntheticWorldConfig | None = None):
        self.cfg = cfg or SyntheticWorldConfig()

    def detect_align(self, image: Image) -> tuple[Image, FaceMask, float]:
        if image.latent is None:
            raise PreprocessingError("No face found: image carries no synthetic latent")
        if image.size != (self.cfg.image_size, self.cfg.image_size):
            raise PreprocessingError(f"Cannot align {image.size} image to {self.cfg.image_size}px working resolution")
        return image, synthetic.synth_face_mask(image, self.cfg), float(image.latent.attr[0]) * 90.0


# ====================================================================
# External generator over a subprocess
# ====================================================================

def _read_lines(stream, lines: queue.Queue):
    for line in stream:
        lines.put(line)
    lines.put("")


class SubprocessAdapter(GeneratorBackend):
    """Drives an external face-swap model through line-delimited JSON on stdin/stdout.

    The adapter spec file declares:
        command               argv list; "{model_dir}" is replaced by IDLOSS_ADAPTER_MODEL_DIR
        resolution            [H, W] working resolution
        normalizes_identity   whether the identity encoder L2-normalizes its output
        thread_safe           whether one process may serve concurrent requests
        timeout               optional seconds to wait for each response

    Requests carry an "op" ("encode_identity", "encode_attributes", "generate",
    "detect_align") and image paths; responses carry {"ok": true, ...} or
    {"ok": false, "error": "...", "kind": "preprocessing" | "backend"}.
    """

    def __init__(self, command: list[str], resolution: tuple[int, int],
                 normalizes_identity: bool = False, thread_safe: bool = False,
                 model_dir: str | None = None, timeout: float = Config.ADAPTER_TIMEOUT):
        self.command = command
        self.resolution = (int(resolution[0]), int(resolution[1]))
        self.normalizes_identity = normalizes_identity
        self.thread_safe = thread_safe
        self.model_dir = model_dir if model_dir is not None else Config.ADAPTER_MODEL_DIR
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._workdir = tempfile.TemporaryDirectory(prefix="idloss-adapter-")
        self._counter = itertools.count(1)
        self._process = None
        self._responses = None

    @classmethod
    def from_spec(cls, spec_path: str | Path) -> "SubprocessAdapter":
        try:
            spec = json.loads(Path(spec_path).read_text())
            return cls(
                command=list(spec["command"]),
                resolution=tuple(spec["resolution"]),
                normalizes_identity=bool(spec.get("normalizes_identity", False)),
                thread_safe=bool(spec.get("thread_safe", False)),
                model_dir=spec.get("model_dir"),
                timeout=float(spec.get("timeout", Config.ADAPTER_TIMEOUT)),
            )
        except Exception as e:
            logging.error(f"Error in from_spec: {str(e)}")
            raise BackendError(f"invalid adapter spec {spec_path}: {e}", stage="load adapter") from e

    def _start(self):
        argv = [part.replace("{model_dir}", self.model_dir or "") for part in self.command]
        env = dict(os.environ)
        if self.model_dir:
            env["IDLOSS_ADAPTER_MODEL_DIR"] = self.model_dir
        self._process = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, env=env,
        )
        self._responses = queue.Queue()
        threading.Thread(target=_read_lines, args=(self._process.stdout, self._responses), daemon=True).start()

    def _temp_path(self, name: str) -> Path:
        return Path(self._workdir.name) / f"{next(self._counter):08d}-{name}.png"

    def _request(self, payload: dict, stage: str) -> dict:
        with self._lock:
            try:
                if self._process is None or self._process.poll() is not None:
                    self._start()
                self._process.stdin.write(json.dumps(payload) + "\n")
                self._process.stdin.flush()
                try:
                    line = self._responses.get(timeout=self.timeout)
                except queue.Empty:
                    logging.error(f"Error in {stage}: adapter timed out after {self.timeout:g}s, restarting it")
                    self._process.kill()
                    self._process.wait()
                    self._process = None
                    raise BackendError(f"adapter gave no response within {self.timeout:g}s", stage=stage)
                if not line:
                    raise BackendError("adapter process closed its output", stage=stage)
                response = json.loads(line)
            except BackendError:
                raise
            except Exception as e:
                logging.error(f"Error in {stage}: {str(e)}")
                raise BackendError(str(e), stage=stage) from e
        if not response.get("ok", False):
            message = response.get("error", "unknown adapter error")
            if response.get("kind") == "preprocessing":
                raise PreprocessingError(message)
            raise BackendError(message, stage=stage)
        return response

    def _send_image(self, image: Image, name: str) -> str:
        return str(save_image(Image(image.pixels), self._temp_path(name)))

    def encode_identity(self, image: Image) -> IdentityEmbedding:
        response = self._request({"op": "encode_identity", "image": self._send_image(image, "id")}, "encode_identity")
        return IdentityEmbedding(np.asarray(response["vector"]), normalized=self.normalizes_identity)

    def encode_attributes(self, image: Image) -> AttributeEmbedding:
        response = self._request({"op": "encode_attributes", "image": self._send_image(image, "att")}, "encode_attributes")
        return AttributeEmbedding(np.asarray(response["vector"]), yaw=response.get("yaw"))

    def generate(self, zid: IdentityEmbedding, zatt: AttributeEmbedding) -> Image:
        output = self._temp_path("gen")
        self._request({
            "op": "generate",
            "identity": zid.vector.tolist(),
            "attributes": zatt.vector.tolist(),
            "output": str(output),
        }, "generate")
        image = load_image(output)
        if image.size != self.resolution:
            raise BackendError(f"generator returned {image.size}, expected {self.resolution}", stage="generate")
        return image

    def detect_align(self, image: Image) -> tuple[Image, FaceMask, float]:
        aligned_path, mask_path = self._temp_path("aligned"), self._temp_path("mask")
        response = self._request({
            "op": "detect_align",
            "image": self._send_image(image, "raw"),
            "output": str(aligned_path),
            "mask_output": str(mask_path),
        }, "detect_align")
        return load_image(aligned_path), load_mask(mask_path), float(response.get("yaw", 0.0))

    def working_resolution(self) -> tuple[int, int]:
        return self.resolution

    def clone(self) -> "SubprocessAdapter":
        if self.thread_safe:
            return self
        return SubprocessAdapter(self.command, self.resolution, self.normalizes_identity, self.thread_safe,
                                 self.model_dir, self.timeout)

    def close(self):
        if self._process is not None and self._process.poll() is None:
            self._process.stdin.close()
            try:
                self._process.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._process.kill()
        self._process = None
        self._workdir.cleanup()


class AdapterPreprocessor(FacePreprocessor):
    def __init__(self, adapter: SubprocessAdapter):
        self.adapter = adapter

    def detect_align(self, image: Image) -> tuple[Image, FaceMask, float]:
        return self.adapter.detect_align(image)


class FullMaskPreprocessor(FacePreprocessor):
    """Keeps the wrapped alignment but compares whole images (mask ablation)."""

    def __init__(self, inner: FacePreprocessor):
        self.inner = inner

    def detect_align(self, image: Image) -> tuple[Image, FaceMask, float]:
        aligned, _, yaw = self.inner.detect_align(image)
        return aligned, FaceMask.full(*aligned.size), yaw


def make_backend(spec: str, world: SyntheticWorldConfig | None = None,
                 use_mask: bool = True) -> tuple[GeneratorBackend, FacePreprocessor]:
    """Resolve a --backend value ("synthetic" or "adapter:<spec.json>")."""
    if spec == BackendKind.SYNTHETIC:
        cfg = world or SyntheticWorldConfig()
        backend, preprocessor = SyntheticBackend(cfg), SyntheticPreprocessor(cfg)
    else:
        kind, _, path = spec.partition(":")
        if kind != BackendKind.ADAPTER or not path:
            raise ValueError(f"Unknown backend {spec!r}; expected 'synthetic' or 'adapter:<spec file>'")
        backend = SubprocessAdapter.from_spec(path)
        preprocessor = AdapterPreprocessor(backend)
    return backend, preprocessor if use_mask else FullMaskPreprocessor(preprocessor)
