import json
import sys
import textwrap

import numpy as np
import pytest

from config import SyntheticWorldConfig
from conftest import sample_pair, uniform_image
from utils.backend import (
    AdapterPreprocessor,
    FullMaskPreprocessor,
    SubprocessAdapter,
    SyntheticBackend,
    SyntheticPreprocessor,
    make_backend,
)
from utils.errors import BackendError, PreprocessingError
from utils.models import Image
from utils.reconstruction import reconstruct_quad

FAKE_ADAPTER = textwrap.dedent("""
    import json
    import sys

    from PIL import Image

    SIZE = (8, 8)

    def handle(request):
        op = request["op"]
        if op == "encode_identity":
            pixels = list(Image.open(request["image"]).convert("RGB").getdata())
            vector = [sum(p[c] for p in pixels) / (255.0 * len(pixels)) for c in range(3)]
            return {"ok": True, "vector": vector}
        if op == "encode_attributes":
            return {"ok": True, "vector": [0.0, 1.0], "yaw": 3.0}
        if op == "generate":
            color = tuple(int(round(255 * min(max(v, 0.0), 1.0))) for v in request["identity"])
            Image.new("RGB", SIZE, color).save(request["output"])
            return {"ok": True}
        if op == "detect_align":
            image = Image.open(request["image"]).convert("RGB")
            if all(high == 0 for _, high in image.getextrema()):
                return {"ok": False, "error": "no face found", "kind": "preprocessing"}
            image.save(request["output"])
            Image.new("L", image.size, 255).save(request["mask_output"])
            return {"ok": True, "yaw": -2.5}
        return {"ok": False, "error": "unsupported op " + op, "kind": "backend"}

    while True:
        line = sys.stdin.readline()
        if not line:
            break
        print(json.dumps(handle(json.loads(line))), flush=True)
""")


@pytest.fixture
def adapter_spec(tmp_path):
    script = tmp_path / "fake_adapter.py"
    script.write_text(FAKE_ADAPTER)
    spec = tmp_path / "adapter.json"
    spec.write_text(json.dumps({
        "command": [sys.executable, str(script)],
        "resolution": [8, 8],
        "normalizes_identity": True,
        "thread_safe": False,
    }))
    return spec


@pytest.fixture
def adapter(adapter_spec):
    backend = SubprocessAdapter.from_spec(adapter_spec)
    yield backend
    backend.close()


def colored(r: float, g: float, b: float, size: int = 8) -> Image:
    return Image(np.broadcast_to(np.array([r, g, b]), (size, size, 3)))


# ====================================================================
# Synthetic backend
# ====================================================================

class TestSyntheticBackend:
    def test_generate_is_deterministic(self, synthetic_stack, world):
        """Identical embeddings give bitwise-identical images at working resolution."""
        backend, _ = synthetic_stack
        ref, _ = sample_pair(world, 0)
        zid, zatt = backend.encode_identity(ref), backend.encode_attributes(ref)
        first, second = backend.generate(zid, zatt), backend.generate(zid, zatt)
        assert first.same_pixels(second)
        assert first.size == backend.working_resolution() == (64, 64)

    def test_with_generator(self, world):
        tuned = SyntheticBackend(world).with_generator(0.0, 0.5)
        assert (tuned.cfg.generator_leakage, tuned.cfg.generator_blur) == (0.0, 0.5)
        assert tuned.cfg.seed == world.seed


class TestSyntheticPreprocessor:
    def test_mask_and_yaw(self, synthetic_stack, world):
        """Aligned image is passed through with a nonempty mask and the latent's yaw."""
        _, preprocessor = synthetic_stack
        ref, _ = sample_pair(world, 1)
        aligned, mask, yaw = preprocessor.detect_align(ref)
        assert aligned is ref
        assert mask.size == (64, 64) and mask.support > 0
        assert yaw == pytest.approx(float(ref.latent.attr[0]) * 90.0)

    def test_foreign_image(self, synthetic_stack):
        """No latent means no face found."""
        _, preprocessor = synthetic_stack
        with pytest.raises(PreprocessingError):
            preprocessor.detect_align(uniform_image(0.5, 64))

    def test_wrong_resolution(self, world):
        ref, _ = sample_pair(world, 0)
        with pytest.raises(PreprocessingError):
            SyntheticPreprocessor(SyntheticWorldConfig(image_size=32)).detect_align(ref)

    def test_full_mask_wrapper(self, synthetic_stack, world):
        """Mask ablation keeps alignment and yaw, replaces the mask with all ones."""
        _, preprocessor = synthetic_stack
        ref, _ = sample_pair(world, 2)
        _, mask, yaw = FullMaskPreprocessor(preprocessor).detect_align(ref)
        assert mask.support == 64 * 64
        assert yaw == preprocessor.detect_align(ref)[2]


class TestMakeBackend:
    def test_synthetic(self, world):
        backend, preprocessor = make_backend("synthetic", world)
        assert isinstance(backend, SyntheticBackend) and backend.cfg == world
        assert isinstance(preprocessor, SyntheticPreprocessor)

    def test_without_mask(self):
        _, preprocessor = make_backend("synthetic", use_mask=False)
        assert isinstance(preprocessor, FullMaskPreprocessor)

    @pytest.mark.parametrize("spec", ["neural", "adapter", "adapter:"])
    def test_unknown_backend(self, spec):
        with pytest.raises(ValueError):
            make_backend(spec)

    def test_adapter(self, adapter_spec):
        backend, preprocessor = make_backend(f"adapter:{adapter_spec}")
        try:
            assert isinstance(backend, SubprocessAdapter)
            assert isinstance(preprocessor, AdapterPreprocessor)
        finally:
            backend.close()


# ====================================================================
# Subprocess adapter
# ====================================================================

class TestSubprocessAdapter:
    def test_declared_properties(self, adapter):
        assert adapter.working_resolution() == (8, 8)
        assert adapter.normalizes_identity is True
        assert adapter.thread_safe is False

    def test_encode_identity(self, adapter):
        """Embeddings come back from the external process, flagged with the declared normalization."""
        z = adapter.encode_identity(colored(0.2, 0.4, 0.6))
        assert z.vector == pytest.approx([0.2, 0.4, 0.6])
        assert z.normalized

    def test_encode_attributes(self, adapter):
        zatt = adapter.encode_attributes(colored(0.2, 0.4, 0.6))
        assert list(zatt.vector) == [0.0, 1.0]
        assert zatt.yaw == 3.0

    def test_generate(self, adapter):
        out = adapter.generate(adapter.encode_identity(colored(0.2, 0.4, 0.6)),
                               adapter.encode_attributes(colored(0.2, 0.4, 0.6)))
        assert out.size == (8, 8)
        assert out.pixels[0, 0] == pytest.approx([0.2, 0.4, 0.6])

    def test_detect_align(self, adapter):
        aligned, mask, yaw = AdapterPreprocessor(adapter).detect_align(colored(0.2, 0.4, 0.6))
        assert aligned.size == (8, 8)
        assert mask.support == 64
        assert yaw == -2.5

    def test_preprocessing_failure_is_distinct(self, adapter):
        """The adapter's "preprocessing" errors surface as PreprocessingError."""
        with pytest.raises(PreprocessingError, match="no face found"):
            adapter.detect_align(colored(0.0, 0.0, 0.0))

    def test_reconstruct_quad_through_adapter(self, adapter):
        ref, test = colored(0.2, 0.4, 0.6), colored(0.6, 0.4, 0.2)
        quad = reconstruct_quad(ref, test, adapter)
        assert quad.i_rr.pixels[0, 0] == pytest.approx([0.2, 0.4, 0.6])
        assert quad.i_tr.pixels[0, 0] == pytest.approx([0.6, 0.4, 0.2])

    def test_clone_starts_a_new_process(self, adapter):
        """Single-threaded adapters are cloned per worker."""
        clone = adapter.clone()
        try:
            assert clone is not adapter
            assert clone.encode_identity(colored(0.2, 0.4, 0.6)).vector == pytest.approx([0.2, 0.4, 0.6])
        finally:
            clone.close()

    def test_invalid_spec(self, tmp_path):
        spec = tmp_path / "broken.json"
        spec.write_text(json.dumps({"resolution": [8, 8]}))
        with pytest.raises(BackendError, match="load adapter"):
            SubprocessAdapter.from_spec(spec)

    def test_missing_command(self, tmp_path):
        """A command that cannot start is a backend failure."""
        backend = SubprocessAdapter([str(tmp_path / "no-such-binary")], (8, 8))
        try:
            with pytest.raises(BackendError, match="encode_identity"):
                backend.encode_identity(colored(0.2, 0.4, 0.6))
        finally:
            backend.close()

    def test_unresponsive_adapter_times_out(self, tmp_path):
        """A request that gets no answer in time fails, and the next request gets a fresh process."""
        script = tmp_path / "slow_adapter.py"
        script.write_text(FAKE_ADAPTER.replace(
            '        if op == "encode_identity":\n',
            '        if op == "encode_identity":\n            import time\n            time.sleep(30)\n',
        ))
        backend = SubprocessAdapter([sys.executable, str(script)], (8, 8), timeout=0.5)
        try:
            with pytest.raises(BackendError, match="no response") as info:
                backend.encode_identity(colored(0.2, 0.4, 0.6))
            assert info.value.stage == "encode_identity"
            assert backend.encode_attributes(colored(0.2, 0.4, 0.6)).yaw == 3.0
        finally:
            backend.close()

    def test_timeout_from_spec(self, tmp_path, adapter_spec):
        spec = json.loads(adapter_spec.read_text()) | {"timeout": 7}
        path = tmp_path / "timed.json"
        path.write_text(json.dumps(spec))
        backend = SubprocessAdapter.from_spec(path)
        clone = backend.clone()
        try:
            assert backend.timeout == 7.0
            assert clone.timeout == 7.0
        finally:
            clone.close()
            backend.close()
