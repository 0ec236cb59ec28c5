import pytest

from conftest import sample_pair, uniform_image
from utils.backend import SyntheticBackend, SyntheticPreprocessor
from utils.errors import BackendError, ShapeError
from utils.imaging import masked_l2
from utils.reconstruction import reconstruct_quad


class CountingBackend(SyntheticBackend):
    def __init__(self, cfg, fail_on_generate: int | None = None):
        super().__init__(cfg)
        self.identity_calls = 0
        self.attribute_calls = 0
        self.generate_calls = 0
        self.generated = []
        self.fail_on_generate = fail_on_generate

    def encode_identity(self, image, draw=0):
        self.identity_calls += 1
        return super().encode_identity(image, draw)

    def encode_attributes(self, image):
        self.attribute_calls += 1
        return super().encode_attributes(image)

    def generate(self, zid, zatt):
        self.generate_calls += 1
        self.generated.append((zid, zatt))
        if self.generate_calls == self.fail_on_generate:
            raise RuntimeError("out of memory")
        return super().generate(zid, zatt)


class TestReconstructQuad:
    def test_degenerate_pair(self, world):
        """ref == test gives i_rr == i_tr and i_tt == i_rt bitwise."""
        ref, _ = sample_pair(world, 0)
        quad = reconstruct_quad(ref, ref, SyntheticBackend(world))
        assert quad.i_rr.same_pixels(quad.i_tr)
        assert quad.i_tt.same_pixels(quad.i_rt)

    def test_same_identity_without_noise(self, noiseless_world):
        """Two real images of one identity give identical identity generations."""
        ref, test = sample_pair(noiseless_world, 3)
        quad = reconstruct_quad(ref, test, SyntheticBackend(noiseless_world))
        _, mask, _ = SyntheticPreprocessor(noiseless_world).detect_align(ref)
        assert masked_l2(quad.i_rr, quad.i_tr, mask) == 0.0

    def test_fake_test_shows_identity_difference(self, noiseless_world):
        ref, fake = sample_pair(noiseless_world, 3, delta=0.5)
        quad = reconstruct_quad(ref, fake, SyntheticBackend(noiseless_world))
        _, mask, _ = SyntheticPreprocessor(noiseless_world).detect_align(ref)
        assert masked_l2(quad.i_rr, quad.i_tr, mask) > 0.0

    def test_exchange_symmetry(self, noiseless_world):
        """Swapping ref and test relabels the quad: i_rr <-> i_tt, i_tr <-> i_rt."""
        a, b = sample_pair(noiseless_world, 5, delta=0.5)
        backend = SyntheticBackend(noiseless_world)
        forward, backward = reconstruct_quad(a, b, backend), reconstruct_quad(b, a, backend)
        assert backward.i_rr.same_pixels(forward.i_tt)
        assert backward.i_tt.same_pixels(forward.i_rr)
        assert backward.i_tr.same_pixels(forward.i_rt)
        assert backward.i_rt.same_pixels(forward.i_tr)

    def test_embeddings_extracted_once(self, world):
        """Each image is encoded once; generations share the embeddings."""
        backend = CountingBackend(world)
        ref, test = sample_pair(world, 1)
        quad = reconstruct_quad(ref, test, backend)
        assert (backend.identity_calls, backend.attribute_calls, backend.generate_calls) == (2, 2, 4)
        (rr_id, rr_att), (tr_id, tr_att), (tt_id, tt_att), (rt_id, rt_att) = backend.generated
        assert rr_id is rt_id is quad.z_id_ref
        assert tr_id is tt_id is quad.z_id_test
        assert rr_att is tr_att is quad.z_att_ref
        assert tt_att is rt_att is quad.z_att_test

    def test_shapes(self, world):
        ref, test = sample_pair(world, 2)
        quad = reconstruct_quad(ref, test, SyntheticBackend(world))
        assert {image.size for image in quad.images.values()} == {(64, 64)}

    def test_parallel_matches_sequential(self, world):
        ref, test = sample_pair(world, 4, delta=0.5)
        backend = SyntheticBackend(world)
        sequential = reconstruct_quad(ref, test, backend)
        parallel = reconstruct_quad(ref, test, backend, parallel=True)
        for name, image in sequential.images.items():
            assert image.same_pixels(parallel.images[name])

    def test_failing_generation_is_named(self, world):
        """A generator failure reports which of the four generations failed."""
        ref, test = sample_pair(world, 0)
        with pytest.raises(BackendError) as err:
            reconstruct_quad(ref, test, CountingBackend(world, fail_on_generate=2))
        assert err.value.stage == "generate i_tr"
        assert "out of memory" in str(err.value)

    def test_foreign_image(self, world):
        """A foreign image fails at the encoder stage."""
        _, test = sample_pair(world, 0)
        with pytest.raises(BackendError) as err:
            reconstruct_quad(uniform_image(0.5, 64), test, SyntheticBackend(world))
        assert err.value.stage == "encode ref identity"

    def test_wrong_resolution(self, world):
        _, test = sample_pair(world, 0)
        with pytest.raises(ShapeError):
            reconstruct_quad(uniform_image(0.5, 32), test, SyntheticBackend(world))
