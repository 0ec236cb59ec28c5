import numpy as np
import pandas as pd
import pytest

from config import EvaluationConfig, Label, Level, Role, Strategy
from conftest import sample_pair, uniform_image
from utils.backend import SyntheticBackend, SyntheticPreprocessor
from utils.corpus import CorpusLoader, build_synthetic_corpus
from utils.evaluate import (
    BENCHMARKS,
    balance_tests,
    benchmark,
    compare_strategies,
    finetune_ablation,
    jpeg_robustness_sweep,
    reconstruction_comparison,
    run_evaluation,
    select_reference,
    select_video_frames,
)
from utils.finetune import finetune_synthetic_generator, make_training_set
from utils.imaging import save_image
from utils.metrics import auc, calibrate_threshold
from utils.models import CorpusEntry, CorpusManifest


def entry(entry_id: str, yaw: float = 0.0, identity: str = "id0", role: Role = Role.REFERENCE_POOL,
          label: Label = Label.REAL, video_id: str | None = None, frame_index: int = 0,
          path: str | None = None) -> CorpusEntry:
    return CorpusEntry(entry_id, identity, role, label, video_id or f"{entry_id}-video", frame_index, yaw,
                       path=path or f"{entry_id}.png")


def stack(cfg):
    return SyntheticBackend(cfg), SyntheticPreprocessor(cfg)


def corpus_image(cfg, fake: bool | None = None):
    """The reference (fake=None) or the first real or fake test image of a one-identity corpus."""
    manifest = build_synthetic_corpus(cfg, n_identities=1, n_real=1, n_fake=1)
    ref, real, fake_entry = manifest.entries
    chosen = ref if fake is None else fake_entry if fake else real
    return CorpusLoader(manifest).load(chosen)


class SingleThreadedBackend(SyntheticBackend):
    """Synthetic backend that asks the harness for one clone per worker."""

    thread_safe = False

    def __init__(self, cfg, clones: list | None = None):
        super().__init__(cfg)
        self.clones = clones if clones is not None else []
        self.closed = False

    def clone(self) -> "SingleThreadedBackend":
        clone = SingleThreadedBackend(self.cfg, self.clones)
        self.clones.append(clone)
        return clone

    def close(self):
        self.closed = True


# ====================================================================
# Reference selection and sampling
# ====================================================================

class TestSelectReference:
    def test_single_entry(self):
        only = entry("r0", yaw=35.0)
        for strategy in Strategy:
            assert select_reference([only], strategy, test_yaw=-20.0, seed=0) is only

    def test_frontal(self):
        pool = [entry("a", -30.0), entry("b", 2.0), entry("c", 40.0)]
        assert select_reference(pool, Strategy.FRONTAL, test_yaw=30.0, seed=0).entry_id == "b"

    def test_same_orientation(self):
        pool = [entry("a", 0.0), entry("b", 18.0), entry("c", 50.0)]
        assert select_reference(pool, Strategy.SAME_ORIENTATION, test_yaw=20.0, seed=0).entry_id == "b"

    def test_falls_back_to_closest_yaw(self):
        """No reference within the frontal tolerance: the one closest to 0 wins."""
        pool = [entry("a", -30.0), entry("b", 12.0), entry("c", 40.0)]
        assert select_reference(pool, Strategy.FRONTAL, test_yaw=0.0, seed=0).entry_id == "b"

    def test_random_is_seeded(self):
        pool = [entry(f"r{i}", float(i)) for i in range(9)]
        first = [select_reference(pool, Strategy.RANDOM, 0.0, seed=s).entry_id for s in range(10)]
        assert first == [select_reference(pool, Strategy.RANDOM, 0.0, seed=s).entry_id for s in range(10)]
        assert len(set(first)) > 1

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            select_reference([], Strategy.FRONTAL, 0.0, seed=0)


class TestBalanceTests:
    def test_floors_per_identity_and_label(self):
        """Budget 13 over 3 identities keeps floor(13 / 6) = 2 per identity and label."""
        tests = [
            entry(f"{identity}-{label.value}{i}", identity=identity, role=Role.TEST, label=label)
            for identity in ("id0", "id1", "id2") for label in Label for i in range(4)
        ]
        balanced = balance_tests(tests, budget=13, seed=0)
        assert len(balanced) == 12
        counts = pd.Series([(e.identity_label, e.label) for e in balanced]).value_counts()
        assert set(counts) == {2}

    def test_no_budget_keeps_everything(self, small_manifest):
        assert balance_tests(small_manifest.tests, None, seed=0) == small_manifest.tests

    def test_empty_tests(self):
        assert balance_tests([], budget=10, seed=0) == []


class TestSelectVideoFrames:
    def test_caps_frames_per_video(self):
        long = [entry(f"long{i}", role=Role.TEST, video_id="long", frame_index=i) for i in range(25)]
        short = [entry(f"short{i}", role=Role.TEST, video_id="short", frame_index=i) for i in range(5)]
        kept = select_video_frames(long + short, frames_per_video=20, seed=0)
        assert sum(e.video_id == "long" for e in kept) == 20
        assert sum(e.video_id == "short" for e in kept) == 5


# ====================================================================
# Evaluation runs
# ====================================================================

class TestRunEvaluation:
    def test_deterministic(self, small_manifest, synthetic_stack):
        first = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig())
        second = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig())
        assert first.real_scores == second.real_scores
        assert first.fake_scores == second.fake_scores
        assert first.auc == second.auc

    def test_report_contents(self, small_manifest, synthetic_stack):
        report = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig(), fingerprint="abc")
        assert (len(report.real_scores), len(report.fake_scores)) == (9, 9)
        assert report.n_total == 18 and report.n_failed == 0
        assert report.config_fingerprint == "abc"
        assert report.auc == auc(report.real_scores, report.fake_scores)
        assert set(report.per_identity_auc) == {"id000", "id001", "id002"}
        assert report.threshold is None and report.balanced_accuracy is None

    def test_component_aucs(self, small_manifest, synthetic_stack):
        report = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig())
        assert {"metric", "ratio_ref", "theta_ref", "l_ref_id", "ratio_product", "iesim"} <= set(report.component_aucs)
        assert report.component_aucs["metric"] == report.auc
        assert report.iesim_auc == report.component_aucs["iesim"]

    def test_threshold_gives_balanced_accuracy(self, small_manifest, synthetic_stack):
        report = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig(threshold=0.5))
        assert 0.0 <= report.balanced_accuracy <= 1.0

    def test_workers_match_sequential(self, small_manifest, synthetic_stack):
        sequential = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig())
        parallel = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig(workers=2))
        assert parallel.real_scores == sequential.real_scores
        assert parallel.fake_scores == sequential.fake_scores

    def test_worker_clones_are_closed(self, small_manifest, world):
        """Per-worker clones of a single-threaded backend are closed once scoring ends."""
        backend = SingleThreadedBackend(world)
        report = run_evaluation(small_manifest, backend, SyntheticPreprocessor(world), EvaluationConfig(workers=3))
        assert report.n_failed == 0
        assert 1 <= len(backend.clones) <= 3
        assert all(clone.closed for clone in backend.clones)
        assert not backend.closed

    def test_video_level(self, world):
        """Video scores are the mean of their frame scores."""
        manifest = build_synthetic_corpus(world, n_identities=2, n_real=4, n_fake=4, frames_per_video=2)
        backend, preprocessor = stack(world)
        frames = run_evaluation(manifest, backend, preprocessor, EvaluationConfig())
        videos = run_evaluation(manifest, backend, preprocessor, EvaluationConfig(level=Level.VIDEO))
        assert videos.level == "video"
        assert len(videos.real_scores) == len(videos.fake_scores) == 4
        real = frames.entries[frames.entries["label"] == Label.REAL.value]
        expected = real.groupby("video_id", sort=True)["score"].mean().tolist()
        assert videos.real_scores == pytest.approx(expected)

    def test_degenerate_auc(self, world, tmp_path):
        """Identical reference and test images score 0 everywhere: AUC is reported as 0.5."""
        image_path = tmp_path / "face.png"
        backend, preprocessor = stack(world)
        save_image(corpus_image(world), image_path)
        for name in ("ref.png", "real.png", "fake.png"):
            (tmp_path / name).write_bytes(image_path.read_bytes())
        manifest = CorpusManifest([
            entry("ref", path="ref.png"),
            entry("real", role=Role.TEST, path="real.png"),
            entry("fake", role=Role.TEST, label=Label.FAKE, path="fake.png"),
        ], dataset_root=str(tmp_path))
        report = run_evaluation(manifest, backend, preprocessor, EvaluationConfig())
        assert report.real_scores == report.fake_scores == [0.0]
        assert (report.auc, report.degenerate) == (0.5, True)

    def test_failed_entries_are_excluded(self, world, tmp_path):
        """A missing file and a foreign image are recorded as errors; the rest is scored."""
        backend, preprocessor = stack(world)
        save_image(corpus_image(world), tmp_path / "ref.png")
        save_image(corpus_image(world, fake=False), tmp_path / "real.png")
        save_image(corpus_image(world, fake=True), tmp_path / "fake.png")
        save_image(uniform_image(0.5, world.image_size), tmp_path / "foreign.png")
        manifest = CorpusManifest([
            entry("ref", path="ref.png"),
            entry("real", role=Role.TEST, path="real.png"),
            entry("fake", role=Role.TEST, label=Label.FAKE, path="fake.png"),
            entry("missing", role=Role.TEST, label=Label.FAKE, path="missing.png"),
            entry("foreign", role=Role.TEST, path="foreign.png"),
        ], dataset_root=str(tmp_path))
        report = run_evaluation(manifest, backend, preprocessor, EvaluationConfig())
        assert (report.n_total, report.n_failed) == (4, 2)
        failed = report.entries.set_index("entry_id")["error"]
        assert failed["missing"] is not None and failed["foreign"] is not None
        assert pd.isna(failed["real"]) and pd.isna(failed["fake"])
        assert (len(report.real_scores), len(report.fake_scores)) == (1, 1)

    def test_no_mask_changes_scores(self, small_manifest, synthetic_stack):
        masked = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig())
        unmasked = run_evaluation(small_manifest, *synthetic_stack, EvaluationConfig(use_mask=False))
        assert masked.real_scores != unmasked.real_scores


class TestCompareStrategies:
    def test_one_report_per_strategy(self, small_manifest, synthetic_stack):
        reports = compare_strategies(small_manifest, *synthetic_stack, EvaluationConfig(),
                                     [Strategy.FRONTAL, Strategy.RANDOM])
        assert set(reports) == {Strategy.FRONTAL, Strategy.RANDOM}
        # a pool of one makes every strategy pick the same reference
        assert reports[Strategy.FRONTAL].real_scores == reports[Strategy.RANDOM].real_scores


# ====================================================================
# JPEG robustness
# ====================================================================

class TestJpegRobustnessSweep:
    def test_baseline_only(self, small_manifest, synthetic_stack):
        sweep = jpeg_robustness_sweep(small_manifest, *synthetic_stack, qfs=[100])
        assert list(sweep.reports) == [100]
        assert sweep.delta_auc == {100: 0.0}

    def test_baseline_added(self, small_manifest, synthetic_stack):
        """QF 100 runs as the baseline even when not requested."""
        sweep = jpeg_robustness_sweep(small_manifest, *synthetic_stack, qfs=[50])
        assert list(sweep.reports) == [50]
        assert sweep.delta_auc[50] == pytest.approx(sweep.reports[50].auc - sweep.baseline_auc)
        assert set(sweep.trace["qf"]) == {50, 100}
        assert list(sweep.summary()["qf"]) == [50]

    @pytest.mark.parametrize("qfs", [[], [0], [101]])
    def test_invalid_quality_factors(self, small_manifest, synthetic_stack, qfs):
        with pytest.raises(ValueError):
            jpeg_robustness_sweep(small_manifest, *synthetic_stack, qfs=qfs)


# ====================================================================
# Fine-tuning ablation
# ====================================================================

class TestFinetuneAblation:
    def test_four_variants(self, small_manifest, world):
        """Both generators with and without the mask; each cell is an ordinary evaluation run."""
        pretrained, preprocessor = stack(world)
        tuned = SyntheticBackend(world.with_generator(0.0, 0.5))
        ablation = finetune_ablation(small_manifest, pretrained, tuned, preprocessor, EvaluationConfig())
        assert set(ablation.reports) == {("pretrained", True), ("pretrained", False),
                                         ("finetuned", True), ("finetuned", False)}
        assert ablation.auc("pretrained", True) == run_evaluation(small_manifest, pretrained, preprocessor,
                                                                  EvaluationConfig()).auc
        assert ablation.auc("finetuned", False) == run_evaluation(small_manifest, tuned, preprocessor,
                                                                  EvaluationConfig(use_mask=False)).auc
        summary = ablation.summary()
        assert list(summary.columns) == ["generator", "use_mask", "auc", "n_failed"]
        assert len(summary) == 4 and summary["n_failed"].sum() == 0

    def test_reconstruction_comparison(self, perfect_world):
        """An exact generator reconstructs the reference; a leaky, blurry one leaves a visible difference."""
        ref, _ = sample_pair(perfect_world, 0)
        comparison = reconstruction_comparison(ref, SyntheticPreprocessor(perfect_world), {
            "pretrained": SyntheticBackend(perfect_world.with_generator(0.3, 2.0)),
            "finetuned": SyntheticBackend(perfect_world),
        })
        tuned_recon, tuned_diff = comparison["finetuned"]
        assert tuned_recon.same_pixels(ref)
        assert not tuned_diff.values.any()
        assert comparison["pretrained"][1].values.max() > 0


# ====================================================================
# Benchmark presets
# ====================================================================

class TestBenchmarks:
    def test_presets(self):
        assert set(BENCHMARKS) == {"standard", "attribute_variance", "clutter", "orientation", "detail"}
        assert benchmark("standard") is BENCHMARKS["standard"]
        assert benchmark("orientation").pool_size == 9
        assert benchmark("clutter").world.generator_leakage == 0.3

    def test_seed_override(self):
        preset = benchmark("detail", seed=7)
        assert preset.world.seed == 7
        assert preset.world.detail_spread == BENCHMARKS["detail"].world.detail_spread

    def test_manifest_counts(self):
        manifest = benchmark("orientation").manifest()
        assert len(manifest.tests) == 400
        assert all(len(manifest.reference_pool(identity)) == 9 for identity in manifest.identities)

    def test_unknown(self):
        with pytest.raises(ValueError):
            benchmark("nope")


# ====================================================================
# Acceptance on the synthetic benchmarks
# ====================================================================

@pytest.mark.slow
class TestAcceptance:
    def test_standard_separates(self):
        preset = benchmark("standard")
        report = run_evaluation(preset.manifest(), *stack(preset.world), EvaluationConfig())
        assert report.auc >= 0.95
        assert calibrate_threshold(report.real_scores, report.fake_scores).balanced_accuracy >= 0.90

    def test_attribute_variance_beats_embedding_similarity(self):
        preset = benchmark("attribute_variance")
        report = run_evaluation(preset.manifest(), *stack(preset.world), EvaluationConfig())
        assert report.auc >= report.iesim_auc

    def test_clutter_finetune_and_mask(self):
        """Fine-tuning from kappa 0.3, beta 2 lowers the loss, and tuned + masked beats untuned + unmasked."""
        preset = benchmark("clutter")
        start = preset.world.with_generator(0.3, 2.0)
        tuned = finetune_synthetic_generator(start, make_training_set(start), budget=25)
        assert tuned.losses.total < tuned.start_losses.total

        manifest = preset.manifest()
        tuned_world = start.with_generator(tuned.leakage, tuned.blur)
        with_both = run_evaluation(manifest, *stack(tuned_world), EvaluationConfig())
        with_neither = run_evaluation(manifest, *stack(start), EvaluationConfig(use_mask=False))
        assert with_both.auc >= with_neither.auc

    def test_jpeg_robustness(self):
        preset = benchmark("standard")
        sweep = jpeg_robustness_sweep(preset.manifest(), *stack(preset.world), qfs=[20])
        assert sweep.delta_auc[20] >= -0.05

    def test_frontal_reference_helps(self):
        frontal, random = [], []
        for seed in (1, 2, 3):
            preset = benchmark("orientation", seed=seed)
            reports = compare_strategies(preset.manifest(), *stack(preset.world), EvaluationConfig(seed=seed),
                                         [Strategy.FRONTAL, Strategy.RANDOM])
            frontal.append(reports[Strategy.FRONTAL].auc)
            random.append(reports[Strategy.RANDOM].auc)
        assert all(f >= r for f, r in zip(frontal, random))

    def test_detail_normalization(self):
        """Normalizing by reconstruction error beats raw identity distance; the metric is near the best part."""
        preset = benchmark("detail")
        report = run_evaluation(preset.manifest(), *stack(preset.world), EvaluationConfig())
        parts = {name: value for name, value in report.component_aucs.items() if name not in ("metric", "iesim")}
        assert parts["ratio_ref"] > parts["l_ref_id"]
        assert report.auc >= max(parts.values()) - 0.01
