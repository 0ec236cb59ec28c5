from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math
import threading
from typing import Callable
import zlib

import numpy as np
import pandas as pd

from config import Config, EvaluationConfig, Label, Level, Strategy, SyntheticWorldConfig
from utils.backend import FacePreprocessor, FullMaskPreprocessor, GeneratorBackend
from utils.corpus import CorpusLoader, build_synthetic_corpus
from utils.imaging import jpeg_degrade, pixel_diff
from utils.metrics import auc_or_degenerate, balanced_accuracy, sample_frames, video_score
from utils.models import CorpusEntry, CorpusManifest, DiffImage, EvalReport, Image
from utils.quantify import detect
from utils.synthetic import seed_for


def _entry_seed(seed: int, key: str) -> int:
    return seed_for(seed, zlib.crc32(key.encode()))


def select_reference(pool: list[CorpusEntry], strategy: Strategy, test_yaw: float,
                     seed: int | np.random.Generator) -> CorpusEntry:
    """Pick a reference by yaw; falls back to the closest yaw when nothing qualifies."""
    if not pool:
        raise ValueError("Reference pool is empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    strategy = Strategy(strategy)
    if strategy == Strategy.RANDOM:
        return pool[rng.integers(len(pool))]

    target = 0.0 if strategy == Strategy.FRONTAL else test_yaw
    tolerance = Config.FRONTAL_YAW if strategy == Strategy.FRONTAL else Config.SAME_ORIENTATION_YAW
    eligible = [entry for entry in pool if abs(entry.yaw - target) <= tolerance]
    if eligible:
        return eligible[rng.integers(len(eligible))]
    return min(pool, key=lambda entry: abs(entry.yaw - target))


def balance_tests(tests: list[CorpusEntry], budget: int | None, seed: int) -> list[CorpusEntry]:
    """Same number of tests per identity and label: floor(budget / (2 * identities)) each."""
    if budget is None or not tests:
        return tests
    groups = defaultdict(list)
    for entry in tests:
        groups[(entry.identity_label, entry.label)].append(entry)
    n_identities = len({identity for identity, _ in groups})
    per_group = budget // (2 * n_identities)
    rng = np.random.default_rng([seed, 11])
    kept = set()
    for key in sorted(groups):
        kept.update(e.entry_id for e in sample_frames(groups[key], per_group, rng))
    balanced = [entry for entry in tests if entry.entry_id in kept]
    logging.info(f"Balanced test set: {len(balanced)} of {len(tests)} entries ({per_group} per identity and label)")
    return balanced


def select_video_frames(tests: list[CorpusEntry], frames_per_video: int, seed: int) -> list[CorpusEntry]:
    videos = defaultdict(list)
    for entry in tests:
        videos[entry.video_id].append(entry)
    kept = set()
    for video_id, frames in videos.items():
        frames = sorted(frames, key=lambda e: e.frame_index)
        rng = np.random.default_rng(_entry_seed(seed, video_id))
        kept.update(e.entry_id for e in sample_frames(frames, frames_per_video, rng))
    return [entry for entry in tests if entry.entry_id in kept]


ENTRY_COLUMNS = (
    "entry_id", "identity_label", "label", "video_id", "frame_index", "reference_id",
    "score", "iesim", "ref_yaw", "test_yaw", "error",
)


@dataclass
class EntryOutcome:
    entry: CorpusEntry
    reference_id: str | None = None
    score: float | None = None
    components: dict = field(default_factory=dict)
    iesim: float | None = None
    test_yaw: float | None = None
    ref_yaw: float | None = None
    error: str | None = None

    def to_row(self) -> dict:
        return {
            "entry_id": self.entry.entry_id,
            "identity_label": self.entry.identity_label,
            "label": self.entry.label.value,
            "video_id": self.entry.video_id,
            "frame_index": self.entry.frame_index,
            "reference_id": self.reference_id,
            "score": self.score,
            "iesim": self.iesim,
            "ref_yaw": self.ref_yaw,
            "test_yaw": self.test_yaw,
            "error": self.error,
        } | self.components


class Evaluator:
    """Scores every test entry of a manifest against a selected reference."""

    def __init__(self, manifest: CorpusManifest, backend: GeneratorBackend, preprocessor: FacePreprocessor,
                 config: EvaluationConfig, transform: Callable[[Image], Image] | None = None):
        self.manifest = manifest
        self.backend = backend
        self.preprocessor = preprocessor if config.use_mask else FullMaskPreprocessor(preprocessor)
        self.config = config
        self.transform = transform
        self.loader = CorpusLoader(manifest)
        self._local = threading.local()
        self._clones = []
        self._clones_lock = threading.Lock()

    def _backend(self) -> GeneratorBackend:
        if self.backend.thread_safe or self.config.workers == 1:
            return self.backend
        if not hasattr(self._local, "backend"):
            clone = self.backend.clone()
            with self._clones_lock:
                self._clones.append(clone)
            self._local.backend = clone
        return self._local.backend

    def _close_clones(self):
        with self._clones_lock:
            clones, self._clones = self._clones, []
        for clone in clones:
            if clone is not self.backend:
                clone.close()
        self._local = threading.local()

    def test_entries(self) -> list[CorpusEntry]:
        tests = balance_tests(self.manifest.tests, self.config.sample_budget, self.config.seed)
        if self.config.level == Level.VIDEO:
            tests = select_video_frames(tests, self.config.frames_per_video, self.config.seed)
        return tests

    def score_entry(self, entry: CorpusEntry) -> EntryOutcome:
        outcome = EntryOutcome(entry)
        try:
            pool = self.manifest.reference_pool(entry.identity_label)
            reference = select_reference(pool, self.config.strategy, entry.yaw,
                                         _entry_seed(self.config.seed, entry.entry_id))
            outcome.reference_id = reference.entry_id
            test = self.loader.load(entry)
            if self.transform is not None:
                test = self.transform(test)
            threshold = self.config.threshold if self.config.threshold is not None else math.inf
            result = detect(self.loader.load(reference), test, self._backend(), self.preprocessor,
                            threshold, self.config.eps)
            outcome.score = result.score.value
            outcome.components = result.score.components()
            outcome.iesim = result.iesim
            outcome.ref_yaw, outcome.test_yaw = result.ref_yaw, result.test_yaw
        except Exception as e:
            logging.error(f"Error in score_entry ({entry.entry_id}): {str(e)}")
            outcome.error = f"{type(e).__name__}: {e}"
        return outcome

    def score_all(self) -> list[EntryOutcome]:
        tests = self.test_entries()
        if self.config.workers == 1:
            return [self.score_entry(entry) for entry in tests]
        try:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(self.score_entry, tests))
        finally:
            self._close_clones()


def _aggregate(frame: pd.DataFrame, column: str, level: Level) -> tuple[list[float], list[float]]:
    """Real and fake score lists for one column, per frame or averaged per video."""
    if level == Level.VIDEO:
        grouped = frame.groupby(["video_id", "label"], sort=True)[column].apply(lambda s: video_score(s.tolist()))
        frame = grouped.reset_index()
    real = frame.loc[frame["label"] == Label.REAL.value, column].astype(float).tolist()
    fake = frame.loc[frame["label"] == Label.FAKE.value, column].astype(float).tolist()
    return real, fake


def build_report(outcomes: list[EntryOutcome], config: EvaluationConfig, fingerprint: str = "") -> EvalReport:
    entries = pd.DataFrame([o.to_row() for o in outcomes])
    if entries.empty:
        entries = pd.DataFrame(columns=["entry_id", "identity_label", "label", "video_id", "score", "error"])
    scored = entries[entries["error"].isna()] if "error" in entries else entries
    n_failed = len(entries) - len(scored)

    real, fake = _aggregate(scored, "score", config.level) if len(scored) else ([], [])
    value, degenerate = auc_or_degenerate(real, fake)
    if degenerate:
        logging.info("AUC is degenerate (a class is empty or every score is equal); reporting 0.5")

    per_identity = {}
    component_aucs = {}
    if len(scored):
        for identity, group in scored.groupby("identity_label", sort=True):
            identity_real, identity_fake = _aggregate(group, "score", config.level)
            per_identity[identity] = auc_or_degenerate(identity_real, identity_fake)[0]
        for column in [c for c in scored.columns if c not in ENTRY_COLUMNS or c == "iesim"]:
            component_real, component_fake = _aggregate(scored, column, config.level)
            component_aucs[column] = auc_or_degenerate(component_real, component_fake)[0]

    threshold = config.threshold
    accuracy = balanced_accuracy(real, fake, threshold) if threshold is not None and real and fake else None
    return EvalReport(
        auc=value,
        per_identity_auc=per_identity,
        real_scores=real,
        fake_scores=fake,
        threshold=threshold,
        config_fingerprint=fingerprint,
        n_failed=n_failed,
        degenerate=degenerate,
        balanced_accuracy=accuracy,
        component_aucs=component_aucs,
        iesim_auc=component_aucs.get("iesim"),
        level=config.level.value,
        n_total=len(entries),
        entries=entries,
    )


def run_evaluation(manifest: CorpusManifest, backend: GeneratorBackend, preprocessor: FacePreprocessor,
                   config: EvaluationConfig, fingerprint: str = "",
                   transform: Callable[[Image], Image] | None = None) -> EvalReport:
    outcomes = Evaluator(manifest, backend, preprocessor, config, transform).score_all()
    report = build_report(outcomes, config, fingerprint)
    logging.info(f"Evaluated {report.n_total} tests ({report.n_failed} failed): AUC {report.auc:.4f}")
    return report


# ====================================================================
# JPEG robustness
# ====================================================================

@dataclass
class SweepResult:
    reports: dict[int, EvalReport]
    delta_auc: dict[int, float]
    baseline_auc: float
    trace: pd.DataFrame

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"qf": qf, "auc": report.auc, "delta_auc": self.delta_auc[qf], "n_failed": report.n_failed}
            for qf, report in sorted(self.reports.items())
        ])


def jpeg_robustness_sweep(manifest: CorpusManifest, backend: GeneratorBackend, preprocessor: FacePreprocessor,
                          qfs: list[int] | None = None, config: EvaluationConfig | None = None,
                          fingerprint: str = "") -> SweepResult:
    """Degrade every test image (references untouched) at each quality factor and re-run the pipeline.

    delta_auc is AUC(qf) - AUC(100); a QF 100 run is added when qfs does not contain it.
    """
    qfs = Config.default_qfs() if qfs is None else [int(q) for q in qfs]
    if not qfs:
        raise ValueError("At least one quality factor is required")
    bad = [q for q in qfs if not 1 <= q <= 100]
    if bad:
        raise ValueError(f"Quality factors must lie in [1, 100], got {bad}")
    config = config or EvaluationConfig()

    reports = {}
    for qf in sorted(set(qfs) | {100}, reverse=True):
        logging.info(f"JPEG sweep: quality {qf}")
        reports[qf] = run_evaluation(manifest, backend, preprocessor, config, fingerprint,
                                     transform=lambda image, qf=qf: jpeg_degrade(image, qf))

    baseline = reports[100].auc
    traces = []
    for qf, report in reports.items():
        rows = report.entries[["entry_id", "identity_label", "label", "score"]].copy()
        rows.insert(1, "qf", qf)
        traces.append(rows)
    trace = pd.concat(traces, ignore_index=True).sort_values(["entry_id", "qf"], ignore_index=True)

    kept = {qf: reports[qf] for qf in qfs}
    return SweepResult(
        reports=kept,
        delta_auc={qf: report.auc - baseline for qf, report in kept.items()},
        baseline_auc=baseline,
        trace=trace,
    )


# ====================================================================
# Synthetic benchmark presets
# ====================================================================

@dataclass(frozen=True)
class BenchmarkPreset:
    name: str
    world: SyntheticWorldConfig
    n_identities: int = 20
    n_real: int = 10
    n_fake: int = 10
    delta: float = 0.5
    pool_size: int = 1
    version: int = 1

    def with_seed(self, seed: int) -> "BenchmarkPreset":
        return BenchmarkPreset(self.name, SyntheticWorldConfig.from_dict(self.world.to_dict() | {"seed": seed}),
                               self.n_identities, self.n_real, self.n_fake, self.delta, self.pool_size, self.version)

    def manifest(self) -> CorpusManifest:
        return build_synthetic_corpus(self.world, self.n_identities, self.n_real, self.n_fake,
                                      self.delta, self.pool_size)


_STANDARD_WORLD = SyntheticWorldConfig(
    entanglement=0.5, encoder_noise=0.05, generator_leakage=0.1, generator_blur=1.0, seed=1234,
)

BENCHMARKS = {
    "standard": BenchmarkPreset("standard", _STANDARD_WORLD),
    "attribute_variance": BenchmarkPreset(
        "attribute_variance",
        SyntheticWorldConfig.from_dict(_STANDARD_WORLD.to_dict() | {"encoder_attribute_bias": 0.5, "attribute_spread": 1.5}),
    ),
    "clutter": BenchmarkPreset(
        "clutter",
        SyntheticWorldConfig.from_dict(_STANDARD_WORLD.to_dict() | {"generator_leakage": 0.3, "background_clutter": 0.3}),
        delta=0.3,
    ),
    "orientation": BenchmarkPreset(
        "orientation",
        SyntheticWorldConfig.from_dict(
            _STANDARD_WORLD.to_dict() | {"yaw_occlusion": 0.9, "yaw_range": 60.0, "encoder_pose_noise": 6.0}
        ),
        delta=0.35,
        pool_size=9,
        version=2,
    ),
    "detail": BenchmarkPreset(
        "detail",
        SyntheticWorldConfig.from_dict(_STANDARD_WORLD.to_dict() | {"detail_spread": 5.0}),
    ),
}


def benchmark(name: str, seed: int | None = None) -> BenchmarkPreset:
    if name not in BENCHMARKS:
        raise ValueError(f"Unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    preset = BENCHMARKS[name]
    return preset if seed is None else preset.with_seed(seed)


def compare_strategies(manifest: CorpusManifest, backend: GeneratorBackend, preprocessor: FacePreprocessor,
                       config: EvaluationConfig, strategies: list[Strategy] | None = None) -> dict[Strategy, EvalReport]:
    strategies = strategies or list(Strategy)
    return {
        strategy: run_evaluation(manifest, backend, preprocessor,
                                 replace(config, strategy=strategy))
        for strategy in strategies
    }


# ====================================================================
# Fine-tuning ablation
# ====================================================================

@dataclass
class FinetuneAblation:
    """One report per (generator, use_mask); generator is "pretrained" or "finetuned"."""

    reports: dict[tuple[str, bool], EvalReport]

    def auc(self, generator: str, use_mask: bool) -> float:
        return self.reports[generator, use_mask].auc

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"generator": generator, "use_mask": use_mask, "auc": report.auc, "n_failed": report.n_failed}
            for (generator, use_mask), report in self.reports.items()
        ])


def finetune_ablation(manifest: CorpusManifest, pretrained: GeneratorBackend, finetuned: GeneratorBackend,
                      preprocessor: FacePreprocessor, config: EvaluationConfig | None = None,
                      fingerprint: str = "") -> FinetuneAblation:
    """Evaluate both generators with and without the face mask."""
    config = config or EvaluationConfig()
    reports = {}
    for generator, backend in (("pretrained", pretrained), ("finetuned", finetuned)):
        for use_mask in (True, False):
            logging.info(f"Fine-tuning ablation: {generator} generator, mask {'on' if use_mask else 'off'}")
            reports[generator, use_mask] = run_evaluation(manifest, backend, preprocessor,
                                                          replace(config, use_mask=use_mask), fingerprint)
    return FinetuneAblation(reports)


def reconstruction_comparison(ref: Image, preprocessor: FacePreprocessor,
                              backends: dict[str, GeneratorBackend]) -> dict[str, tuple[Image, DiffImage]]:
    """Self-reconstruction G(id_ref, att_ref) of one reference and its difference to the reference, per backend."""
    aligned, _, _ = preprocessor.detect_align(ref)
    comparison = {}
    for name, backend in backends.items():
        i_rr = backend.generate(backend.encode_identity(aligned), backend.encode_attributes(aligned))
        comparison[name] = (i_rr, pixel_diff(i_rr, aligned))
    return comparison
