"""Identity and attribute constraints for generator fine-tuning, and a
derivative-free search over the synthetic generator's leakage and blur."""
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging

import numpy as np
import pandas as pd

from config import Config, SearchMethod, SyntheticWorldConfig
from utils.errors import ShapeError
from utils.models import FinetuneLosses, IdentityEmbedding, Image
from utils.quantify import cosine_similarity
from utils.synthetic import (
    draw_attributes,
    draw_identity,
    seed_for,
    synth_encode_attributes,
    synth_encode_identity,
    synth_generate,
    synth_render,
)

TRACE_COLUMNS = ["step", "kappa", "beta", "l_id", "l_att_pixel", "l_att_perceptual", "total", "accepted"]
# Training identities are drawn from an index range the benchmark corpora never use.
TRAINING_IDENTITY_OFFSET = 100_000


class PerceptualDistance(ABC):
    @abstractmethod
    def distance(self, a: Image, b: Image) -> float:
        pass


class PyramidL1(PerceptualDistance):
    """Mean absolute difference averaged over a 2x2-average-pooling pyramid."""

    def __init__(self, levels: int = 3):
        self.levels = levels

    @staticmethod
    def _downsample(x: np.ndarray) -> np.ndarray:
        h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
        x = x[:h, :w]
        return x.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))

    def distance(self, a: Image, b: Image) -> float:
        if a.pixels.shape != b.pixels.shape:
            raise ShapeError(f"Image dimensions differ: {a.pixels.shape} vs {b.pixels.shape}")
        x, y = a.pixels, b.pixels
        values = [float(np.mean(np.abs(x - y)))]
        for _ in range(self.levels - 1):
            if min(x.shape[:2]) < 2:
                break
            x, y = self._downsample(x), self._downsample(y)
            values.append(float(np.mean(np.abs(x - y))))
        return float(np.mean(values))


def identity_constraint_loss(z_result: IdentityEmbedding, z_source: IdentityEmbedding) -> float:
    return 1.0 - cosine_similarity(z_result, z_source)


def attribute_constraint_loss(result: Image, target: Image, perc: PerceptualDistance | None = None) -> FinetuneLosses:
    """Pixel L1 (mean over pixel-channels) and perceptual parts; l_id is left at 0."""
    if result.pixels.shape != target.pixels.shape:
        raise ShapeError(f"Image dimensions differ: {result.pixels.shape} vs {target.pixels.shape}")
    perc = perc or PyramidL1()
    pixel = float(np.mean(np.abs(result.pixels - target.pixels)))
    return FinetuneLosses.combine(0.0, pixel, perc.distance(result, target))


# ====================================================================
# Training set
# ====================================================================

@dataclass(frozen=True, eq=False)
class TrainingIdentity:
    label: str
    images: tuple[Image, ...]

    def pairs(self) -> list[tuple[Image, Image]]:
        """(source, target) pairs of the same identity: each variant onto the next."""
        n = len(self.images)
        return [(self.images[k], self.images[(k + 1) % n]) for k in range(n)]


def make_training_set(cfg: SyntheticWorldConfig, n_identities: int = 10, n_variants: int = 4) -> list[TrainingIdentity]:
    identities = []
    for i in range(n_identities):
        index = TRAINING_IDENTITY_OFFSET + i
        mu, detail = draw_identity(cfg, index)
        images = []
        for k in range(n_variants):
            sample_seed = seed_for(cfg.seed, index, k)
            images.append(synth_render(mu, draw_attributes(cfg, sample_seed), cfg, detail, sample_seed))
        identities.append(TrainingIdentity(f"train{i:03d}", tuple(images)))
    return identities


def pair_losses(source: Image, target: Image, cfg: SyntheticWorldConfig, perc: PerceptualDistance,
                id_weight: float = 1.0, att_weight: float = 1.0) -> FinetuneLosses:
    z_source = synth_encode_identity(source, cfg)
    result = synth_generate(z_source, synth_encode_attributes(target, cfg), cfg)
    attribute = attribute_constraint_loss(result, target, perc)
    l_id = identity_constraint_loss(synth_encode_identity(result, cfg), z_source)
    return FinetuneLosses.combine(l_id, attribute.l_att_pixel, attribute.l_att_perceptual, id_weight, att_weight)


def generator_loss(cfg: SyntheticWorldConfig, training_set: list[TrainingIdentity],
                   perc: PerceptualDistance | None = None, id_weight: float = 1.0, att_weight: float = 1.0,
                   workers: int = 1) -> FinetuneLosses:
    """Mean losses over every same-identity (source, target) pair of the training set."""
    perc = perc or PyramidL1()
    pairs = [pair for identity in training_set for pair in identity.pairs()]
    if not pairs:
        raise ValueError("Training set has no (source, target) pairs")

    def evaluate(pair):
        return pair_losses(pair[0], pair[1], cfg, perc, id_weight, att_weight)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            losses = list(pool.map(evaluate, pairs))
    else:
        losses = [evaluate(pair) for pair in pairs]
    return FinetuneLosses.combine(
        float(np.mean([l.l_id for l in losses])),
        float(np.mean([l.l_att_pixel for l in losses])),
        float(np.mean([l.l_att_perceptual for l in losses])),
        id_weight,
        att_weight,
    )


# ====================================================================
# Search
# ====================================================================

@dataclass
class FinetuneResult:
    leakage: float
    blur: float
    losses: FinetuneLosses
    start_losses: FinetuneLosses
    trace: pd.DataFrame

    @property
    def accepted_trace(self) -> pd.DataFrame:
        return self.trace[self.trace["accepted"]].reset_index(drop=True)

    @property
    def evaluations(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict:
        return {
            "generator_leakage": self.leakage,
            "generator_blur": self.blur,
            "total": self.losses.total,
            "l_id": self.losses.l_id,
            "l_att_pixel": self.losses.l_att_pixel,
            "l_att_perceptual": self.losses.l_att_perceptual,
            "start_total": self.start_losses.total,
            "evaluations": self.evaluations,
        }


class _Search:
    def __init__(self, cfg, training_set, perc, id_weight, att_weight, workers, budget):
        self.cfg = cfg
        self.training_set = training_set
        self.perc = perc
        self.id_weight = id_weight
        self.att_weight = att_weight
        self.workers = workers
        self.budget = budget
        self.rows = []
        self.cache = {}
        self.best = None

    @property
    def exhausted(self) -> bool:
        return len(self.rows) >= self.budget

    def evaluate(self, kappa: float, beta: float) -> bool:
        """Evaluate a point; True when it strictly improves on the best so far."""
        key = (round(kappa, 12), round(beta, 12))
        if key in self.cache or self.exhausted:
            return False
        losses = generator_loss(self.cfg.with_generator(kappa, beta), self.training_set, self.perc,
                                self.id_weight, self.att_weight, self.workers)
        self.cache[key] = losses
        accepted = self.best is None or losses.total < self.best[2].total
        if accepted:
            self.best = (kappa, beta, losses)
        self.rows.append({
            "step": len(self.rows), "kappa": kappa, "beta": beta, "l_id": losses.l_id,
            "l_att_pixel": losses.l_att_pixel, "l_att_perceptual": losses.l_att_perceptual,
            "total": losses.total, "accepted": accepted,
        })
        logging.debug(f"finetune step {len(self.rows) - 1}: kappa={kappa:.4f} beta={beta:.4f} total={losses.total:.6f}")
        return accepted


def _coordinate_descent(search: _Search, kappa_step: float, beta_step: float, min_step: float):
    bounds = (Config.KAPPA_BOUNDS, Config.BETA_BOUNDS)
    steps = [kappa_step, beta_step]
    while not search.exhausted and max(steps) >= min_step:
        improved = False
        for axis in (0, 1):
            for direction in (-1.0, 1.0):
                point = list(search.best[:2])
                point[axis] = float(np.clip(point[axis] + direction * steps[axis], *bounds[axis]))
                if search.evaluate(*point):
                    improved = True
                    break
        if not improved:
            steps = [s / 2 for s in steps]


def _grid(search: _Search):
    n = max(2, int(np.sqrt(max(search.budget - 1, 1))))
    for kappa in np.linspace(*Config.KAPPA_BOUNDS, n):
        for beta in np.linspace(*Config.BETA_BOUNDS, n):
            if search.exhausted:
                return
            search.evaluate(float(kappa), float(beta))


def finetune_synthetic_generator(cfg: SyntheticWorldConfig, train_identities: list[TrainingIdentity] | None = None,
                                 search: SearchMethod = SearchMethod.COORDINATE_DESCENT, budget: int = 40,
                                 perc: PerceptualDistance | None = None, id_weight: float = 1.0,
                                 att_weight: float = 1.0, kappa_step: float = 0.1, beta_step: float = 0.5,
                                 min_step: float = 1e-3, workers: int = 1) -> FinetuneResult:
    """Search (generator_leakage, generator_blur) starting from cfg's values.

    The start point is always evaluated first, so the result never loses to it;
    budget counts loss evaluations over the training set.
    """
    if train_identities is None:
        train_identities = make_training_set(cfg)
    if not train_identities:
        raise ValueError("Fine-tuning needs a nonempty training set")
    if any(len(identity.images) < 2 for identity in train_identities):
        raise ValueError("Every training identity needs at least two attribute variants")
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if len(train_identities) < 10:
        logging.warning(f"Fine-tuning on only {len(train_identities)} identities")

    state = _Search(cfg, train_identities, perc or PyramidL1(), id_weight, att_weight, workers, budget)
    state.evaluate(cfg.generator_leakage, cfg.generator_blur)
    start_losses = state.best[2]
    if SearchMethod(search) == SearchMethod.GRID:
        _grid(state)
    else:
        _coordinate_descent(state, kappa_step, beta_step, min_step)

    kappa, beta, losses = state.best
    logging.info(f"Fine-tuned generator: kappa {cfg.generator_leakage} -> {kappa}, "
                 f"beta {cfg.generator_blur} -> {beta}, loss {start_losses.total:.6f} -> {losses.total:.6f}")
    return FinetuneResult(kappa, beta, losses, start_losses, pd.DataFrame(state.rows, columns=TRACE_COLUMNS))
