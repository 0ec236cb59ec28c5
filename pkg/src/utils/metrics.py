"""Pure score statistics: ROC-AUC, calibration, aggregation (no pipeline imports)."""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn import metrics as skmetrics


def _as_scores(name: str, scores: Sequence[float]) -> np.ndarray:
    values = np.asarray(scores, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError(f"{name} must be nonempty")
    return values


def auc(real_scores: Sequence[float], fake_scores: Sequence[float]) -> float:
    """P(random fake score > random real score), ties counted one half.

    Mann-Whitney U from average ranks; fake is the positive class.
    """
    real = _as_scores("real_scores", real_scores)
    fake = _as_scores("fake_scores", fake_scores)
    ranks = rankdata(np.concatenate([real, fake]), method="average")
    n_real, n_fake = real.size, fake.size
    u = ranks[n_real:].sum() - n_fake * (n_fake + 1) / 2.0
    return float(u / (n_real * n_fake))


def auc_or_degenerate(real_scores: Sequence[float], fake_scores: Sequence[float]) -> tuple[float, bool]:
    """AUC, or 0.5 flagged degenerate when a class is empty or every score is equal."""
    if len(real_scores) == 0 or len(fake_scores) == 0:
        return 0.5, True
    all_scores = np.concatenate([np.asarray(real_scores, float), np.asarray(fake_scores, float)])
    if np.all(all_scores == all_scores[0]):
        return 0.5, True
    return auc(real_scores, fake_scores), False


def roc_curve(real_scores: Sequence[float], fake_scores: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """(false positive rate, true positive rate) over every distinct threshold, from (0, 0) to (1, 1)."""
    real = _as_scores("real_scores", real_scores)
    fake = _as_scores("fake_scores", fake_scores)
    labels = np.concatenate([np.zeros(real.size), np.ones(fake.size)])
    fpr, tpr, _ = skmetrics.roc_curve(labels, np.concatenate([real, fake]), drop_intermediate=False)
    return fpr, tpr


def balanced_accuracy(real_scores: Sequence[float], fake_scores: Sequence[float], threshold: float) -> float:
    real = _as_scores("real_scores", real_scores)
    fake = _as_scores("fake_scores", fake_scores)
    return float((np.mean(fake > threshold) + np.mean(real <= threshold)) / 2.0)


@dataclass(frozen=True)
class Calibration:
    threshold: float
    real_q95: float
    fake_q5: float
    balanced_accuracy: float
    n_real: int
    n_fake: int

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "real_q95": self.real_q95,
            "fake_q5": self.fake_q5,
            "balanced_accuracy": self.balanced_accuracy,
            "n_real": self.n_real,
            "n_fake": self.n_fake,
        }


def calibrate_threshold(real_scores: Sequence[float], fake_scores: Sequence[float]) -> Calibration:
    """Midpoint of the real 95th percentile and the fake 5th percentile."""
    real = _as_scores("real_scores", real_scores)
    fake = _as_scores("fake_scores", fake_scores)
    real_q95 = float(np.quantile(real, 0.95))
    fake_q5 = float(np.quantile(fake, 0.05))
    threshold = (real_q95 + fake_q5) / 2.0
    return Calibration(
        threshold=threshold,
        real_q95=real_q95,
        fake_q5=fake_q5,
        balanced_accuracy=balanced_accuracy(real, fake, threshold),
        n_real=int(real.size),
        n_fake=int(fake.size),
    )


def video_score(frame_scores: Sequence[float]) -> float:
    return float(np.mean(_as_scores("frame_scores", frame_scores)))


def sample_frames(items: list, count: int, rng: np.random.Generator) -> list:
    """min(count, len(items)) items drawn without replacement, kept in original order."""
    if len(items) <= count:
        return list(items)
    chosen = np.sort(rng.choice(len(items), size=count, replace=False))
    return [items[i] for i in chosen]
