"""Dice scores and the multi-view noise-averaging experiment."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import DEFAULT_MIN_ANGLE, SamplingParams, VolumeSummary, fit_sampling_params, sample_view_axes
from .inference import sample_views, segment
from .phantom import PhantomSpec, make_phantom
from .predictor import NoisyOracleConfig, NoisyOraclePredictor
from .volume import LabelMap


@dataclass(frozen=True)
class DiceReport:
    per_class_f1: tuple[float, ...]
    mean_f1: float
    mean_f1_with_background: float
    absent_classes: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "per_class_f1": list(self.per_class_f1),
            "mean_f1": self.mean_f1,
            "mean_f1_with_background": self.mean_f1_with_background,
            "absent_classes": list(self.absent_classes),
        }


def dice_per_class(pred: LabelMap, truth: LabelMap) -> DiceReport:
    """Per-class F1; a class missing from both maps scores 1.

    ``mean_f1`` averages the foreground classes 1..L-1 only.
    """
    if pred.shape != truth.shape:
        raise DataError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.num_classes != truth.num_classes:
        raise DataError(f"class count mismatch: {pred.num_classes} vs {truth.num_classes}")
    n = truth.num_classes
    p = np.bincount(pred.labels.ravel(), minlength=n)
    t = np.bincount(truth.labels.ravel(), minlength=n)
    same = pred.labels == truth.labels
    both = np.bincount(pred.labels[same], minlength=n)
    scores, absent = [], []
    for c in range(n):
        denom = p[c] + t[c]
        if denom == 0:
            scores.append(1.0)
            absent.append(c)
        else:
            scores.append(float(2.0 * both[c] / denom))
    fg = scores[1:]
    mean_fg = float(np.mean(fg)) if fg else 1.0
    return DiceReport(tuple(scores), mean_fg, float(np.mean(scores)), tuple(absent))


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class TrialRecord:
    k: int
    trial: int
    mean_dice: float
    coverage_fraction: float


@dataclass(frozen=True)
class ExperimentResult:
    records: tuple[TrialRecord, ...]
    params: SamplingParams
    flip_rate: float
    seed: int

    def summary(self) -> list[dict]:
        rows = []
        for k in sorted({r.k for r in self.records}):
            dice = np.array([r.mean_dice for r in self.records if r.k == k])
            cover = np.array([r.coverage_fraction for r in self.records if r.k == k])
            rows.append(
                {
                    "k": k,
                    "trials": int(dice.size),
                    "mean_dice": float(dice.mean()),
                    "dice_variance": float(dice.var(ddof=1)) if dice.size > 1 else 0.0,
                    "mean_coverage_fraction": float(cover.mean()),
                }
            )
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "trial", "mean_dice", "coverage_fraction"])
        for r in self.records:
            writer.writerow([r.k, r.trial, repr(r.mean_dice), repr(r.coverage_fraction)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "flip_rate": self.flip_rate,
            "seed": self.seed,
            "table": self.summary(),
        }


def variance_experiment(
    phantom_spec: PhantomSpec,
    k_values,
    flip_rate: float,
    trials: int,
    seed: int = 0,
    params: SamplingParams | None = None,
    min_angle_deg: float = DEFAULT_MIN_ANGLE,
    blur_sigma: float = 0.0,
    threads: int = 1,
) -> ExperimentResult:
    """Dice of fused noisy-oracle segmentations as a function of view count.

    Per trial the phantom noise and the view set are drawn from streams keyed
    by (seed, trial); the view set for a smaller k is therefore a prefix of
    the one for a larger k. Prediction noise is keyed by (seed, k, trial) and
    independent across views.
    """
    if trials < 2:
        raise DataError("variance_experiment needs at least 2 trials")
    k_values = [int(k) for k in k_values]
    if not k_values or min(k_values) < 1:
        raise DataError("k_values must be positive")
    if params is None:
        summary = VolumeSummary(phantom_spec.shape, phantom_spec.spacing)
        params = fit_sampling_params([summary], memory_budget_bytes=2**31).params
    k_max = max(k_values)
    records = []
    for trial in range(trials):
        spec = phantom_spec.with_seed(derive_seed(seed, trial, 0))
        volume, truth = make_phantom(spec)
        views = sample_view_axes(k_max, derive_seed(seed, trial, 1), min_angle_deg)
        stacks = sample_views(volume, truth, views, params, np.zeros(3), threads)
        for k in k_values:
            config = NoisyOracleConfig(flip_rate, blur_sigma, derive_seed(seed, k, trial))
            predictor = NoisyOraclePredictor(truth.num_classes, config)
            _, _, fused, labels = segment(stacks[:k], predictor, truth.shape, truth.affine, threads)
            report = dice_per_class(labels, truth)
            coverage = float(np.mean(fused.coverage > 0))
            records.append(TrialRecord(k, trial, report.mean_f1, coverage))
    records.sort(key=lambda r: (r.k, r.trial))
    return ExperimentResult(tuple(records), params, float(flip_rate), int(seed))
