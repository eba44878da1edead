"""End-to-end run: load (or synthesise) -> scale -> views -> sample -> train -> predict -> fuse -> evaluate."""
from __future__ import annotations

import json
import logging
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .augment import augment_slices
from .config import PipelineConfig
from .evaluation import derive_seed, dice_per_class
from .geometry import SamplingParams, VolumeSummary, fit_sampling_params, sample_view_axes
from .inference import sample_views, segment
from .io import load_labels, load_volume, save_volume
from .phantom import default_phantom_spec, make_phantom
from .predictor import NoisyOracleConfig, NoisyOraclePredictor, OraclePredictor, PatchSoftmaxModel, train
from .preprocess import robust_scale
from .stack_io import save_predictions, save_stacks
from .volume import LabelMap

log = logging.getLogger(__name__)

SEED_STREAMS = {"phantom": 0, "views": 1, "augment": 2, "train": 3, "noise": 4}


def derived_seeds(seed: int) -> dict[str, int]:
    return {name: derive_seed(seed, stream) for name, stream in SEED_STREAMS.items()}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _training_slices(stacks, per_view: int, policy):
    chosen = []
    for i, stack in enumerate(stacks):
        n = len(stack.slices)
        picks = np.unique(np.linspace(0, n - 1, min(per_view, n)).round().astype(int))
        subset = [stack.slices[t] for t in picks]
        chosen.extend(augment_slices(subset, policy, stream=i))
    return chosen


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute one run under ``config.out`` and return the report dict."""
    config = config.with_seed()
    seeds = derived_seeds(config.seed)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    if config.volume is None:
        spec = config.phantom or default_phantom_spec(seed=seeds["phantom"])
        volume, truth = make_phantom(spec)
        config = replace(config, phantom=spec)
    else:
        volume = load_volume(config.volume)
        truth = load_labels(config.labels) if config.labels else None

    scale_report = None
    if config.preprocess:
        volume, scale_report = robust_scale(volume, fallback=config.iqr_fallback)

    views = sample_view_axes(config.k, seeds["views"], config.min_angle_deg, config.include_canonical)
    fit = fit_sampling_params(
        [VolumeSummary.of(volume)],
        config.memory_budget_bytes,
        config.batch_size_min,
        volume.channels,
        config.r_min,
    )
    params = fit.params
    if config.q is not None or config.r is not None:
        params = SamplingParams.from_q_r(config.q or fit.params.q, config.r or fit.params.r)
    center = np.zeros(3) if config.center == "origin" else volume.center_mm()
    log.info("sampling %d views with q=%d r=%g", len(views), params.q, params.r)
    stacks = sample_views(volume, truth, views, params, center, config.threads)

    num_classes = truth.num_classes if truth is not None else None
    train_curve = None
    policy = replace(config.augment, seed=derive_seed(seeds["augment"], config.augment.seed))
    if config.predictor == "oracle":
        predictor = OraclePredictor(num_classes)
    elif config.predictor == "noisy-oracle":
        predictor = NoisyOraclePredictor(
            num_classes, NoisyOracleConfig(config.flip_rate, config.blur_sigma, seeds["noise"])
        )
    elif config.model is not None:
        predictor = PatchSoftmaxModel.load(config.model)
        num_classes = predictor.num_classes
    else:
        training = _training_slices(stacks, config.train_slices_per_view, policy)
        model = PatchSoftmaxModel.zeros(volume.channels, num_classes)
        predictor, train_curve = train(
            model,
            training,
            config.epochs,
            config.learning_rate,
            np.random.default_rng(seeds["train"]),
            config.standardize_features,
        )
        predictor.save(out / "model.json")

    preds, _, fused, labels = segment(stacks, predictor, volume.shape, volume.affine, config.threads)

    if config.save_intermediates:
        save_stacks(stacks, out / "stacks", num_classes)
        save_predictions(preds, out / "pred")
    save_volume(fused, out / "fused" / "probs.nii")
    save_volume(labels, out / "fused" / "labels.nii")
    save_volume(LabelMap(fused.coverage, fused.affine, len(views) + 1), out / "fused" / "coverage.nii")
    _write_json(out / "views.json", views.to_dict())

    report = {
        "seed": config.seed,
        "k": len(views),
        "predictor": config.predictor,
        "sampling": fit.to_dict(),
        "params": params.to_dict(),
        "coverage_fraction": float(np.mean(fused.coverage > 0)),
        "scale": None if scale_report is None else scale_report.to_dict(),
        "train_loss": train_curve,
        "dice": None if truth is None else dice_per_class(labels, truth).to_dict(),
    }
    _write_json(out / "report.json", report)
    manifest = {
        "version": _version(),
        "config": config.to_dict(),
        "derived_seeds": seeds,
        "outputs": {
            "views": "views.json",
            "stacks": "stacks/" if config.save_intermediates else None,
            "pred": "pred/" if config.save_intermediates else None,
            "fused": ["fused/probs.nii", "fused/labels.nii", "fused/coverage.nii"],
            "report": "report.json",
            "model": "model.json" if train_curve is not None else None,
        },
    }
    _write_json(out / "manifest.json", manifest)
    return report
