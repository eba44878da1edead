"""Command-line front end.

Exit status: 0 success, 1 configuration error, 2 data/format error (including
missing input files), 3 geometry error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfg
from .augment import AugmentPolicy, augment_slices, augment_with_field, slice_rng
from .errors import ConfigError, DataError, MultiplanarError
from .evaluation import dice_per_class, variance_experiment
from .fusion import argmax_labels, fuse_views, reconstruct_view
from .geometry import (
    DEFAULT_K,
    DEFAULT_MIN_ANGLE,
    SamplingParams,
    ViewSet,
    VolumeSummary,
    fit_sampling_params,
    sample_view_axes,
)
from .inference import predict_view, sample_views
from .io import load_labels, load_volume, save_volume, write_raw
from .phantom import PhantomSpec, default_phantom_spec, make_phantom
from .pipeline import run_pipeline
from .predictor import NoisyOracleConfig, NoisyOraclePredictor, OraclePredictor, PatchSoftmaxModel, train
from .preprocess import robust_scale
from .stack_io import load_predictions, load_stacks, save_predictions, save_stacks
from .volume import LabelMap

log = logging.getLogger("multiplanar")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _cmd_preprocess(args) -> int:
    volume = load_volume(args.volume)
    scaled, report = robust_scale(volume, fallback=args.fallback)
    if args.out:
        save_volume(scaled, args.out)
    _print_json(report.to_dict())
    return 0


def _cmd_fit_params(args) -> int:
    summaries = [VolumeSummary.of(load_volume(p)) for p in args.volumes]
    channels = args.channels or load_volume(args.volumes[0]).channels
    report = fit_sampling_params(summaries, args.memory_budget, args.batch_size_min, channels, args.r_min)
    _print_json(report.to_dict())
    return 0


def _cmd_views(args) -> int:
    views = sample_view_axes(args.k, args.seed, args.min_angle, args.canonical)
    if args.out:
        _write_json(args.out, views.to_dict())
    _print_json(views.to_dict())
    return 0


def _cmd_phantom(args) -> int:
    spec = PhantomSpec.load(args.spec) if args.spec else default_phantom_spec(seed=args.seed)
    volume, labels = make_phantom(spec)
    out = Path(args.out)
    suffix = ".json" if args.format == "raw" else ".nii"
    save_volume(volume, out / f"image{suffix}")
    save_volume(labels, out / f"labels{suffix}")
    _write_json(out / "phantom.json", spec.to_dict())
    return 0


def _load_views(path) -> ViewSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return ViewSet.from_dict(json.loads(path.read_text()))


def _cmd_sample(args) -> int:
    volume = load_volume(args.volume)
    labels = load_labels(args.labels) if args.labels else None
    views = _load_views(args.views) if args.views else sample_view_axes(args.k, args.seed)
    if args.q:
        params = SamplingParams.from_q_r(args.q, args.r or float(volume.spacing.min()))
    else:
        params = fit_sampling_params([VolumeSummary.of(volume)], args.memory_budget, 8, volume.channels).params
        if args.r:
            params = SamplingParams.from_m_r(params.m, args.r)
    center = volume.center_mm() if args.center == "volume" else np.zeros(3)
    stacks = sample_views(volume, labels, views, params, center, args.threads)
    save_stacks(stacks, args.out, labels.num_classes if labels else None)
    return 0


def _cmd_augment_preview(args) -> int:
    stacks, num_classes = load_stacks(args.stacks)
    if not 0 <= args.view < len(stacks):
        raise DataError(f"view index {args.view} out of range (have {len(stacks)})")
    policy = AugmentPolicy(probability=1.0 if args.force else args.probability, seed=args.seed).validate()
    stack = stacks[args.view]
    deformed, fields, record = [], [], []
    q = stack.params.q
    for t, s in enumerate(stack.slices):
        out, field = augment_with_field(s, policy, slice_rng(policy.seed, args.view, t))
        deformed.append(out)
        if field is None:
            fields.append(np.zeros((q, q, 2)))
            record.append({"slice": t, "deformed": False, "loss_weight": out.loss_weight})
        else:
            fields.append(np.stack([field.dx, field.dy], axis=-1))
            record.append(
                {"slice": t, "deformed": True, "sigma": field.sigma, "alpha": field.alpha, "loss_weight": out.loss_weight}
            )
    out_dir = Path(args.out)
    save_stacks([replace(stack, slices=tuple(deformed))], out_dir, num_classes)
    write_raw(out_dir / "field", np.stack(fields), np.eye(4), "f32")
    _write_json(out_dir / "augment.json", {"policy": policy.to_dict(), "slices": record})
    return 0


def _cmd_train(args) -> int:
    stacks, num_classes = load_stacks(args.stacks)
    num_classes = args.num_classes or num_classes
    if num_classes is None:
        raise DataError("class count unknown; pass --num-classes")
    policy = AugmentPolicy(probability=args.augment_probability, seed=args.seed).validate()
    slices = []
    for i, stack in enumerate(stacks):
        slices.extend(augment_slices(stack.slices, policy, stream=i))
    channels = slices[0].image.shape[-1]
    model, curve = train(
        PatchSoftmaxModel.zeros(channels, num_classes),
        slices,
        args.epochs,
        args.lr,
        np.random.default_rng(args.seed),
        not args.raw_features,
    )
    model.save(args.out)
    _print_json({"loss": curve})
    return 0


def _make_predictor(args, num_classes):
    if args.predictor == "oracle":
        return OraclePredictor(num_classes)
    if args.predictor == "noisy-oracle":
        return NoisyOraclePredictor(num_classes, NoisyOracleConfig(args.flip_rate, args.blur_sigma, args.seed))
    if not args.model:
        raise ConfigError("--model is required for the patch-softmax predictor")
    return PatchSoftmaxModel.load(args.model)


def _cmd_predict(args) -> int:
    stacks, num_classes = load_stacks(args.stacks)
    num_classes = args.num_classes or num_classes
    if args.predictor != "patch-softmax" and num_classes is None:
        raise DataError("class count unknown; pass --num-classes")
    predictor = _make_predictor(args, num_classes)
    preds = [predict_view(predictor, stack, i) for i, stack in enumerate(stacks)]
    save_predictions(preds, args.out)
    return 0


def _cmd_fuse(args) -> int:
    reference = load_volume(args.reference)
    preds = load_predictions(args.pred)
    per_view = [reconstruct_view(p, reference.shape, reference.affine) for p in preds]
    fused = fuse_views(per_view)
    labels = argmax_labels(fused)
    out = Path(args.out)
    suffix = ".json" if args.format == "raw" else ".nii"
    save_volume(fused, out / f"probs{suffix}")
    save_volume(labels, out / f"labels{suffix}")
    save_volume(LabelMap(fused.coverage, fused.affine, len(per_view) + 1), out / f"coverage{suffix}")
    return 0


def _cmd_evaluate(args) -> int:
    truth = load_labels(args.truth, args.num_classes)
    pred = load_labels(args.pred, truth.num_classes)
    _print_json(dice_per_class(pred, truth).to_dict())
    return 0


def _cmd_experiment(args) -> int:
    spec = PhantomSpec.load(args.phantom) if args.phantom else default_phantom_spec(shape=(args.size,) * 3)
    params = SamplingParams.from_q_r(args.q, args.r) if args.q else None
    result = variance_experiment(
        spec, args.k, args.flip_rate, args.trials, args.seed, params, args.min_angle, args.blur_sigma, args.threads
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "experiment.csv").write_text(result.to_csv())
    _write_json(out / "experiment.json", result.to_dict())
    _print_json(result.to_dict())
    return 0


_PIPELINE_FLAGS = (
    "volume", "labels", "out", "seed", "k", "min_angle_deg", "q", "r", "memory_budget_bytes",
    "center", "predictor", "model", "flip_rate", "blur_sigma", "epochs", "learning_rate", "threads",
)


def _cmd_pipeline(args) -> int:
    if args.config:
        config, problems = cfg.load_config(args.config)
        if config is None:
            raise ConfigError("; ".join(problems))
    else:
        config, problems = cfg.PipelineConfig(), []
    overrides = {name: getattr(args, name) for name in _PIPELINE_FLAGS if getattr(args, name) is not None}
    if args.no_intermediates:
        overrides["save_intermediates"] = False
    config = replace(config, **overrides)
    problems = problems + cfg.validate_config(config)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2 if cfg.missing_paths(problems) else 1
    report = run_pipeline(config)
    _print_json(report["dice"] if report["dice"] is not None else {"coverage_fraction": report["coverage_fraction"]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multiplanar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("preprocess", help="robust intensity scaling; prints the scale report")
    p.add_argument("volume")
    p.add_argument("--out")
    p.add_argument("--fallback", action="store_true", help="divide by 1.0 instead of failing on zero IQR")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("fit-params", help="choose (q, m, r) for a dataset")
    p.add_argument("volumes", nargs="+")
    p.add_argument("--memory-budget", type=int, default=cfg.DEFAULT_MEMORY_BUDGET)
    p.add_argument("--batch-size-min", type=int, default=8)
    p.add_argument("--channels", type=int)
    p.add_argument("--r-min", type=float, default=0.0)
    p.set_defaults(func=_cmd_fit_params)

    p = sub.add_parser("views", help="generate a reproducible view set")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-angle", type=float, default=DEFAULT_MIN_ANGLE)
    p.add_argument("--canonical", action="store_true", help="start with the three scanner axes")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_views)

    p = sub.add_parser("phantom", help="write a synthetic ellipsoid phantom")
    p.add_argument("--spec", help="PhantomSpec JSON (default: two nested ellipsoids)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("nifti", "raw"), default="nifti")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("sample", help="sample slice stacks for every view")
    p.add_argument("--volume", required=True)
    p.add_argument("--labels")
    p.add_argument("--views", help="views JSON; default draws --k views from --seed")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--memory-budget", type=int, default=cfg.DEFAULT_MEMORY_BUDGET)
    p.add_argument("--center", choices=cfg.CENTERS, default="origin")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("augment-preview", help="elastically deform one saved stack")
    p.add_argument("--stacks", required=True)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probability", type=float, default=1.0 / 3.0)
    p.add_argument("--force", action="store_true", help="deform every slice")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_augment_preview)

    p = sub.add_parser("train", help="fit the patch-softmax model on saved stacks")
    p.add_argument("--stacks", required=True)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--augment-probability", type=float, default=1.0 / 3.0)
    p.add_argument("--raw-features", action="store_true", help="skip feature standardisation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="per-view probability stacks")
    p.add_argument("--stacks", required=True)
    p.add_argument("--predictor", choices=cfg.PREDICTORS, default="oracle")
    p.add_argument("--model")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--flip-rate", type=float, default=0.2)
    p.add_argument("--blur-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("fuse", help="fuse per-view predictions onto a reference grid")
    p.add_argument("--pred", required=True)
    p.add_argument("--reference", required=True, help="volume whose grid the output uses")
    p.add_argument("--format", choices=("nifti", "raw"), default="nifti")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("evaluate", help="per-class dice of a label map against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="dice vs number of fused noisy views")
    p.add_argument("--k", type=_int_list, default=[1, 2, 4, 6])
    p.add_argument("--flip-rate", type=float, default=0.2)
    p.add_argument("--blur-sigma", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phantom", help="PhantomSpec JSON")
    p.add_argument("--size", type=int, default=32, help="default phantom edge length")
    p.add_argument("--q", type=int)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--min-angle", type=float, default=DEFAULT_MIN_ANGLE)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("pipeline", help="end-to-end run writing a reproducible manifest")
    p.add_argument("--config", help="config JSON or a previous run's manifest.json")
    p.add_argument("--volume")
    p.add_argument("--labels")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--min-angle", dest="min_angle_deg", type=float)
    p.add_argument("--q", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--memory-budget", dest="memory_budget_bytes", type=int)
    p.add_argument("--center", choices=cfg.CENTERS)
    p.add_argument("--predictor", choices=cfg.PREDICTORS)
    p.add_argument("--model")
    p.add_argument("--flip-rate", type=float)
    p.add_argument("--blur-sigma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--no-intermediates", action="store_true", help="skip writing stacks/ and pred/")
    p.set_defaults(func=_cmd_pipeline)
    return parser


def run_subcommand(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MultiplanarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
