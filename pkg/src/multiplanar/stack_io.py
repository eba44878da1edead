"""On-disk layout for slice stacks and per-view predictions.

A directory holds ``manifest.json`` plus, per view ``i``, raw+JSON files
``view_{i:02d}_image`` (n, q, q, C), ``view_{i:02d}_labels`` (n, q, q) and,
for predictions, ``view_{i:02d}_probs`` (n, q, q, L). The manifest records
each view's axis, offsets, sampling parameters and grid centre.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fusion import ViewPrediction
from .geometry import SamplingParams, ViewAxis
from .io import read_raw, write_raw
from .sampler import Slice, SliceStack

MANIFEST = "manifest.json"
_EYE = np.eye(4)


def _view_name(i: int, kind: str) -> str:
    return f"view_{i:02d}_{kind}"


def _read_manifest(directory: Path) -> dict:
    path = directory / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _view_entry(stack_view: ViewAxis, params: SamplingParams, center, offsets) -> dict:
    return {
        "view": stack_view.to_dict(),
        "params": params.to_dict(),
        "center_mm": [float(x) for x in center],
        "offsets": [float(x) for x in offsets],
    }


def save_stacks(stacks, directory, num_classes: int | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, stack in enumerate(stacks):
        entry = _view_entry(stack.view, stack.params, stack.center_mm, stack.offsets)
        entry["background_fill"] = float(stack.slices[0].background_fill)
        entry["loss_weights"] = [float(s.loss_weight) for s in stack.slices]
        write_raw(directory / _view_name(i, "image"), stack.images, _EYE, "f32")
        entry["image"] = _view_name(i, "image")
        labels = stack.labels
        if labels is not None:
            dtype = "u8" if labels.max(initial=0) < 256 else "i16"
            write_raw(directory / _view_name(i, "labels"), labels[..., None], _EYE, dtype)
            entry["labels"] = _view_name(i, "labels")
        entries.append(entry)
    manifest = {"kind": "slice_stacks", "num_classes": num_classes, "views": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory / MANIFEST


def load_stacks(directory) -> tuple[list[SliceStack], int | None]:
    directory = Path(directory)
    manifest = _read_manifest(directory)
    if manifest.get("kind") != "slice_stacks":
        raise FormatError(f"{directory}: not a slice-stack directory")
    stacks = []
    for entry in manifest["views"]:
        view = ViewAxis.from_dict(entry["view"])
        params = SamplingParams.from_dict(entry["params"])
        images, _, _ = read_raw(directory / entry["image"])
        images = np.asarray(images, dtype=np.float64)
        labels = None
        if "labels" in entry:
            labels = np.asarray(read_raw(directory / entry["labels"])[0][..., 0], dtype=np.int64)
        weights = entry.get("loss_weights", [1.0] * len(entry["offsets"]))
        fill = entry.get("background_fill", 0.0)
        slices = tuple(
            Slice(images[t], None if labels is None else labels[t], view, off, w, fill)
            for t, (off, w) in enumerate(zip(entry["offsets"], weights))
        )
        stacks.append(SliceStack(slices, view, params, np.asarray(entry["center_mm"])))
    return stacks, manifest.get("num_classes")


def save_predictions(preds, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, pred in enumerate(preds):
        offsets = -pred.params.m / 2.0 + np.arange(pred.prob_slices.shape[0]) * pred.params.r
        entry = _view_entry(pred.view, pred.params, pred.center_mm, offsets)
        write_raw(directory / _view_name(i, "probs"), pred.prob_slices, _EYE, "f32")
        entry["probs"] = _view_name(i, "probs")
        entries.append(entry)
    manifest = {"kind": "view_predictions", "views": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory / MANIFEST


def load_predictions(directory) -> list[ViewPrediction]:
    directory = Path(directory)
    manifest = _read_manifest(directory)
    if manifest.get("kind") != "view_predictions":
        raise FormatError(f"{directory}: not a prediction directory")
    preds = []
    for entry in manifest["views"]:
        probs = np.asarray(read_raw(directory / entry["probs"])[0], dtype=np.float64)
        probs /= probs.sum(axis=-1, keepdims=True)
        preds.append(
            ViewPrediction(
                probs,
                ViewAxis.from_dict(entry["view"]),
                SamplingParams.from_dict(entry["params"]),
                np.asarray(entry["center_mm"]),
            )
        )
    return preds
