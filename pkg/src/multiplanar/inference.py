"""Run a predictor over every view of a volume and fuse the result."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .fusion import ViewPrediction, argmax_labels, fuse_views, reconstruct_view
from .geometry import SamplingParams, ViewSet
from .predictor import predict_slice
from .sampler import SliceStack, sample_stack


def predict_view(predictor, stack: SliceStack, view_index: int) -> ViewPrediction:
    probs = np.stack([predict_slice(predictor, s, view_index, t) for t, s in enumerate(stack.slices)])
    return ViewPrediction(probs, stack.view, stack.params, stack.center_mm)


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def sample_views(volume, labelmap, views: ViewSet, params: SamplingParams, center_mm, threads: int = 1):
    return _map(lambda view: sample_stack(volume, labelmap, view, params, center_mm), views.axes, threads)


def segment(
    stacks,
    predictor,
    shape,
    affine,
    threads: int = 1,
):
    """Predict each stack, map it onto the voxel grid and fuse.

    Returns ``(view_predictions, per_view_prob_volumes, fused, labels)``; all
    lists are in view order whatever the thread count.
    """
    stacks = list(stacks)

    def work(i):
        pred = predict_view(predictor, stacks[i], i)
        return pred, reconstruct_view(pred, shape, affine)

    results = _map(work, range(len(stacks)), threads)
    preds = [r[0] for r in results]
    per_view = [r[1] for r in results]
    fused = fuse_views(per_view)
    return preds, per_view, fused, argmax_labels(fused)
