"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines go straight to the
terminal) or ``python tests/test_acceptance.py`` for the lines alone.
"""
import json
import sys
import time

import numpy as np
import pytest

from multiplanar import (
    AugmentPolicy,
    Ellipsoid,
    PhantomSpec,
    SamplingParams,
    Slice,
    ViewAxis,
    Volume,
    VolumeSummary,
    default_phantom_spec,
    fit_sampling_params,
    featurize,
    make_phantom,
    maybe_augment,
    robust_scale,
    sample_slice,
    sample_view_axes,
    trilinear_sample,
    variance_experiment,
    voxel_to_scanner,
)
from multiplanar.augment import slice_rng
from multiplanar.cli import run_subcommand
from multiplanar.config import PipelineConfig
from multiplanar.geometry import batch_memory_bytes
from multiplanar.pipeline import run_pipeline
from multiplanar.predictor import PatchSoftmaxModel, weighted_cross_entropy
from multiplanar.preprocess import background_mask


@pytest.fixture
def report(capsys):
    def _report(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return _report


def test_c01_oracle_round_trip(tmp_path, report):
    start = time.perf_counter()
    cfg = PipelineConfig(out=str(tmp_path / "run"), seed=0, k=6, r=1.0, predictor="oracle", threads=1)
    result = run_pipeline(cfg)
    elapsed = time.perf_counter() - start
    fg = result["dice"]["per_class_f1"][1:]
    ok = min(fg) >= 0.95 and elapsed <= 120.0
    report(1, "oracle round trip", ok, f"foreground dice {[round(d, 4) for d in fg]}, {elapsed:.1f} s")


def test_c02_interpolation_exactness(report):
    rng = np.random.default_rng(2)
    affine = np.eye(4)
    affine[:3, :3] = np.array([[1.2, 0.1, 0.0], [0.0, 0.9, -0.2], [0.1, 0.0, 1.5]])
    affine[:3, 3] = [-12.0, 8.0, 3.0]
    shape = (20, 18, 16)
    a, b, c, d = 2.0, 3.0, -1.0, 5.0
    i, j, k = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    vol = Volume(a * i + b * j + c * k + d, affine)
    idx = rng.uniform(0, np.array(shape) - 1, size=(1000, 3))
    got = trilinear_sample(vol, voxel_to_scanner(affine, idx))[:, 0]
    err = np.max(np.abs(got - (a * idx[:, 0] + b * idx[:, 1] + c * idx[:, 2] + d)))
    report(2, "interpolation exactness", err <= 1e-6, f"max abs error {err:.2e} over 1000 points")


def test_c03_isotropy(report):
    radius, r = 10.0, 0.5
    spec = PhantomSpec((48, 48, 48), (r, r, r), (Ellipsoid((0, 0, 0), (radius,) * 3, 1, 1.0),))
    vol, lm = make_phantom(spec)
    params = SamplingParams.from_q_r(61, r)
    centre = params.q // 2
    worst = 0.0
    for view in sample_view_axes(20, seed=3):
        s = sample_slice(vol, lm, view, 0.0, params)
        for line in (s.labels[centre], s.labels[:, centre]):
            measured = np.count_nonzero(line) * r / 2.0
            worst = max(worst, abs(measured - radius))
    report(3, "isotropy", worst <= r, f"worst radius deviation {worst:.3f} mm over 20 views")


def test_c04_preprocessing_fixed_point(report):
    vol, _ = make_phantom(default_phantom_spec())
    mask = ~background_mask(vol.data[..., 0])
    out, _ = robust_scale(vol)
    fg = out.data[..., 0][mask]
    median = float(np.median(fg))
    q25, q75 = np.percentile(fg, [25, 75])
    ok = abs(median) <= 1e-6 and abs((q75 - q25) - 1.0) <= 1e-6
    report(4, "preprocessing fixed point", ok, f"median {median:.1e}, IQR-1 {(q75 - q25 - 1):.1e}")


def test_c05_augmentation_contract(report):
    rng = np.random.default_rng(5)
    view = ViewAxis.from_normal((0, 0, 1))
    s = Slice(rng.normal(size=(32, 32, 1)), rng.integers(0, 3, size=(32, 32)), view, 0.0)
    still = maybe_augment(s, AugmentPolicy(probability=1.0, alpha_range=(0.0, 0.0)), rng)
    identical = np.array_equal(still.image, s.image) and np.array_equal(still.labels, s.labels)
    small = Slice(s.image[:8, :8], s.labels[:8, :8], view, 0.0)
    policy = AugmentPolicy()
    draws = [maybe_augment(small, policy, slice_rng(11, i)) for i in range(10_000)]
    augmented = [d for d in draws if d.loss_weight != 1.0]
    frac = len(augmented) / len(draws)
    weights_exact = all(d.loss_weight == 1.0 / 3.0 for d in augmented)
    ok = identical and 0.31 <= frac <= 0.36 and weights_exact
    report(5, "augmentation contract", ok, f"alpha=0 identical {identical}, fraction {frac:.4f}, weight 1/3 {weights_exact}")


def test_c06_gradient_correctness(report):
    h, worst = 1e-5, 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        model = PatchSoftmaxModel(rng.normal(size=(3, 3)), rng.normal(size=3))
        feats = [featurize(rng.normal(size=(8, 8, 1))) for _ in range(2)]
        labels = [rng.integers(0, 3, size=(8, 8)) for _ in range(2)]
        weights = [1.0, 1.0 / 3.0]
        _, gw, gb = weighted_cross_entropy(model, feats, labels, weights)
        numeric = []
        for arr in (model.weights, model.bias):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = weighted_cross_entropy(model, feats, labels, weights)[0]
                arr[idx] = old - h
                down = weighted_cross_entropy(model, feats, labels, weights)[0]
                arr[idx] = old
                numeric.append((up - down) / (2 * h))
        analytic = np.concatenate([gw.ravel(), gb.ravel()])
        numeric = np.array(numeric)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        worst = max(worst, rel)
    report(6, "gradient correctness", worst <= 1e-4, f"worst relative error {worst:.2e} over 5 instances")


def test_c07_variance_reduction(report):
    start = time.perf_counter()
    result = variance_experiment(default_phantom_spec(shape=(32, 32, 32)), [1, 6], 0.2, 30, seed=7)
    rows = {row["k"]: row for row in result.summary()}
    one, six = rows[1], rows[6]
    ok = six["mean_dice"] > one["mean_dice"] and six["dice_variance"] < one["dice_variance"]
    detail = (
        f"mean {one['mean_dice']:.4f} -> {six['mean_dice']:.4f}, var {one['dice_variance']:.2e} -> "
        f"{six['dice_variance']:.2e}, 30 trials, {time.perf_counter() - start:.1f} s"
    )
    report(7, "variance reduction", ok, detail)


def test_c08_coverage_monotonicity(report):
    spec = default_phantom_spec(shape=(32, 32, 32))
    params = SamplingParams.from_q_r(33, 1.0)  # m = 32 mm, well short of the 55 mm diagonal
    result = variance_experiment(spec, [1, 2, 4, 6], 0.0, 2, seed=8, params=params)
    cover = [row["mean_coverage_fraction"] for row in result.summary()]
    ok = all(b >= a for a, b in zip(cover, cover[1:])) and cover[0] < 1.0
    report(8, "coverage monotonicity", ok, f"coverage by k=1,2,4,6: {[round(c, 4) for c in cover]}")


def test_c09_heuristic_priorities(report):
    cases = 0
    bad = []
    shapes = [(64, 64, 64), (256, 256, 40), (512, 512, 300), (96, 128, 80)]
    spacings = [(1.0, 1.0, 1.0), (0.4, 0.4, 3.0), (0.7, 0.7, 0.7), (2.0, 1.5, 1.0)]
    budgets = [batch_memory_bytes(q, 8) for q in (8, 40, 64, 128, 200, 400, 1024)] + [2**31]
    for shape in shapes:
        for spacing in spacings:
            for budget in budgets:
                for channels in (1, 3):
                    if budget < batch_memory_bytes(8, 8, channels):
                        continue
                    cases += 1
                    s = VolumeSummary(shape, spacing)
                    fit = fit_sampling_params([s], budget, 8, channels)
                    p = fit.params
                    mem_ok = batch_memory_bytes(p.q, 8, channels) <= budget
                    res_kept = p.r == min(spacing) and not fit.resolution_violated
                    cov_flag = fit.coverage_violated == (p.m < s.diameter_mm - 1e-9)
                    if not (mem_ok and res_kept and cov_flag):
                        bad.append((shape, spacing, budget, channels))
    report(9, "heuristic priorities", not bad, f"{cases} cases, {len(bad)} violations of memory > resolution > coverage")


def test_c10_determinism(tmp_path, report):
    outs = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        code = run_subcommand(["pipeline", "--seed", "10", "--threads", str(threads), "--out", str(out)])
        assert code == 0
        outs.append((out / "report.json").read_bytes())
    same = outs[0] == outs[1]
    dice = json.loads(outs[0])["dice"]["mean_f1"]
    report(10, "determinism", same, f"report.json identical at 1 and 8 threads: {same} (mean dice {dice:.4f})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
