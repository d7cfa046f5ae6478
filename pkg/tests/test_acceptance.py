"""Acceptance gate: the nine release criteria, one test each.

Each test appends a single [PASS]/[FAIL] verdict line to VERDICTS (echoed in
the terminal summary by conftest) and asserts the criterion at its stated
tolerance.  Criteria 3/4 use the deterministic 20-group reference fleet
(scene seeds 1000+i, parameter stream group_rng(0, i)); criteria 6 uses the
first 10 of those groups.
"""

import json
import os
import time

import numpy as np
import pytest

from lensrect.estimator import OptimizerConfig, estimate_group, estimate_supervised
from lensrect.losses import GroupState, LossSpec, intra_loss, same_param_loop_loss, total_loss
from lensrect.metrics import evaluate_matrix, psnr, ssim
from lensrect.models import ALL_MODELS, ModelKind, default_model
from lensrect.scenes import desk_set, make_scene
from lensrect.synthesis import group_rng, sample_params, synthesize_group
from lensrect.warp import as_image, distort, erode_mask, rectify

VERDICTS = []

MODELS = {kind: default_model(kind) for kind in ALL_MODELS}


def verdict(num, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    VERDICTS.append(line)
    assert ok, line


def fleet(n):
    return [synthesize_group(make_scene(1000 + i), group_rng(0, i))
            for i in range(n)]


def test_criterion_1_radial_round_trip():
    t0 = time.time()
    worst = 0.0
    for kind in ALL_MODELS:
        model = MODELS[kind]
        for kn in np.linspace(0.0, 1.0, 10):
            k = model.denormalize(float(kn))
            # 100 radii inside the valid domain (stop short of the DM k=-1
            # singularity at r=1)
            r = np.linspace(0.0, 0.999, 100)
            fwd = model.radial_forward(r, k)
            assert np.isfinite(fwd).all()
            back = model.radial_backward(fwd, k)
            worst = max(worst, float(np.abs(back - r).max()))
    dt = time.time() - t0
    verdict(1, worst < 1e-6 and dt < 1.0,
            f"max |round trip - r| = {worst:.2e} (< 1e-6), {dt:.2f}s (< 1 s)")


def test_criterion_2_warp_round_trip():
    t0 = time.time()
    images = desk_set(5, size=257, seed=2)
    worst = np.inf
    for img in images:
        for kind in ALL_MODELS:
            model = MODELS[kind]
            for kn in (0.15, 0.5, 0.85):
                k = model.denormalize(kn)
                rec = rectify(distort(img, model, k), model, k)
                m = erode_mask(rec.mask, 4) > 0
                worst = min(worst, psnr(rec.image[m], as_image(img)[m]))
    dt = time.time() - t0
    verdict(2, worst > 30.0 and dt < 30.0,
            f"min PSNR {worst:.1f} dB (> 30), 45 round trips in {dt:.1f}s (< 30 s)")


def test_criterion_3_loss_at_truth():
    t0 = time.time()
    groups = fleet(20)
    totals = []
    wins = 0
    cases = 0
    for g in groups:
        truth = g.params_by_model()
        base = total_loss(GroupState(images=g.by_model(), params=truth))["total"]
        totals.append(base)
        for kind in ALL_MODELS:
            model = MODELS[kind]
            for slot in (0, 1):
                for delta in (-0.3, -0.1, 0.1, 0.3):
                    kn = model.normalize(truth[kind][slot]) + delta
                    if not 0.0 <= kn <= 1.0:
                        kn = float(np.clip(kn, 0.0, 1.0))
                    params = {m: list(v) for m, v in truth.items()}
                    params[kind][slot] = model.denormalize(kn)
                    params = {m: tuple(v) for m, v in params.items()}
                    val = total_loss(GroupState(images=g.by_model(), params=params))["total"]
                    wins += val > base
                    cases += 1
    dt = time.time() - t0
    ok = max(totals) < 0.05 and wins >= 0.9 * cases and dt < 300
    verdict(3, ok,
            f"loss at truth max {max(totals):.4f} (< 0.05), beats perturbations "
            f"{wins}/{cases} = {wins / cases:.1%} (>= 90%), {dt:.0f}s (< 300 s)")


def test_criterion_4_parameter_recovery():
    # the 15-minute budget covers the estimate_group calls; synthesis and
    # the PSNR-gap evaluation below are test scaffolding
    est_time = 0.0
    errs, gaps = [], []
    for i in range(20):
        g = synthesize_group(make_scene(1000 + i), group_rng(0, i))
        t0 = time.time()
        res = estimate_group(g.by_model(), config=OptimizerConfig(eval_size=129))
        est_time += time.time() - t0
        truth = g.params_by_model()
        for kind in ALL_MODELS:
            model = MODELS[kind]
            for slot in (0, 1):
                est = res.estimate(kind, slot + 1)
                errs.append(abs(est.k_norm - model.normalize(truth[kind][slot])))
                img = g.by_model()[kind][slot]
                r_true = rectify(img, model, truth[kind][slot])
                r_est = rectify(img, model, est.k_raw)
                m = (r_true.mask > 0) & (r_est.mask > 0)
                ref = as_image(g.normal)
                gaps.append(psnr(r_true.image[m], ref[m]) - psnr(r_est.image[m], ref[m]))
    med_err = float(np.median(errs))
    med_gap = float(np.median(gaps))
    ok = med_err < 0.05 and med_gap < 1.0 and est_time < 900
    verdict(4, ok,
            f"median |k_norm error| {med_err:.4f} (< 0.05), median PSNR gap "
            f"{med_gap:.2f} dB (< 1), estimation {est_time:.0f}s (< 900 s)")


def test_criterion_5_trivial_solution():
    groups = fleet(20)
    hits = 0
    for g in groups:
        truth = g.params_by_model()
        wrong = {}
        for kind in ALL_MODELS:
            model = MODELS[kind]
            ks = []
            for slot in (0, 1):
                kn = model.normalize(truth[kind][slot])
                ks.append(model.denormalize(kn + 0.35 if kn <= 0.6 else kn - 0.35))
            wrong[kind] = tuple(ks)
        state = GroupState(images=g.by_model(), params=wrong)
        loop = same_param_loop_loss(state)
        cross = intra_loss(state)
        hits += loop < 0.02 and cross > 5.0 * loop
    verdict(5, hits >= 18,
            f"same-parameter loop loss blind to a 0.35-off setting while the "
            f"cross scheme flags it on {hits}/20 groups (>= 18)")


def test_criterion_6_variant_collapse():
    t0 = time.time()
    # "alone" means the bare variant objective: intra/inter terms off and no
    # mask-agreement shaping, minimized with the full search machinery.
    config = OptimizerConfig(eval_size=65, max_sweeps=6, pair_seed_grid=5,
                             gauge_search=True, anchor_weight=0.0)
    results = {}
    for variant in ("L_r", "L_s"):
        spec = LossSpec(use_intra=False, use_inter=False, variant=variant)
        errs, losses = [], []
        for i in range(10):
            g = synthesize_group(make_scene(1000 + i), group_rng(0, i))
            res = estimate_group(g.by_model(), spec=spec, config=config)
            truth = g.params_by_model()
            for kind in ALL_MODELS:
                model = MODELS[kind]
                for slot in (0, 1):
                    est = res.estimate(kind, slot + 1)
                    errs.append(abs(est.k_norm - model.normalize(truth[kind][slot])))
            losses.append(res.breakdown["total"])
        results[variant] = (float(np.median(errs)), float(np.median(losses)))
    dt = time.time() - t0
    ok = all(err > 0.2 and loss < 0.05 for err, loss in results.values())
    verdict(6, ok,
            "optimizing the variant alone collapses: " + ", ".join(
                f"{v} median error {e:.2f} (> 0.2) at median loss {l:.4f} (< 0.05)"
                for v, (e, l) in results.items()) + f", {dt:.0f}s")


def test_criterion_7_dm_universality():
    images = desk_set(20, size=257, seed=4)
    test_sets = {kind: [] for kind in ALL_MODELS}
    for i, img in enumerate(images):
        rng = group_rng(11, i)
        for kind in ALL_MODELS:
            k = sample_params(MODELS[kind], rng)
            test_sets[kind].append((distort(img, MODELS[kind], k), k, img))

    config = OptimizerConfig(eval_size=129)

    def fit(distorted, normal, row, k_true, diagonal):
        if diagonal:
            return k_true
        k, _ = estimate_supervised(distorted, normal, row, config)
        return k

    report = evaluate_matrix(test_sets, fit)

    def cross_mean(row):
        cells = [report.cell(row, col) for col in ALL_MODELS if col != row]
        return float(np.mean([c.psnr_mean for c in cells]))

    dm, fov = cross_mean(ModelKind.DM), cross_mean(ModelKind.FOV)
    verdict(7, dm > fov,
            f"cross-model mean PSNR: DM {dm:.2f} dB > FOV {fov:.2f} dB")


def test_criterion_8_metric_identities(scene):
    a = np.full((64, 64, 3), 0.4)
    b = np.full((64, 64, 3), 0.5)
    checks = [
        psnr(scene, scene) == 99.0,
        abs(psnr(a, b) - 20.0) < 1e-6,
        abs(ssim(scene, scene) - 1.0) < 1e-9,
        abs(ssim(scene, make_scene(8)) - ssim(make_scene(8), scene)) < 1e-9,
    ]
    verdict(8, all(checks),
            "psnr(x,x)=cap, uniform 0.1 -> 20 dB, ssim(x,x)=1, ssim symmetric")


def test_criterion_9_determinism(tmp_path):
    from lensrect.cli import main
    from lensrect.synthesis import save_png

    src = tmp_path / "normals"
    src.mkdir()
    for i, img in enumerate(desk_set(1, size=257, seed=6)):
        save_png(src / f"img_{i}.png", img)

    manifests, estimates = [], []
    for run, threads in enumerate(("1", "4")):
        sdir, edir = tmp_path / f"s{run}", tmp_path / f"e{run}"
        os.environ["THREADS"] = threads
        try:
            assert main(["synth", "--in-dir", str(src), "--out", str(sdir),
                         "--seed", "9"]) == 0
            rc = main(["estimate", "--manifest", str(sdir / "manifest.json"),
                       "--out", str(edir), "--loss", "intra",
                       "--eval-size", "65"])
            assert rc in (0, 1)
        finally:
            os.environ.pop("THREADS", None)
        manifests.append((sdir / "manifest.json").read_bytes())
        estimates.append((edir / "estimates.json").read_bytes())
    ok = manifests[0] == manifests[1] and estimates[0] == estimates[1]
    verdict(9, ok, "manifest and estimation JSON byte-identical across "
                   "re-runs at THREADS=1 and THREADS=4")
