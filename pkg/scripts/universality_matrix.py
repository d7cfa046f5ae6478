#!/usr/bin/env python3
"""Cross-model rectification matrix on a procedural desk set.

Distorts each scene with every model, then rectifies each distorted image
with every model (parameters fitted against the clean scene), printing the
3x3 PSNR/SSIM matrix and per-row "universality" averages.

    python3 scripts/universality_matrix.py --images 10
"""

import argparse
import sys

import numpy as np

from lensrect.estimator import OptimizerConfig, estimate_supervised
from lensrect.metrics import evaluate_matrix
from lensrect.models import ALL_MODELS, default_model
from lensrect.scenes import desk_set
from lensrect.synthesis import group_rng, sample_params
from lensrect.warp import distort


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=10)
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--eval-size", type=int, default=129)
    args = ap.parse_args(argv)

    models = {kind: default_model(kind) for kind in ALL_MODELS}
    test_sets = {kind: [] for kind in ALL_MODELS}
    for i, img in enumerate(desk_set(args.images, size=257, seed=args.seed)):
        rng = group_rng(11, i)
        for kind in ALL_MODELS:
            k = sample_params(models[kind], rng)
            test_sets[kind].append((distort(img, models[kind], k), k, img))

    config = OptimizerConfig(eval_size=args.eval_size)

    def fit(distorted, normal, row, k_true, diagonal):
        if diagonal:
            return k_true
        k, _ = estimate_supervised(distorted, normal, row, config)
        return k

    report = evaluate_matrix(test_sets, fit)
    for cell in report.cells:
        print(f"{cell.row_model.value:>4s} rectifying {cell.test_model.value:<4s}"
              f" PSNR {cell.psnr_mean:6.2f}  SSIM {cell.ssim_mean:.4f}")
    print()
    for row in ALL_MODELS:
        cross = [report.cell(row, col).psnr_mean for col in ALL_MODELS if col != row]
        avg = report.row_average(row)
        print(f"{row.value:>4s} universality: cross-model PSNR "
              f"{float(np.mean(cross)):6.2f}  row avg {avg['psnr']:6.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
