"""PSNR / SSIM and the cross-model evaluation matrix.

PSNR is capped at 99 dB for identical inputs.  SSIM uses the standard
11x11 Gaussian window (sigma 1.5) and stabilizers C1=0.01^2, C2=0.03^2 at
unit dynamic range, averaged over channels; windows overlapping any
masked-out pixel are excluded.  Scores are computed on per-channel RGB,
averaged (not luma).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, minimum_filter

from .models import ALL_MODELS, DistortionModel, ModelKind, default_model
from .warp import as_image, erode_mask, mask_of, rectify

PSNR_CAP = 99.0
_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5  # 11x11 window
_C1 = 0.01**2
_C2 = 0.03**2


def psnr(a, b, mask: np.ndarray | None = None) -> float:
    """10*log10(1/MSE) over (optionally masked) pixels; peak value 1.0."""
    ia, ib = as_image(a), as_image(b)
    if ia.shape != ib.shape:
        raise ValueError(f"shape mismatch: {ia.shape} vs {ib.shape}")
    if mask is None:
        valid = np.ones(ia.shape[:2], dtype=bool)
    else:
        valid = np.asarray(mask) > 0.5
    if not valid.any():
        raise ValueError("empty mask")
    mse = float(((ia[valid] - ib[valid]) ** 2).mean())
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gauss(x: np.ndarray) -> np.ndarray:
    return gaussian_filter(x, sigma=_SSIM_SIGMA, truncate=_SSIM_RADIUS / _SSIM_SIGMA,
                           mode="constant")


def ssim(a, b, mask: np.ndarray | None = None) -> float:
    """Mean local SSIM over windows that lie fully inside the image and mask."""
    ia, ib = as_image(a), as_image(b)
    if ia.shape != ib.shape:
        raise ValueError(f"shape mismatch: {ia.shape} vs {ib.shape}")
    h, w, c = ia.shape
    if h < 2 * _SSIM_RADIUS + 1 or w < 2 * _SSIM_RADIUS + 1:
        raise ValueError(f"image {h}x{w} smaller than the {2*_SSIM_RADIUS+1}-pixel window")

    interior = np.zeros((h, w), dtype=bool)
    interior[_SSIM_RADIUS:h - _SSIM_RADIUS, _SSIM_RADIUS:w - _SSIM_RADIUS] = True
    if mask is not None:
        ok = minimum_filter((np.asarray(mask) > 0.5).astype(float),
                            size=2 * _SSIM_RADIUS + 1, mode="constant") > 0.5
        interior &= ok
    if not interior.any():
        raise ValueError("no fully valid SSIM windows")

    vals = []
    for ch in range(c):
        x, y = ia[:, :, ch], ib[:, :, ch]
        mu_x, mu_y = _gauss(x), _gauss(y)
        var_x = _gauss(x * x) - mu_x**2
        var_y = _gauss(y * y) - mu_y**2
        cov = _gauss(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + _C1) * (2 * cov + _C2)
        den = (mu_x**2 + mu_y**2 + _C1) * (var_x + var_y + _C2)
        vals.append((num / den)[interior].mean())
    return float(np.mean(vals))


@dataclass
class EvalCell:
    row_model: ModelKind
    test_model: ModelKind
    n: int
    psnr_mean: float
    ssim_mean: float
    failures: int
    records: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    cells: list[EvalCell]
    masked: bool
    note: str = "metrics on per-channel-averaged RGB"

    def cell(self, row: ModelKind, col: ModelKind) -> EvalCell:
        for c in self.cells:
            if c.row_model == row and c.test_model == col:
                return c
        raise KeyError((row, col))

    def row_average(self, row: ModelKind) -> dict:
        cells = [c for c in self.cells if c.row_model == row]
        return {
            "psnr": float(np.mean([c.psnr_mean for c in cells])),
            "ssim": float(np.mean([c.ssim_mean for c in cells])),
        }

    def to_dict(self, include_records: bool = True) -> dict:
        rows = sorted({c.row_model for c in self.cells},
                      key=lambda k: list(ALL_MODELS).index(k))
        return {
            "masked": self.masked,
            "note": self.note,
            "cells": [
                {
                    "row_model": c.row_model.value,
                    "test_model": c.test_model.value,
                    "n": c.n,
                    "psnr_mean": c.psnr_mean,
                    "ssim_mean": c.ssim_mean,
                    "failures": c.failures,
                    **({"records": c.records} if include_records else {}),
                }
                for c in self.cells
            ],
            "row_averages": {r.value: self.row_average(r) for r in rows},
        }

    def write_csv(self, path) -> None:
        rows = sorted({c.row_model for c in self.cells},
                      key=lambda k: list(ALL_MODELS).index(k))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_model", "test_model", "n", "psnr_mean", "ssim_mean"])
            for c in self.cells:
                writer.writerow([c.row_model.value, c.test_model.value, c.n,
                                 f"{c.psnr_mean:.6f}", f"{c.ssim_mean:.6f}"])
            for r in rows:
                avg = self.row_average(r)
                writer.writerow([r.value, "average", "",
                                 f"{avg['psnr']:.6f}", f"{avg['ssim']:.6f}"])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def evaluate_matrix(test_sets: dict[ModelKind, list], fit_param,
                    row_models=None, masked: bool = True,
                    erode_width: int = 4) -> EvalReport:
    """Score every (row model, test set) combination.

    ``test_sets[col]`` is a list of (distorted image, k_true, normal image)
    tuples; ``fit_param(distorted, normal, row_model, k_true, diagonal)``
    returns the raw parameter to rectify with (or raises on failure).
    Failed fits are excluded from means and counted.
    """
    rows = [default_model(k) for k in (row_models or ALL_MODELS)]
    cells = []
    for row in rows:
        for col in (k for k in ALL_MODELS if k in test_sets):
            psnrs, ssims, records, failures = [], [], [], 0
            for idx, (distorted, k_true, normal) in enumerate(test_sets[col]):
                try:
                    k = fit_param(distorted, normal, row, k_true,
                                  row.kind == col)
                    rect = rectify(distorted, row, k)
                    m = None
                    if masked:
                        m = erode_mask(rect.mask, erode_width)
                    p = psnr(rect.image, normal, m)
                    s = ssim(rect.image, normal, m)
                except Exception as exc:  # recorded, not fatal
                    failures += 1
                    records.append({"index": idx, "error": str(exc)})
                    continue
                psnrs.append(p)
                ssims.append(s)
                records.append({"index": idx, "k": k, "psnr": p, "ssim": s})
            cells.append(EvalCell(
                row_model=row.kind, test_model=col, n=len(psnrs),
                psnr_mean=float(np.mean(psnrs)) if psnrs else float("nan"),
                ssim_mean=float(np.mean(ssims)) if ssims else float("nan"),
                failures=failures, records=records,
            ))
    return EvalReport(cells=cells, masked=masked)
