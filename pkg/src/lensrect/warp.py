"""Inverse-mapping image warps: rectification, distortion, bilinear sampling.

Images are (H, W, C) float arrays with values in [0, 1], C in {1, 3}.
Pixel (row v, col u) corresponds to normalized coordinates
u_norm = 2u/(W-1) - 1 (align-corners: +-1 are the centers of edge pixels).

Every warp returns a :class:`WarpResult` carrying a {0,1} validity mask;
image values are exactly 0 wherever the mask is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .models import DistortionModel, DomainError


@dataclass
class WarpResult:
    image: np.ndarray  # (H, W, C), zeros where mask == 0
    mask: np.ndarray   # (H, W) float in {0.0, 1.0}

    @property
    def valid_fraction(self) -> float:
        return float(self.mask.mean())


def as_image(x) -> np.ndarray:
    """Coerce to an (H, W, C) float image, validating shape and value range."""
    if isinstance(x, WarpResult):
        x = x.image
    a = np.asarray(x, dtype=float)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) image with C in {{1,3}}, got {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < -1e-9 or a.max() > 1 + 1e-9:
        raise ValueError("image values must be finite and in [0, 1]")
    return a


def mask_of(x) -> np.ndarray:
    """Validity mask of an input; plain images are fully valid."""
    if isinstance(x, WarpResult):
        return x.mask
    a = np.asarray(x)
    h, w = a.shape[:2]
    return np.ones((h, w), dtype=float)


@lru_cache(maxsize=8)
def _coord_grid(n: int):
    """Normalized coordinate grid (u, v, r) for an n x n output, cached."""
    c = np.linspace(-1.0, 1.0, n)
    u, v = np.meshgrid(c, c)
    r = np.hypot(u, v)
    return u, v, r


def bilinear_sample(src, coords_u, coords_v, src_mask=None) -> WarpResult:
    """Sample ``src`` at normalized coordinates (coords_u, coords_v).

    NaN coordinates as well as samples whose 2x2 footprint leaves the source
    bounds are masked out (value 0, mask 0).  If ``src_mask`` is given the
    sample must additionally land on a footprint of fully valid pixels.
    """
    img = as_image(src)
    if src_mask is None:
        src_mask = mask_of(src)
    cu = np.asarray(coords_u, dtype=float)
    cv = np.asarray(coords_v, dtype=float)
    if cu.shape != cv.shape:
        raise ValueError("coordinate arrays must have identical shapes")
    return _bilinear_raw(img, src_mask, cu, cv)


def _bilinear_raw(img, src_mask, cu, cv) -> WarpResult:
    h, w, c = img.shape
    out_shape = cu.shape
    cu = cu.ravel()
    cv = cv.ravel()

    finite = np.isfinite(cu) & np.isfinite(cv)
    # Pixel-space positions under align-corners mapping.
    px = np.where(finite, (cu + 1.0) * (w - 1) / 2.0, 0.0)
    py = np.where(finite, (cv + 1.0) * (h - 1) / 2.0, 0.0)
    inb = finite & (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)

    x0 = np.clip(np.floor(px).astype(np.intp), 0, w - 1)
    y0 = np.clip(np.floor(py).astype(np.intp), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0

    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy

    i00 = y0 * w + x0
    i01 = y0 * w + x1
    i10 = y1 * w + x0
    i11 = y1 * w + x1

    flat = img.reshape(-1, c)
    out = w00[:, None] * flat.take(i00, axis=0)
    out += w01[:, None] * flat.take(i01, axis=0)
    out += w10[:, None] * flat.take(i10, axis=0)
    out += w11[:, None] * flat.take(i11, axis=0)

    if src_mask is None or src_mask.min() >= 1.0:
        # fully valid source: bounds check suffices
        mask = inb.astype(float)
    else:
        mflat = np.asarray(src_mask, dtype=float).ravel()
        mval = w00 * mflat.take(i00)
        mval += w01 * mflat.take(i01)
        mval += w10 * mflat.take(i10)
        mval += w11 * mflat.take(i11)
        mask = (inb & (mval > 1.0 - 1e-9)).astype(float)
    out *= mask[:, None]
    return WarpResult(image=out.reshape(*out_shape, c), mask=mask.reshape(out_shape))


def radial_map_warp(src, map_out_radius, out_size: int | None = None) -> WarpResult:
    """Radial warp with an arbitrary output-radius map.

    Each output pixel at normalized radius r samples the source at radius
    ``map_out_radius(r)`` along the same ray.  ``out_size`` renders onto a
    coarser [-1, 1] grid (still sampling the full-resolution source), which
    is how the estimator evaluates losses cheaply without pre-blurring."""
    if isinstance(src, WarpResult):
        img, src_mask = src.image, src.mask
        if src_mask.min() >= 1.0:
            src_mask = None
    else:
        img, src_mask = as_image(src), None
    h, w, _ = img.shape
    if h != w:
        raise ValueError(f"radial warps require square images, got {h}x{w}")
    u, v, r = _coord_grid(out_size or h)
    with np.errstate(invalid="ignore"):
        # scale factor along each ray; r=0 maps to the exact center
        r_src = map_out_radius(r.ravel()).reshape(r.shape)
        scale = np.where(r > 0, r_src / np.where(r > 0, r, 1.0), 1.0)
    cu = u * scale
    cv = v * scale
    return _bilinear_raw(img, src_mask, cu, cv)


def _radial_warp(src, model: DistortionModel, k: float, map_out_radius) -> WarpResult:
    return radial_map_warp(src, map_out_radius)


def rectify(a, model: DistortionModel, k: float) -> WarpResult:
    """Render the normal image from a distorted one (inverse mapping).

    Each output pixel at radius r_u samples the source at radius
    radial_backward(r_u, k) along the same ray.
    """
    return _radial_warp(a, model, k, lambda r: model.radial_backward(r, k))


def distort(b, model: DistortionModel, k: float) -> WarpResult:
    """Render a distorted image from a normal one (inverse mapping).

    Each output pixel at radius r_d samples the source at radius
    radial_forward(r_d, k) along the same ray.
    """
    return _radial_warp(b, model, k, lambda r: model.radial_forward(r, k))


@dataclass
class SensitivityResult:
    deriv: np.ndarray       # (H, W, C) d(output)/dk estimate
    mask: np.ndarray        # pixels valid at both evaluation points
    one_sided: bool         # True when k +- h had to be clipped


def _sensitivity_bounds(model: DistortionModel, k: float) -> tuple[float, float]:
    # Clip steps to the parameter range when k is inside it, otherwise to the
    # mathematical domain (identity-limit parameters sit outside the range).
    if model.range.contains(k):
        return model.range.k_min, model.range.k_max
    from .models import ModelKind

    if model.kind is ModelKind.FOV:
        return 1e-9, np.pi - 1e-9
    if model.kind is ModelKind.ED:
        return 1e-9, np.inf
    return -np.inf, -1e-9 if k < 0 else np.inf


def param_sensitivity(image, model: DistortionModel, k: float, direction: str,
                      h: float = 1e-3) -> SensitivityResult:
    """Central finite-difference estimate of d(warp output)/dk.

    Falls back to a one-sided difference (flagged) when k +- h leaves the
    admissible interval.
    """
    if direction not in ("rectify", "distort"):
        raise ValueError(f"direction must be 'rectify' or 'distort', got {direction!r}")
    warp_fn = rectify if direction == "rectify" else distort
    lo, hi = _sensitivity_bounds(model, k)
    k_lo = max(k - h, lo)
    k_hi = min(k + h, hi)
    if k_hi <= k_lo:
        raise DomainError(f"cannot take a finite-difference step at k={k}")
    one_sided = (k_lo != k - h) or (k_hi != k + h)
    r_lo = warp_fn(image, model, k_lo)
    r_hi = warp_fn(image, model, k_hi)
    mask = r_lo.mask * r_hi.mask
    deriv = (r_hi.image - r_lo.image) / (k_hi - k_lo) * mask[..., None]
    return SensitivityResult(deriv=deriv, mask=mask, one_sided=one_sided)


def erode_mask(mask: np.ndarray, width: int = 4) -> np.ndarray:
    """Shrink a {0,1} mask by ``width`` pixels (guards half-defined bilinear footprints)."""
    from scipy.ndimage import binary_erosion

    return binary_erosion(mask > 0.5, iterations=width).astype(float)


def resize_bilinear(src, size: int) -> np.ndarray:
    """Resize a square or rectangular image to size x size with the same
    align-corners bilinear sampler used by the warps."""
    img = as_image(src)
    c = np.linspace(-1.0, 1.0, size)
    cu, cv = np.meshgrid(c, c)
    return bilinear_sample(img, cu, cv).image
