"""Distorted-group synthesis: crop/resize, uniform parameter draws, rendering.

A group is one prepared normal image plus six distorted renderings, two per
model with different parameters.  Datasets are written as 8-bit PNGs (image
and mask side by side) plus a JSON manifest recording raw and normalized
parameters for audit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .models import ALL_MODELS, DEFAULT_RANGES, DistortionModel, ModelKind, ParamRange
from .warp import WarpResult, as_image, distort, resize_bilinear

PREPARED_SIZE = 257
MIN_SLOT_SEPARATION = 0.05  # normalized units


@dataclass
class GroupItem:
    model: ModelKind
    slot: int  # 1 or 2
    k_true: float
    image: WarpResult


@dataclass
class DistortionGroup:
    normal: np.ndarray
    items: list[GroupItem]

    def by_model(self) -> dict[ModelKind, tuple]:
        out: dict[ModelKind, list] = {}
        for it in self.items:
            out.setdefault(it.model, [None, None])[it.slot - 1] = it.image
        return {k: tuple(v) for k, v in out.items()}

    def params_by_model(self) -> dict[ModelKind, tuple[float, float]]:
        out: dict[ModelKind, list] = {}
        for it in self.items:
            out.setdefault(it.model, [None, None])[it.slot - 1] = it.k_true
        return {k: tuple(v) for k, v in out.items()}


def prepare_normal(raw, size: int = PREPARED_SIZE) -> np.ndarray:
    """Center square crop at min(H, W), then bilinear resize to size x size."""
    img = as_image(raw)
    h, w, _ = img.shape
    if h < 32 or w < 32:
        raise ValueError(f"input too small to prepare: {h}x{w}")
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    cropped = img[top:top + side, left:left + side]
    return resize_bilinear(cropped, size)


def sample_params(model: DistortionModel, rng: np.random.Generator) -> float:
    """One uniform draw over the model's raw parameter range."""
    r = model.range
    return float(rng.uniform(r.k_min, r.k_max))


def sample_param_pair(model: DistortionModel, rng: np.random.Generator,
                      min_sep: float = MIN_SLOT_SEPARATION) -> tuple[float, float]:
    """Two draws, rejection-resampled until their normalized separation >= min_sep."""
    k1 = sample_params(model, rng)
    while True:
        k2 = sample_params(model, rng)
        if abs(model.normalize(k1) - model.normalize(k2)) >= min_sep:
            return k1, k2


def synthesize_group(normal: np.ndarray, rng: np.random.Generator,
                     ranges: dict[ModelKind, ParamRange] | None = None) -> DistortionGroup:
    normal = as_image(normal)
    h, w, _ = normal.shape
    if h != w:
        raise ValueError("normal image must be prepared (square) before synthesis")
    items = []
    for kind in ALL_MODELS:
        model = DistortionModel(kind, (ranges or DEFAULT_RANGES)[kind])
        k1, k2 = sample_param_pair(model, rng)
        for slot, k in ((1, k1), (2, k2)):
            items.append(GroupItem(model=kind, slot=slot, k_true=k,
                                   image=distort(normal, model, k)))
    return DistortionGroup(normal=normal, items=items)


def group_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-group generator, independent of processing order."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, index]))


# --------------------------------------------------------------------------
# dataset I/O

def save_png(path, img: np.ndarray) -> None:
    arr = np.round(255.0 * as_image(img)).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return arr


def save_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray((mask > 0.5).astype(np.uint8) * 255).save(path)


def load_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=float)
    return (arr > 127).astype(float)


def write_dataset(groups: list[DistortionGroup], out_dir, seed: int,
                  ranges: dict[ModelKind, ParamRange] | None = None) -> Path:
    """Write PNGs and the JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ranges = ranges or DEFAULT_RANGES
    manifest = {
        "seed": seed,
        "quantization": "8-bit PNG, values round(255*v)",
        "ranges": {k.value: [ranges[k].k_min, ranges[k].k_max] for k in ALL_MODELS},
        "groups": [],
    }
    for gi, group in enumerate(groups):
        gdir = out / f"group_{gi:04d}"
        gdir.mkdir(exist_ok=True)
        normal_path = gdir / "normal.png"
        save_png(normal_path, group.normal)
        entry = {"normal_path": str(normal_path.relative_to(out)), "items": []}
        for it in group.items:
            model = DistortionModel(it.model, ranges[it.model])
            stem = f"{it.model.value}_{it.slot}"
            img_path = gdir / f"{stem}.png"
            mask_path = gdir / f"{stem}_mask.png"
            save_png(img_path, it.image.image)
            save_mask_png(mask_path, it.image.mask)
            entry["items"].append({
                "model": it.model.value,
                "slot": it.slot,
                "k_raw": it.k_true,
                "k_norm": model.normalize(it.k_true),
                "image_path": str(img_path.relative_to(out)),
                "mask_path": str(mask_path.relative_to(out)),
            })
        manifest["groups"].append(entry)
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_dataset(manifest_path) -> tuple[dict, list[DistortionGroup]]:
    """Read a dataset back; distorted images come with their stored masks."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    groups = []
    for entry in manifest["groups"]:
        normal = load_png(root / entry["normal_path"])
        items = []
        for it in entry["items"]:
            img = load_png(root / it["image_path"])
            mask = load_mask_png(root / it["mask_path"])
            items.append(GroupItem(
                model=ModelKind(it["model"]),
                slot=int(it["slot"]),
                k_true=float(it["k_raw"]),
                image=WarpResult(image=img * mask[:, :, None], mask=mask),
            ))
        groups.append(DistortionGroup(normal=normal, items=items))
    return manifest, groups
