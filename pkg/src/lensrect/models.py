"""Single-parameter radial distortion models: FOV, division model (DM), equidistant (ED).

All radii live in the square normalized coordinate frame where image
coordinates span [-1, 1] (so the corner radius is sqrt(2)).

``radial_forward`` maps a distorted-image radius r_d to the corresponding
normal-image radius r_u; ``radial_backward`` is its inverse.  Radii past a
model's singularity map to NaN, which the warping layer turns into mask=0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Raised when an argument is outside a model's mathematical domain."""


class ModelKind(str, enum.Enum):
    FOV = "FOV"
    DM = "DM"
    ED = "ED"

    def __str__(self) -> str:  # serialize as the bare tag
        return self.value


ALL_MODELS = (ModelKind.FOV, ModelKind.DM, ModelKind.ED)


@dataclass(frozen=True)
class ParamRange:
    """Admissible raw-parameter interval [k_min, k_max] for one model."""

    k_min: float
    k_max: float

    def __post_init__(self):
        if not self.k_min < self.k_max:
            raise ValueError(f"empty parameter range [{self.k_min}, {self.k_max}]")

    @property
    def width(self) -> float:
        return self.k_max - self.k_min

    def contains(self, k: float) -> bool:
        return self.k_min <= k <= self.k_max


# Default ranges; DM's interval is ordered k_min < k_max.
DEFAULT_RANGES: dict[ModelKind, ParamRange] = {
    ModelKind.FOV: ParamRange(0.2, 1.2),
    ModelKind.DM: ParamRange(-1.0, -0.02),
    ModelKind.ED: ParamRange(0.7, 2.0),
}


def normalize_param(k: float, range_: ParamRange, *, model: str = "") -> float:
    """Affinely map a raw parameter into [0, 1]."""
    if not range_.contains(k):
        name = f" for {model}" if model else ""
        raise DomainError(
            f"parameter {k} outside range{name} [{range_.k_min}, {range_.k_max}]"
        )
    return (k - range_.k_min) / range_.width


def denormalize_param(k_norm: float, range_: ParamRange, *, model: str = "") -> float:
    """Exact inverse of :func:`normalize_param`."""
    if not 0.0 <= k_norm <= 1.0:
        name = f" for {model}" if model else ""
        raise DomainError(f"normalized parameter {k_norm} outside [0, 1]{name}")
    return range_.k_min + k_norm * range_.width


@dataclass(frozen=True)
class DistortionModel:
    """A model kind together with its parameter range.

    The radial maps themselves accept any mathematically valid k, not just
    k inside ``range``; range enforcement happens at the normalization /
    optimizer / CLI boundary (identity-limit checks need k outside the
    range, e.g. FOV with k=1e-6).
    """

    kind: ModelKind
    range: ParamRange = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.range is None:
            object.__setattr__(self, "range", DEFAULT_RANGES[self.kind])

    def normalize(self, k: float) -> float:
        return normalize_param(k, self.range, model=self.kind.value)

    def denormalize(self, k_norm: float) -> float:
        return denormalize_param(k_norm, self.range, model=self.kind.value)

    def _check_k(self, k: float) -> None:
        if not math.isfinite(k):
            raise DomainError(f"non-finite parameter {k} for {self.kind.value}")
        if self.kind in (ModelKind.FOV, ModelKind.ED):
            if k <= 0:
                raise DomainError(f"{self.kind.value} requires k > 0, got {k}")
            if self.kind is ModelKind.FOV and k >= math.pi:
                raise DomainError(f"FOV requires k < pi, got {k}")
        # DM accepts any finite k except values too close to 0 (0 is identity
        # but the closed forms divide by k).
        elif abs(k) < 1e-12:
            raise DomainError(f"DM parameter too close to 0: {k}")

    def radial_forward(self, r_d, k: float):
        """Distorted radius -> normal radius. NaN marks radii past the singularity.

        NaN inputs propagate to NaN outputs so invalid radii survive map
        composition; negative radii are rejected."""
        self._check_k(k)
        r = np.asarray(r_d, dtype=float)
        if np.any(r < 0):  # NaN compares False and passes through
            raise DomainError("radii must be non-negative")
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        if self.kind is ModelKind.FOV:
            valid = k * r < math.pi / 2
            out = np.full_like(r, np.nan)
            out[valid] = np.tan(k * r[valid]) / (2.0 * math.tan(k / 2.0))
        elif self.kind is ModelKind.DM:
            denom = 1.0 + k * r * r
            valid = denom > 0
            out = np.full_like(r, np.nan)
            out[valid] = r[valid] / denom[valid]
        else:  # ED
            valid = r / k < math.pi / 2
            out = np.full_like(r, np.nan)
            out[valid] = k * np.tan(r[valid] / k)
        return float(out[0]) if scalar else out

    def radial_backward(self, r_u, k: float):
        """Normal radius -> distorted radius (inverse of radial_forward).

        NaN inputs propagate to NaN outputs (see radial_forward)."""
        self._check_k(k)
        r = np.asarray(r_u, dtype=float)
        if np.any(r < 0):
            raise DomainError("radii must be non-negative")
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        if self.kind is ModelKind.FOV:
            out = np.arctan(2.0 * r * math.tan(k / 2.0)) / k
        elif self.kind is ModelKind.DM:
            disc = 1.0 - 4.0 * k * r * r
            if np.any(disc < 0):
                raise DomainError(
                    f"DM backward: discriminant negative for k={k} "
                    "(radius unreachable by this parameter)"
                )
            # Smaller positive root; near r_u=0 the closed form is 0/0, so
            # fall back to the continuity limit r_d = r_u there.
            tiny = 4.0 * np.abs(k) * r * r < 1e-10
            out = np.where(tiny, r, (1.0 - np.sqrt(disc)) / (2.0 * k * np.where(tiny, 1.0, r)))
        else:  # ED
            out = k * np.arctan(r / k)
        return float(out[0]) if scalar else out


def default_model(kind: ModelKind | str) -> DistortionModel:
    return DistortionModel(ModelKind(kind))
