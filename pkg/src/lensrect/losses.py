"""Self-supervised consistency objectives over groups of distorted images.

A group holds six distorted renderings of one scene: two per distortion
model, synthesized with different parameters.  Intra-model consistency
cross-re-distorts each rectified image with its pair partner's parameter;
inter-model consistency compares rectifications across models.  Composite
losses are means over their constituent masked-L1 terms, which are
themselves pixel means over the joint validity mask, so values are
independent of image size and term count.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .models import ALL_MODELS, DistortionModel, ModelKind, default_model
from .warp import WarpResult, as_image, distort, mask_of, rectify

# Admissible inter-model pair sets. m4 (DM, ED) is the default.
PAIR_SETS: dict[str, frozenset[frozenset[ModelKind]]] = {
    "m1": frozenset(
        frozenset(p) for p in [
            (ModelKind.FOV, ModelKind.DM),
            (ModelKind.FOV, ModelKind.ED),
            (ModelKind.DM, ModelKind.ED),
        ]
    ),
    "m2": frozenset({frozenset((ModelKind.FOV, ModelKind.DM))}),
    "m3": frozenset({frozenset((ModelKind.FOV, ModelKind.ED))}),
    "m4": frozenset({frozenset((ModelKind.DM, ModelKind.ED))}),
}
DEFAULT_PAIRS = PAIR_SETS["m4"]

VARIANTS = ("none", "L_s", "L_r", "L_c")

# Joint valid area below this fraction of the frame yields the +inf sentinel.
MIN_VALID_FRACTION = 0.05


def validate_pair_set(pairs) -> frozenset[frozenset[ModelKind]]:
    pairs = frozenset(frozenset(p) for p in pairs)
    if pairs not in PAIR_SETS.values():
        raise ValueError(f"pair set must be one of m1..m4, got {sorted(map(sorted, pairs))}")
    return pairs


@dataclass(frozen=True)
class LossSpec:
    """Which objective terms to evaluate."""

    use_intra: bool = True
    use_inter: bool = True
    inter_pairs: frozenset = DEFAULT_PAIRS
    variant: str = "none"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.use_inter:
            object.__setattr__(self, "inter_pairs", validate_pair_set(self.inter_pairs))
        if self.use_inter and not self.use_intra and self.variant == "none":
            raise ValueError(
                "inter-model consistency cannot be used alone: without an "
                "absolute anchor it admits trivial solutions where all "
                "rectifications agree on an arbitrary common state"
            )


@dataclass
class GroupState:
    """Six distorted images with candidate parameters and derived warps.

    ``images[model]`` holds the two slot images (WarpResult or plain array);
    ``params[model]`` the two raw parameter candidates.  ``cross_params``
    optionally carries raw parameters for rectifying input (src, slot) under
    a *different* model's mapping (needed by the L_s / L_c variants); the
    own-model entries always alias ``params``.
    """

    images: dict[ModelKind, tuple]
    params: dict[ModelKind, tuple[float, float]]
    models: dict[ModelKind, DistortionModel] = field(default_factory=dict)
    cross_params: dict[tuple[ModelKind, ModelKind, int], float] | None = None

    def __post_init__(self):
        for kind in self.images:
            if kind not in self.models:
                self.models[kind] = default_model(kind)
        self._rectified: dict[tuple[ModelKind, int], WarpResult] = {}
        self._cross_rectified: dict[tuple[ModelKind, ModelKind, int], WarpResult] = {}

    @property
    def kinds(self) -> list[ModelKind]:
        return [k for k in ALL_MODELS if k in self.images]

    def image(self, kind: ModelKind, slot: int):
        return self.images[kind][slot]

    def param(self, kind: ModelKind, slot: int) -> float:
        return self.params[kind][slot]

    def rectified(self, kind: ModelKind, slot: int) -> WarpResult:
        """B = rectify(A, own model, own slot parameter), memoized."""
        key = (kind, slot)
        if key not in self._rectified:
            self._rectified[key] = rectify(
                self.image(kind, slot), self.models[kind], self.param(kind, slot)
            )
        return self._rectified[key]

    def cross_param(self, head: ModelKind, src: ModelKind, slot: int) -> float:
        if head == src:
            return self.param(src, slot)
        if self.cross_params is None or (head, src, slot) not in self.cross_params:
            raise ValueError(
                f"cross-head parameter for head={head} on input ({src}, {slot}) "
                "is not populated"
            )
        return self.cross_params[(head, src, slot)]

    def cross_rectified(self, head: ModelKind, src: ModelKind, slot: int) -> WarpResult:
        """Rectification of input (src, slot) under ``head``'s mapping."""
        if head == src:
            return self.rectified(src, slot)
        key = (head, src, slot)
        if key not in self._cross_rectified:
            self._cross_rectified[key] = rectify(
                self.image(src, slot), self.models[head], self.cross_param(head, src, slot)
            )
        return self._cross_rectified[key]

    def degenerate_slots(self) -> list[ModelKind]:
        """Models whose two slot parameters coincide (trivial-solution risk)."""
        return [k for k in self.kinds if self.params[k][0] == self.params[k][1]]


def masked_l1(a, b, joint_mask: np.ndarray | None = None) -> float:
    """Mean absolute difference over the jointly valid area.

    Returns +inf when less than MIN_VALID_FRACTION of the frame is jointly
    valid (near-empty overlap must never look like a good fit).
    """
    ia, ib = as_image(a), as_image(b)
    if ia.shape != ib.shape:
        raise ValueError(f"shape mismatch: {ia.shape} vs {ib.shape}")
    if joint_mask is None:
        joint_mask = mask_of(a) * mask_of(b)
    valid = joint_mask > 0.5
    if valid.mean() < MIN_VALID_FRACTION:
        return float("inf")
    return float(np.abs(ia[valid] - ib[valid]).mean())


def intra_loss(state: GroupState, models=None) -> float:
    """Cross re-distortion consistency: A_i^j vs distort(rectify(A_i^m), k_i^j), m != j.

    Re-distorting with the *partner's* parameter is what makes equal-parameter
    assignments visible as a large loss; the same-parameter loop (see
    :func:`same_param_loop_loss`) is a near-zero no-op for any parameter.
    """
    kinds = list(models) if models is not None else state.kinds
    terms = []
    for kind in kinds:
        for j in (0, 1):
            m = 1 - j
            re_dist = distort(state.rectified(kind, m), state.models[kind],
                              state.param(kind, j))
            terms.append(masked_l1(state.image(kind, j), re_dist))
    return float(np.mean(terms))


def same_param_loop_loss(state: GroupState, models=None) -> float:
    """The excluded variant: re-distort each rectification with its *own*
    parameter.  Near zero for any parameters; kept as the guard demonstrating
    why the cross scheme is required."""
    kinds = list(models) if models is not None else state.kinds
    terms = []
    for kind in kinds:
        for j in (0, 1):
            re_dist = distort(state.rectified(kind, j), state.models[kind],
                              state.param(kind, j))
            terms.append(masked_l1(state.image(kind, j), re_dist))
    return float(np.mean(terms))


def inter_loss(state: GroupState, pairs=DEFAULT_PAIRS) -> float:
    """Rectifications of the same scene under different models must agree."""
    pairs = validate_pair_set(pairs)
    terms = []
    for pair in sorted(pairs, key=lambda p: sorted(m.value for m in p)):
        i, m = sorted(pair, key=lambda x: list(ALL_MODELS).index(x))
        if i not in state.images or m not in state.images:
            raise ValueError(f"pair ({i}, {m}) references an unpopulated model")
        for j in (0, 1):
            terms.append(masked_l1(state.rectified(i, j), state.rectified(m, j)))
    return float(np.mean(terms))


def variant_loss(state: GroupState, variant: str) -> float:
    """Appendix loss variants.

    L_r: re-distort each model's rectification with every *other* model's
         backward warp and compare to that model's input (ordered pairs).
    L_s: pairwise agreement among one head's rectifications of all inputs.
    L_c: pairwise agreement between corresponding rectifications across heads.
    """
    kinds = state.kinds
    terms = []
    if variant == "L_r":
        for i, m in itertools.permutations(kinds, 2):
            for j in (0, 1):
                re_dist = distort(state.rectified(i, j), state.models[m],
                                  state.param(m, j))
                terms.append(masked_l1(state.image(m, j), re_dist))
    elif variant == "L_s":
        inputs = [(src, j) for src in kinds for j in (0, 1)]
        for head in kinds:
            for (s1, j1), (s2, j2) in itertools.combinations(inputs, 2):
                terms.append(masked_l1(state.cross_rectified(head, s1, j1),
                                       state.cross_rectified(head, s2, j2)))
    elif variant == "L_c":
        inputs = [(src, j) for src in kinds for j in (0, 1)]
        for h1, h2 in itertools.combinations(kinds, 2):
            for src, j in inputs:
                terms.append(masked_l1(state.cross_rectified(h1, src, j),
                                       state.cross_rectified(h2, src, j)))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(np.mean(terms))


def total_loss(state: GroupState, spec: LossSpec = LossSpec()) -> dict:
    """Evaluate the configured objective; returns the per-term breakdown.

    Keys: intra, inter, variant, total, valid_fraction, degenerate_risk.
    """
    parts: dict = {"intra": 0.0, "inter": 0.0, "variant": 0.0}
    if spec.use_intra:
        parts["intra"] = intra_loss(state)
    if spec.use_inter:
        parts["inter"] = inter_loss(state, spec.inter_pairs)
    if spec.variant != "none":
        parts["variant"] = variant_loss(state, spec.variant)
    parts["total"] = parts["intra"] + parts["inter"] + parts["variant"]
    masks = [mask_of(state.image(k, j)) for k in state.kinds for j in (0, 1)]
    parts["valid_fraction"] = float(np.mean([m.mean() for m in masks]))
    parts["degenerate_risk"] = bool(state.degenerate_slots())
    return parts
