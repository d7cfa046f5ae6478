"""Parameter recovery by direct minimization of the consistency objectives.

Cyclic coordinate descent over the normalized parameters; each 1-D
sub-problem is solved by a coarse grid sweep followed by golden-section
refinement.  Terms of the objective are cached so that a coordinate step
only recomputes the warps it actually touches.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import GroupState, LossSpec, masked_l1, total_loss
from .models import ALL_MODELS, DistortionModel, ModelKind, default_model
from .warp import WarpResult, as_image, mask_of, radial_map_warp

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

SWEEP_IMPROVEMENT_TOL = 1e-5
POLISH_IMPROVEMENT_TOL = 1e-6


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    coarse_grid_points: int = 17
    golden_section_tol: float = 1e-3
    max_sweeps: int = 6
    seed: int = 0
    grid_jitter: bool = False      # seed is only consumed when this is on
    eval_size: int | None = None   # downsample images to this side for speed
    pair_seed_grid: int = 9        # 2-D seeding grid per model's slot pair (0 = off)
    anchor_weight: float = 0.3     # mask-agreement penalty added to the search objective
    gauge_search: bool = True      # zoom-direction line searches between sweeps
    gauge_grid_points: int = 25    # coarse grid for the zoom line search
    gauge_log_range: float = 0.45  # search zoom factors in exp(+-this)
    staged: bool = True            # per-family search, then joint polish
    polish_grid: int | None = None  # polish resolution (None = native)
    polish_sweeps: int = 2         # max joint full-frame polish passes
    polish_radius: float = 0.05    # trust region (normalized) per polish sweep
    polish_grid_points: int = 5    # coarse grid inside the trust region

    def __post_init__(self):
        if self.coarse_grid_points < 3:
            raise ValueError("coarse_grid_points must be >= 3")
        if self.golden_section_tol <= 0:
            raise ValueError("golden_section_tol must be > 0")


@dataclass
class SlotEstimate:
    model: ModelKind
    slot: int
    k_raw: float
    k_norm: float


@dataclass
class EstimationResult:
    estimates: list[SlotEstimate]
    final_total_loss: float
    breakdown: dict
    trace: list[tuple[int, list[float], float]]
    converged: bool
    cross_estimates: dict = field(default_factory=dict)

    def estimate(self, model: ModelKind, slot: int) -> SlotEstimate:
        for e in self.estimates:
            if e.model == model and e.slot == slot:
                return e
        raise KeyError((model, slot))

    def to_dict(self, include_trace: bool = False) -> dict:
        d = {
            "estimates": [
                {"model": e.model.value, "slot": e.slot,
                 "k_raw": e.k_raw, "k_norm": e.k_norm}
                for e in self.estimates
            ],
            "loss": self.breakdown,
            "final_total_loss": self.final_total_loss,
            "converged": self.converged,
        }
        if self.cross_estimates:
            d["cross_estimates"] = {
                f"{h.value}/{s.value}/{j}": k
                for (h, s, j), k in sorted(self.cross_estimates.items(),
                                           key=lambda kv: str(kv[0]))
            }
        if include_trace:
            d["trace"] = [
                {"iteration": i, "params_norm": p, "loss": l}
                for i, p, l in self.trace
            ]
        return d


def minimize_scalar(objective, config: OptimizerConfig = OptimizerConfig(),
                    rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Minimize a scalar function over [0, 1].

    Coarse grid, then golden-section refinement inside the bracket around the
    best grid point.  +inf values are tolerated on subsets of the grid; ties
    resolve to the smaller argument.
    """
    n = config.coarse_grid_points
    xs = np.linspace(0.0, 1.0, n)
    if config.grid_jitter and rng is not None:
        half = 0.5 / (n - 1)
        xs[1:-1] = xs[1:-1] + rng.uniform(-half, half, n - 2)
    fs = np.array([objective(x) for x in xs])
    finite = np.isfinite(fs)
    if not finite.any():
        raise OptimizationError("objective is +inf on the entire coarse grid")
    fs_masked = np.where(finite, fs, np.inf)
    i = int(np.argmin(fs_masked))  # argmin takes the first (smaller x) on ties
    a = xs[max(0, i - 1)]
    b = xs[min(n - 1, i + 1)]
    best_x, best_f = float(xs[i]), float(fs_masked[i])

    # golden-section refinement
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > config.golden_section_tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = objective(d)
        for x, f in ((c, fc), (d, fd)):
            if np.isfinite(f) and (f < best_f or (f == best_f and x < best_x)):
                best_x, best_f = float(x), float(f)
    return best_x, best_f


class _CachedObjective:
    """Search-time objective with term-level caching.

    Differs from :mod:`lensrect.losses` in three deliberate ways:

    * rectify-then-redistort chains are evaluated as a single composed
      sampling pass (no intermediate resampling blur);
    * terms can be evaluated on a coarser output grid aligned with the
      source lattice (``grid``), sampling the sharp full-resolution source —
      pre-shrinking the inputs instead was found to move the minima;
    * the comparison can add a mask-agreement penalty (``anchor_weight``) or
      switch to full-frame L1 (``full_frame``), both of which give the
      otherwise nearly flat "everything zooms together" valley curvature.

    The reported loss breakdown always comes from :func:`losses.total_loss`.
    """

    def __init__(self, images: dict[ModelKind, tuple], spec: LossSpec,
                 models: dict[ModelKind, DistortionModel] | None = None,
                 eval_size: int | None = None, anchor_weight: float = 0.0,
                 full_frame: bool = False):
        self.kinds = [k for k in ALL_MODELS if k in images]
        self.models = {k: (models or {}).get(k) or default_model(k) for k in self.kinds}
        self.images = images
        self.spec = spec
        self.anchor_weight = anchor_weight
        self.full_frame = full_frame
        sizes = {as_image(im).shape[0] for v in images.values() for im in v}
        if len(sizes) != 1:
            raise ValueError("all group images must share one size")
        self.src_size = sizes.pop()
        if eval_size is not None and eval_size != self.src_size:
            if (self.src_size - 1) % (eval_size - 1) != 0:
                raise ValueError(
                    f"eval_size {eval_size} does not align with the source "
                    f"lattice of size {self.src_size}")
        self.grid = eval_size
        stride = 1 if not eval_size else (self.src_size - 1) // (eval_size - 1)
        self._obs = {
            k: tuple((as_image(im)[::stride, ::stride],
                      mask_of(im)[::stride, ::stride]) for im in v)
            for k, v in images.items()
        }
        self._rect: dict = {}   # ('B', kind, slot) or ('X', head, src, slot) -> (k, WarpResult)
        self._terms: dict = {}  # term key incl. params -> float

    def _cmp(self, a, b, a_mask=None) -> float:
        ia, ma = as_image(a), (mask_of(a) if a_mask is None else a_mask)
        ib, mb = as_image(b), mask_of(b)
        if self.full_frame:
            return float(np.abs(ia * ma[..., None] - ib * mb[..., None]).mean())
        val = masked_l1(WarpResult(ia, ma), b)
        if self.anchor_weight:
            val += self.anchor_weight * float(np.abs(ma - mb).mean())
        return val

    def _warp(self, kind: ModelKind, slot: int, radius_map) -> WarpResult:
        return radial_map_warp(self.images[kind][slot], radius_map,
                               out_size=self.grid)

    # ---- cached warps -----------------------------------------------------
    def _B(self, kind: ModelKind, slot: int, k: float) -> WarpResult:
        key = ("B", kind, slot)
        hit = self._rect.get(key)
        if hit is None or hit[0] != k:
            model = self.models[kind]
            hit = (k, self._warp(kind, slot, lambda r: model.radial_backward(r, k)))
            self._rect[key] = hit
        return hit[1]

    def _X(self, head: ModelKind, src: ModelKind, slot: int, k: float) -> WarpResult:
        if head == src:
            return self._B(src, slot, k)
        key = ("X", head, src, slot)
        hit = self._rect.get(key)
        if hit is None or hit[0] != k:
            model = self.models[head]
            hit = (k, self._warp(src, slot, lambda r: model.radial_backward(r, k)))
            self._rect[key] = hit
        return hit[1]

    # ---- cached loss terms -------------------------------------------------
    def _term(self, key, compute) -> float:
        val = self._terms.get(key)
        if val is None:
            val = compute()
            self._terms[key] = val
        return val

    def _intra_term(self, kind: ModelKind, j: int, k_m: float, k_j: float) -> float:
        def compute():
            model = self.models[kind]
            re_dist = self._warp(
                kind, 1 - j,
                lambda r: model.radial_backward(model.radial_forward(r, k_j), k_m))
            obs, obs_mask = self._obs[kind][j]
            return self._cmp(obs, re_dist, a_mask=obs_mask)
        return self._term(("intra", kind, j, k_m, k_j), compute)

    def _inter_term(self, i, m, j, k_i, k_m) -> float:
        def compute():
            return self._cmp(self._B(i, j, k_i), self._B(m, j, k_m))
        return self._term(("inter", i, m, j, k_i, k_m), compute)

    def _lr_term(self, i, m, j, k_i, k_m) -> float:
        def compute():
            mi, mm = self.models[i], self.models[m]
            re_dist = self._warp(
                i, j,
                lambda r: mi.radial_backward(mm.radial_forward(r, k_m), k_i))
            obs, obs_mask = self._obs[m][j]
            return self._cmp(obs, re_dist, a_mask=obs_mask)
        return self._term(("lr", i, m, j, k_i, k_m), compute)

    def _pair_term(self, r1, r2, key) -> float:
        def compute():
            return self._cmp(r1, r2)
        return self._term(key, compute)

    # ---- full objective ----------------------------------------------------
    def total(self, params: dict) -> float:
        """params maps (kind, slot) -> raw k, plus (head, src, slot) for variants."""
        spec = self.spec
        terms = []
        if spec.use_intra:
            for kind in self.kinds:
                for j in (0, 1):
                    terms.append(self._intra_term(
                        kind, j, params[(kind, 1 - j)], params[(kind, j)]))
        if spec.use_inter:
            for pair in sorted(spec.inter_pairs,
                               key=lambda p: sorted(m.value for m in p)):
                i, m = sorted(pair, key=lambda x: list(ALL_MODELS).index(x))
                for j in (0, 1):
                    terms.append(self._inter_term(
                        i, m, j, params[(i, j)], params[(m, j)]))
        if spec.variant == "L_r":
            for i, m in itertools.permutations(self.kinds, 2):
                for j in (0, 1):
                    terms.append(self._lr_term(
                        i, m, j, params[(i, j)], params[(m, j)]))
        elif spec.variant in ("L_s", "L_c"):
            inputs = [(src, j) for src in self.kinds for j in (0, 1)]

            def xk(head, src, j):
                return params[(src, j)] if head == src else params[(head, src, j)]

            if spec.variant == "L_s":
                for head in self.kinds:
                    for (s1, j1), (s2, j2) in itertools.combinations(inputs, 2):
                        k1, k2 = xk(head, s1, j1), xk(head, s2, j2)
                        terms.append(self._pair_term(
                            self._X(head, s1, j1, k1), self._X(head, s2, j2, k2),
                            ("ls", head, s1, j1, s2, j2, k1, k2)))
            else:
                for h1, h2 in itertools.combinations(self.kinds, 2):
                    for src, j in inputs:
                        k1, k2 = xk(h1, src, j), xk(h2, src, j)
                        terms.append(self._pair_term(
                            self._X(h1, src, j, k1), self._X(h2, src, j, k2),
                            ("lc", h1, h2, src, j, k1, k2)))
        return float(np.mean(terms))


class _ZoomTable:
    """Inverse of t -> radial_backward(1, k(t)) for one model family.

    Rectifying with a different parameter mostly re-zooms the output; two
    parameters whose backward maps agree at the frame edge produce nearly
    the same rectification up to that zoom.  The table lets us move a
    parameter so its edge mapping hits a prescribed value, which is how the
    zoom-direction line search walks the whole group coherently.
    """

    def __init__(self, model: DistortionModel, n: int = 2001):
        self.model = model
        t = np.linspace(0.0, 1.0, n)
        vals = np.array([self.edge_backward(model.denormalize(ti)) for ti in t])
        if vals[0] > vals[-1]:
            t, vals = t[::-1], vals[::-1]
        self._t, self._v = t, vals

    def edge_backward(self, k: float) -> float:
        return float(self.model.radial_backward(np.asarray(1.0), k))

    def invert(self, v: float) -> float:
        return float(np.clip(np.interp(v, self._v, self._t), 0.0, 1.0))


def _gauge_shift(x_norm: dict, s: float, kinds, mdl: dict, tables: dict):
    """Shift every parameter of the given model kinds along the zoom
    direction with factor ``s``; returns None when the move leaves the
    valid warp domain."""
    out = dict(x_norm)
    for c, t in x_norm.items():
        kind = c[0]
        if kind not in kinds:
            continue
        k = mdl[kind].denormalize(t)
        v = float(mdl[kind].radial_backward(np.asarray(1.0 / s), k))
        if not np.isfinite(v):
            return None
        out[c] = tables[kind].invert(v)
    return out


def _coordinate_layout(kinds, spec: LossSpec) -> list[tuple]:
    coords = [(k, j) for k in kinds for j in (0, 1)]
    if spec.variant in ("L_s", "L_c"):
        coords += [(h, s, j) for h in kinds for s in kinds if s != h for j in (0, 1)]
    return coords


def _pair_seed(obj, kind, x_norm, fx, raw_params, grid_points: int):
    """Joint coarse scan of one model's slot pair: the two parameters are
    strongly coupled through the cross re-distortion terms, and 1-D sweeps
    alone stall on ridges of that 2-D landscape."""
    best = (fx, x_norm[(kind, 0)], x_norm[(kind, 1)])
    for t0 in np.linspace(0.0, 1.0, grid_points):
        for t1 in np.linspace(0.0, 1.0, grid_points):
            trial = dict(x_norm)
            trial[(kind, 0)] = float(t0)
            trial[(kind, 1)] = float(t1)
            f = obj.total(raw_params(trial))
            if f < best[0]:
                best = (f, float(t0), float(t1))
    fx, x_norm[(kind, 0)], x_norm[(kind, 1)] = best
    return x_norm, fx


def _gauge_pass(obj, gauge_sets, x_norm, fx, raw_params, mdl, tables, config):
    """One round of zoom-direction line searches (see :class:`_ZoomTable`)."""
    gauge_cfg = OptimizerConfig(coarse_grid_points=config.gauge_grid_points,
                                golden_section_tol=config.golden_section_tol)
    span = config.gauge_log_range
    for gset in gauge_sets:
        def fg(t, _gs=gset):
            xs = _gauge_shift(x_norm, math.exp(span * (2.0 * t - 1.0)),
                              _gs, mdl, tables)
            return np.inf if xs is None else obj.total(raw_params(xs))

        try:
            t_best, f_best = minimize_scalar(fg, gauge_cfg)
        except OptimizationError:
            continue
        if f_best < fx - 1e-9:
            x_norm = _gauge_shift(
                x_norm, math.exp(span * (2.0 * t_best - 1.0)), gset, mdl, tables)
            fx = f_best
    return x_norm, fx


def _coord_sweep(obj, coords, x_norm, fx, raw_params, config, rng=None,
                 radius: float | None = None):
    """One cyclic pass of 1-D minimizations; ``radius`` restricts each
    search to a trust region around the current value."""
    for coord in coords:
        lo, hi = 0.0, 1.0
        if radius is not None:
            lo = max(0.0, x_norm[coord] - radius)
            hi = min(1.0, x_norm[coord] + radius)

        def f1(t, _coord=coord, _lo=lo, _hi=hi):
            trial = dict(x_norm)
            trial[_coord] = _lo + (_hi - _lo) * t
            return obj.total(raw_params(trial))

        try:
            t_best, f_best = minimize_scalar(f1, config, rng=rng)
        except OptimizationError:
            continue
        if f_best < fx:
            x_norm[coord] = lo + (hi - lo) * t_best
            fx = f_best
    return x_norm, fx


def _trace_point(trace, coords, x_norm, fx):
    trace.append((len(trace), [x_norm[c] for c in coords], fx))


def _staged_search(images, spec, config, mdl, kinds, coords, x_norm,
                   raw_params, trace):
    """Two-stage search used for the intra(+inter) objectives.

    Stage 1 estimates each model family independently (intra terms only) on
    the subsampled grid, with a mask-agreement anchor and zoom-direction
    line searches.  Keeping the families decoupled here matters: a family
    stuck in a spurious basin otherwise drags its inter-partners along.

    Stage 2 polishes all parameters jointly under the full spec at native
    resolution with full-frame comparisons, inside a trust region, which
    removes the anchor's small under-rectification bias without allowing
    basin hops.
    """
    for kind in kinds:
        sub_spec = LossSpec(use_intra=True, use_inter=False)
        obj = _CachedObjective({kind: images[kind]}, sub_spec,
                               models={kind: mdl[kind]},
                               eval_size=config.eval_size,
                               anchor_weight=config.anchor_weight)
        tables = {kind: _ZoomTable(mdl[kind])} if config.gauge_search else {}
        gauge_sets = [(kind,)] if config.gauge_search else []
        pair = [(kind, 0), (kind, 1)]
        fx = obj.total(raw_params({c: x_norm[c] for c in pair}))
        sub = {c: x_norm[c] for c in pair}
        if config.pair_seed_grid >= 2:
            sub, fx = _pair_seed(obj, kind, sub, fx, raw_params,
                                 config.pair_seed_grid)
        for _ in range(config.max_sweeps):
            f_start = fx
            sub, fx = _gauge_pass(obj, gauge_sets, sub, fx, raw_params,
                                  mdl, tables, config)
            sub, fx = _coord_sweep(obj, pair, sub, fx, raw_params, config)
            if f_start - fx < SWEEP_IMPROVEMENT_TOL:
                break
        x_norm.update(sub)
        _trace_point(trace, coords, x_norm, fx)

    # Polish inside a trust region only: the consistency losses admit
    # near-flat "common zoom" directions whose far ends can score below the
    # true parameters (all rectifications agree on a slightly re-zoomed
    # normal image), so unconstrained descent here would hop basins.  Close
    # to the truth the full-frame objective is sharp and unbiased.
    obj = _CachedObjective(images, spec, models=mdl,
                           eval_size=config.polish_grid, full_frame=True)
    polish_cfg = replace(config, coarse_grid_points=config.polish_grid_points)
    fx = obj.total(raw_params(x_norm))
    _trace_point(trace, coords, x_norm, fx)
    converged = config.polish_sweeps <= 0
    for _ in range(max(config.polish_sweeps, 0)):
        f_start = fx
        x_norm, fx = _coord_sweep(obj, coords, x_norm, fx, raw_params,
                                  polish_cfg, radius=config.polish_radius)
        _trace_point(trace, coords, x_norm, fx)
        if f_start - fx < POLISH_IMPROVEMENT_TOL:
            converged = True
            break
    return x_norm, fx, converged


def _cyclic_search(images, spec, config, mdl, kinds, coords, x_norm,
                   raw_params, trace):
    """Generic cyclic coordinate descent (used for the loss variants)."""
    obj = _CachedObjective(images, spec, models=mdl, eval_size=config.eval_size,
                           anchor_weight=config.anchor_weight)
    rng = np.random.default_rng(config.seed) if config.grid_jitter else None
    fx = obj.total(raw_params(x_norm))
    _trace_point(trace, coords, x_norm, fx)
    converged = False

    if config.pair_seed_grid >= 2:
        for kind in kinds:
            x_norm, fx = _pair_seed(obj, kind, x_norm, fx, raw_params,
                                    config.pair_seed_grid)
            _trace_point(trace, coords, x_norm, fx)

    tables = {k: _ZoomTable(mdl[k]) for k in kinds} if config.gauge_search else {}
    gauge_sets = ([tuple(kinds)] + [(k,) for k in kinds]
                  if config.gauge_search else [])

    for _ in range(config.max_sweeps):
        f_start = fx
        x_norm, fx = _gauge_pass(obj, gauge_sets, x_norm, fx, raw_params,
                                 mdl, tables, config)
        x_norm, fx = _coord_sweep(obj, coords, x_norm, fx, raw_params, config,
                                  rng=rng)
        _trace_point(trace, coords, x_norm, fx)
        if f_start - fx < SWEEP_IMPROVEMENT_TOL:
            converged = True
            break
    return x_norm, fx, converged


def estimate_group(images: dict[ModelKind, tuple], spec: LossSpec = LossSpec(),
                   config: OptimizerConfig = OptimizerConfig(),
                   models: dict[ModelKind, DistortionModel] | None = None,
                   initial: dict | None = None) -> EstimationResult:
    """Recover raw parameters for a group of distorted images.

    ``images[model]`` must hold exactly two images (the model of origin is
    known per image, the parameter is not).  Returns converged=False rather
    than raising when the sweep budget is exhausted.
    """
    kinds = [k for k in ALL_MODELS if k in images]
    if not kinds:
        raise ValueError("no images supplied")
    for k in kinds:
        if len(images[k]) != 2:
            raise ValueError(
                f"model {k.value} has {len(images[k])} image(s); estimation "
                "requires the paired two-slot construction (single-image "
                "input is not supported)"
            )
    mdl = {k: (models or {}).get(k) or default_model(k) for k in kinds}
    coords = _coordinate_layout(kinds, spec)

    x_norm = {c: 0.5 for c in coords}
    if initial:
        for c, t in initial.items():
            if c in x_norm:
                x_norm[c] = float(np.clip(t, 0.0, 1.0))

    def raw_params(xn: dict) -> dict:
        return {c: mdl[c[0]].denormalize(v) for c, v in xn.items()}

    trace: list[tuple[int, list[float], float]] = []
    if spec.variant == "none" and spec.use_intra and config.staged:
        x_norm, fx, converged = _staged_search(
            images, spec, config, mdl, kinds, coords, x_norm, raw_params, trace)
    else:
        x_norm, fx, converged = _cyclic_search(
            images, spec, config, mdl, kinds, coords, x_norm, raw_params, trace)

    estimates = [
        SlotEstimate(model=k, slot=j + 1, k_raw=mdl[k].denormalize(x_norm[(k, j)]),
                     k_norm=x_norm[(k, j)])
        for k in kinds for j in (0, 1)
    ]
    cross = {c: mdl[c[0]].denormalize(x_norm[c]) for c in coords if len(c) == 3}

    # report the breakdown at full resolution with the estimated parameters
    state = GroupState(
        images=images,
        params={k: (mdl[k].denormalize(x_norm[(k, 0)]), mdl[k].denormalize(x_norm[(k, 1)]))
                for k in kinds},
        models=mdl,
        cross_params={c: v for c, v in cross.items()} or None,
    )
    breakdown = total_loss(state, spec)
    return EstimationResult(estimates=estimates, final_total_loss=fx,
                            breakdown=breakdown, trace=trace, converged=converged,
                            cross_estimates=cross)


def estimate_supervised(a, real_b, model: DistortionModel,
                        config: OptimizerConfig = OptimizerConfig()) -> tuple[float, float]:
    """Fit one model's parameter against the known normal image (SL baseline)."""
    real_b = as_image(real_b)
    src_size = as_image(a).shape[0]
    out_size = config.eval_size
    if out_size is not None and (src_size - 1) % (out_size - 1) == 0:
        stride = (src_size - 1) // (out_size - 1)
        real_b = real_b[::stride, ::stride]
    else:
        out_size = None

    def objective(t):
        k = model.denormalize(t)
        rect = radial_map_warp(a, lambda r: model.radial_backward(r, k),
                               out_size=out_size)
        return masked_l1(rect, real_b)

    t_best, f_best = minimize_scalar(objective, config)
    return model.denormalize(t_best), f_best
