"""Command-line entry point: synth, estimate, rectify, eval, selftest.

Exit codes: 0 success, 1 property/estimation failure, 2 usage/input error.
Every command echoes its effective configuration to <out>/config_echo.json
so a run can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .estimator import OptimizerConfig, estimate_group, estimate_supervised
from .losses import PAIR_SETS, GroupState, LossSpec, total_loss
from .metrics import evaluate_matrix, psnr, ssim
from .models import (ALL_MODELS, DEFAULT_RANGES, DistortionModel, DomainError,
                     ModelKind, default_model)
from .synthesis import (DistortionGroup, group_rng, load_dataset, load_png,
                        prepare_normal, save_mask_png, save_png,
                        synthesize_group, write_dataset)
from .warp import distort, erode_mask, rectify

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _echo_config(out_dir: Path, command: str, args: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {"command": command, "threads": os.environ.get("THREADS", "1"), **args}
    (out_dir / "config_echo.json").write_text(json.dumps(echo, indent=2, sort_keys=True))


def cmd_synth(args) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out)
    if not in_dir.is_dir():
        print(f"error: input directory {in_dir} does not exist", file=sys.stderr)
        return EXIT_USAGE
    paths = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if args.count is not None:
        paths = paths[: args.count]
    if not paths:
        print(f"error: no decodable images in {in_dir}", file=sys.stderr)
        return EXIT_USAGE
    _echo_config(out_dir, "synth", {"in_dir": str(in_dir), "out": str(out_dir),
                                    "seed": args.seed, "count": args.count})
    groups, skipped = [], 0
    for idx, path in enumerate(paths):
        try:
            raw = load_png(path)
            normal = prepare_normal(raw)
        except Exception as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            skipped += 1
            continue
        groups.append(synthesize_group(normal, group_rng(args.seed, idx)))
    if not groups:
        print("error: no images could be processed", file=sys.stderr)
        return EXIT_USAGE
    manifest_path = write_dataset(groups, out_dir, seed=args.seed)
    mask_fracs = [it.image.valid_fraction for g in groups for it in g.items]
    print(f"wrote {len(groups)} group(s) ({6 * len(groups)} distorted images) "
          f"to {out_dir}")
    print(f"manifest: {manifest_path}")
    print(f"valid-mask fraction: min={min(mask_fracs):.3f} "
          f"mean={float(np.mean(mask_fracs)):.3f}")
    print(f"skipped: {skipped}")
    return EXIT_OK


def _loss_spec_from_flags(loss: str, pairs: str) -> LossSpec:
    if loss == "intra":
        return LossSpec(use_intra=True, use_inter=False)
    if loss == "intra+inter":
        return LossSpec(use_intra=True, use_inter=True, inter_pairs=PAIR_SETS[pairs])
    if loss == "inter":
        # constructing the spec raises with the trivial-solution explanation
        return LossSpec(use_intra=False, use_inter=True, inter_pairs=PAIR_SETS[pairs])
    raise ValueError(f"unknown loss {loss!r}")


def cmd_estimate(args) -> int:
    manifest_path = Path(args.manifest)
    out_dir = Path(args.out)
    try:
        _, groups = load_dataset(manifest_path)
    except Exception as exc:
        print(f"error: cannot read manifest {manifest_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        spec = _loss_spec_from_flags(args.loss, args.pairs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _echo_config(out_dir, "estimate", {
        "manifest": str(manifest_path), "out": str(out_dir), "loss": args.loss,
        "pairs": args.pairs, "trace": args.trace, "eval_size": args.eval_size,
        "seed": args.seed,
    })
    config = OptimizerConfig(seed=args.seed, eval_size=args.eval_size)
    results = []
    for gi, group in enumerate(groups):
        res = estimate_group(group.by_model(), spec, config)
        results.append({"group": gi, **res.to_dict(include_trace=args.trace)})
        status = "converged" if res.converged else "NOT converged"
        print(f"group {gi}: total loss {res.breakdown['total']:.5f} ({status})")
    (out_dir / "estimates.json").write_text(json.dumps(results, indent=2, sort_keys=True))
    print(f"wrote {out_dir / 'estimates.json'}")
    return EXIT_OK if all(r["converged"] for r in results) else EXIT_FAILURE


def cmd_rectify(args) -> int:
    out_dir = Path(args.out)
    try:
        image = load_png(args.image)
    except Exception as exc:
        print(f"error: cannot read image {args.image}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.estimation:
        data = json.loads(Path(args.estimation).read_text())
        if isinstance(data, list):
            data = data[0]
        wanted = [e for e in data["estimates"]
                  if args.model is None or e["model"] == args.model]
        if not wanted:
            print("error: estimation JSON has no matching slot", file=sys.stderr)
            return EXIT_USAGE
        entry = wanted[0]
        model = default_model(ModelKind(entry["model"]))
        k = float(entry["k_raw"])
    else:
        if args.model is None or args.k is None:
            print("error: need --model and --k (or --estimation)", file=sys.stderr)
            return EXIT_USAGE
        model = default_model(ModelKind(args.model))
        k = args.k
        if not model.range.contains(k):
            print(f"error: k={k} outside {model.kind.value} range "
                  f"[{model.range.k_min}, {model.range.k_max}]", file=sys.stderr)
            return EXIT_USAGE
    _echo_config(out_dir, "rectify", {"image": str(args.image), "out": str(out_dir),
                                      "model": model.kind.value, "k": k})
    result = rectify(image, model, k)
    save_png(out_dir / "rectified.png", result.image)
    save_mask_png(out_dir / "mask.png", result.mask)
    print(f"wrote {out_dir / 'rectified.png'} and {out_dir / 'mask.png'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest_path = Path(args.manifest)
    out_dir = Path(args.out)
    try:
        _, groups = load_dataset(manifest_path)
    except Exception as exc:
        print(f"error: cannot read manifest {manifest_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _echo_config(out_dir, "eval", {
        "manifest": str(manifest_path), "out": str(out_dir),
        "use_true_k": args.use_true_k, "full_frame": args.full_frame,
        "slot": args.slot, "eval_size": args.eval_size,
    })
    test_sets: dict[ModelKind, list] = {k: [] for k in ALL_MODELS}
    for group in groups:
        for it in group.items:
            if it.slot == args.slot:
                test_sets[it.model].append((it.image, it.k_true, group.normal))
    config = OptimizerConfig(eval_size=args.eval_size)

    def fit_param(distorted, normal, row: DistortionModel, k_true, diagonal):
        if args.use_true_k and diagonal:
            return k_true
        k, _ = estimate_supervised(distorted, normal, row, config)
        return k

    report = evaluate_matrix(test_sets, fit_param, masked=not args.full_frame)
    if args.use_true_k:
        report.note += "; diagonal uses ground-truth parameters, off-diagonal fitted"
    report.write_csv(out_dir / "report.csv")
    report.write_json(out_dir / "report.json")
    for cell in report.cells:
        print(f"{cell.row_model.value} on {cell.test_model.value}: "
              f"PSNR {cell.psnr_mean:.2f}  SSIM {cell.ssim_mean:.4f}  "
              f"(n={cell.n}, failures={cell.failures})")
    for row in ALL_MODELS:
        avg = report.row_average(row)
        print(f"{row.value} universality (row avg): PSNR {avg['psnr']:.2f}  "
              f"SSIM {avg['ssim']:.4f}")
    print(f"wrote {out_dir / 'report.csv'} and {out_dir / 'report.json'}")
    return EXIT_OK


def _selftest_checks(corrupt: bool):
    """Yield (name, passed, detail) for the embedded property suite."""
    from .scenes import make_scene

    # radial round trips
    for kind in ALL_MODELS:
        model = default_model(kind)
        scale = 1.02 if corrupt else 1.0  # test hook: corrupted constant
        worst = 0.0
        for kn in np.linspace(0.0, 1.0, 10):
            k = model.denormalize(float(kn)) * scale
            r = np.linspace(0.0, 1.0, 100)
            fwd = model.radial_forward(r, model.denormalize(float(kn)))
            ok = np.isfinite(fwd)
            back = model.radial_backward(fwd[ok], k)
            worst = max(worst, float(np.abs(back - r[ok]).max()))
        yield (f"radial round trip {kind.value}", worst < 1e-6, f"max |r'-r| = {worst:.2e}")

    # loss at truth on one synthesized group
    normal = make_scene(42)
    group = synthesize_group(normal, group_rng(0, 0))
    state = GroupState(images=group.by_model(), params=group.params_by_model())
    breakdown = total_loss(state)
    yield ("loss at ground truth < 0.05", breakdown["total"] < 0.05,
           f"total = {breakdown['total']:.4f}")

    # metric identities
    img = make_scene(7)
    yield ("psnr(x, x) = cap", psnr(img, img) == 99.0, f"{psnr(img, img)}")
    a = np.full((64, 64, 3), 0.4)
    b = np.full((64, 64, 3), 0.5)
    yield ("uniform 0.1 difference -> 20 dB", abs(psnr(a, b) - 20.0) < 1e-6,
           f"{psnr(a, b):.6f}")
    yield ("ssim(x, x) = 1", abs(ssim(img, img) - 1.0) < 1e-9, f"{ssim(img, img):.12f}")


def cmd_selftest(args) -> int:
    corrupt = os.environ.get("LENSRECT_SELFTEST_CORRUPT", "") == "1"
    t0 = time.time()
    failures = []
    print(f"{'check':40s} {'result':8s} detail")
    for name, passed, detail in _selftest_checks(corrupt):
        print(f"{name:40s} {'PASS' if passed else 'FAIL':8s} {detail}")
        if not passed:
            failures.append(name)
    print(f"elapsed: {time.time() - t0:.1f}s")
    if failures:
        print(f"FAILED: {', '.join(failures)}", file=sys.stderr)
        return EXIT_FAILURE
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lensrect",
                                     description="lens distortion synthesis, "
                                                 "estimation, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize distorted groups from normal images")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="estimate distortion parameters for a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss", choices=["intra", "inter", "intra+inter"],
                   default="intra+inter")
    p.add_argument("--pairs", choices=["m1", "m2", "m3", "m4"], default="m4")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--eval-size", type=int, default=129)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("rectify", help="rectify one image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=[m.value for m in ALL_MODELS])
    p.add_argument("--k", type=float)
    p.add_argument("--estimation", help="estimation JSON to take k from")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("eval", help="cross-model evaluation matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--use-true-k", action="store_true")
    p.add_argument("--full-frame", action="store_true")
    p.add_argument("--slot", type=int, choices=[1, 2], default=1)
    p.add_argument("--eval-size", type=int, default=129)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the embedded property suite")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
