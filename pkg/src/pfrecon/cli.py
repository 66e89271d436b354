"""Command-line entry points.

Every subcommand exits 0 on success.  Failures print exactly one line to
stderr of the form ``error: <ExceptionName>: <message>`` and exit 1
(argparse usage problems exit 2, as usual).
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np


def _cmd_simulate(args) -> None:
    from .core import RepetitionSet, make_pf_mask
    from .synthdata import PhantomSpec, generate_dataset, write_dataset

    spec = PhantomSpec(
        size=(args.height, args.width),
        n_ellipses=args.ellipses,
        phase_mode=args.phase_mode,
        patch_count=args.patch_count,
        patch_max_freq=args.patch_max_freq,
        noise_sigma=args.noise_sigma,
        n_repetitions=args.repetitions,
        seed=args.seed,
    )
    slices = generate_dataset(spec, args.slices)
    if args.pff != "1":
        mask = make_pf_mask(args.width, Fraction(args.pff))
        acquired = mask.array()
        masked = []
        for s in slices:
            k = s.samples.copy()
            k[..., ~acquired] = 0
            masked.append(RepetitionSet(k, mask))
        slices = masked
    write_dataset(slices, args.out)
    print(f"wrote {args.slices} slices to {args.out}")


def _cmd_train(args) -> None:
    from .synthdata import read_dataset
    from .training import TrainConfig, train

    config = TrainConfig.from_file(args.config)
    dataset = read_dataset(args.data)
    val = read_dataset(args.val) if args.val else None
    _, records = train(dataset, config, val_dataset=val,
                       log_path=args.log, checkpoint_path=args.out)
    last = records[-1]
    print(f"trained {config.strategy}/{config.aggregation} "
          f"for {len(records)} epochs; final loss {last['total']:.5f}; "
          f"checkpoint {args.out}")


def _parse_checkpoints(pairs) -> dict:
    out = {}
    for p in pairs or ():
        method, _, path = p.partition("=")
        if not path:
            raise ValueError(f"--checkpoint wants METHOD=PATH, got {p!r}")
        out[method] = Path(path)
    return out


def _load_and_mask(path, pff):
    """Read a dataset file and retrospectively subsample it to pff."""
    from .core import RepetitionSet, forward, ifft2c, make_pf_mask
    from .synthdata import read_dataset

    slices = read_dataset(path)
    out = []
    for s in slices:
        mask = make_pf_mask(s.samples.shape[-1], Fraction(pff))
        if s.mask == mask:
            out.append(s)
        elif s.mask.pff == 1:
            k = forward(ifft2c(s), mask)
            out.append(RepetitionSet(k.samples, mask))
        else:
            raise ValueError(
                f"dataset is presampled at {s.mask.pff}, cannot resample "
                f"to {pff}")
    return out


def _cmd_reconstruct(args) -> None:
    from .classical import homodyne, pocs, zero_fill
    from .core import RepetitionSet, fft2c, make_pf_mask
    from .evaluate import LEARNED_METHODS, METHODS, POCS_ITERS
    from .network import drpf_forward, load_checkpoint
    from .synthdata import write_dataset

    if args.method not in METHODS:
        raise ValueError(f"unknown method {args.method!r}; "
                         f"choose from {', '.join(METHODS)}")
    net = None
    if args.method in LEARNED_METHODS:
        if not args.checkpoint:
            raise ValueError(f"method {args.method!r} needs --checkpoint")
        net, _ = load_checkpoint(args.checkpoint)

    slices = _load_and_mask(args.data, args.pff)
    out = []
    for y in slices:
        if args.method == "zero_fill":
            imgs = zero_fill(y)
        elif args.method == "pocs":
            imgs = pocs(y, POCS_ITERS)
        elif args.method == "homodyne":
            imgs = homodyne(y)
        else:
            imgs = drpf_forward(y, net)
        full = make_pf_mask(imgs.shape[-1], Fraction(1))
        # reconstructions are stored as their (fully sampled) spectra so the
        # k-space container format applies losslessly; ifft2c recovers them
        out.append(RepetitionSet(fft2c(imgs), full))
    write_dataset(out, args.out)
    print(f"reconstructed {len(out)} slices with {args.method} -> {args.out}")


def _cmd_evaluate(args) -> None:
    from .evaluate import emit_figures, evaluate, reconstruct_method, write_metrics_csv
    from .network import load_checkpoint
    from .synthdata import read_dataset
    from .training import magnitude_average, normalize_set
    from .core import RepetitionSet, forward, ifft2c, make_pf_mask

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    checkpoints = _parse_checkpoints(args.checkpoint)
    dataset = read_dataset(args.data)
    records, summary = evaluate(dataset, methods, args.pff,
                                checkpoints or None,
                                repetition_subset=args.subset)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(records, out_dir / "metrics.csv")
    summary["ssim_constants"] = {"window": 11, "sigma": 1.5,
                                 "K1": 0.01, "K2": 0.03}
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    if args.figures:
        nets = {m: load_checkpoint(checkpoints[m])[0]
                for m in methods if m in checkpoints}
        recons, gts = {}, {}
        for i, reps in enumerate(dataset[: args.figure_slices]):
            imgs, _ = normalize_set(ifft2c(reps))
            mask = make_pf_mask(imgs.shape[-1], Fraction(args.pff))
            y = RepetitionSet(forward(imgs, mask).samples, mask)
            gts[i] = magnitude_average(imgs)
            for m in methods:
                recons[(i, m)] = reconstruct_method(y, m, nets.get(m))
        emit_figures(records, recons, gts, out_dir)
    for m in methods:
        s = summary[m]
        print(f"{m}: psnr {s['psnr_mean']:.2f} +- {s['psnr_std']:.2f} dB, "
              f"ssim {s['ssim_mean']:.4f} (n={s['n']})")
    print(f"tables in {out_dir}")


def _cmd_analyze_kmax(args) -> None:
    from .evaluate import max_freq_histogram
    from .synthdata import read_dataset

    dataset = read_dataset(args.data)
    counts, frac = max_freq_histogram(dataset, args.pff)
    result = {"pff": args.pff, "counts": counts.tolist(),
              "out_of_region_fraction": frac}
    if args.out:
        with open(args.out, "w") as f:
            json.dump(result, f, indent=2)
    nonzero = {int(i): int(c) for i, c in enumerate(counts) if c}
    print(f"dominant PE line counts: {nonzero}")
    print(f"out-of-region fraction at pff={args.pff}: {frac:.4%}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pfrecon",
        description="Partial-Fourier MRI reconstruction toolbox")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset file")
    s.add_argument("--out", required=True)
    s.add_argument("--slices", type=int, required=True)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--ellipses", type=int, default=6)
    s.add_argument("--phase-mode", default="smooth_plus_patches",
                   choices=["constant", "smooth_poly", "smooth_plus_patches"])
    s.add_argument("--patch-count", type=int, default=2)
    s.add_argument("--patch-max-freq", type=float, default=24.0)
    s.add_argument("--noise-sigma", type=float, default=0.02)
    s.add_argument("--repetitions", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pff", default="1",
                   help="presample the stored k-space (default: keep full)")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("train", help="train a network from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--val", default=None)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", default=None, help="JSONL epoch log path")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("reconstruct",
                       help="reconstruct a dataset with one method")
    s.add_argument("--data", required=True)
    s.add_argument("--method", required=True)
    s.add_argument("--pff", default="5/8")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_reconstruct)

    s = sub.add_parser("evaluate", help="score methods against ground truth")
    s.add_argument("--data", required=True)
    s.add_argument("--methods", required=True,
                   help="comma-separated method names")
    s.add_argument("--pff", default="5/8")
    s.add_argument("--checkpoint", action="append", metavar="METHOD=PATH")
    s.add_argument("--subset", type=int, default=None,
                   help="evaluate on this many repetitions per slice")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--figures", action="store_true")
    s.add_argument("--figure-slices", type=int, default=3)
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("analyze-kmax",
                       help="histogram of dominant PE-line locations")
    s.add_argument("--data", required=True)
    s.add_argument("--pff", default="5/8")
    s.add_argument("--out", default=None, help="optional JSON output path")
    s.set_defaults(func=_cmd_analyze_kmax)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as e:  # noqa: BLE001 - single reporting point
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
