"""Method comparison harness, k-space spectral analyses, and figure emission.

Every method is scored the same way: reconstruct each repetition, average the
magnitudes, and compare against the magnitude average of the fully sampled
repetitions of the same slice.  The ground truth is therefore exactly what a
full acquisition of the same (noisy) data would have produced, so method
scores measure reconstruction fidelity rather than denoising luck.
"""

from __future__ import annotations

import csv
import dataclasses
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .classical import homodyne, pocs, zero_fill
from .core import RepetitionSet, forward, ifft2c, make_pf_mask
from .metrics import psnr, ssim
from .network import UnrolledNet, drpf_forward, load_checkpoint
from .training import magnitude_average, normalize_set

CLASSICAL_METHODS = ("zero_fill", "pocs", "homodyne")
LEARNED_METHODS = ("drpf_none", "drpf_mean", "drpf_max",
                   "weight_shared", "cascaded")
METHODS = CLASSICAL_METHODS + LEARNED_METHODS

POCS_ITERS = 5

# Base seed for the deterministic per-slice repetition subselection; slice i
# always draws its subset from default_rng(SUBSET_SEED_BASE + i), so repeated
# runs produce byte-identical tables.
SUBSET_SEED_BASE = 1000


@dataclasses.dataclass(frozen=True)
class EvalRecord:
    slice_id: int
    method: str
    pff: str
    psnr_db: float
    ssim: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.ssim > 1.0 + 1e-9:
            raise ValueError(f"ssim {self.ssim} exceeds 1")


def _resolve_net(method: str, checkpoints) -> UnrolledNet:
    if checkpoints is None or method not in checkpoints:
        raise ValueError(f"method {method!r} needs a checkpoint")
    entry = checkpoints[method]
    if isinstance(entry, UnrolledNet):
        return entry
    net, _ = load_checkpoint(entry)
    return net


def reconstruct_method(y: RepetitionSet, method: str,
                       net: UnrolledNet | None = None) -> np.ndarray:
    """Reconstruct a repetition set with one method; returns the magnitude average."""
    if method == "zero_fill":
        return magnitude_average(zero_fill(y))
    if method == "pocs":
        return magnitude_average(pocs(y, POCS_ITERS))
    if method == "homodyne":
        return magnitude_average(homodyne(y))
    if method in LEARNED_METHODS:
        if net is None:
            raise ValueError(f"method {method!r} needs a checkpoint")
        return magnitude_average(drpf_forward(y, net))
    raise ValueError(f"unknown method {method!r}")


def evaluate(dataset: Sequence[RepetitionSet], methods: Sequence[str],
             pff, checkpoints: Mapping[str, object] | None = None, *,
             repetition_subset: int | None = None):
    """Score every method on every slice.

    Returns (records, summary).  ``summary`` maps each method to its
    mean/std/median/IQR over slices plus pairwise Wilcoxon signed-rank
    p-values on the per-slice PSNR pairs.

    ``repetition_subset`` evaluates each slice on that many repetitions,
    drawn deterministically per slice; None uses the full set.  All methods
    of a slice see the identical subset, so comparisons stay paired.
    """
    if not len(dataset):
        raise ValueError("empty dataset")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    nets = {m: _resolve_net(m, checkpoints)
            for m in methods if m in LEARNED_METHODS}

    pff = Fraction(pff)
    records: list[EvalRecord] = []
    for i, reps in enumerate(dataset):
        imgs, _ = normalize_set(ifft2c(reps))
        if repetition_subset is not None:
            if not 1 <= repetition_subset <= imgs.shape[0]:
                raise ValueError(
                    f"subset size {repetition_subset} outside 1..{imgs.shape[0]}")
            idx = np.random.default_rng(SUBSET_SEED_BASE + i)
            imgs = imgs[idx.permutation(imgs.shape[0])[:repetition_subset]]
        gt = magnitude_average(imgs)
        rng = float(gt.max())
        mask = make_pf_mask(imgs.shape[-1], pff)
        y = RepetitionSet(forward(imgs, mask).samples, mask)
        for m in methods:
            rec = reconstruct_method(y, m, nets.get(m))
            records.append(EvalRecord(
                slice_id=i, method=m, pff=str(pff),
                psnr_db=psnr(gt, rec, data_range=rng),
                ssim=ssim(gt, rec, data_range=rng)))
    return records, summarize(records)


def summarize(records: Sequence[EvalRecord]) -> dict:
    methods = sorted({r.method for r in records}, key=METHODS.index)
    by_method = {m: sorted((r for r in records if r.method == m),
                           key=lambda r: r.slice_id) for m in methods}
    out: dict = {}
    for m, recs in by_method.items():
        v = np.array([r.psnr_db for r in recs])
        s = np.array([r.ssim for r in recs])
        out[m] = {
            "psnr_mean": float(v.mean()), "psnr_std": float(v.std()),
            "psnr_median": float(np.median(v)),
            "psnr_iqr": [float(np.percentile(v, 25)),
                         float(np.percentile(v, 75))],
            "ssim_mean": float(s.mean()), "ssim_std": float(s.std()),
            "n": len(recs),
        }
    pairs = {}
    for a_i, a in enumerate(methods):
        for b in methods[a_i + 1:]:
            pa = np.array([r.psnr_db for r in by_method[a]])
            pb = np.array([r.psnr_db for r in by_method[b]])
            if len(pa) != len(pb) or len(pa) < 2:
                continue
            if np.allclose(pa, pb):
                p = 1.0  # identical samples carry no evidence either way
            else:
                p = float(stats.wilcoxon(pa, pb).pvalue)
            pairs[f"{a}|{b}"] = p
    out["wilcoxon_psnr"] = pairs
    return out


def pe_max_frequency(k: np.ndarray) -> int:
    """Index of the phase-encode line holding the spectrum's absolute maximum.

    The readout direction is collapsed by a max, so the result is the PE
    line whose strongest sample dominates the whole spectrum.
    """
    if k.ndim != 2:
        raise ValueError(f"expected a single 2-D spectrum, got {k.shape}")
    profile = np.abs(k).max(axis=-2)
    return int(np.argmax(profile))


def max_freq_histogram(dataset: Sequence[RepetitionSet], pff):
    """Histogram of dominant-PE-line locations over every repetition.

    Returns (counts, out_of_region_fraction): counts has one bin per PE
    line; the fraction counts repetitions whose dominant line lies outside
    the pff acquisition band.
    """
    if not len(dataset):
        raise ValueError("empty dataset")
    w = dataset[0].samples.shape[-1]
    acquired = make_pf_mask(w, Fraction(pff)).array()
    counts = np.zeros(w, dtype=np.int64)
    total = outside = 0
    for reps in dataset:
        k = np.asarray(getattr(reps, "samples", reps))
        for rep in k:
            line = pe_max_frequency(rep)
            counts[line] += 1
            total += 1
            if not acquired[line]:
                outside += 1
    return counts, outside / total


def write_metrics_csv(records: Sequence[EvalRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["slice", "method", "pff", "psnr_db", "ssim"])
        for r in sorted(records, key=lambda r: (r.slice_id,
                                                METHODS.index(r.method))):
            writer.writerow([r.slice_id, r.method, r.pff,
                             repr(r.psnr_db), repr(r.ssim)])


DIFF_GAIN = 5.0


def emit_figures(records: Sequence[EvalRecord],
                 reconstructions: Mapping[tuple[int, str], np.ndarray],
                 ground_truths: Mapping[int, np.ndarray],
                 out_dir) -> list[Path]:
    """Render comparison panels and the metrics table.

    For every (slice, method) reconstruction: the image, the 5x-amplified
    absolute difference to ground truth, and the phase map (zero for the
    real-valued magnitude averages, kept for parity with complex inputs).
    Adds one PSNR boxplot across methods and metrics.csv.
    """
    if not records:
        raise ValueError("no records to render")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for (slice_id, method), rec in sorted(reconstructions.items()):
        gt = ground_truths[slice_id]
        fig, axes = plt.subplots(1, 3, figsize=(9, 3))
        vmax = float(np.abs(gt).max())
        axes[0].imshow(np.abs(rec), cmap="gray", vmin=0, vmax=vmax)
        axes[0].set_title(method)
        diff = DIFF_GAIN * np.abs(np.abs(rec) - np.abs(gt))
        axes[1].imshow(diff, cmap="gray", vmin=0, vmax=vmax)
        axes[1].set_title(f"|diff| x{DIFF_GAIN:g}")
        axes[2].imshow(np.angle(rec), cmap="twilight",
                       vmin=-np.pi, vmax=np.pi)
        axes[2].set_title("phase")
        for ax in axes:
            ax.axis("off")
        path = out_dir / f"slice{slice_id:04d}_{method}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    methods = sorted({r.method for r in records}, key=METHODS.index)
    series = [[r.psnr_db for r in records if r.method == m] for m in methods]
    fig, ax = plt.subplots(figsize=(1.2 * len(methods) + 2, 4))
    ax.boxplot(series, tick_labels=methods)
    ax.set_ylabel("PSNR (dB)")
    ax.tick_params(axis="x", rotation=30)
    path = out_dir / "psnr_boxplot.png"
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    table = out_dir / "metrics.csv"
    write_metrics_csv(records, table)
    written.append(table)
    return written
