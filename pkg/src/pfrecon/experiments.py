"""Benchmark recipes: the shared dataset, cached trainings, and probe cases.

The comparison trainings are far too slow to rerun per test session, so
each recipe writes its checkpoints, logs, and timing metadata under an
artifact root and is skipped when its outputs already exist.  Everything is
seeded, so a cold rerun reproduces the cached artifacts.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from pathlib import Path

import numpy as np
import torch

from .core import RepetitionSet, forward, ifft2c, make_pf_mask
from .network import UnrolledNet, drpf_forward, load_checkpoint
from .synthdata import PhantomSpec, generate_phantom, generate_dataset, inject_void
from .training import TrainConfig, magnitude_average, normalize_set, train, train_two_stage

# One commodity-scale benchmark: enough slices for a stable ordering, small
# enough to train on a CPU.  Training set size and epoch floor follow the
# comparison protocol; the light noise level keeps classical phase
# estimation competitive so learned gains are earned, not gifted.
BENCHMARK = {
    "size": (64, 64),
    "slices": 260,
    "train": 200,
    "val": 20,
    "held": 40,
    "noise_sigma": 0.01,
    "n_repetitions": 6,
    "phase_mode": "smooth_plus_patches",
    "pff": "5/8",
    "seed": 20250815,
    "eval_subset": 2,
    "epochs": 20,
}

AGGREGATION_VARIANTS = {
    "drpf_max": "max",
    "drpf_mean": "mean",
    "drpf_none": "none",
}


def hardware_threads() -> int:
    return os.cpu_count() or 1


def benchmark_spec() -> PhantomSpec:
    return PhantomSpec(
        size=BENCHMARK["size"],
        phase_mode=BENCHMARK["phase_mode"],
        noise_sigma=BENCHMARK["noise_sigma"],
        n_repetitions=BENCHMARK["n_repetitions"],
        seed=BENCHMARK["seed"],
    )


def benchmark_dataset():
    """Deterministic train/val/held-out split of the benchmark corpus."""
    data = generate_dataset(benchmark_spec(), BENCHMARK["slices"])
    n_train, n_val = BENCHMARK["train"], BENCHMARK["val"]
    return (data[:n_train], data[n_train:n_train + n_val],
            data[n_train + n_val:])


def _write_timing(path: Path, entries: dict) -> None:
    entries = dict(entries)
    entries["cpu_threads"] = hardware_threads()
    entries["torch_threads"] = torch.get_num_threads()
    with open(path, "w") as f:
        json.dump(entries, f, indent=2)


def train_aggregation_trio(root, *, epochs: int | None = None,
                           force: bool = False) -> dict[str, Path]:
    """Train the three aggregation variants on the benchmark; returns checkpoints.

    All three runs share the seed, so they start from identical parameters
    and see identical batches — the pooling rule is the only difference.
    """
    out = Path(root) / "aggregation"
    out.mkdir(parents=True, exist_ok=True)
    epochs = BENCHMARK["epochs"] if epochs is None else epochs
    paths = {n: out / f"{n}.ckpt" for n in AGGREGATION_VARIANTS}
    if not force and all(p.exists() for p in paths.values()):
        return paths

    train_ds, val_ds, _ = benchmark_dataset()
    timing: dict = {"epochs": epochs}
    for name, aggregation in AGGREGATION_VARIANTS.items():
        cfg = TrainConfig(pff=BENCHMARK["pff"], strategy="recurrent",
                          aggregation=aggregation, iters=5, epochs=epochs,
                          seed=0)
        t0 = time.time()
        train(train_ds, cfg, val_dataset=val_ds,
              log_path=out / f"{name}.jsonl", checkpoint_path=paths[name])
        timing[name + "_s"] = time.time() - t0
    _write_timing(out / "timing.json", timing)
    return paths


def train_strategy_comparison(root, *, base_epochs: int = 50,
                              finetune_epochs: int = 12,
                              force: bool = False) -> dict[str, Path]:
    """Two-stage comparison of the unrolling strategies; returns checkpoints."""
    out = Path(root) / "strategies"
    out.mkdir(parents=True, exist_ok=True)
    names = ("recurrent", "weight_shared", "cascaded")
    paths = {n: out / f"{n}.ckpt" for n in names}
    if not force and all(p.exists() for p in paths.values()):
        return paths

    train_ds, val_ds, _ = benchmark_dataset()
    cfg = TrainConfig(pff=BENCHMARK["pff"], aggregation="max", iters=5,
                      epochs=BENCHMARK["epochs"], seed=0)
    t0 = time.time()
    train_two_stage(train_ds, cfg, base_epochs=base_epochs,
                    finetune_epochs=finetune_epochs, val_dataset=val_ds,
                    log_dir=out, checkpoint_dir=out)
    _write_timing(out / "timing.json",
                  {"total_s": time.time() - t0, "base_epochs": base_epochs,
                   "finetune_epochs": finetune_epochs})
    return paths


# ---------------------------------------------------------------------------
# hallucination probe: a true void must stay dark, a phase-artifact signal
# loss must come back

VOID_CENTER = (22, 26)
VOID_AXES = (6, 5)
PATCH_CENTER = (42, 38)
PATCH_SIGMA = 2.6
PATCH_AMP = 2.1
PATCH_FREQ_FRACTION = 0.80  # of the benchmark patch_max_freq, in cycles/FOV
# the patch afflicts all but one repetition: a transient artifact leaves the
# joint reconstruction one clean view to draw on; parameters sit where the
# conjugate-symmetry phase estimate visibly breaks (POCS misses the recovery
# bar) while the loss stays inside the training distribution
PATCH_CLEAN_REPS = 1


def _ellipse_mask(shape, center, axes) -> np.ndarray:
    yy, xx = np.ogrid[: shape[0], : shape[1]]
    return ((yy - center[0]) / axes[0]) ** 2 + (
        (xx - center[1]) / axes[1]) ** 2 <= 1.0


def _gaussian_patch_phase(shape) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    yy, xx = np.mgrid[:h, :w]
    window = np.exp(-(((yy - PATCH_CENTER[0]) ** 2 +
                       (xx - PATCH_CENTER[1]) ** 2) /
                      (2.0 * PATCH_SIGMA ** 2)))
    freq = PATCH_FREQ_FRACTION * 24.0
    phase = PATCH_AMP * window * np.sin(2 * np.pi * freq * xx / w)
    return phase, window >= 0.5


@dataclasses.dataclass(frozen=True)
class ProbeCase:
    """Measurements plus the regions the probe is judged on."""

    measurements: RepetitionSet
    ground_truth: np.ndarray          # magnitude average of the clean images
    void_region: np.ndarray           # bool, injected void
    void_surround: np.ndarray         # bool, ring around the void
    patch_region: np.ndarray          # bool, phase-patch core


def region_mean(img: np.ndarray, region: np.ndarray) -> float:
    return float(np.abs(img)[region].mean())


def build_probe_case(seed: int = 11) -> ProbeCase:
    """A slice with one real void and one phase-patch-induced signal loss."""
    spec = dataclasses.replace(benchmark_spec(), phase_mode="smooth_poly",
                               seed=seed)
    imgs = ifft2c(generate_phantom(spec))
    h, w = imgs.shape[-2:]

    patch_phase, patch_region = _gaussian_patch_phase((h, w))
    imgs = imgs.copy()
    imgs[: imgs.shape[0] - PATCH_CLEAN_REPS] *= np.exp(1j * patch_phase)[None]

    rng = np.random.default_rng(seed + 1)
    imgs = np.stack([
        inject_void(im, VOID_CENTER, VOID_AXES, spec.noise_sigma, rng)
        for im in imgs
    ])

    imgs, _ = normalize_set(imgs)
    void = _ellipse_mask((h, w), VOID_CENTER, VOID_AXES)
    ring = _ellipse_mask((h, w), VOID_CENTER,
                         (2 * VOID_AXES[0], 2 * VOID_AXES[1])) & ~void

    mask = make_pf_mask(w, BENCHMARK["pff"])
    y = RepetitionSet(forward(imgs, mask).samples, mask)
    return ProbeCase(measurements=y, ground_truth=magnitude_average(imgs),
                     void_region=void, void_surround=ring,
                     patch_region=patch_region)


def run_probe(checkpoint, case: ProbeCase | None = None) -> dict:
    """Reconstruct the probe slice; returns region statistics for judging."""
    if case is None:
        case = build_probe_case()
    net = checkpoint
    if not isinstance(net, UnrolledNet):
        net, _ = load_checkpoint(checkpoint)
    recon = magnitude_average(drpf_forward(case.measurements, net))
    zf = magnitude_average(ifft2c(case.measurements))
    gt_patch = region_mean(case.ground_truth, case.patch_region)
    return {
        "void_mean": region_mean(recon, case.void_region),
        "surround_mean": region_mean(recon, case.void_surround),
        "patch_mean": region_mean(recon, case.patch_region),
        "patch_gt_mean": gt_patch,
        "patch_zero_fill_mean": region_mean(zf, case.patch_region),
        "patch_relative_error": abs(
            region_mean(recon, case.patch_region) - gt_patch) / gt_patch,
    }
