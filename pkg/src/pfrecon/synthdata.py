"""Synthetic complex phantoms with controllable phase pathology.

Phantom magnitudes are piecewise-smooth ellipse superpositions. Phase is
either zero ("constant": the exactly-conjugate-symmetric calibration
case), a shared low-order polynomial ("smooth_poly"), or that polynomial
plus per-repetition Gaussian-windowed sinusoid patches
("smooth_plus_patches") whose phase-encode frequency sits far above
what a symmetric low-frequency band can represent — the regime in which
phase-estimate-based reconstruction breaks down locally.

Also defines the PFREC1 on-disk dataset format and a void-injection
tool for non-hallucination experiments.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import RepetitionSet, fft2c, make_pf_mask

__all__ = [
    "PHASE_MODES",
    "PhantomSpec",
    "DatasetFormatError",
    "generate_phantom",
    "generate_dataset",
    "inject_void",
    "write_dataset",
    "read_dataset",
]

PHASE_MODES = ("constant", "smooth_poly", "smooth_plus_patches")

# patch phase amplitude (radians) and the portion of patch_max_freq the
# phase-encode frequency is drawn from; tuned so that at the default
# spec a 5/8 low-frequency band cannot represent the patches, while the
# patch sidebands stay far enough outside the symmetric band that the
# low-frequency phase estimate of conjugate-symmetry methods survives
PATCH_AMPLITUDE = (1.6, 3.0)
PATCH_PE_FREQ_FRACTION = (0.75, 1.0)
PATCH_SIGMA_FRACTION = (0.04, 0.05)

# patch_count is the per-repetition maximum; each candidate patch
# materializes with this probability, so the pathology is sporadic
# across repetitions rather than ubiquitous
PATCH_PRESENCE = 0.10

# ellipse edges get a mild anti-alias blur; raw 1px edges leave so much
# out-of-band energy that even conjugate-symmetric reconstruction of a
# real phantom stays under 50 dB at pff = 5/8
EDGE_SOFTEN_SIGMA = 1.0


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one synthetic slice with B repetitions."""

    size: tuple[int, int] = (64, 64)
    n_ellipses: int = 6
    phase_mode: str = "smooth_plus_patches"
    patch_count: int = 2
    patch_max_freq: float = 24.0  # cycles/FOV along phase-encode
    noise_sigma: float = 0.02
    n_repetitions: int = 6
    seed: int = 0

    def __post_init__(self):
        h, w = self.size
        if h < 32 or w < 32:
            raise ValueError(f"phantom size must be at least 32x32, got {h}x{w}")
        if self.n_ellipses < 1:
            raise ValueError("need at least one ellipse")
        if self.phase_mode not in PHASE_MODES:
            raise ValueError(
                f"unknown phase_mode {self.phase_mode!r}, expected one of {PHASE_MODES}"
            )
        if self.patch_count < 0:
            raise ValueError("patch_count must be non-negative")
        if not 0 < self.patch_max_freq < w / 2:
            raise ValueError(
                f"patch_max_freq must lie in (0, {w // 2}) cycles/FOV"
            )
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.n_repetitions < 1:
            raise ValueError("need at least one repetition")


def _grids(h: int, w: int):
    y = np.linspace(-1.0, 1.0, h)
    x = np.linspace(-1.0, 1.0, w)
    return np.meshgrid(y, x, indexing="ij")


def _magnitude(h: int, w: int, n_ellipses: int, rng: np.random.Generator):
    yy, xx = _grids(h, w)
    mag = np.zeros((h, w))
    for i in range(n_ellipses):
        if i == 0:
            # a large body ellipse guarantees object support near center
            cy, cx = rng.uniform(-0.08, 0.08, 2)
            ay, ax = rng.uniform(0.55, 0.78, 2)
            amp = rng.uniform(0.35, 0.5)
        else:
            cy, cx = rng.uniform(-0.45, 0.45, 2)
            ay, ax = rng.uniform(0.1, 0.4, 2)
            amp = rng.uniform(0.2, 0.5)
        theta = rng.uniform(0.0, math.pi)
        u = (yy - cy) * math.cos(theta) + (xx - cx) * math.sin(theta)
        v = -(yy - cy) * math.sin(theta) + (xx - cx) * math.cos(theta)
        mag[(u / ay) ** 2 + (v / ax) ** 2 <= 1.0] += amp
    return gaussian_filter(np.clip(mag, 0.0, 1.0), EDGE_SOFTEN_SIGMA)


def _smooth_poly_phase(h: int, w: int, rng: np.random.Generator):
    yy, xx = _grids(h, w)
    c0 = rng.uniform(-math.pi, math.pi)
    cy, cx = rng.uniform(-1.2, 1.2, 2)
    cyy, cxy, cxx = rng.uniform(-0.8, 0.8, 3)
    return c0 + cy * yy + cx * xx + cyy * yy**2 + cxy * yy * xx + cxx * xx**2


def _phase_patches(
    h: int,
    w: int,
    count: int,
    max_freq: float,
    support_from: np.ndarray,
    rng: np.random.Generator,
):
    """Sum of Gaussian-windowed sinusoids; returns (phase, strong-support)."""
    ph = np.zeros((h, w))
    strong = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(support_from)
    iy, ix = np.mgrid[0:h, 0:w]
    for _ in range(count):
        if len(ys):
            j = rng.integers(len(ys))
            cy, cx = float(ys[j]), float(xs[j])
        else:  # degenerate all-zero magnitude; keep generation total
            cy, cx = h / 2.0, w / 2.0
        sigma = rng.uniform(*PATCH_SIGMA_FRACTION) * min(h, w)
        f_pe = rng.uniform(*PATCH_PE_FREQ_FRACTION) * max_freq
        f_ro = rng.uniform(-0.25, 0.25) * max_freq
        amp = rng.uniform(*PATCH_AMPLITUDE)
        psi = rng.uniform(0.0, 2 * math.pi)
        window = np.exp(-((iy - cy) ** 2 + (ix - cx) ** 2) / (2 * sigma**2))
        carrier = np.sin(2 * math.pi * (f_pe * ix / w + f_ro * iy / h) + psi)
        ph += amp * window * carrier
        strong |= amp * window >= 1.0
    return ph, strong


def generate_phantom(spec: PhantomSpec, with_info: bool = False):
    """Build one slice's ground-truth repetitions as full k-space.

    Magnitude is shared across repetitions; phase is shared except for
    the per-repetition patches; complex Gaussian noise (total std
    noise_sigma) is independent per repetition. Deterministic per seed.

    With with_info=True also returns a dict holding the magnitude, the
    per-repetition phase maps, and the strong-patch support masks.
    """
    h, w = spec.size
    rng = np.random.default_rng(spec.seed)
    mag = _magnitude(h, w, spec.n_ellipses, rng)
    if spec.phase_mode == "constant":
        # zero, not merely shared: conjugate symmetry of the spectrum
        # requires a strictly real image
        base = np.zeros((h, w))
    else:
        base = _smooth_poly_phase(h, w, rng)

    support = mag > 0.25
    imgs = np.empty((spec.n_repetitions, h, w), dtype=np.complex128)
    phases = np.empty((spec.n_repetitions, h, w))
    patch_support = np.zeros((spec.n_repetitions, h, w), dtype=bool)
    for b in range(spec.n_repetitions):
        phase = base
        if spec.phase_mode == "smooth_plus_patches" and spec.patch_count:
            n_patches = int(rng.binomial(spec.patch_count, PATCH_PRESENCE))
            patches, strong = _phase_patches(
                h, w, n_patches, spec.patch_max_freq, support, rng
            )
            phase = base + patches
            patch_support[b] = strong
        img = mag * np.exp(1j * phase)
        if spec.noise_sigma > 0:
            img = img + (spec.noise_sigma / math.sqrt(2.0)) * (
                rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
            )
        imgs[b] = img
        phases[b] = phase

    # k-space kept in double precision; the 32-bit cast belongs to the
    # file format, not to the mathematical phantom
    reps = RepetitionSet(
        samples=fft2c(imgs),
        mask=make_pf_mask(w, Fraction(1)),
    )
    if not with_info:
        return reps
    info = {"magnitude": mag, "phase": phases, "patch_support": patch_support}
    return reps, info


def generate_dataset(spec: PhantomSpec, n_slices: int) -> list[RepetitionSet]:
    """n_slices independent phantoms with per-slice seeds derived from spec.seed."""
    if n_slices < 1:
        raise ValueError("n_slices must be positive")
    child_seeds = np.random.SeedSequence(spec.seed).generate_state(n_slices)
    out = []
    for s in child_seeds:
        sub = PhantomSpec(
            size=spec.size,
            n_ellipses=spec.n_ellipses,
            phase_mode=spec.phase_mode,
            patch_count=spec.patch_count,
            patch_max_freq=spec.patch_max_freq,
            noise_sigma=spec.noise_sigma,
            n_repetitions=spec.n_repetitions,
            seed=int(s),
        )
        out.append(generate_phantom(sub))
    return out


def inject_void(
    img: np.ndarray,
    center: tuple[float, float],
    axes: tuple[float, float],
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Zero the magnitude inside an ellipse, refill with complex noise.

    The magnitude of pure complex Gaussian noise is Rician (Rayleigh),
    matching what a real acquisition of a signal void looks like.
    Everything outside the ellipse is untouched.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("inject_void operates on a single (H, W) image")
    h, w = img.shape
    cy, cx = center
    ay, ax = axes
    if ay <= 0 or ax <= 0:
        raise ValueError("ellipse semi-axes must be positive")
    if cy - ay < 0 or cy + ay > h - 1 or cx - ax < 0 or cx + ax > w - 1:
        raise ValueError(
            f"ellipse (center {center}, axes {axes}) exceeds {h}x{w} image bounds"
        )
    iy, ix = np.mgrid[0:h, 0:w]
    region = ((iy - cy) / ay) ** 2 + ((ix - cx) / ax) ** 2 <= 1.0
    out = img.copy()
    out[region] = 0
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng()
        n = int(region.sum())
        out[region] += (noise_sigma / math.sqrt(2.0)) * (
            rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ).astype(out.dtype)
    return out


# ---------------------------------------------------------------------------
# PFREC1 dataset files


class DatasetFormatError(ValueError):
    pass


_MAGIC = b"PFREC1"
_VERSION = 1
_HEADER = struct.Struct("<6sH6I")  # magic, version, H, W, B, slices, pff num/den


def write_dataset(slices: list[RepetitionSet], path) -> None:
    """Write repetition sets as little-endian complex64, bit-exact round-trip."""
    if not slices:
        raise ValueError("refusing to write an empty dataset")
    first = slices[0]
    b, h, w = first.samples.shape
    for s in slices:
        if s.samples.shape != (b, h, w) or s.mask != first.mask:
            raise ValueError("all slices must share one shape and sampling mask")
    pff = first.mask.pff
    header = _HEADER.pack(
        _MAGIC, _VERSION, h, w, b, len(slices), pff.numerator, pff.denominator
    )
    with open(path, "wb") as f:
        f.write(header)
        for s in slices:
            f.write(np.ascontiguousarray(s.samples, dtype="<c8").tobytes())


def read_dataset(path) -> list[RepetitionSet]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(
            f"file too short for a {_HEADER.size}-byte header (got {len(raw)} bytes)"
        )
    magic, version, h, w, b, n_slices, num, den = _HEADER.unpack(
        raw[: _HEADER.size]
    )
    if magic != _MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported format version {version}")
    expected = n_slices * b * h * w * 8
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise DatasetFormatError(
            f"payload truncated or oversized: expected {expected} bytes, "
            f"found {actual}"
        )
    mask = make_pf_mask(w, Fraction(num, den))
    arr = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    arr = arr.reshape(n_slices, b, h, w)
    return [RepetitionSet(samples=arr[i].copy(), mask=mask) for i in range(n_slices)]
