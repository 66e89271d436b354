"""Conventional partial-Fourier reconstructions.

All methods take measured :class:`~pfrecon.core.KSpaceData` and return a
complex image of the same spatial shape, so they are directly comparable
with each other and with learned reconstructions. Phase estimation uses
only the conjugate-symmetric band of the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pfrecon.core import (
    KSpaceData,
    SamplingMask,
    conj_mirror_indices,
    data_consistency,
    fft2c,
    ifft2c,
)


@dataclass(frozen=True)
class PhaseEstimate:
    """Low-resolution phase map in radians, one value per pixel."""

    phase: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.phase)
        if not np.all(np.isfinite(p)):
            raise ValueError("phase estimate contains non-finite values")
        # canonicalize the branch cut to (-pi, pi]
        p = np.where(p == -np.pi, np.pi, p)
        object.__setattr__(self, "phase", p)

    def unit(self) -> np.ndarray:
        """exp(i*phase), the unit-modulus phasor field."""
        return np.exp(1j * self.phase)


def zero_fill(y) -> np.ndarray:
    """Adjoint reconstruction: inverse FFT of the zero-padded k-space.

    Accepts a KSpaceData / RepetitionSet or a bare sample array.
    """
    return ifft2c(y)


def _band_weights(mask: SamplingMask, apodize: bool) -> np.ndarray:
    """PE-axis weights selecting the symmetric band.

    The Hann taper peaks at the DC line and is mirror-symmetric about
    it, so conjugate-symmetric spectra stay conjugate-symmetric after
    windowing. Endpoints keep nonzero weight so every band line
    contributes.
    """
    w = np.zeros(mask.pe_size)
    if not apodize:
        w[mask.sym_lo : mask.sym_hi] = 1.0
        return w
    c = mask.pe_size // 2
    r = max(c - mask.sym_lo, mask.sym_hi - 1 - c)
    off = np.arange(mask.sym_lo, mask.sym_hi) - c
    w[mask.sym_lo : mask.sym_hi] = np.sin(
        np.pi * (off + r + 1) / (2 * r + 2)
    ) ** 2
    return w


def lowres_phase(y: KSpaceData, apodize: bool = True) -> PhaseEstimate:
    """Phase of the image formed from the symmetric band only.

    A full mask has no truncation to suppress, so the image phase is
    used directly and `apodize` is ignored.
    """
    mask = y.mask
    if mask.is_full:
        return PhaseEstimate(phase=np.angle(ifft2c(y.samples)))
    nb = mask.sym_hi - mask.sym_lo
    if nb < 2:
        raise ValueError(
            f"symmetric band has {nb} line(s); need at least 2 for phase estimation"
        )
    k = y.samples * _band_weights(mask, apodize)
    return PhaseEstimate(phase=np.angle(ifft2c(k)))


def pocs(y: KSpaceData, iters: int = 5) -> np.ndarray:
    """Projection-onto-convex-sets PF reconstruction.

    Alternates the classic phase-correction step (keep the current
    magnitude, impose the low-resolution phase) with hard data
    consistency. iters = 0 returns the zero-filled image unchanged.
    """
    if iters < 0:
        raise ValueError(f"iters must be non-negative, got {iters}")
    x = zero_fill(y)
    if iters == 0:
        return x
    phasor = lowres_phase(y).unit()
    for _ in range(iters):
        z = np.abs(x) * phasor
        x = data_consistency(z, y, 0.0)
    return x


def homodyne_weights(mask: SamplingMask) -> np.ndarray:
    """PE-axis pre-weighting for homodyne reconstruction.

    Weights are 2 on asymmetrically acquired lines, ramp linearly from 2
    down to 0 across the symmetric band, and are 0 on unacquired lines,
    so that w(j) + w(mirror(j)) = 2 holds across the band. A full mask
    needs no reweighting and returns all ones.
    """
    n = mask.pe_size
    if mask.is_full:
        return np.ones(n)
    m = mask.acquired_count
    w = np.zeros(n)
    w[: mask.sym_lo] = 2.0
    j = np.arange(mask.sym_lo, mask.sym_hi)
    if n % 2 == 0:
        w[mask.sym_lo : mask.sym_hi] = 2.0 * (m - j) / (2 * m - n)
    else:
        w[mask.sym_lo : mask.sym_hi] = 2.0 * (m - 1 - j) / (2 * m - n - 1)
    return w


def homodyne(y: KSpaceData) -> np.ndarray:
    """One-step PF reconstruction via ramp weighting and phase demodulation.

    The real part is taken after demodulating by the low-resolution
    phase; the phase is then reapplied so the result is a complex image
    comparable with the other methods.
    """
    phasor = lowres_phase(y).unit()
    w = homodyne_weights(y.mask)
    img = ifft2c(y.samples * w)
    return np.real(img * np.conj(phasor)) * phasor


def conjugate_symmetry_oracle(y: KSpaceData) -> np.ndarray:
    """Exact PF completion for real-valued images.

    Each unacquired PE line is filled with the complex conjugate of its
    point-mirrored counterpart (mirroring both axes), which reproduces
    the missing data exactly when the underlying image is real. On
    complex images the result is only a reference point, not a
    reconstruction.
    """
    k = np.asarray(y.samples, dtype=np.complex128)
    mi = conj_mirror_indices(k.shape[-2])
    mj = conj_mirror_indices(k.shape[-1])
    mirrored = np.conj(k[..., mi[:, None], mj[None, :]])
    missing = ~y.mask.array()
    filled = k.copy()
    filled[..., missing] = mirrored[..., missing]
    return ifft2c(filled)
