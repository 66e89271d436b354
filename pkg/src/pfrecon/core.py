"""Measurement model for partial-Fourier (PF) sampled MRI.

Images are complex arrays of shape (..., H, W) where H is the fully
sampled readout axis and W the phase-encode (PE) axis. K-space uses a
centered representation (DC at index W//2 along PE) and all transforms
are orthonormal, so the adjoint of the forward operator equals its
inverse and data consistency reduces to a mask blend in k-space.

PF sampling keeps the first ``ceil(pff * W)`` lines in centered PE
ordering, which always covers the center line for pff > 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

PffLike = Union[Fraction, float, int, str]


class UnsupportedFactorError(ValueError):
    """PF factor outside the supported range (1/2, 1]."""


def as_pff(value: PffLike) -> Fraction:
    """Coerce a PF factor to an exact Fraction.

    Strings like "5/8" and floats with short decimal forms (0.625)
    convert exactly; this keeps ceil(pff * W) free of float rounding.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")


def fft2c(img: np.ndarray) -> np.ndarray:
    """Centered, orthonormal 2-D FFT over the last two axes."""
    img = np.asarray(img)
    if img.ndim < 2:
        raise ValueError("expected at least a 2-D array")
    _check_finite(img, "image")
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(img, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def ifft2c(k) -> np.ndarray:
    """Inverse of :func:`fft2c`; equals the adjoint under the ortho norm.

    Accepts a bare array or any sample container (KSpaceData,
    RepetitionSet).
    """
    k = np.asarray(getattr(k, "samples", k))
    if k.ndim < 2:
        raise ValueError("expected at least a 2-D array")
    _check_finite(k, "k-space")
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def conj_mirror_indices(n: int) -> np.ndarray:
    """Index of each centered-frequency bin's conjugate partner.

    For a real-valued image, k[..., i, j] == conj(k[..., mi[i], mj[j]]).
    Even grids map index 0 (the unpaired Nyquist bin) to itself.
    """
    idx = np.arange(n)
    if n % 2 == 0:
        return (n - idx) % n
    return n - 1 - idx


@dataclass(frozen=True)
class SamplingMask:
    """Binary PF mask along the PE axis.

    The acquired set is the contiguous range [0, acquired_count) in
    centered index ordering; the symmetric band [sym_lo, sym_hi) is the
    part whose conjugate mirror is also acquired.
    """

    pe_size: int
    pff: Fraction = field(default=Fraction(1))

    def __post_init__(self):
        object.__setattr__(self, "pff", as_pff(self.pff))
        if self.pe_size < 8:
            raise ValueError(f"pe_size must be >= 8, got {self.pe_size}")
        if not (Fraction(1, 2) < self.pff <= 1):
            raise UnsupportedFactorError(
                f"PF factor must lie in (1/2, 1], got {self.pff}"
            )

    @property
    def acquired_count(self) -> int:
        return math.ceil(self.pff * self.pe_size)

    @property
    def sym_lo(self) -> int:
        return self.pe_size - self.acquired_count

    @property
    def sym_hi(self) -> int:
        return self.acquired_count

    @property
    def is_full(self) -> bool:
        return self.acquired_count == self.pe_size

    def array(self) -> np.ndarray:
        """Boolean mask of shape (pe_size,), True on acquired lines."""
        m = np.zeros(self.pe_size, dtype=bool)
        m[: self.acquired_count] = True
        return m


def make_pf_mask(pe_size: int, pff: PffLike) -> SamplingMask:
    """Build a PF mask keeping ceil(pff * pe_size) centered-low lines."""
    return SamplingMask(pe_size=pe_size, pff=as_pff(pff))


@dataclass(frozen=True)
class KSpaceData:
    """Measured k-space: complex samples with zeros on non-acquired lines."""

    samples: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        s = np.asarray(self.samples)
        object.__setattr__(self, "samples", s)
        if s.ndim < 2:
            raise ValueError("samples must have shape (..., H, W)")
        if s.shape[-1] != self.mask.pe_size:
            raise ValueError(
                f"PE size mismatch: samples have {s.shape[-1]} lines, "
                f"mask expects {self.mask.pe_size}"
            )
        _check_finite(s, "k-space samples")
        if not np.all(s[..., ~self.mask.array()] == 0):
            raise ValueError("non-acquired PE lines must be exactly zero")

    @property
    def shape(self):
        return self.samples.shape


@dataclass(frozen=True)
class RepetitionSet:
    """Stack of B >= 1 repeated acquisitions of one slice.

    samples has shape (B, H, W); all repetitions share the mask. The
    collection is unordered: consumers must be permutation-equivariant
    (or -invariant) in the leading axis.
    """

    samples: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        s = np.asarray(self.samples)
        object.__setattr__(self, "samples", s)
        if s.ndim != 3 or s.shape[0] < 1:
            raise ValueError("samples must have shape (B, H, W) with B >= 1")
        if s.shape[-1] != self.mask.pe_size:
            raise ValueError(
                f"PE size mismatch: samples have {s.shape[-1]} lines, "
                f"mask expects {self.mask.pe_size}"
            )
        _check_finite(s, "repetition samples")
        if not np.all(s[..., ~self.mask.array()] == 0):
            raise ValueError("non-acquired PE lines must be exactly zero")

    @classmethod
    def from_items(cls, items) -> "RepetitionSet":
        items = list(items)
        if not items:
            raise ValueError("repetition set must not be empty")
        mask = items[0].mask
        for it in items[1:]:
            if it.mask != mask:
                raise ValueError("all repetitions must share one sampling mask")
            if it.samples.shape != items[0].samples.shape:
                raise ValueError("all repetitions must share one shape")
        return cls(samples=np.stack([it.samples for it in items]), mask=mask)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    def item(self, b: int) -> KSpaceData:
        return KSpaceData(samples=self.samples[b], mask=self.mask)

    def permuted(self, order) -> "RepetitionSet":
        return RepetitionSet(samples=self.samples[np.asarray(order)], mask=self.mask)


def forward(
    img: np.ndarray,
    mask: SamplingMask,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> KSpaceData:
    """Apply the PF acquisition model: FFT, sample, optionally add noise.

    Noise is complex Gaussian with total standard deviation
    ``noise_sigma`` (i.e. sigma/sqrt(2) per real/imaginary component),
    added on the acquired lines only.
    """
    img = np.asarray(img)
    if img.shape[-1] != mask.pe_size:
        raise ValueError(
            f"image PE size {img.shape[-1]} does not match mask {mask.pe_size}"
        )
    k = fft2c(img)
    m = mask.array()
    k[..., ~m] = 0
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng()
        shape = k[..., m].shape
        noise = (noise_sigma / math.sqrt(2.0)) * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        )
        k[..., m] += noise
    return KSpaceData(samples=k, mask=mask)


def data_consistency(z: np.ndarray, y: KSpaceData, lambda_k: float = 0.0) -> np.ndarray:
    """Proximal data-consistency step in k-space.

    With lambda_k = 0 the acquired lines of z are replaced by the
    measurements (hard projection); with lambda_k > 0 they become
    (lambda_k * k_z + y) / (1 + lambda_k). Non-acquired lines are always
    kept from z.
    """
    if lambda_k < 0:
        raise ValueError(f"lambda_k must be non-negative, got {lambda_k}")
    z = np.asarray(z)
    if z.shape[-2:] != y.samples.shape[-2:]:
        raise ValueError("estimate and measurements have incompatible shapes")
    kz = fft2c(z)
    m = y.mask.array()
    if lambda_k == 0:
        kz[..., m] = y.samples[..., m]
    else:
        kz[..., m] = (lambda_k * kz[..., m] + y.samples[..., m]) / (1.0 + lambda_k)
    return ifft2c(kz)
