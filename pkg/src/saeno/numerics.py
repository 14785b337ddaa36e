"""Spectral and circular-convolution kernels on periodic 1-D grids.

Conventions used everywhere in the package:

* forward DFT is unnormalised, ``X[k] = sum_n x[n] exp(-2j*pi*k*n/M)``;
* the inverse carries the ``1/M`` factor;
* real signals are stored as half spectra (indices ``0..M//2``);
* convolution and correlation are circular on the grid.

Array helpers (``rdft``, ``irdft``, ``circular_convolve`` ...) operate on the
last axis and broadcast over leading axes. ``dft_forward``/``dft_inverse``
wrap single signals in a validated :class:`Spectrum`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "Spectrum",
    "half_length",
    "rdft",
    "irdft",
    "dft_forward",
    "dft_inverse",
    "circular_convolve",
    "circular_correlate",
    "zero_pad",
    "mode_mask",
    "truncate_modes",
    "band_limited_resample",
    "resample_half_spectrum",
]

_HERMITIAN_TOL = 1e-12


def half_length(resolution: int) -> int:
    return resolution // 2 + 1


def rdft(a, axis=-1):
    """Half-spectrum forward DFT of a real array."""
    return np.fft.rfft(np.asarray(a, dtype=np.float64), axis=axis)


def irdft(c, resolution, axis=-1):
    """Inverse of :func:`rdft` for a grid of ``resolution`` points."""
    return np.fft.irfft(c, n=resolution, axis=axis)


@dataclass(frozen=True)
class Spectrum:
    """Half spectrum of a real signal on ``resolution`` grid points."""

    coeffs: np.ndarray
    resolution: int

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.ndim != 1:
            raise InvalidArgumentError("spectrum coefficients must be 1-D")
        if self.resolution < 1:
            raise InvalidArgumentError(f"resolution must be >= 1, got {self.resolution}")
        if coeffs.shape[0] != half_length(self.resolution):
            raise InvalidArgumentError(
                f"expected {half_length(self.resolution)} coefficients for "
                f"resolution {self.resolution}, got {coeffs.shape[0]}"
            )
        object.__setattr__(self, "coeffs", coeffs)

    def check_hermitian(self):
        scale = max(1.0, float(np.max(np.abs(self.coeffs))))
        if abs(self.coeffs[0].imag) > _HERMITIAN_TOL * scale:
            raise InvalidArgumentError("DC coefficient has a nonzero imaginary part")
        if self.resolution % 2 == 0 and abs(self.coeffs[-1].imag) > _HERMITIAN_TOL * scale:
            raise InvalidArgumentError("Nyquist coefficient has a nonzero imaginary part")


def dft_forward(signal) -> Spectrum:
    s = np.asarray(signal, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] == 0:
        raise InvalidArgumentError("dft_forward needs a non-empty 1-D signal")
    return Spectrum(rdft(s), s.shape[0])


def dft_inverse(spec: Spectrum) -> np.ndarray:
    spec.check_hermitian()
    return irdft(spec.coeffs, spec.resolution)


def _check_same_length(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidArgumentError(
            f"grid length mismatch: {a.shape[-1]} vs {b.shape[-1]}"
        )
    if a.shape[-1] == 0:
        raise InvalidArgumentError("empty grid")
    return a, b


def circular_convolve(a, b):
    """``(a*b)[n] = sum_m a[m] b[(n-m) mod M]`` along the last axis."""
    a, b = _check_same_length(a, b)
    n = a.shape[-1]
    return irdft(rdft(a) * rdft(b), n)


def circular_correlate(a, b):
    """``(a⋆b)[n] = sum_m a[(n+m) mod M] b[m]`` along the last axis."""
    a, b = _check_same_length(a, b)
    n = a.shape[-1]
    return irdft(rdft(a) * np.conj(rdft(b)), n)


def zero_pad(kernel, resolution):
    """Place a support-``h`` kernel at the start of a length-``resolution`` grid."""
    kernel = np.asarray(kernel, dtype=np.float64)
    h = kernel.shape[-1]
    if h > resolution:
        raise InvalidArgumentError(f"kernel support {h} exceeds grid length {resolution}")
    out = np.zeros(kernel.shape[:-1] + (resolution,))
    out[..., :h] = kernel
    return out


def mode_mask(resolution, modes_kept):
    """Boolean mask over the half spectrum keeping indices ``< modes_kept``."""
    n_half = half_length(resolution)
    if not 1 <= modes_kept <= n_half:
        raise InvalidArgumentError(
            f"modes_kept must lie in [1, {n_half}] for resolution {resolution}, got {modes_kept}"
        )
    mask = np.zeros(n_half, dtype=bool)
    mask[:modes_kept] = True
    return mask


def truncate_modes(spec: Spectrum, modes_kept: int) -> Spectrum:
    mask = mode_mask(spec.resolution, modes_kept)
    return Spectrum(np.where(mask, spec.coeffs, 0.0), spec.resolution)


def resample_half_spectrum(coeffs, resolution, new_resolution):
    """Re-embed half-spectrum coefficients on a finer grid.

    Coefficients keep their values; new high modes are zero. An even-grid
    Nyquist coefficient becomes an interior mode on the finer grid and is
    halved so both of its conjugate images carry half the energy.
    """
    coeffs = np.asarray(coeffs)
    if new_resolution < resolution:
        raise InvalidArgumentError("only upsampling is supported")
    n_old = half_length(resolution)
    if coeffs.shape[-1] != n_old:
        raise InvalidArgumentError("coefficient length does not match resolution")
    out = np.zeros(coeffs.shape[:-1] + (half_length(new_resolution),), dtype=np.complex128)
    out[..., :n_old] = coeffs
    if resolution % 2 == 0 and new_resolution > resolution:
        out[..., n_old - 1] *= 0.5
    return out


def band_limited_resample(signal, factor: int):
    """Trigonometric interpolation of a periodic signal onto ``factor`` times more points.

    Operates on the last axis. Values at the original grid points are kept:
    ``out[..., factor*n] == signal[..., n]``.
    """
    if int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"upsampling factor must be a positive integer, got {factor}")
    factor = int(factor)
    s = np.asarray(signal, dtype=np.float64)
    if factor == 1:
        return s.copy()
    m = s.shape[-1]
    coeffs = resample_half_spectrum(rdft(s), m, factor * m)
    return irdft(factor * coeffs, factor * m)
