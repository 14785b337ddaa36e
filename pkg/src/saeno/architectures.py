"""Encoders and decoders for the dense, convolutional and Fourier-operator SAEs.

All three families share one unrolled encoder: ``T`` proximal-gradient steps
on ``0.5 * ||x' - decode(z)||^2`` followed by a JumpReLU, starting from
``z_0 = 0``. ``x'`` is the lifted input ``L x`` when the model carries a
:class:`LiftingPair`; the decoder then projects back with ``P``.

Shapes
------
dense   dictionary ``(d, p)``, input ``(m,)``, code ``(p,)``
conv    kernels ``(C, d, h)``, input ``(channels, M)``, code ``(C, M)``
fno     weights ``(C, d, M//2 + 1)`` complex, input/code as for conv

``d`` is the lifted width when lifting is present and the input width
otherwise. Lifting acts on the channel axis at every grid point.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, NumericDivergenceError
from .numerics import (
    circular_convolve,
    circular_correlate,
    half_length,
    irdft,
    mode_mask,
    rdft,
    resample_half_spectrum,
    zero_pad,
)

NONLINEARITIES = ("jump_relu", "shallow_relu")
DECODER_NORMS = ("unit", "inv_sqrt")


@dataclass
class EncoderConfig:
    depth: int = 50
    step: float = 0.2
    threshold: float = 0.5
    nonlinearity: str = "jump_relu"
    two_sided: bool = False

    def validate(self):
        if self.depth < 1:
            raise InvalidArgumentError(f"encoder depth must be >= 1, got {self.depth}")
        if not self.step > 0:
            raise InvalidArgumentError(f"encoder step must be > 0, got {self.step}")
        if self.threshold < 0:
            raise InvalidArgumentError(f"threshold must be >= 0, got {self.threshold}")
        if self.nonlinearity not in NONLINEARITIES:
            raise InvalidArgumentError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass
class LiftingPair:
    """Lifting ``L`` (d_lift x m_in) and projection ``P`` (m_in x d_lift)."""

    L: np.ndarray
    P: np.ndarray
    tied: bool = True

    def __post_init__(self):
        self.L = np.array(self.L, dtype=np.float64)
        self.P = np.array(self.P, dtype=np.float64)
        self.validate()

    @classmethod
    def tied_to(cls, L):
        L = np.array(L, dtype=np.float64)
        return cls(L, L.T.copy(), tied=True)

    @property
    def d_lift(self):
        return self.L.shape[0]

    @property
    def m_in(self):
        return self.L.shape[1]

    def validate(self):
        if self.L.ndim != 2 or self.P.ndim != 2:
            raise InvalidArgumentError("lifting and projection must be matrices")
        if self.P.shape != (self.L.shape[1], self.L.shape[0]):
            raise InvalidArgumentError(
                f"projection shape {self.P.shape} does not match lifting {self.L.shape}"
            )
        if self.tied and not np.array_equal(self.P, self.L.T):
            raise InvalidArgumentError("tied lifting pair requires P == L.T")

    def set_projection(self, P):
        self.P = np.array(P, dtype=np.float64)
        if self.tied:
            self.L = self.P.T.copy()


def orthonormal_lift(d_lift, m_in, rng) -> np.ndarray:
    """Random ``(d_lift, m_in)`` matrix with orthonormal columns.

    Householder QR of a Gaussian matrix, followed by one more QR pass and a
    sign fix so the draw is a deterministic function of ``rng``.
    """
    if d_lift < m_in:
        raise InvalidArgumentError(f"lifted width {d_lift} is smaller than input width {m_in}")
    q, r = np.linalg.qr(rng.standard_normal((d_lift, m_in)))
    q, r2 = np.linalg.qr(q)
    signs = np.sign(np.diag(r) * np.diag(r2))
    signs[signs == 0] = 1.0
    return q * signs


def lift(pair: Optional[LiftingPair], x):
    x = np.asarray(x, dtype=np.float64)
    if pair is None:
        return x
    if x.shape[0] != pair.m_in:
        raise InvalidArgumentError(
            f"input has {x.shape[0]} channels, lifting expects {pair.m_in}"
        )
    return pair.L @ x


def project(pair: Optional[LiftingPair], y):
    y = np.asarray(y, dtype=np.float64)
    if pair is None:
        return y
    if y.shape[0] != pair.d_lift:
        raise InvalidArgumentError(
            f"lifted signal has {y.shape[0]} channels, projection expects {pair.d_lift}"
        )
    return pair.P @ y


class _Model:
    def copy(self):
        return copy.deepcopy(self)

    def _check_lifting(self, width):
        if self.lifting is not None and self.lifting.d_lift != width:
            raise InvalidArgumentError(
                f"dictionary width {width} does not match lifted width {self.lifting.d_lift}"
            )

    @property
    def input_width(self):
        if self.lifting is not None:
            return self.lifting.m_in
        return self.width


@dataclass
class DenseSAE(_Model):
    dictionary: np.ndarray
    encoder: EncoderConfig
    lifting: Optional[LiftingPair] = None
    bias_pre: Optional[np.ndarray] = None
    bias_enc: Optional[np.ndarray] = None

    regime = "dense"

    def __post_init__(self):
        self.dictionary = np.array(self.dictionary, dtype=np.float64)
        if self.dictionary.ndim != 2:
            raise InvalidArgumentError("dense dictionary must be a matrix")
        self.encoder.validate()
        self._check_lifting(self.dictionary.shape[0])

    @property
    def width(self):
        return self.dictionary.shape[0]

    @property
    def n_atoms(self):
        return self.dictionary.shape[1]


@dataclass
class ConvSAE(_Model):
    kernels: np.ndarray
    encoder: EncoderConfig
    lifting: Optional[LiftingPair] = None

    regime = "conv"

    def __post_init__(self):
        self.kernels = np.array(self.kernels, dtype=np.float64)
        if self.kernels.ndim != 3:
            raise InvalidArgumentError("kernel bank must have shape (C, channels, h)")
        self.encoder.validate()
        self._check_lifting(self.kernels.shape[1])

    @property
    def width(self):
        return self.kernels.shape[1]

    @property
    def support(self):
        return self.kernels.shape[2]

    @property
    def n_atoms(self):
        return self.kernels.shape[0]

    def padded_kernels(self, resolution):
        if self.support > resolution:
            raise InvalidArgumentError(
                f"kernel support {self.support} exceeds grid resolution {resolution}"
            )
        return zero_pad(self.kernels, resolution)


@dataclass
class FnoSAE(_Model):
    """Spectral SAE with per-mode complex weights on the half spectrum.

    The decoder is ``x_hat = nu * F^-1(sum_c W_c * F z_c)``. The spatial
    kernel represented by ``W_c`` is ``nu * F^-1 W_c``, so a kernel bank
    ``D`` corresponds to ``W = F D / nu``.
    """

    weights: np.ndarray
    resolution: int
    modes_kept: int
    encoder: EncoderConfig
    decoder_norm: str = "inv_sqrt"
    lifting: Optional[LiftingPair] = None

    regime = "fno"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.complex128)
        if self.weights.ndim != 3:
            raise InvalidArgumentError("spectral weights must have shape (C, channels, M//2+1)")
        if self.weights.shape[2] != half_length(self.resolution):
            raise InvalidArgumentError(
                f"weights hold {self.weights.shape[2]} modes, resolution {self.resolution} "
                f"needs {half_length(self.resolution)}"
            )
        if self.decoder_norm not in DECODER_NORMS:
            raise InvalidArgumentError(f"unknown decoder_norm {self.decoder_norm!r}")
        self.encoder.validate()
        self.weights[..., ~self.mask] = 0.0
        self._check_lifting(self.weights.shape[1])

    @classmethod
    def from_kernels(cls, kernels, resolution, modes_kept=None, encoder=None,
                     decoder_norm="inv_sqrt", lifting=None):
        kernels = np.asarray(kernels, dtype=np.float64)
        if modes_kept is None:
            modes_kept = half_length(resolution)
        nu = _nu(decoder_norm, resolution)
        weights = rdft(zero_pad(kernels, resolution)) / nu
        return cls(weights, resolution, modes_kept, encoder or EncoderConfig(),
                   decoder_norm, lifting)

    @property
    def nu(self):
        return _nu(self.decoder_norm, self.resolution)

    @property
    def mask(self):
        return mode_mask(self.resolution, self.modes_kept)

    @property
    def full_modes(self):
        return self.modes_kept == half_length(self.resolution)

    @property
    def width(self):
        return self.weights.shape[1]

    @property
    def n_atoms(self):
        return self.weights.shape[0]

    def weights_at(self, resolution):
        """Weights applied on a grid of ``resolution`` points (retained modes unchanged)."""
        if resolution == self.resolution:
            return self.weights
        return resample_half_spectrum(self.weights, self.resolution, resolution)

    def spatial_kernels(self):
        """Spatial image ``nu * F^-1 W`` with shape ``(C, d, M)``."""
        return self.nu * irdft(self.weights, self.resolution)

    def set_spatial_kernels(self, kernels):
        self.weights = rdft(kernels) / self.nu
        self.weights[..., ~self.mask] = 0.0


def _nu(decoder_norm, resolution):
    return 1.0 if decoder_norm == "unit" else 1.0 / np.sqrt(resolution)


def jump_relu(v, threshold, two_sided=False):
    """``v * 1[v > threshold]`` (or ``1[|v| > threshold]`` when two-sided)."""
    v = np.asarray(v, dtype=np.float64)
    keep = np.abs(v) > threshold if two_sided else v > threshold
    return np.where(keep, v, 0.0)


def _threshold(cfg: EncoderConfig, v):
    return jump_relu(v, cfg.threshold, cfg.two_sided)


def _check_finite(z, t):
    if not np.all(np.isfinite(z)):
        raise NumericDivergenceError(f"encoder iterate {t} is not finite", iteration=t)


def _unroll(cfg, z0, gradient, trace):
    z = z0
    iterates = []
    for t in range(1, cfg.depth + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            z = _threshold(cfg, z - cfg.step * gradient(z))
        _check_finite(z, t)
        if trace:
            iterates.append(z)
    return (z, iterates) if trace else z


def encode_dense(model: DenseSAE, x, trace=False):
    """Unrolled JumpReLU encoder ``z_t = JR(z - a D^T(D z - x'))``.

    Returns ``z_T``, or ``(z_T, [z_1, ..., z_T])`` with ``trace=True``.
    """
    x_in = lift(model.lifting, x)
    D = model.dictionary
    if x_in.shape != (D.shape[0],):
        raise InvalidArgumentError(f"input shape {x_in.shape} incompatible with dictionary {D.shape}")
    return _unroll(model.encoder, np.zeros(D.shape[1]),
                   lambda z: D.T @ (D @ z - x_in), trace)


def encode_shallow_relu(model: DenseSAE, x):
    if model.bias_pre is None or model.bias_enc is None:
        raise InvalidArgumentError("shallow ReLU encoder needs bias_pre and bias_enc")
    x_in = lift(model.lifting, x)
    W = model.dictionary
    return np.maximum(W.T @ (x_in - model.bias_pre) + model.bias_enc, 0.0)


def encode_conv(model: ConvSAE, x, trace=False):
    """Convolutional unrolled encoder built from circular convolution/correlation."""
    x_in = lift(model.lifting, x)
    if x_in.ndim != 2 or x_in.shape[0] != model.width:
        raise InvalidArgumentError(
            f"input shape {np.shape(x)} incompatible with kernel bank {model.kernels.shape}"
        )
    resolution = x_in.shape[1]
    K = model.padded_kernels(resolution)

    def gradient(z):
        residual = circular_convolve(K, z[:, None, :]).sum(axis=0) - x_in
        return circular_correlate(residual[None, :, :], K).sum(axis=1)

    return _unroll(model.encoder, np.zeros((model.n_atoms, resolution)), gradient, trace)


def encode_spectral(model: FnoSAE, x, trace=False):
    """Spectral-domain unrolled encoder.

    Each step subtracts ``a * nu * F^-1[(nu sum_i W_i F z_i - F x') conj(W_c)]``.
    Inputs on a finer grid than the training resolution use the retained
    modes unchanged and zero for every new mode.
    """
    x_in = lift(model.lifting, x)
    if x_in.ndim != 2 or x_in.shape[0] != model.width:
        raise InvalidArgumentError(
            f"input shape {np.shape(x)} incompatible with weights {model.weights.shape}"
        )
    resolution = x_in.shape[1]
    W = model.weights_at(resolution)
    W_conj = np.conj(W)
    nu = model.nu
    X = rdft(x_in)

    def gradient(z):
        error = nu * np.einsum("cdk,ck->dk", W, rdft(z)) - X
        return irdft(nu * np.einsum("dk,cdk->ck", error, W_conj), resolution)

    return _unroll(model.encoder, np.zeros((model.n_atoms, resolution)), gradient, trace)


def encode(model, x, trace=False):
    if model.regime == "dense":
        if model.encoder.nonlinearity == "shallow_relu":
            z = encode_shallow_relu(model, x)
            return (z, [z]) if trace else z
        return encode_dense(model, x, trace)
    if model.regime == "conv":
        return encode_conv(model, x, trace)
    return encode_spectral(model, x, trace)


def decode_lifted(model, code):
    """Reconstruction in the model's own (possibly lifted) space, before ``P``."""
    code = np.asarray(code, dtype=np.float64)
    if model.regime == "dense":
        if code.shape != (model.n_atoms,):
            raise InvalidArgumentError(f"code shape {code.shape} incompatible with {model.n_atoms} atoms")
        return model.dictionary @ code
    if code.ndim != 2 or code.shape[0] != model.n_atoms:
        raise InvalidArgumentError(f"code shape {code.shape} incompatible with {model.n_atoms} kernels")
    resolution = code.shape[1]
    if model.regime == "conv":
        K = model.padded_kernels(resolution)
        return circular_convolve(K, code[:, None, :]).sum(axis=0)
    W = model.weights_at(resolution)
    return model.nu * irdft(np.einsum("cdk,ck->dk", W, rdft(code)), resolution)


def decode(model, code):
    x_hat = project(model.lifting, decode_lifted(model, code))
    if model.regime == "dense" and model.encoder.nonlinearity == "shallow_relu" \
            and model.bias_pre is not None:
        x_hat = x_hat + project(model.lifting, model.bias_pre)
    return x_hat


def effective_atoms(model):
    """Dictionary expressed in the original (unlifted, spatial) space.

    Dense models give ``(m, p)``, conv models ``(C, channels, h)`` and
    spectral models their spatial image ``(C, channels, M)``.
    """
    if model.regime == "dense":
        D = model.dictionary
        return D if model.lifting is None else model.lifting.P @ D
    K = model.kernels if model.regime == "conv" else model.spatial_kernels()
    if model.lifting is None:
        return K
    return np.einsum("md,cdh->cmh", model.lifting.P, K)


def unlifted(model):
    """Equivalent model without lifting, built from ``P`` times the lifted dictionary."""
    out = model.copy()
    if model.lifting is None:
        return out
    P = model.lifting.P
    out.lifting = None
    if model.regime == "dense":
        out.dictionary = P @ model.dictionary
        if model.bias_pre is not None:
            out.bias_pre = P @ model.bias_pre
    elif model.regime == "conv":
        out.kernels = np.einsum("md,cdh->cmh", P, model.kernels)
    else:
        out.weights = np.einsum("md,cdk->cmk", P, model.weights)
    return out
