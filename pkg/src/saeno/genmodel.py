"""Samplers for the dense and convolutional sparse generative models.

Dictionaries and codes are plain float64 arrays:

* dense dictionary ``(m, p)`` with unit-norm columns, code ``(p,)``, sample ``(m,)``;
* convolutional kernel bank ``(C, channels, h)`` with unit-norm kernels,
  code ``(C, M)`` (one feature map per kernel), sample ``(channels, M)``.

Every random draw comes from a generator seeded by ``(seed, stream, index)``
so a sample's content does not depend on how many others were drawn before
it, which keeps serial and parallel generation identical.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidArgumentError, ResourceLimitError
from .numerics import circular_convolve, irdft, rdft, zero_pad

DATASET_FORMAT_VERSION = 1
DEFAULT_MAX_ELEMENTS = 1 << 28

_DICT_STREAM = 0
_SAMPLE_STREAM = 1


@dataclass(frozen=True)
class DenseModelSpec:
    m: int
    p: int
    k: int
    amp_mean: float = 15.0
    amp_std: float = 1.0
    seed: int = 0

    regime = "dense"

    def validate(self):
        if self.m < 1:
            raise InvalidArgumentError(f"m must be >= 1, got {self.m}")
        if self.p <= self.m:
            raise InvalidArgumentError(
                f"dictionary must be overcomplete (p > m), got m={self.m}, p={self.p}"
            )
        if self.k < 0:
            raise InvalidArgumentError(f"k must be >= 0, got {self.k}")
        if self.k > self.p:
            raise InvalidArgumentError(f"sparsity k={self.k} exceeds dictionary size p={self.p}")
        if self.amp_std < 0:
            raise InvalidArgumentError("amp_std must be >= 0")

    def to_dict(self):
        return {"regime": self.regime, **asdict(self)}


@dataclass(frozen=True)
class ConvModelSpec:
    channels: int
    resolution: int
    num_kernels: int
    support: int
    per_map_sparsity: int = 1
    amp_mean: float = 15.0
    amp_std: float = 1.0
    smoothness: Optional[float] = None
    seed: int = 0

    regime = "conv"

    def validate(self):
        if self.channels < 1 or self.num_kernels < 1:
            raise InvalidArgumentError("channels and num_kernels must be >= 1")
        if self.resolution < 1:
            raise InvalidArgumentError("resolution must be >= 1")
        if not 1 <= self.support:
            raise InvalidArgumentError("kernel support must be >= 1")
        if self.support > self.resolution:
            raise InvalidArgumentError(
                f"kernel support h={self.support} exceeds resolution M={self.resolution}"
            )
        if self.per_map_sparsity < 0:
            raise InvalidArgumentError("per_map_sparsity must be >= 0")
        if self.per_map_sparsity > self.resolution:
            raise InvalidArgumentError(
                f"per_map_sparsity={self.per_map_sparsity} exceeds resolution {self.resolution}"
            )
        if self.smoothness is not None and not 0.0 < self.smoothness <= 1.0:
            raise InvalidArgumentError(f"smoothness must lie in (0, 1], got {self.smoothness}")
        if self.amp_std < 0:
            raise InvalidArgumentError("amp_std must be >= 0")

    @property
    def cutoff_mode(self) -> int:
        """Highest half-spectrum index left nonzero by the smoothing filter."""
        nyq = self.resolution // 2
        if self.smoothness is None:
            return nyq
        return min(nyq, math.ceil(self.smoothness * nyq))

    def to_dict(self):
        return {"regime": self.regime, **asdict(self)}


ModelSpec = Union[DenseModelSpec, ConvModelSpec]


def spec_from_dict(d) -> ModelSpec:
    d = dict(d)
    regime = d.pop("regime")
    cls = {"dense": DenseModelSpec, "conv": ConvModelSpec}.get(regime)
    if cls is None:
        raise InvalidArgumentError(f"unknown regime {regime!r}")
    return cls(**d)


def _rng(seed, stream, index=0):
    return np.random.default_rng([int(seed), stream, int(index)])


def _normalize_atoms(atoms, axes):
    norms = np.sqrt(np.sum(atoms**2, axis=axes, keepdims=True))
    return atoms / norms


def make_dense_dictionary(spec: DenseModelSpec) -> np.ndarray:
    spec.validate()
    d = _rng(spec.seed, _DICT_STREAM).standard_normal((spec.m, spec.p))
    return _normalize_atoms(d, axes=0)


def make_conv_dictionary(spec: ConvModelSpec) -> np.ndarray:
    """Kernel bank ``(C, channels, h)``, each kernel unit norm over all entries.

    With ``smoothness < 1`` the kernels are white noise on the full grid,
    low-pass filtered to half-spectrum indices ``<= cutoff_mode`` and then
    cropped to the first ``h`` samples. The result is exactly band-limited
    when ``h == M``; shorter supports are only approximately so.
    """
    spec.validate()
    rng = _rng(spec.seed, _DICT_STREAM)
    shape = (spec.num_kernels, spec.channels)
    if spec.smoothness is None or spec.smoothness >= 1.0:
        kernels = rng.standard_normal(shape + (spec.support,))
    else:
        noise = rng.standard_normal(shape + (spec.resolution,))
        coeffs = rdft(noise)
        coeffs[..., spec.cutoff_mode + 1:] = 0.0
        kernels = irdft(coeffs, spec.resolution)[..., : spec.support]
    return _normalize_atoms(kernels, axes=(1, 2))


def sample_dense_code(spec: DenseModelSpec, rng) -> np.ndarray:
    if spec.k > spec.p:
        raise InvalidArgumentError(f"sparsity k={spec.k} exceeds dictionary size p={spec.p}")
    z = np.zeros(spec.p)
    if spec.k == 0:
        return z
    support = rng.choice(spec.p, size=spec.k, replace=False)
    z[support] = rng.normal(spec.amp_mean, spec.amp_std, size=spec.k)
    return z


def sample_conv_code(spec: ConvModelSpec, rng) -> np.ndarray:
    """One randomly chosen map receives ``per_map_sparsity`` spikes; the rest stay zero."""
    k = spec.per_map_sparsity
    if k > spec.resolution:
        raise InvalidArgumentError(f"per_map_sparsity={k} exceeds resolution {spec.resolution}")
    z = np.zeros((spec.num_kernels, spec.resolution))
    if k == 0:
        return z
    c = rng.integers(spec.num_kernels)
    positions = rng.choice(spec.resolution, size=k, replace=False)
    z[c, positions] = rng.normal(spec.amp_mean, spec.amp_std, size=k)
    return z


def synthesize(code, dictionary) -> np.ndarray:
    """Noiseless synthesis ``x = D z`` (dense) or ``x = sum_c D_c * z_c`` (conv)."""
    code = np.asarray(code, dtype=np.float64)
    dictionary = np.asarray(dictionary, dtype=np.float64)
    if dictionary.ndim == 2:
        if code.shape != (dictionary.shape[1],):
            raise InvalidArgumentError(
                f"code shape {code.shape} incompatible with dictionary {dictionary.shape}"
            )
        return dictionary @ code
    if dictionary.ndim == 3:
        if code.ndim != 2 or code.shape[0] != dictionary.shape[0]:
            raise InvalidArgumentError(
                f"code shape {code.shape} incompatible with kernel bank {dictionary.shape}"
            )
        resolution = code.shape[1]
        padded = zero_pad(dictionary, resolution)
        return circular_convolve(padded, code[:, None, :]).sum(axis=0)
    raise InvalidArgumentError(f"unsupported dictionary rank {dictionary.ndim}")


@dataclass
class Dataset:
    """Ground-truth dictionary plus ``N`` (code, sample) pairs."""

    samples: np.ndarray
    codes: np.ndarray
    dictionary: np.ndarray
    model_spec: ModelSpec
    format_version: int = DATASET_FORMAT_VERSION
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def regime(self):
        return self.model_spec.regime

    def subset(self, n):
        return Dataset(self.samples[:n], self.codes[:n], self.dictionary, self.model_spec,
                       self.format_version, dict(self.meta))


def make_dictionary(spec: ModelSpec) -> np.ndarray:
    if spec.regime == "dense":
        return make_dense_dictionary(spec)
    return make_conv_dictionary(spec)


def sample_code(spec: ModelSpec, rng) -> np.ndarray:
    if spec.regime == "dense":
        return sample_dense_code(spec, rng)
    return sample_conv_code(spec, rng)


def generate_dataset(spec: ModelSpec, n: int, max_elements: int = DEFAULT_MAX_ELEMENTS) -> Dataset:
    spec.validate()
    if n < 1:
        raise InvalidArgumentError(f"sample count must be >= 1, got {n}")
    if spec.regime == "dense":
        per_sample = spec.m + spec.p
    else:
        per_sample = spec.resolution * (spec.channels + spec.num_kernels)
    if n * per_sample > max_elements:
        raise ResourceLimitError(
            f"dataset would hold {n * per_sample} values, above the cap of {max_elements}"
        )
    dictionary = make_dictionary(spec)
    codes = np.stack([sample_code(spec, _rng(spec.seed, _SAMPLE_STREAM, i)) for i in range(n)])
    samples = np.stack([synthesize(z, dictionary) for z in codes])
    return Dataset(samples, codes, dictionary, spec)
