"""Sparse model recovery with unrolled sparse autoencoders and their
lifted, convolutional and Fourier-operator variants."""

from .architectures import (
    ConvSAE,
    DenseSAE,
    EncoderConfig,
    FnoSAE,
    LiftingPair,
    decode,
    encode,
)
from .genmodel import ConvModelSpec, Dataset, DenseModelSpec, generate_dataset
from .metrics import RecoveryReport, dictionary_error
from .training import ArchConfig, TrainConfig, TrainState, fit

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "ConvModelSpec",
    "ConvSAE",
    "Dataset",
    "DenseModelSpec",
    "DenseSAE",
    "EncoderConfig",
    "FnoSAE",
    "LiftingPair",
    "RecoveryReport",
    "TrainConfig",
    "TrainState",
    "decode",
    "dictionary_error",
    "encode",
    "fit",
    "generate_dataset",
]
