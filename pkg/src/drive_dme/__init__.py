"""Distributed mean estimation with randomized rotations and b-bit quantization."""

from .levels import LevelSet, equal_interval_levels, lloyd_max_levels
from .quantizer import QuantizedVector, Scheme, build_scheme, quantize, sse_closed_form
from .rng import RotationSeed
from .simulator import (
    ClientConfig,
    ExperimentConfig,
    LossModel,
    client_encode,
    decode_client,
    encode_client,
    run_experiment,
    server_decode,
)
from .transform import HadamardRotation, UniformRotation, fwht, hadamard_forward, hadamard_inverse

__all__ = [
    "ClientConfig",
    "ExperimentConfig",
    "HadamardRotation",
    "LevelSet",
    "LossModel",
    "QuantizedVector",
    "RotationSeed",
    "Scheme",
    "UniformRotation",
    "build_scheme",
    "client_encode",
    "decode_client",
    "encode_client",
    "equal_interval_levels",
    "fwht",
    "hadamard_forward",
    "hadamard_inverse",
    "lloyd_max_levels",
    "quantize",
    "run_experiment",
    "server_decode",
    "sse_closed_form",
]
