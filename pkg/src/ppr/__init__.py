"""Poisson private representation: compressing privacy mechanisms with shared randomness."""

from .codec import elias_delta_decode, elias_delta_encode, pack_container, unpack_container
from .core import (
    EncodeError,
    EncodeResult,
    PprParams,
    ProposalSpec,
    TargetSpec,
    decode,
    encode,
    encode_truncated,
    log_k_bound,
    pfr_encode,
    prefix_size_bound,
)
from .rng import SampleStream, SharedSeed

__all__ = [
    "EncodeError", "EncodeResult", "PprParams", "ProposalSpec", "TargetSpec", "SampleStream",
    "SharedSeed", "decode", "encode", "encode_truncated", "elias_delta_decode",
    "elias_delta_encode", "log_k_bound", "pack_container", "pfr_encode", "prefix_size_bound",
    "unpack_container",
]
