"""Scale-adaptive transmission codec.

A real value x splits into an integer exponent beta(x) (sent error-free
on the coded channel) and a normalized value psi(x) with |psi| <= 1-delta
(sent over the physical path), reassembled at the receiver by
``assemble``.  The normalization guarantees the physical payload lands on
the interior of the quantization grid, where post-coding keeps the
channel unbiased:

    beta(x) = max(0, ceil(log2(|x|/omega)))
    psi(x)  = (1 - delta) * x / (2^beta(x) * omega)
    assemble(psi, b) = 2^b * omega * psi / (1 - delta)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from airfed.channel import (
    AwgnChannel,
    QuantizationGrid,
    adc_quantize_many,
    awgn_transmit_many,
    dac_randomize_many,
)
from airfed.postcode import PostcodeMatrix, apply_postcode_many


class ExponentOverflow(ValueError):
    """Input magnitude exceeds the largest encodable scale 2^beta_max*omega.

    Silent saturation would bias the reconstruction, so oversized inputs
    fail loudly instead.
    """


@dataclass(frozen=True)
class ScaleCodec:
    omega: float
    delta: float
    beta_max: int = 63

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValueError(f"omega must be a positive real, got {self.omega!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        if self.beta_max < 1:
            raise ValueError(f"beta_max must be >= 1, got {self.beta_max!r}")

    @property
    def bits_per_exponent(self) -> int:
        """Fixed-width coded-channel footprint of one exponent."""
        return int(math.ceil(math.log2(self.beta_max + 1)))


@dataclass(frozen=True)
class EncodedVector:
    psi: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class PipelineOutput:
    u_hat: np.ndarray = field(repr=False)
    physical_symbols: int
    coded_bits: int


def beta_of(x: float, codec: ScaleCodec) -> int:
    """Exponent of x against the binary grid (2^k * omega)_{k>=0}."""
    if not math.isfinite(x):
        raise ValueError(f"codec input must be finite, got {x!r}")
    b = int(beta_of_many(np.asarray([x]), codec)[0])
    return b


def beta_of_many(x: np.ndarray, codec: ScaleCodec) -> np.ndarray:
    t = np.abs(x) / codec.omega
    with np.errstate(divide="ignore"):
        b = np.ceil(np.log2(t, where=t > 0, out=np.zeros_like(t)))
    b = np.maximum(b, 0.0).astype(np.int64)
    # log2 carries rounding jitter near exact powers of two; settle the
    # ceiling by integer comparison against the binary grid itself
    b = np.where((b > 0) & (np.ldexp(1.0, b - 1) >= t), b - 1, b)
    b = np.where(np.ldexp(1.0, b) < t, b + 1, b)
    if np.any(b > codec.beta_max):
        worst = float(np.max(np.abs(x)))
        raise ExponentOverflow(
            f"|x| up to {worst:g} needs exponent {int(np.max(b))} > "
            f"beta_max={codec.beta_max}"
        )
    return b


def psi_of(x: float, codec: ScaleCodec) -> float:
    """Normalized value; |psi_of(x)| <= 1 - delta for every finite x."""
    if not math.isfinite(x):
        raise ValueError(f"codec input must be finite, got {x!r}")
    return float(psi_of_many(np.asarray([x]), codec)[0])


def psi_of_many(x: np.ndarray, codec: ScaleCodec) -> np.ndarray:
    b = beta_of_many(x, codec)
    return (1.0 - codec.delta) * x / (np.ldexp(1.0, b) * codec.omega)


def encode_vector(u: np.ndarray, codec: ScaleCodec) -> EncodedVector:
    b = beta_of_many(u, codec)
    psi = (1.0 - codec.delta) * u / (np.ldexp(1.0, b) * codec.omega)
    return EncodedVector(psi=psi, beta=b)


def assemble(psi_val: float, beta: int, codec: ScaleCodec) -> float:
    """Inverse of the (psi, beta) split up to one floating rounding step."""
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    return float(assemble_many(np.asarray([psi_val]), np.asarray([beta]), codec)[0])


def assemble_many(
    psi: np.ndarray, beta: np.ndarray, codec: ScaleCodec
) -> np.ndarray:
    return np.ldexp(1.0, np.asarray(beta, dtype=np.int64)) * codec.omega * psi / (
        1.0 - codec.delta
    )


def transmit_vector(
    u: np.ndarray,
    codec: ScaleCodec,
    grid: QuantizationGrid,
    ch: AwgnChannel,
    hm: PostcodeMatrix,
    rng: np.random.Generator,
) -> PipelineOutput:
    """Full unbiased transmission of one real vector.

    Coordinate-wise: encode, randomized DAC, AWGN, ADC, post-coding, then
    reassembly with the sender's exponents (which travel error-free on
    the coded channel).  Draw order per call: d DAC uniforms, d noise
    normals, d post-coding uniforms.
    """
    u = np.asarray(u, dtype=float)
    enc = encode_vector(u, codec)
    sent = dac_randomize_many(enc.psi, grid, rng)
    received = adc_quantize_many(
        awgn_transmit_many(grid.levels[sent], ch, rng), grid
    )
    remapped = apply_postcode_many(hm.row_cdf(), received, rng)
    u_hat = assemble_many(grid.levels[remapped], enc.beta, codec)
    return PipelineOutput(
        u_hat=u_hat,
        physical_symbols=u.size,
        coded_bits=u.size * codec.bits_per_exponent,
    )
