"""Over-the-air federated SGD simulator: quantized channels, post-coding,
scale-adaptive transmission, and convergence verification harness."""

from airfed.channel import (
    AwgnChannel,
    InvalidGrid,
    InvalidInput,
    QuantizationGrid,
    TransitionMatrix,
    adc_quantize,
    awgn_transmit,
    dac_randomize,
    make_grid,
    normal_cdf,
    transition_matrix,
)
from airfed.codec import (
    EncodedVector,
    ExponentOverflow,
    PipelineOutput,
    ScaleCodec,
    assemble,
    beta_of,
    psi_of,
    transmit_vector,
)
from airfed.postcode import (
    PostcodeMatrix,
    apply_postcode,
    build_lp,
    certify,
    feasible_construction,
    solve_lp,
)

__all__ = [
    "AwgnChannel",
    "EncodedVector",
    "ExponentOverflow",
    "InvalidGrid",
    "InvalidInput",
    "PipelineOutput",
    "PostcodeMatrix",
    "QuantizationGrid",
    "ScaleCodec",
    "TransitionMatrix",
    "adc_quantize",
    "apply_postcode",
    "assemble",
    "awgn_transmit",
    "beta_of",
    "build_lp",
    "certify",
    "dac_randomize",
    "feasible_construction",
    "make_grid",
    "normal_cdf",
    "psi_of",
    "solve_lp",
    "transmit_vector",
]

__version__ = "0.1.0"
