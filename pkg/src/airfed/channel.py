"""Physical transmission path: quantization grid, DAC/ADC converters, AWGN.

The grid holds q equispaced levels z_0 < ... < z_{q-1} on [-1, 1]; all
operations here use 0-based indices into ``grid.levels``.  Interior levels
are indices 1..q-2.  Scalar operations validate their inputs; the ``_many``
variants are the vectorized forms used in simulation hot loops and trust
their callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class InvalidGrid(ValueError):
    """Raised when a quantization grid cannot be constructed."""


class InvalidInput(ValueError):
    """Raised on non-finite or out-of-domain channel inputs."""


@dataclass(frozen=True)
class QuantizationGrid:
    """q equispaced levels on [-1, 1] with spacing delta = 2/(q-1)."""

    q: int
    delta: float
    levels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.levels.flags.writeable = False


def make_grid(q: int) -> QuantizationGrid:
    """Build the shared DAC/ADC grid.

    Requires q >= 4 so the interior levels {z_1, ..., z_{q-2}} can carry
    information.  Levels are computed as (2i - (q-1))/(q-1), which makes
    z_0 = -1 and z_{q-1} = +1 exact and the grid exactly symmetric
    (levels[q-1-i] == -levels[i]).
    """
    if not isinstance(q, (int, np.integer)) or isinstance(q, bool):
        raise InvalidGrid(f"level count must be an integer, got {q!r}")
    if q < 4:
        raise InvalidGrid(f"need at least 4 quantization levels, got {q}")
    numer = 2.0 * np.arange(q) - (q - 1)
    levels = numer / (q - 1)
    return QuantizationGrid(q=int(q), delta=2.0 / (q - 1), levels=levels)


@dataclass(frozen=True)
class AwgnChannel:
    """Additive white Gaussian noise: output = input + N(0, sigma_c^2)."""

    sigma_c: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma_c) and self.sigma_c > 0):
            raise InvalidInput(f"sigma_c must be a positive real, got {self.sigma_c!r}")


def adc_quantize(x: float, grid: QuantizationGrid) -> int:
    """Nearest-level index for a received analog value.

    Ties at an exact cell midpoint resolve to the lower index; values
    beyond the grid saturate to the extreme levels.
    """
    if not math.isfinite(x):
        raise InvalidInput(f"ADC input must be finite, got {x!r}")
    return int(adc_quantize_many(np.asarray([x]), grid)[0])


def adc_quantize_many(y: np.ndarray, grid: QuantizationGrid) -> np.ndarray:
    z = grid.levels
    t = np.floor((y - z[0]) / grid.delta)
    i = np.clip(t, 0, grid.q - 2).astype(np.int64)
    # floor() above can be off by one ulp; deciding between the two cell
    # endpoints by distance (strict < keeps ties on the lower level) makes
    # the result the true argmin regardless.
    take_upper = np.abs(y - z[i + 1]) < np.abs(y - z[i])
    return i + take_upper


def dac_randomize(x: float, grid: QuantizationGrid, rng: np.random.Generator) -> int:
    """Randomized algorithmic quantizer feeding the DAC.

    Maps a float to a level index: saturates outside [z_0, z_{q-1}],
    otherwise rounds x in [z_i, z_{i+1}) to i+1 with probability
    (x - z_i)/(z_{i+1} - z_i) and to i otherwise, so the conditional mean
    is x on the whole grid range.  Consumes exactly one uniform draw.
    """
    if not math.isfinite(x):
        raise InvalidInput(f"DAC input must be finite, got {x!r}")
    return int(dac_randomize_many(np.asarray([x]), grid, rng)[0])


def dac_randomize_many(
    x: np.ndarray, grid: QuantizationGrid, rng: np.random.Generator
) -> np.ndarray:
    z = grid.levels
    q = grid.q
    i = np.clip(np.floor((x - z[0]) / grid.delta), 0, q - 2).astype(np.int64)
    # pin x into [z_i, z_{i+1}) exactly despite floor() rounding jitter
    i = np.where((i > 0) & (z[i] > x), i - 1, i)
    i = np.where((i < q - 2) & (z[i + 1] <= x), i + 1, i)
    p = (x - z[i]) / (z[i + 1] - z[i])
    p = np.clip(p, 0.0, 1.0)  # saturation below z_0 / above z_{q-1}
    iota = rng.random(size=x.shape) < p
    return i + iota


def dac_variance(x: float, grid: QuantizationGrid) -> float:
    """Exact Bernoulli variance of dac_randomize at x (0 outside the grid)."""
    z = grid.levels
    if x < z[0] or x >= z[-1]:
        return 0.0
    i = int(np.clip(np.searchsorted(z, x, side="right") - 1, 0, grid.q - 2))
    return (x - z[i]) * (z[i + 1] - x)


def awgn_transmit(level: float, ch: AwgnChannel, rng: np.random.Generator) -> float:
    """One channel use: level + fresh N(0, sigma_c^2) noise from rng."""
    if not math.isfinite(level):
        raise InvalidInput(f"channel input must be finite, got {level!r}")
    return level + ch.sigma_c * rng.standard_normal()


def awgn_transmit_many(
    levels: np.ndarray, ch: AwgnChannel, rng: np.random.Generator
) -> np.ndarray:
    return levels + ch.sigma_c * rng.standard_normal(size=levels.shape)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via erfc; absolute error well below 1e-12."""
    if not math.isfinite(x):
        raise InvalidInput(f"normal_cdf input must be finite, got {x!r}")
    return 0.5 * math.erfc(-x * _INV_SQRT2)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix P with P[i, j] = Pr(ADC(AWGN(z_i)) = z_j)."""

    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.p.flags.writeable = False

    @property
    def q(self) -> int:
        return self.p.shape[0]

    def interior(self) -> np.ndarray:
        """Restriction P* to interior rows and columns (indices 1..q-2)."""
        return self.p[1:-1, 1:-1]


def transition_matrix(grid: QuantizationGrid, sigma_c: float) -> TransitionMatrix:
    """Exact transition law of the AWGN-then-ADC composite.

    Column j of row i integrates the Gaussian centered at z_i over the
    ADC decision cell of z_j: interior cells are [z_j - delta/2,
    z_j + delta/2); the boundary cells extend to -inf / +inf.
    """
    if not (math.isfinite(sigma_c) and sigma_c > 0):
        raise InvalidInput(f"sigma_c must be a positive real, got {sigma_c!r}")
    q = grid.q
    z = grid.levels
    half = grid.delta / 2.0
    p = np.empty((q, q))
    for i in range(q):
        p[i, 0] = normal_cdf((z[0] + half - z[i]) / sigma_c)
        for j in range(1, q - 1):
            p[i, j] = normal_cdf((z[j] + half - z[i]) / sigma_c) - normal_cdf(
                (z[j] - half - z[i]) / sigma_c
            )
        p[i, q - 1] = 1.0 - normal_cdf((z[q - 1] - half - z[i]) / sigma_c)
    tm = TransitionMatrix(p=p)
    _check_transition_invariants(tm)
    return tm


def _check_transition_invariants(tm: TransitionMatrix) -> None:
    p = tm.p
    if np.any(p < -1e-12) or np.any(p > 1.0 + 1e-12):
        raise InvalidInput("transition probabilities escaped [0, 1]")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
        raise InvalidInput("transition rows do not sum to 1 within 1e-12")
    if np.max(np.abs(p - p[::-1, ::-1])) > 1e-12:
        raise InvalidInput("transition matrix lost grid symmetry")
