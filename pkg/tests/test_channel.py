"""Grid, quantizer, AWGN, and transition-matrix contracts.

Expected values here are either forced by the definitions (grid
geometry, tie-breaks) or frozen from independent oracles: a Maclaurin
series / continued fraction for the normal CDF, and seeded Monte Carlo
against the Bernoulli / Gaussian definitions.
"""

import math

import numpy as np
import pytest

from airfed.channel import (
    AwgnChannel,
    InvalidGrid,
    InvalidInput,
    adc_quantize,
    adc_quantize_many,
    awgn_transmit,
    awgn_transmit_many,
    dac_randomize,
    dac_randomize_many,
    dac_variance,
    make_grid,
    normal_cdf,
    transition_matrix,
)


# ---------------------------------------------------------------------------
# independent oracle for the standard normal CDF


def erf_series(x: float) -> float:
    """Maclaurin series for erf on |x| <= 3, else a continued fraction for
    erfc; both summed far past double precision."""
    if x < 0:
        return -erf_series(-x)
    if x <= 3.0:
        total = 0.0
        term = x
        k = 0
        while abs(term) > 1e-20:
            total += term / (2 * k + 1)
            k += 1
            term *= -x * x / k
        return 2.0 / math.sqrt(math.pi) * total
    # Laplace continued fraction for erfc(x) * exp(x^2) * sqrt(pi) * x
    cf = 0.0
    for n in range(60, 0, -1):
        cf = (n / 2.0) / (x + cf)
    erfc = math.exp(-x * x) / (math.sqrt(math.pi) * (x + cf))
    return 1.0 - erfc


def phi_oracle(x: float) -> float:
    return 0.5 * (1.0 + erf_series(x / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# grid


def test_grid_q4_levels_exact():
    grid = make_grid(4)
    assert grid.levels[0] == -1.0 and grid.levels[3] == 1.0
    assert grid.levels == pytest.approx([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], abs=1e-15)
    assert grid.delta == pytest.approx(2.0 / 3.0, abs=0)


def test_grid_q16_spacing():
    grid = make_grid(16)
    assert grid.delta == pytest.approx(2.0 / 15.0, abs=0)
    gaps = np.diff(grid.levels)
    assert np.max(np.abs(gaps - grid.delta)) < 4 * np.finfo(float).eps


def test_grid_symmetric_and_immutable():
    grid = make_grid(9)
    assert np.all(grid.levels == -grid.levels[::-1])
    with pytest.raises(ValueError):
        grid.levels[0] = 0.0


def test_grid_rejects_small_q():
    with pytest.raises(InvalidGrid):
        make_grid(3)
    with pytest.raises(InvalidGrid):
        make_grid(0)


# ---------------------------------------------------------------------------
# ADC


def test_adc_nearest_level():
    grid = make_grid(4)
    assert adc_quantize(0.4, grid) == 2  # nearest to 1/3
    assert adc_quantize(10.0, grid) == 3  # saturates at +1
    assert adc_quantize(-10.0, grid) == 0


def test_adc_midpoint_tie_goes_lower():
    grid = make_grid(4)
    assert adc_quantize(0.0, grid) == 1  # exactly between -1/3 and 1/3


def test_adc_rejects_nonfinite():
    grid = make_grid(4)
    with pytest.raises(InvalidInput):
        adc_quantize(float("nan"), grid)
    with pytest.raises(InvalidInput):
        adc_quantize(float("inf"), grid)


def test_adc_matches_argmin_on_random_inputs():
    grid = make_grid(7)
    rng = np.random.default_rng(7)
    y = rng.uniform(-1.5, 1.5, size=4000)
    got = adc_quantize_many(y, grid)
    want = np.argmin(np.abs(y[:, None] - grid.levels[None, :]), axis=1)
    assert np.array_equal(got, want)


# ---------------------------------------------------------------------------
# DAC


def test_dac_exact_level_is_deterministic():
    grid = make_grid(8)
    rng = np.random.default_rng(0)
    for i in range(8):
        assert dac_randomize(float(grid.levels[i]), grid, rng) == i


def test_dac_saturates_outside_grid():
    grid = make_grid(4)
    rng = np.random.default_rng(0)
    assert dac_randomize(-5.0, grid, rng) == 0
    assert dac_randomize(5.0, grid, rng) == 3


def test_dac_midpoint_is_fair_coin():
    # 0.0 sits exactly between -1/3 and 1/3 on the q=4 grid
    grid = make_grid(4)
    rng = np.random.default_rng(123)
    draws = dac_randomize_many(np.zeros(200_000), grid, rng)
    freq_upper = np.mean(draws == 2)
    assert abs(freq_upper - 0.5) < 5 * math.sqrt(0.25 / 200_000)


def test_dac_unbiased_monte_carlo():
    # mean of 1e6 draws at x=0.17 on the q=8 grid, within 4 standard errors
    grid = make_grid(8)
    x = 0.17
    rng = np.random.default_rng(2024)
    draws = grid.levels[dac_randomize_many(np.full(1_000_000, x), grid, rng)]
    se = math.sqrt(dac_variance(x, grid) / 1_000_000)
    assert abs(float(np.mean(draws)) - x) < 4 * se


def test_dac_variance_bound():
    # exact Bernoulli variance (x - z_i)(z_{i+1} - x) <= delta^2 / 4
    for q in (4, 5, 8, 16):
        grid = make_grid(q)
        xs = np.linspace(-1, 1, 4001)
        for x in xs:
            assert dac_variance(float(x), grid) <= grid.delta**2 / 4 + 1e-15


def test_dac_rejects_nonfinite():
    grid = make_grid(4)
    with pytest.raises(InvalidInput):
        dac_randomize(float("nan"), grid, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# AWGN


def test_awgn_requires_positive_sigma():
    with pytest.raises(InvalidInput):
        AwgnChannel(0.0)
    with pytest.raises(InvalidInput):
        AwgnChannel(-1.0)


def test_awgn_degenerate_noise_limit():
    ch = AwgnChannel(1e-300)
    rng = np.random.default_rng(5)
    assert awgn_transmit(0.25, ch, rng) == 0.25


def test_awgn_moments_monte_carlo():
    n = 1_000_000
    ch = AwgnChannel(0.2)
    rng = np.random.default_rng(99)
    out = awgn_transmit_many(np.zeros(n), ch, rng)
    assert abs(float(np.var(out)) - 0.04) < 0.01 * 0.04
    out2 = awgn_transmit_many(np.full(n, 0.5), ch, rng)
    se = 0.2 / math.sqrt(n)
    assert abs(float(np.mean(out2)) - 0.5) < 4 * se


# ---------------------------------------------------------------------------
# normal CDF


def test_normal_cdf_basics():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-13)


def test_normal_cdf_symmetry():
    for x in np.linspace(-6, 6, 121):
        assert abs(normal_cdf(float(x)) + normal_cdf(float(-x)) - 1.0) < 1e-14


def test_normal_cdf_against_series_oracle():
    for x in [-5.0, -2.5, -1.0, -0.3, 0.1, 0.7, 1.0, 2.0, 3.7, 5.5]:
        assert abs(normal_cdf(x) - phi_oracle(x)) < 1e-13


# ---------------------------------------------------------------------------
# transition matrix


def test_transition_matrix_rows_are_distributions():
    for q in (4, 6, 16):
        grid = make_grid(q)
        for sigma in (0.01, 0.1, 0.5):
            p = transition_matrix(grid, sigma).p
            assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12
            assert p.min() >= 0.0 and p.max() <= 1.0


def test_transition_matrix_symmetry():
    grid = make_grid(8)
    p = transition_matrix(grid, 0.13).p
    assert np.max(np.abs(p - p[::-1, ::-1])) <= 1e-12


def test_transition_matrix_interior_cell_value():
    # q=4, sigma = delta/2: staying probability of an interior level is
    # Phi(1) - Phi(-1)
    grid = make_grid(4)
    p = transition_matrix(grid, grid.delta / 2).p
    expect = phi_oracle(1.0) - phi_oracle(-1.0)
    assert p[1, 1] == pytest.approx(expect, abs=1e-12)
    assert p[1, 1] == pytest.approx(0.6826894921370859, abs=1e-12)


def test_transition_matrix_noiseless_limit():
    grid = make_grid(6)
    p = transition_matrix(grid, 1e-12).p
    assert np.max(np.abs(p - np.eye(6))) < 1e-15


def test_transition_diag_dominance_at_low_noise():
    # sigma <= delta/2 makes every interior diagonal entry >= 2/3
    for q in (4, 8, 16):
        grid = make_grid(q)
        p = transition_matrix(grid, grid.delta / 2).p
        assert np.all(np.diag(p)[1:-1] >= 2.0 / 3.0)


def test_transition_matrix_rejects_bad_sigma():
    grid = make_grid(4)
    with pytest.raises(InvalidInput):
        transition_matrix(grid, 0.0)


def test_transition_matrix_matches_empirical_frequencies():
    # composite ADC(AWGN(z_i)) frequencies over 1e6 trials per input level
    # agree with the matrix within 5 standard errors per cell
    q = 6
    grid = make_grid(q)
    sigma = 0.3 * grid.delta
    p = transition_matrix(grid, sigma).p
    ch = AwgnChannel(sigma)
    n = 1_000_000
    rng = np.random.default_rng(31337)
    for i in range(q):
        out = adc_quantize_many(
            awgn_transmit_many(np.full(n, grid.levels[i]), ch, rng), grid
        )
        freq = np.bincount(out, minlength=q) / n
        se = np.sqrt(np.maximum(p[i] * (1 - p[i]), 1e-12) / n)
        assert np.all(np.abs(freq - p[i]) <= 5 * se + 1e-9)
