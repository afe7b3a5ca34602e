"""Scale-adaptive codec identities, exponent handling, and the end-to-end
pipeline's unbiasedness and variance bound (seeded Monte Carlo)."""

import math

import numpy as np
import pytest

from airfed.channel import AwgnChannel, make_grid, transition_matrix
from airfed.codec import (
    ExponentOverflow,
    ScaleCodec,
    assemble,
    assemble_many,
    beta_of,
    beta_of_many,
    encode_vector,
    psi_of,
    psi_of_many,
    transmit_vector,
)
from airfed.postcode import build_lp, identity_postcode, solve_lp


def _codec(omega=0.1, delta=2.0 / 15.0, beta_max=63):
    return ScaleCodec(omega=omega, delta=delta, beta_max=beta_max)


def _log_uniform(rng, n, lo=1e-8, hi=1e8):
    mag = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    return mag * rng.choice([-1.0, 1.0], size=n)


# ---------------------------------------------------------------------------
# exponent


def test_beta_zero_input():
    assert beta_of(0.0, _codec()) == 0


def test_beta_direct_values():
    codec = _codec(omega=0.1)
    assert beta_of(0.35, codec) == 2  # ceil(log2(3.5))
    assert beta_of(0.05, codec) == 0  # below the floor
    assert beta_of(-0.35, codec) == 2


def test_beta_exact_powers_of_two():
    for omega in (0.1, 0.3, 1.0, 0.004):
        codec = _codec(omega=omega)
        for k in range(0, 60):
            x = (2.0**k) * omega
            assert beta_of(x, codec) == k, (omega, k)
            assert beta_of(-x, codec) == k
    # just above/below a grid point
    codec = _codec(omega=0.1)
    assert beta_of(0.1 * 4.0 * (1 + 1e-12), codec) == 3
    assert beta_of(0.1 * 4.0 * (1 - 1e-12), codec) == 2


def test_beta_overflow_is_loud():
    codec = _codec(omega=0.1, beta_max=4)
    with pytest.raises(ExponentOverflow):
        beta_of(0.1 * 2.0**5, codec)
    assert beta_of(0.1 * 2.0**4, codec) == 4


def test_bits_per_exponent():
    assert _codec(beta_max=63).bits_per_exponent == 6
    assert _codec(beta_max=15).bits_per_exponent == 4
    assert _codec(beta_max=1).bits_per_exponent == 1


# ---------------------------------------------------------------------------
# normalized value


def test_psi_direct_value():
    codec = _codec(omega=0.1, delta=2.0 / 15.0)
    assert psi_of(0.35, codec) == pytest.approx((13.0 / 15.0) * 0.35 / 0.4, rel=1e-15)
    assert psi_of(0.0, codec) == 0.0


def test_psi_bounded_everywhere():
    codec = _codec(omega=0.07, delta=0.25)
    rng = np.random.default_rng(11)
    x = _log_uniform(rng, 1_000_000)
    psi = psi_of_many(x, codec)
    assert np.all(np.abs(psi) <= 1.0 - codec.delta)


def test_scale_bracketing():
    # 2^beta * omega <= max(2|x|, omega), exactly in floating point
    codec = _codec(omega=0.013, delta=0.1)
    rng = np.random.default_rng(12)
    x = _log_uniform(rng, 1_000_000, lo=1e-9, hi=1e7)
    b = beta_of_many(x, codec)
    scale = np.ldexp(1.0, b) * codec.omega
    assert np.all(scale <= np.maximum(2.0 * np.abs(x), codec.omega))


# ---------------------------------------------------------------------------
# assembler


def test_assemble_inverts_encoding():
    codec = _codec(omega=0.02, delta=2.0 / 7.0)
    rng = np.random.default_rng(13)
    x = _log_uniform(rng, 1_000_000)
    enc = encode_vector(x, codec)
    back = assemble_many(enc.psi, enc.beta, codec)
    assert np.all(np.abs(back - x) <= 2.0 * np.spacing(np.abs(x)))


def test_assemble_specifics():
    codec = _codec(omega=0.1, delta=2.0 / 15.0)
    assert assemble(0.0, 7, codec) == 0.0
    psi = psi_of(0.35, codec)
    assert assemble(psi, 2, codec) == pytest.approx(0.35, rel=1e-15)


def test_assemble_rejects_negative_beta():
    with pytest.raises(ValueError):
        assemble(0.5, -1, _codec())


# ---------------------------------------------------------------------------
# end-to-end pipeline


def test_pipeline_noiseless_identity_h_close_to_input():
    # fine grid, negligible noise, identity remap: error is bounded by the
    # randomized-quantizer jitter of one grid step at the payload scale
    grid = make_grid(4097)
    codec = ScaleCodec(omega=0.05, delta=grid.delta, beta_max=63)
    ch = AwgnChannel(1e-13)
    hm = identity_postcode(grid)
    rng = np.random.default_rng(14)
    u = rng.uniform(-3, 3, size=64)
    out = transmit_vector(u, codec, grid, ch, hm, rng)
    tol = grid.delta * np.maximum(2 * np.abs(u), codec.omega) / (1 - grid.delta)
    assert np.all(np.abs(out.u_hat - u) <= tol)
    assert out.physical_symbols == 64
    assert out.coded_bits == 64 * 6


def test_pipeline_unbiased_and_within_variance_bound():
    q = 8
    grid = make_grid(q)
    sigma = grid.delta / 4.0
    hm = solve_lp(build_lp(transition_matrix(grid, sigma), grid))
    codec = ScaleCodec(omega=0.01, delta=grid.delta, beta_max=63)
    ch = AwgnChannel(sigma)
    rng = np.random.default_rng(15)
    d = 4
    u = rng.uniform(-2, 2, size=d)
    trials = 40_000
    errs = np.empty((trials, d))
    for t in range(trials):
        errs[t] = transmit_vector(u, codec, grid, ch, hm, rng).u_hat - u
    se = errs.std(axis=0, ddof=1) / math.sqrt(trials)
    assert np.all(np.abs(errs.mean(axis=0)) <= 5.0 * se)
    mse = float(np.mean(np.sum(errs**2, axis=1)))
    bound = (4 * hm.v_star + grid.delta**2) * (4 * float(u @ u) + codec.omega**2 * d)
    mse_se = float(np.std(np.sum(errs**2, axis=1), ddof=1)) / math.sqrt(trials)
    assert mse <= bound + 5.0 * mse_se


def test_pipeline_error_coordinates_uncorrelated():
    q = 8
    grid = make_grid(q)
    sigma = grid.delta / 4.0
    hm = solve_lp(build_lp(transition_matrix(grid, sigma), grid))
    codec = ScaleCodec(omega=0.05, delta=grid.delta, beta_max=63)
    ch = AwgnChannel(sigma)
    rng = np.random.default_rng(16)
    d = 4
    u = np.array([1.3, -0.4, 0.9, -1.7])
    trials = 30_000
    errs = np.empty((trials, d))
    for t in range(trials):
        errs[t] = transmit_vector(u, codec, grid, ch, hm, rng).u_hat - u
    cov = np.cov(errs.T)
    for i in range(d):
        for j in range(i + 1, d):
            se = math.sqrt(cov[i, i] * cov[j, j] / trials)
            assert abs(cov[i, j]) <= 5.0 * se


def test_pipeline_overflow_propagates():
    grid = make_grid(8)
    codec = ScaleCodec(omega=0.01, delta=grid.delta, beta_max=4)
    ch = AwgnChannel(0.05)
    hm = identity_postcode(grid)
    with pytest.raises(ExponentOverflow):
        transmit_vector(
            np.array([0.0, 100.0]), codec, grid, ch, hm, np.random.default_rng(0)
        )


def test_codec_validation():
    with pytest.raises(ValueError):
        ScaleCodec(omega=0.0, delta=0.5)
    with pytest.raises(ValueError):
        ScaleCodec(omega=0.1, delta=1.5)
    with pytest.raises(ValueError):
        ScaleCodec(omega=0.1, delta=0.5, beta_max=0)
