import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import norm

from ebicsel.linmodel import SupportSet
from ebicsel.simgen import (
    BetaSpec,
    CovarianceSpec,
    ScheduleEntry,
    calibrate_sigma2,
    covariance_factor,
    divergence_schedule,
    expected_signal_power,
    generate_replicate,
    place_support,
    sample_beta,
    sample_design,
)


def rng_for(tag: int) -> np.random.Generator:
    return np.random.default_rng(tag)


# -------------------------------------------------------------------- schedule

def test_schedule_tabulated_rows():
    assert divergence_schedule(100, 1) == ScheduleEntry(100, 1, 4, 150)
    assert divergence_schedule(200, 1) == ScheduleEntry(200, 1, 6, 595)
    assert divergence_schedule(500, 1) == ScheduleEntry(500, 1, 8, 6655)
    assert divergence_schedule(1000, 1) == ScheduleEntry(1000, 1, 9, 74622)
    assert divergence_schedule(100, 2) == ScheduleEntry(100, 2, 8, 150)
    assert divergence_schedule(200, 2) == ScheduleEntry(200, 2, 12, 595)
    assert divergence_schedule(500, 2) == ScheduleEntry(500, 2, 16, 6655)
    assert divergence_schedule(1000, 2) == ScheduleEntry(1000, 2, 18, 74622)


def test_schedule_formula_off_table():
    entry = divergence_schedule(300, 2)
    assert entry.p0 == round(2 * 300**0.325)
    assert entry.p == round(math.exp(300**0.35))


def test_schedule_rejects_bad_args():
    with pytest.raises(ValueError):
        divergence_schedule(100, 3)
    with pytest.raises(ValueError):
        divergence_schedule(1, 1)


# ------------------------------------------------------------------- beta law

def test_z_sigma_against_root_finding_oracle():
    spec = BetaSpec()
    # solve P(|z| >= 0.1) = 0.25 for the normal scale directly
    oracle = brentq(lambda s: 2.0 * (1.0 - norm.cdf(0.1 / s)) - 0.25, 1e-4, 10.0)
    assert spec.z_sigma == pytest.approx(oracle, rel=1e-10)
    assert spec.z_sigma == pytest.approx(0.08693011158689337, abs=1e-14)


def test_beta_magnitude_floor():
    spec = BetaSpec(n_ref=100)
    floor = 100 ** (-0.1625)
    assert spec.magnitude_floor == pytest.approx(floor, rel=1e-14)
    assert floor == pytest.approx(0.47315, abs=1e-5)
    draws = sample_beta(spec, 2000, rng_for(20))
    assert np.all(np.abs(draws) >= floor - 1e-15)


def test_beta_sign_frequency_literal_convention():
    # u = 1 (probability 0.4) flips the sign negative
    spec = BetaSpec(n_ref=100)
    draws = sample_beta(spec, 100_000, rng_for(21))
    frac_negative = float(np.mean(draws < 0))
    assert frac_negative == pytest.approx(0.4, abs=0.01)


def test_beta_rejects_bad_p0():
    with pytest.raises(ValueError):
        sample_beta(BetaSpec(), 0, rng_for(22))


# ------------------------------------------------------------------ covariance

def test_power_decay_implied_correlation():
    factor = covariance_factor(CovarianceSpec("power_decay", 3, rho=0.5))
    got = factor.correlation_submatrix(SupportSet.of([0, 1, 2]))
    expected = np.array([[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
    assert np.allclose(got, expected, atol=1e-14)


def test_power_decay_empirical_correlation():
    factor = covariance_factor(CovarianceSpec("power_decay", 2, rho=0.5))
    x = sample_design(factor, 100_000, rng_for(23))
    got = np.corrcoef(x[:, 0], x[:, 1])[0, 1]
    assert got == pytest.approx(0.5, abs=0.01)


def test_equi_block_structure():
    spec = CovarianceSpec("equi_block", 120, rho=0.5, block_size=50)
    factor = covariance_factor(spec)
    sizes = [chol.shape[0] for _, chol, _ in factor.blocks]
    assert sizes == [50, 50, 20]  # last block takes the remainder
    sub = factor.correlation_submatrix(SupportSet.of([0, 1, 49, 50, 119]))
    assert sub[0, 0] == 1.0
    assert sub[0, 1] == 0.5 and sub[0, 2] == 0.5  # same block
    assert sub[0, 3] == 0.0 and sub[2, 3] == 0.0  # across blocks
    assert sub[3, 4] == 0.0


def test_equi_block_factor_reproduces_correlation():
    spec = CovarianceSpec("equi_block", 50, rho=0.5)
    factor = covariance_factor(spec)
    _, chol, _ = factor.blocks[0]
    realized = chol @ chol.T
    expected = 0.5 * np.ones((50, 50)) + 0.5 * np.eye(50)
    assert np.allclose(realized, expected, atol=1e-12)


def test_eigen_block_spectrum_and_unit_diagonal():
    spec = CovarianceSpec("eigen_block", 50, eigen_seed=3)
    factor = covariance_factor(spec)
    spectrum = np.sort(factor.block_spectra[0])
    assert spectrum[0] == pytest.approx(1.0)
    assert spectrum[-1] == pytest.approx(50.0)
    assert np.all((spectrum[1:-1] > 1.0) & (spectrum[1:-1] < 50.0))
    _, _, corr = factor.blocks[0]
    assert np.allclose(np.diag(corr), 1.0, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(corr) > 0)
    # sampled correlation has unit diagonal within Monte Carlo error
    x = sample_design(factor, 100_000, rng_for(24))
    sample_corr = np.corrcoef(x, rowvar=False)
    assert np.allclose(np.diag(sample_corr), 1.0, atol=0.02)
    assert np.allclose(x.var(axis=0), 1.0, atol=0.02)


def test_eigen_block_deterministic_given_seed():
    spec = CovarianceSpec("eigen_block", 70, eigen_seed=9)
    a = covariance_factor(spec)
    b = covariance_factor(spec)
    assert np.array_equal(a.blocks[1][2], b.blocks[1][2])
    other = covariance_factor(CovarianceSpec("eigen_block", 70, eigen_seed=10))
    assert not np.array_equal(a.blocks[0][2], other.blocks[0][2])


def test_covariance_spec_validation():
    with pytest.raises(ValueError):
        CovarianceSpec("power_decay", 10, rho=1.0)
    with pytest.raises(ValueError):
        CovarianceSpec("nope", 10)
    with pytest.raises(ValueError):
        CovarianceSpec("eigen_block", 10, eig_min=0.0)
    with pytest.raises(ValueError):
        CovarianceSpec("power_decay", 0)


def test_sample_design_single_row_and_determinism():
    spec = CovarianceSpec("equi_block", 7, rho=0.3, block_size=3)
    factor = covariance_factor(spec)
    row = sample_design(factor, 1, rng_for(25))
    assert row.shape == (1, 7)
    assert np.all(np.isfinite(row))
    a = sample_design(factor, 50, rng_for(26))
    b = sample_design(factor, 50, rng_for(26))
    assert np.array_equal(a, b)


# ------------------------------------------------------------------- placement

def test_even_placement_spreads_blocks():
    support = place_support(6, 595, "even")
    blocks = {j // 50 for j in support}
    assert len(blocks) == 6
    assert support.size == 6
    assert place_support(4, 150, "even").indices == (0, 37, 75, 112)


def test_first_placement():
    assert place_support(3, 100, "first").indices == (0, 1, 2)
    with pytest.raises(ValueError):
        place_support(5, 4)
    with pytest.raises(ValueError):
        place_support(2, 10, "middle")


# ------------------------------------------------------------------ calibration

def test_expected_signal_power_identity_closed_form():
    # with Sigma = I the power is p0 * E[(floor + |z|)^2]
    spec = BetaSpec(n_ref=100)
    a = spec.magnitude_floor
    sz = spec.z_sigma
    closed_form = 4 * (a**2 + 2 * a * sz * math.sqrt(2 / math.pi) + sz**2)
    mc = expected_signal_power(np.eye(4), spec)
    assert mc == pytest.approx(closed_form, rel=3e-3)


def test_calibrate_sigma2_h_algebra():
    sched = divergence_schedule(100, 1)
    cov = CovarianceSpec("power_decay", sched.p)
    beta = BetaSpec(n_ref=100)
    q = expected_signal_power(
        covariance_factor(cov).correlation_submatrix(
            place_support(sched.p0, sched.p)
        ),
        beta,
    )
    assert calibrate_sigma2(0.5, cov, beta, sched) == pytest.approx(q, rel=1e-12)
    values = [calibrate_sigma2(h, cov, beta, sched) for h in (0.3, 0.6, 0.9)]
    assert values[0] > values[1] > values[2] > 0
    assert calibrate_sigma2(1 - 1e-9, cov, beta, sched) < 1e-8 * q


def test_calibrate_sigma2_rejects_bad_h():
    sched = divergence_schedule(100, 1)
    cov = CovarianceSpec("power_decay", sched.p)
    for h in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            calibrate_sigma2(h, cov, BetaSpec(), sched)


def test_calibrate_sigma2_checks_dimensions():
    sched = divergence_schedule(100, 1)
    with pytest.raises(ValueError):
        calibrate_sigma2(0.5, CovarianceSpec("power_decay", 10), BetaSpec(), sched)


# ------------------------------------------------------------------- replicate

def test_generate_noiseless_lies_in_span():
    sched = divergence_schedule(100, 1)
    spec = CovarianceSpec("power_decay", sched.p)
    ds = generate_replicate(sched, spec, BetaSpec(), 0.0, rng_for(27))
    xs = ds.x[:, ds.true_support.as_array()]
    resid = ds.y - xs @ np.linalg.lstsq(xs, ds.y, rcond=None)[0]
    assert float(resid @ resid) <= 1e-16 * float(ds.y @ ds.y)


def test_generate_residual_variance_matches_sigma2():
    sched = ScheduleEntry(n=100_000, c=1, p0=4, p=12)
    spec = CovarianceSpec("power_decay", 12)
    sigma2 = 0.8
    ds = generate_replicate(sched, spec, BetaSpec(), sigma2, rng_for(28))
    resid = ds.y - ds.x @ ds.true_beta
    assert float(resid.var()) == pytest.approx(sigma2, rel=0.02)


def test_generate_replicate_structure():
    sched = divergence_schedule(100, 2)
    spec = CovarianceSpec("equi_block", sched.p)
    ds = generate_replicate(sched, spec, BetaSpec(), 0.5, rng_for(29))
    assert ds.x.shape == (100, 150)
    assert ds.true_support.size == sched.p0
    off_support = np.setdiff1d(np.arange(sched.p), ds.true_support.as_array())
    assert np.all(ds.true_beta[off_support] == 0.0)
    floor = BetaSpec().magnitude_floor
    assert np.all(np.abs(ds.true_beta[ds.true_support.as_array()]) >= floor - 1e-15)


def test_generate_replicate_deterministic():
    sched = divergence_schedule(100, 1)
    spec = CovarianceSpec("eigen_block", sched.p, eigen_seed=1)
    a = generate_replicate(sched, spec, BetaSpec(), 0.4, rng_for(30))
    b = generate_replicate(sched, spec, BetaSpec(), 0.4, rng_for(30))
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.y, b.y)
    assert a.true_support == b.true_support
    c = generate_replicate(sched, spec, BetaSpec(), 0.4, rng_for(31))
    assert not np.array_equal(a.y, c.y)


def test_generate_replicate_fixed_beta():
    sched = divergence_schedule(100, 1)
    spec = CovarianceSpec("power_decay", sched.p)
    beta = np.array([0.5, -0.6, 0.7, 0.8])
    ds = generate_replicate(
        sched, spec, BetaSpec(), 0.1, rng_for(32), fixed_beta=beta
    )
    assert np.array_equal(ds.true_beta[ds.true_support.as_array()], beta)
    with pytest.raises(ValueError):
        generate_replicate(
            sched, spec, BetaSpec(), 0.1, rng_for(33), fixed_beta=beta[:2]
        )


def test_generate_replicate_rejects_negative_noise():
    sched = divergence_schedule(100, 1)
    spec = CovarianceSpec("power_decay", sched.p)
    with pytest.raises(ValueError):
        generate_replicate(sched, spec, BetaSpec(), -1.0, rng_for(34))


def test_empirical_correlation_matches_spec_entrywise():
    # 3-sigma Monte Carlo band at 1e5 draws for a handful of entries
    spec = CovarianceSpec("power_decay", 5, rho=0.5)
    x = sample_design(covariance_factor(spec), 100_000, rng_for(35))
    corr = np.corrcoef(x, rowvar=False)
    for i in range(5):
        for j in range(5):
            rho = 0.5 ** abs(i - j)
            band = 3.0 * (1 - rho**2) / math.sqrt(100_000)
            assert abs(corr[i, j] - rho) <= band + 1e-12
