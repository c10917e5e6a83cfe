import numpy as np
import pytest

from stochastic_fd.stats import fit_order, moment_estimate


def test_exact_power_laws():
    hs = [0.2, 0.1, 0.05, 0.025]
    fit = fit_order([(h, 3.0 * h**2) for h in hs])
    assert fit.slope == pytest.approx(2.0, abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit_order([(h, 0.5 * h**4) for h in hs]).slope == pytest.approx(4.0, abs=1e-10)


def test_zero_error_is_dropped():
    pairs = [(0.2, 0.04), (0.1, 0.0), (0.05, 0.0025), (0.025, 0.000625)]
    fit = fit_order(pairs)
    assert fit.dropped == [(0.1, 0.0)]
    assert len(fit.pairs) == 3
    assert fit.slope == pytest.approx(2.0, abs=1e-10)


def test_too_few_pairs():
    fit = fit_order([(0.2, 0.1), (0.1, 0.0), (0.05, 0.02)])
    assert not fit.fitted
    assert fit.slope is None


def test_exact_tolerance():
    fit = fit_order([(0.2, 0.0), (0.1, 1e-16), (0.05, 0.0)], exact_tol=1e-14)
    assert fit.exact
    assert not fit.fitted


def test_single_seed_is_degenerate():
    estimate = moment_estimate([0.3], 2)
    assert estimate.degenerate
    assert estimate.value == pytest.approx(0.09)
    assert estimate.half_width == 0


def test_constant_errors_are_exact():
    estimate = moment_estimate([0.5] * 10, 3)
    assert estimate.value == 0.125
    assert estimate.half_width == 0
    assert not estimate.degenerate


def test_rejects_bad_order():
    with pytest.raises(ValueError):
        moment_estimate([1.0, 2.0], 0)


def test_bootstrap_band_coverage():
    # E[X^2] for lognormal(0, 0.5) is exp(2 * 0.25) = exp(0.5)
    truth = np.exp(0.5)
    rng = np.random.default_rng(42)
    covered = 0
    trials = 200
    for trial in range(trials):
        errors = rng.lognormal(0.0, 0.5, size=400)
        estimate = moment_estimate(errors, 2, n_resamples=500, seed=trial)
        covered += abs(estimate.value - truth) <= estimate.half_width
    assert covered / trials >= 0.88
