import math

import numpy as np
import pytest

from spectralab.disorder import SeedPolicy
from spectralab.eigen import decompose
from spectralab.errors import ConfigurationError
from spectralab.hamiltonian import WeightField
from spectralab.stats import (CountRecord, check_reference_energy, count_in_windows, diagnose_vector,
                              dos_from_spectra, estimate_dos, localization_diagnostics, poisson_fit, rescale,
                              synthetic_poisson_counts, validate_windows, wilson_interval)


def _integral(x, y):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def test_dos_of_constant_ring():
    n = 256
    values = 4 * np.sin(np.pi * np.arange(n) / n) ** 2
    dos = dos_from_spectra([values], 1.0, n)
    assert dos.n_hat[-1] == 1.0
    assert np.all(np.diff(dos.n_hat) >= 0)
    assert _integral(dos.grid, dos.nu_hat) == pytest.approx(1.0, abs=0.01)
    assert dos.n_at(2.0) == pytest.approx(0.5, abs=0.01)


def test_estimate_dos(uniform_spec, seeds):
    dos = estimate_dos(uniform_spec, 64, 40, seeds)
    assert dos.n_samples == 40
    assert dos.n_at(4 * uniform_spec.beta0) == 1.0
    assert dos.nu_at(1.0) > 0
    assert dos.bandwidth == pytest.approx(6.0 * 64 ** (-1 / 3))
    with pytest.raises(ValueError):
        estimate_dos(uniform_spec, 64, 0, seeds)
    with pytest.raises(ValueError):
        estimate_dos(uniform_spec, 64, 4, seeds, bandwidth=-1.0)


@pytest.mark.slow
def test_dos_variance_halves_with_twice_the_samples(uniform_spec):
    replicates = 800

    def spread(n_samples, offset):
        values = [estimate_dos(uniform_spec, 32, n_samples, SeedPolicy(offset + r), grid_size=7).nu_at(1.0)
                  for r in range(replicates)]
        return float(np.var(values, ddof=1))

    ratio = spread(20, 100_000) / spread(10, 0)
    assert 0.35 <= ratio <= 0.65


def test_rescaled_counts_are_half_open():
    proc = rescale(np.array([0.0, 0.5, 1.0, 1.5, 2.0]), 1.0, 0.5, volume=4)
    assert np.allclose(proc.points, [-2.0, -1.0, 0.0, 1.0, 2.0])
    assert proc.count((-1.0, 1.0)) == 2
    assert proc.count((-2.0, 2.0)) == 4
    assert np.allclose(proc.unrescale(), [0.0, 0.5, 1.0, 1.5, 2.0])
    assert count_in_windows(proc.points, [(-1.0, 0.0), (0.0, 1.0)]) == [1, 1]


def test_rescale_a_decomposition(small_field):
    decomp = decompose(small_field)
    proc = rescale(decomp, 1.0, 0.3)
    assert proc.volume == small_field.n_sites
    assert proc.source == small_field.source
    with pytest.raises(ValueError):
        rescale(decomp, 1.0, 0.0)


def test_window_validation():
    assert validate_windows([[-1, 0], [0, 1]]) == [(-1.0, 0.0), (0.0, 1.0)]
    with pytest.raises(ValueError):
        validate_windows([[-1, 0.5], [0, 1]])
    with pytest.raises(ValueError):
        validate_windows([[1, 1]])
    with pytest.raises(ValueError):
        validate_windows([[0, math.inf]])


def test_poisson_calibration_on_synthetic_counts():
    counts = synthetic_poisson_counts([2.0], 20000, SeedPolicy(5), windows=[(-1.0, 1.0)])
    fit = poisson_fit(counts)
    assert fit.max_tv <= 0.02
    assert fit.windows[0].intensity == 2.0


def test_poisson_fit_joint_target():
    counts = synthetic_poisson_counts([0.5, 1.0], 5000, SeedPolicy(6))
    record = CountRecord(counts.windows, counts.counts, targets=(0, 1))
    fit = poisson_fit(record)
    expected = math.exp(-0.5) * math.exp(-1.0)
    low, high = fit.joint_interval
    assert fit.joint_poisson == pytest.approx(expected)
    assert low <= fit.joint_empirical <= high
    assert abs(fit.joint_empirical - expected) < 0.03


def test_poisson_fit_needs_samples():
    counts = synthetic_poisson_counts([1.0], 10, SeedPolicy(0))
    with pytest.raises(ValueError):
        poisson_fit(counts)


def test_wilson_interval():
    low, high = wilson_interval(30, 100)
    assert low < 0.3 < high
    assert wilson_interval(0, 0) == (0.0, 1.0)
    wide = wilson_interval(30, 100, 0.9973)
    assert wide[0] < low and wide[1] > high


def test_decay_fit_on_exponential_vector():
    n, center, rate = 101, 40, 0.3
    dist = np.minimum(np.abs(np.arange(n) - center), n - np.abs(np.arange(n) - center))
    u = np.exp(-rate * dist)
    u /= np.linalg.norm(u)
    found, fitted, ok = diagnose_vector(u, q=1.0, nu=rate)
    assert found == center
    assert fitted == pytest.approx(rate, rel=1e-6)
    assert ok


def test_decay_fit_on_flat_vector():
    _, rate, ok = diagnose_vector(np.ones(20) / math.sqrt(20))
    assert rate == pytest.approx(0.0, abs=1e-12)
    assert ok is None


def test_localization_diagnostics_window():
    decomp = decompose(WeightField.constant(1.0, 16))
    diags = localization_diagnostics(decomp, (0.5, 2.5))
    assert diags
    assert all(0.5 <= d.energy <= 2.5 for d in diags)


def test_low_energy_guard():
    check_reference_energy(1.0, 1.5)
    check_reference_energy(0.1, 1.5, allow_low_energy=True)
    with pytest.raises(ConfigurationError):
        check_reference_energy(0.1, 1.5)
