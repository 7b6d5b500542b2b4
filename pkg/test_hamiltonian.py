import math

import numpy as np
import pytest

from spectralab.disorder import sample_weights
from spectralab.eigen import decompose, spectrum
from spectralab.errors import SingularBondError, UnboundedTransferError
from spectralab.hamiltonian import (WeightField, apply, build_matrix, growth_constant, lower_bound_window,
                                    propagate, quadratic_form, realized_growth_constant, transfer_matrix,
                                    transfer_norm_bound)


@pytest.mark.parametrize("n", [3, 8, 64, 513, 1024])
def test_constant_ring_spectrum(n):
    c = 0.7
    values = spectrum(WeightField.constant(c, n))
    exact = np.sort(4 * c * np.sin(np.pi * np.arange(n) / n) ** 2)
    assert np.max(np.abs(values - exact)) <= 1e-9 * 4 * c


def test_matrix_shape(small_field):
    h = build_matrix(small_field)
    assert np.allclose(h, h.T)
    assert np.allclose(h.sum(axis=1), 0.0)
    w = small_field.weights
    assert h[0, -1] == -w[-1]
    assert h[0, 0] == w[0] + w[-1]


def test_matrix_free_apply(small_field, rng):
    u = rng.normal(size=small_field.n_sites)
    h = build_matrix(small_field)
    assert np.allclose(apply(small_field, u), h @ u)
    assert quadratic_form(small_field, u) == pytest.approx(u @ h @ u)
    with pytest.raises(ValueError):
        apply(small_field, u[:-1])


def test_weight_field_validation():
    with pytest.raises(ValueError):
        WeightField(np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        WeightField(np.array([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        WeightField(np.array([1.0, np.nan, 1.0]))


def test_rotation_keeps_spectrum(small_field):
    rotated = small_field.rotated(5)
    assert rotated.weight(0) == small_field.weight(5)
    assert small_field.weight(-1) == small_field.weight(small_field.n_sites - 1)
    assert np.allclose(spectrum(rotated), spectrum(small_field))


def test_csv_round_trip(small_field, tmp_path):
    path = str(tmp_path / "weights.csv")
    small_field.to_csv(path)
    assert np.array_equal(WeightField.from_csv(path).weights, small_field.weights)


def test_transfer_matrix_follows_eigenvector(small_field):
    decomp = decompose(small_field)
    n = small_field.n_sites
    for k in (1, 5, n - 1):
        u = decomp.vector(k)
        energy = decomp.eigenvalues[k]
        for site in range(n):
            t = transfer_matrix(small_field, site, energy)
            step = t @ np.array([u[site], u[site - 1]])
            assert step == pytest.approx([u[(site + 1) % n], u[site]], abs=1e-9)


def test_transfer_matrix_algebra(small_field):
    t = transfer_matrix(small_field, 3, 1.2)
    w = small_field.weights
    assert t.determinant == pytest.approx(w[2] / w[3])
    assert np.allclose(t.inverse() @ t.entries, np.eye(2))
    assert t.site == 3


def test_zero_bond_is_singular():
    field = WeightField(np.array([1.0, 0.0, 1.0, 1.0]))
    with pytest.raises(SingularBondError):
        transfer_matrix(field, 1, 0.5)
    with pytest.raises(SingularBondError):
        realized_growth_constant(field)


def test_propagate_reproduces_eigenvector(small_field):
    decomp = decompose(small_field)
    u = decomp.vector(4)
    traj = propagate(small_field, decomp.eigenvalues[4], np.array([u[1], u[0]]), 0, 8)
    for k in range(9):
        assert traj[k] == pytest.approx([u[k + 1], u[k]], abs=1e-8)


def test_growth_constant_for_unit_weights():
    assert growth_constant(1.0, 1.0) == pytest.approx(math.log(3.0))
    with pytest.raises(UnboundedTransferError):
        growth_constant(0.0, 1.0)


def test_norm_bound_dominates_spectral_norm(rng):
    for _ in range(200):
        a, b = rng.uniform(0.2, 2.0, 2)
        e = rng.uniform(0.0, 8.0)
        entries = np.array([[(a + b - e) / b, -a / b], [1.0, 0.0]])
        bound = float(transfer_norm_bound(a, b, e))
        assert np.linalg.norm(entries, 2) <= bound * (1 + 1e-12)
        assert np.linalg.norm(np.linalg.inv(entries), 2) <= bound * (1 + 1e-12)


def test_realized_growth_below_uniform(uniform_spec, seeds):
    window = (0.0, 6.0)
    eta = growth_constant(0.5, 1.5, window)
    for i in range(20):
        field = sample_weights(uniform_spec, 30, seeds, i)
        assert realized_growth_constant(field, window) <= eta + 1e-12


def test_lower_bound_window_holds_for_eigenvectors(uniform_spec, seeds):
    field = sample_weights(uniform_spec, 201, seeds, 0)
    decomp = decompose(field)
    checks = []
    for k in (1, 50, 100, 150, 200):
        check = lower_bound_window(field, decomp.eigenvalues[k], decomp.vector(k), 0.75)
        assert check.skipped or check.verified
        assert check.threshold == pytest.approx(math.exp(-(100 ** 0.75) / 2))
        assert 0 <= check.k0 <= 199
        checks.append(check)
    assert any(not c.skipped for c in checks)


def test_lower_bound_window_skips_the_seam(uniform_spec, seeds):
    field = sample_weights(uniform_spec, 201, seeds, 0)
    k = np.arange(201)
    peaked = np.exp(-np.minimum(k, 201 - k))
    peaked /= np.linalg.norm(peaked)

    at_seam = lower_bound_window(field, 1.0, peaked, 0.75, halfwidth=5)
    assert at_seam.k0 == 0
    assert at_seam.skipped
    assert not at_seam.verified
    assert math.isnan(at_seam.min_mass)

    inside = lower_bound_window(field, 1.0, np.roll(peaked, 100), 0.75, halfwidth=5)
    assert inside.k0 == 99
    assert not inside.skipped
    assert inside.verified
    assert inside.min_mass >= inside.threshold


def test_lower_bound_window_rejects_beta(small_field):
    u = np.ones(small_field.n_sites) / math.sqrt(small_field.n_sites)
    with pytest.raises(ValueError):
        lower_bound_window(small_field, 0.0, u, 0.4)
