import numpy as np
import pytest

from spectralab.disorder import SeedPolicy, sample_weights
from spectralab.eigen import decompose, spectrum
from spectralab.errors import DegenerateEigenvalueError, ZeroEnergyError
from spectralab.hamiltonian import WeightField, build_matrix
from spectralab.perturb import (BondProjection, CaseId, SystemCase, build_system, check_determinants,
                                det_factored, determinant_scale, fit_hessian_constant, gradient,
                                gradient_separation, hessian, hessian_norm, jacobian2, normalized_jacobian2,
                                oracle_determinant, reconstruct_matrix, relative_error, sum_rule_residual)


def _widest(decomp):
    """Index (> 0) of the eigenvalue with the largest gap."""
    return int(np.argmax(decomp.gaps[1:])) + 1


def _moved(field, *moves):
    w = field.weights.copy()
    for g, dh in moves:
        w[g] += dh
    return spectrum(WeightField(w))


def test_bond_projection(rng):
    p = BondProjection(6, 7)
    m = p.matrix()
    u = rng.normal(size=7)
    assert np.allclose(m @ m, m)
    assert np.trace(m) == pytest.approx(p.trace())
    assert np.allclose(p.apply(u), m @ u)
    assert p.sites == (6, 0)


def test_projections_rebuild_the_matrix(small_field):
    assert np.allclose(reconstruct_matrix(small_field), build_matrix(small_field))


def test_gradient_matches_central_differences(small_field):
    decomp = decompose(small_field)
    k = _widest(decomp)
    grad = gradient(small_field, decomp, k)
    h = 1e-5
    fd = np.array([(_moved(small_field, (g, h))[k] - _moved(small_field, (g, -h))[k]) / (2 * h)
                   for g in range(small_field.n_sites)])
    assert np.max(np.abs(fd - grad)) <= 1e-6 * np.max(np.abs(grad))


def test_sum_rule(uniform_spec, seeds):
    for i in range(20):
        field = sample_weights(uniform_spec, 32, seeds, i)
        decomp = decompose(field)
        for k in range(1, 32):
            pair = decomp.pair(k)
            assert sum_rule_residual(field, pair) <= 1e-10 * pair.energy


def test_hessian_matches_second_differences(small_field):
    decomp = decompose(small_field)
    k = _widest(decomp)
    hess = hessian(small_field, decomp, k)
    e = decomp.eigenvalues[k]
    scale = np.max(np.abs(hess))
    h = 2e-4
    for g in range(small_field.n_sites):
        diag = (_moved(small_field, (g, h))[k] - 2 * e + _moved(small_field, (g, -h))[k]) / h**2
        assert abs(diag - hess[g, g]) <= 1e-4 * scale
    for g, b in [(0, 1), (2, 7), (5, 11)]:
        mixed = (_moved(small_field, (g, h), (b, h))[k] - _moved(small_field, (g, h), (b, -h))[k]
                 - _moved(small_field, (g, -h), (b, h))[k] + _moved(small_field, (g, -h), (b, -h))[k]) / (4 * h**2)
        assert abs(mixed - hess[g, b]) <= 1e-4 * scale


def test_hessian_is_symmetric_and_annihilates_weights(small_field):
    decomp = decompose(small_field)
    hess = hessian(small_field, decomp, 4)
    assert np.allclose(hess, hess.T)
    # E is homogeneous of degree one in the weights
    assert np.max(np.abs(hess @ small_field.weights)) <= 1e-8 * np.max(np.abs(hess))
    assert hessian_norm(hess) == pytest.approx(np.abs(hess).sum())


def test_degenerate_eigenvalue_is_refused():
    field = WeightField.constant(1.0, 8)
    decomp = decompose(field)
    with pytest.raises(DegenerateEigenvalueError) as exc:
        gradient(field, decomp, 1)
    assert exc.value.gap <= exc.value.threshold
    with pytest.raises(DegenerateEigenvalueError):
        hessian(field, decomp, 1)


def test_jacobians(small_field):
    decomp = decompose(small_field)
    i, ip = 3, 9
    j = jacobian2(small_field, decomp, i, ip, 2, 3)
    g, gp = gradient(small_field, decomp, i), gradient(small_field, decomp, ip)
    assert j == pytest.approx(g[2] * gp[3] - g[3] * gp[2])
    norm = normalized_jacobian2(small_field, decomp, i, ip, 2, 3)
    assert norm.prefactor * norm.determinant == pytest.approx(j)
    assert norm.row_sums == pytest.approx((1.0, 1.0))
    with pytest.raises(ZeroEnergyError):
        normalized_jacobian2(small_field, decomp, 0, ip, 2, 3)


def test_gradient_separation_never_violated(uniform_spec, seeds):
    for i in range(10):
        field = sample_weights(uniform_spec, 41, seeds, i)
        decomp = decompose(field)
        a, b = decomp.pair(10), decomp.pair(30)
        sep = gradient_separation(field, a, b, a.energy - b.energy, uniform_spec.beta0)
        assert not sep.violated
        assert sep.lower_bound == pytest.approx(abs(a.energy - b.energy) / (2 * 1.5 * np.sqrt(41)))


@pytest.mark.parametrize("case_id", list(CaseId))
def test_closed_form_determinants(case_id, rng):
    for _ in range(50):
        w = rng.uniform(0.5, 1.5, 4)
        e, ep = rng.uniform(0.2, 4.0, 2)
        case = SystemCase(case_id, *w, e, ep)
        assert relative_error(case) <= 1e-9
        assert build_system(case).shape == (10, 10)


def test_zero_factor_substitution_is_singular():
    for case_id in CaseId:
        case = SystemCase(case_id, 0.9, 1.1, 0.7, 1.3, 2.5, 0.6).with_zero_factor()
        assert det_factored(case) == pytest.approx(0.0, abs=1e-12)
        assert oracle_determinant(build_system(case)) <= 1e-10 * determinant_scale(case)


def test_zero_energy_is_refused():
    with pytest.raises(ZeroEnergyError):
        build_system(SystemCase(CaseId.A0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0))
    with pytest.raises(ZeroEnergyError):
        det_factored(SystemCase(CaseId.A1, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0))


def test_determinant_table():
    checks = check_determinants(1000, SeedPolicy(1))
    assert [c.case for c in checks] == list(CaseId)
    for c in checks:
        assert c.draws == 1000
        assert c.max_rel_err <= 1e-9
        assert c.max_zero_factor <= 1e-10


def test_hessian_constant_fit():
    gaps = np.linspace(0.05, 1.0, 40)
    fit = fit_hessian_constant(3.0 / gaps, gaps)
    assert fit.constant == pytest.approx(3.0)
    assert fit.stable
    with pytest.raises(ValueError):
        fit_hessian_constant([1.0], [1.0])
