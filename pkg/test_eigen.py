import numpy as np
import pytest
import scipy.linalg

from spectralab.disorder import sample_weights
from spectralab.eigen import decompose, eigenpairs_near, read_eigenvalues_csv, spectrum, write_eigenvalues_csv
from spectralab.errors import SolverError
from spectralab.hamiltonian import build_matrix


def test_kernel_and_range_over_random_fields(uniform_spec, seeds):
    n = 64
    for i in range(1000):
        decomp = decompose(sample_weights(uniform_spec, n, seeds, i))
        norm = decomp.matrix_norm
        assert abs(decomp.eigenvalues[0]) <= 1e-10 * norm
        assert np.max(np.abs(decomp.vector(0) - 1.0 / np.sqrt(n))) <= 1e-8
        assert decomp.eigenvalues[-1] <= 4 * uniform_spec.beta0 + 1e-10


def test_decomposition_invariants(small_field):
    decomp = decompose(small_field)
    u = decomp.eigenvectors
    h = build_matrix(small_field)
    assert np.all(np.diff(decomp.eigenvalues) >= 0)
    assert np.allclose(u.T @ u, np.eye(small_field.n_sites), atol=1e-12)
    assert np.allclose(h @ u, u * decomp.eigenvalues, atol=1e-12)
    assert decomp.residuals.max() <= 1e-12
    assert decomp.invariant_problems(upper=4 * small_field.weights.max()) == []
    assert decomp.source == small_field.source


def test_signs_are_normalized(small_field):
    u = decompose(small_field).eigenvectors
    peaks = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    assert np.all(peaks > 0)


def test_gaps_and_simplicity(small_field):
    decomp = decompose(small_field)
    e = decomp.eigenvalues
    assert decomp.gaps[0] == pytest.approx(e[1] - e[0])
    assert decomp.gaps[-1] == pytest.approx(e[-1] - e[-2])
    assert decomp.gaps[3] == pytest.approx(min(e[3] - e[2], e[4] - e[3]))
    assert decomp.is_simple(3)


def test_eigenvalue_fast_path_matches(small_field):
    assert np.allclose(spectrum(small_field), decompose(small_field).eigenvalues, atol=1e-12)


def test_eigenpairs_near(small_field):
    decomp = decompose(small_field)
    target = float(decomp.eigenvalues[5])
    pairs = eigenpairs_near(decomp, target, 1e-9)
    assert [p.index for p in pairs] == [5]
    assert pairs[0].energy == target
    with pytest.raises(ValueError):
        eigenpairs_near(decomp, target, 0.0)


def test_solver_failure_carries_source(small_field, monkeypatch):
    def boom(*args, **kwargs):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(scipy.linalg, "eigh", boom)
    with pytest.raises(SolverError) as exc:
        decompose(small_field)
    assert exc.value.source == small_field.source
    assert "index" in str(exc.value)


def test_eigenvalue_csv(small_field, tmp_path):
    values = spectrum(small_field)
    path = str(tmp_path / "eigenvalues_0.csv")
    write_eigenvalues_csv(path, values)
    assert np.array_equal(read_eigenvalues_csv(path), values)
    with open(path) as f:
        assert f.readline().strip() == "index,eigenvalue"
