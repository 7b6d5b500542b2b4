# spectralab/eigen.py
"""Dense symmetric eigensolver for the ring operator.

``decompose`` calls LAPACK ``dsyev`` through ``scipy.linalg.eigh(driver="ev")``:
Householder reduction to tridiagonal form, then implicit-shift QL/QR with
accumulated transforms. The two periodic corner entries go through the dense
reduction like any other entry.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from . import config
from .errors import SolverError
from .hamiltonian import WeightField, build_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Eigenpair:
    index: int
    energy: float
    vector: np.ndarray
    gap: float


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    residuals: np.ndarray
    gaps: np.ndarray
    matrix_norm: float
    source: dict[str, Any] = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return int(self.eigenvalues.size)

    def vector(self, index: int) -> np.ndarray:
        return self.eigenvectors[:, index]

    def pair(self, index: int) -> Eigenpair:
        return Eigenpair(index, float(self.eigenvalues[index]), self.eigenvectors[:, index],
                         float(self.gaps[index]))

    def is_simple(self, index: int, rtol: float = config.DEGENERACY_RTOL) -> bool:
        return bool(self.gaps[index] > rtol * self.matrix_norm)

    def invariant_problems(self, upper: float | None = None) -> list[str]:
        """Return violated decomposition invariants (empty when all hold)."""
        tol = config.EIGEN_TOLERANCES
        norm = self.matrix_norm
        u = self.eigenvectors
        problems = []
        if np.any(np.diff(self.eigenvalues) < 0):
            problems.append("eigenvalues not ascending")
        ortho = float(np.max(np.abs(u.T @ u - np.eye(self.n_sites))))
        if ortho > tol["orthonormality"]:
            problems.append(f"orthonormality defect {ortho:.3e}")
        worst = float(self.residuals.max())
        if worst > tol["residual"] * norm:
            problems.append(f"residual {worst:.3e} exceeds {tol['residual']:.0e} * ||H||")
        slack = tol["range"] * norm
        if self.eigenvalues[0] < -slack:
            problems.append(f"negative eigenvalue {self.eigenvalues[0]:.3e}")
        if upper is not None and self.eigenvalues[-1] > upper + slack:
            problems.append(f"eigenvalue {self.eigenvalues[-1]:.6f} above {upper:.6f}")
        if abs(self.eigenvalues[0]) > tol["residual"] * norm:
            problems.append(f"E_1 = {self.eigenvalues[0]:.3e} is not a numerical zero")
        return problems


def _gaps(values: np.ndarray) -> np.ndarray:
    d = np.diff(values)
    left = np.concatenate(([np.inf], d))
    right = np.concatenate((d, [np.inf]))
    return np.minimum(left, right)


def _normalize_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    peak = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[peak, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def decompose(field: WeightField, *, check: bool = True) -> SpectralDecomposition:
    """Full ordered spectrum and orthonormal eigenvectors of H.

    With ``check`` the decomposition invariants are verified and any violation
    is raised as :class:`SolverError` carrying the field's source.
    """
    h = build_matrix(field)
    try:
        values, vectors = scipy.linalg.eigh(h, driver="ev", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"dsyev failed to converge: {exc}", field.source) from exc

    vectors = _normalize_signs(vectors)
    residuals = np.linalg.norm(h @ vectors - vectors * values, axis=0)
    norm = float(np.max(np.abs(values)))
    decomp = SpectralDecomposition(
        eigenvalues=values,
        eigenvectors=vectors,
        residuals=residuals,
        gaps=_gaps(values),
        matrix_norm=norm,
        source=dict(field.source),
    )
    if check:
        problems = decomp.invariant_problems(upper=4.0 * float(field.weights.max()))
        if problems:
            raise SolverError("decomposition invariants violated: " + "; ".join(problems), field.source)
    return decomp


def spectrum(field: WeightField) -> np.ndarray:
    """Ascending eigenvalues only (same LAPACK driver, no vectors)."""
    try:
        return scipy.linalg.eigvalsh(build_matrix(field), driver="ev", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"dsyev failed to converge: {exc}", field.source) from exc


def eigenpairs_near(decomp: SpectralDecomposition, energy: float, radius: float) -> list[Eigenpair]:
    if radius <= 0:
        raise ValueError(f"radius must be > 0 (got {radius})")
    hits = np.flatnonzero(np.abs(decomp.eigenvalues - energy) < radius)
    return [decomp.pair(int(i)) for i in hits]


def write_eigenvalues_csv(path: str, eigenvalues: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "eigenvalue"])
        for i, e in enumerate(eigenvalues):
            writer.writerow([i, repr(float(e))])


def read_eigenvalues_csv(path: str) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return np.array([float(r["eigenvalue"]) for r in sorted(rows, key=lambda r: int(r["index"]))])
