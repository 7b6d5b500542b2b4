# spectralab/perturb.py
"""Eigenvalue perturbation theory in the bond weights.

Since dH/dw_g = 2 P_g with P_g the rank-one bond projection, a simple
eigenpair (E, u) has

    dE/dw_g      = 2 <P_g u, u> = (u[g] - u[g+1])**2
    sum_g w_g dE/dw_g = E
    d2E/dw_g dw_b = -8 <R psi_g, psi_b>,   psi_g = <P_g u, u> u - P_g u

with R the reduced resolvent on the orthogonal complement of u. The module
also holds the 10x10 systems arising when two eigenvalues are moved by a pair
of neighbouring bonds, and their factored determinants.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import scipy.linalg

from . import config
from .disorder import SeedPolicy
from .eigen import Eigenpair, SpectralDecomposition
from .errors import DegenerateEigenvalueError, ZeroEnergyError
from .hamiltonian import WeightField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BondProjection:
    """P_g = 1/2 |d><d| with d = delta_g - delta_{g+1}, applied matrix-free."""

    gamma: int
    n_sites: int

    @property
    def sites(self) -> tuple[int, int]:
        g = self.gamma % self.n_sites
        return g, (g + 1) % self.n_sites

    def apply(self, u: np.ndarray) -> np.ndarray:
        i, j = self.sites
        c = 0.5 * (u[i] - u[j])
        out = np.zeros(self.n_sites)
        out[i] = c
        out[j] = -c
        return out

    def matrix(self) -> np.ndarray:
        i, j = self.sites
        m = np.zeros((self.n_sites, self.n_sites))
        m[i, i] = m[j, j] = 0.5
        m[i, j] = m[j, i] = -0.5
        return m

    def trace(self) -> float:
        return 1.0


def reconstruct_matrix(field: WeightField) -> np.ndarray:
    """sum_g 2 w_g P_g."""
    n = field.n_sites
    h = np.zeros((n, n))
    for g, w in enumerate(field.weights):
        h += 2.0 * w * BondProjection(g, n).matrix()
    return h


# ---- first order ---------------------------------------------------------------

def bond_gradient(u: np.ndarray) -> np.ndarray:
    """(u[g] - u[g+1])**2 over all bonds, without any simplicity check."""
    u = np.asarray(u, dtype=float)
    return (u - np.roll(u, -1)) ** 2


def require_simple(decomp: SpectralDecomposition, index: int,
                   rtol: float = config.DEGENERACY_RTOL) -> None:
    threshold = rtol * decomp.matrix_norm
    gap = float(decomp.gaps[index])
    if not gap > threshold:
        raise DegenerateEigenvalueError(index, gap, threshold)


def gradient(field: WeightField, decomp: SpectralDecomposition, index: int) -> np.ndarray:
    if decomp.n_sites != field.n_sites:
        raise ValueError("decomposition does not belong to this field")
    require_simple(decomp, index)
    return bond_gradient(decomp.vector(index))


def sum_rule_residual(field: WeightField, pair: Eigenpair) -> float:
    """|sum_g w_g dE/dw_g - E|."""
    return abs(float(np.dot(field.weights, bond_gradient(pair.vector))) - pair.energy)


# ---- second order ----------------------------------------------------------------

def psi_vectors(u: np.ndarray) -> np.ndarray:
    """Columns psi_g = <P_g u, u> u - P_g u, one per bond."""
    n = u.size
    c = 0.5 * (u - np.roll(u, -1))
    proj = np.zeros((n, n))
    idx = np.arange(n)
    proj[idx, idx] = c
    proj[(idx + 1) % n, idx] = -c
    weight = 2.0 * c * c
    return np.outer(u, weight) - proj


def hessian(field: WeightField, decomp: SpectralDecomposition, index: int) -> np.ndarray:
    """Second derivatives of E_index in the bond weights, via the spectral sum."""
    if decomp.n_sites != field.n_sites:
        raise ValueError("decomposition does not belong to this field")
    require_simple(decomp, index)
    u = decomp.vector(index)
    coeffs = decomp.eigenvectors.T @ psi_vectors(u)
    others = np.arange(decomp.n_sites) != index
    denom = decomp.eigenvalues[others] - decomp.eigenvalues[index]
    c = coeffs[others]
    h = -8.0 * (c.T / denom) @ c
    return 0.5 * (h + h.T)


def hessian_norm(h: np.ndarray) -> float:
    """Entrywise l1 norm; an upper bound on the l-infinity to l1 operator norm."""
    return float(np.abs(h).sum())


@dataclass(frozen=True)
class HessianConstantFit:
    constant: float
    batch_constants: tuple[float, ...]
    spread: float
    stable: bool


def fit_hessian_constant(norms: np.ndarray, gaps: np.ndarray, *, n_batches: int = 4,
                         max_spread: float = 0.5) -> HessianConstantFit:
    """C in ||Hess|| <= C / gap, as the median of ||Hess|| * gap.

    The fit is stable when every batch median is within ``max_spread``
    (relative) of the overall median.
    """
    products = np.asarray(norms, dtype=float) * np.asarray(gaps, dtype=float)
    if products.size < n_batches:
        raise ValueError(f"need at least {n_batches} samples to fit")
    constant = float(np.median(products))
    batches = tuple(float(np.median(b)) for b in np.array_split(products, n_batches))
    spread = max(abs(b - constant) for b in batches) / constant if constant > 0 else math.inf
    return HessianConstantFit(constant, batches, spread, spread <= max_spread)


# ---- Jacobian ---------------------------------------------------------------------

def jacobian2(field: WeightField, decomp: SpectralDecomposition, index: int, index_prime: int,
              gamma: int, gamma_prime: int) -> float:
    """det of d(E, E') / d(w_gamma, w_gamma')."""
    g = gradient(field, decomp, index)
    gp = gradient(field, decomp, index_prime)
    return float(g[gamma] * gp[gamma_prime] - g[gamma_prime] * gp[gamma])


@dataclass(frozen=True)
class NormalizedJacobian:
    determinant: float
    prefactor: float
    row_sums: tuple[float, float]


def normalized_jacobian2(field: WeightField, decomp: SpectralDecomposition, index: int,
                         index_prime: int, gamma: int, gamma_prime: int) -> NormalizedJacobian:
    """Jacobian with rows w_g dE/dw_g / E; det J = prefactor * determinant."""
    e = float(decomp.eigenvalues[index])
    ep = float(decomp.eigenvalues[index_prime])
    floor = config.EIGEN_TOLERANCES["residual"] * decomp.matrix_norm
    if abs(e) <= floor or abs(ep) <= floor:
        raise ZeroEnergyError(f"normalized Jacobian needs nonzero energies (E={e:.3e}, E'={ep:.3e})")
    w = field.weights
    row = w * gradient(field, decomp, index) / e
    row_p = w * gradient(field, decomp, index_prime) / ep
    det = float(row[gamma] * row_p[gamma_prime] - row[gamma_prime] * row_p[gamma])
    prefactor = e * ep / (w[gamma] * w[gamma_prime])
    return NormalizedJacobian(det, prefactor, (float(row.sum()), float(row_p.sum())))


@dataclass(frozen=True)
class Separation:
    l1_distance: float
    lower_bound: float
    violated: bool


def gradient_separation(field: WeightField, pair: Eigenpair, pair_prime: Eigenpair,
                        delta_energy: float, beta0: float) -> Separation:
    """||grad E - grad E'||_1 against delta_energy / (2 beta0 sqrt(N))."""
    distance = float(np.abs(bond_gradient(pair.vector) - bond_gradient(pair_prime.vector)).sum())
    bound = abs(delta_energy) / (2.0 * beta0 * math.sqrt(field.n_sites))
    return Separation(distance, bound, distance < bound)


# ---- 10x10 systems -------------------------------------------------------------------

class CaseId(str, Enum):
    A0 = "A0"
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"


@dataclass(frozen=True)
class SystemCase:
    """Parameters (w[n-2], w[n-1], w[n], w[n+1], E, E') of one linear system.

    Unknowns are ordered (u[n-2..n+2], v[n-2..n+2]).
    """

    case_id: CaseId
    omega_nm2: float
    omega_nm1: float
    omega_n: float
    omega_np1: float
    energy: float
    energy_prime: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "case_id", CaseId(self.case_id))

    def with_zero_factor(self) -> "SystemCase":
        """Same case with one weight substituted so the closed form vanishes."""
        e, ep = self.energy, self.energy_prime
        if self.case_id in (CaseId.A0, CaseId.A2):
            return replace(self, omega_n=(e - ep) / 4.0)
        if self.case_id is CaseId.A1:
            return replace(self, omega_nm1=(e + ep) ** 2 / (4.0 * self.omega_n))
        return replace(self, omega_nm1=(e - ep) / 4.0)


def build_system(case: SystemCase) -> np.ndarray:
    a, b, c, d = case.omega_nm2, case.omega_nm1, case.omega_n, case.omega_np1
    e, ep = case.energy, case.energy_prime
    cid = case.case_id
    if cid is not CaseId.A3 and ep == 0:
        raise ZeroEnergyError(f"{cid.value} contains E/E' and needs E' != 0")
    r = e / ep if ep != 0 else math.nan

    m = np.zeros((10, 10))
    # eigenequations of u at n-1, n, n+1 are shared by all cases
    m[4, 1:4] = (-b, b + c - e, -c)
    m[6, 2:5] = (-c, c + d - e, -d)
    m[8, 0:3] = (-a, a + b - e, -b)

    # difference rows: (u-part sign pattern, v-part sign pattern) per row
    pattern = {
        CaseId.A0: (+1, +1, +1, -1),
        CaseId.A1: (-1, -1, +1, +1),
        CaseId.A2: (-1, -1, +1, -1),
        CaseId.A3: (-1, +1, -1, +1),
    }[cid]
    for row, sign in enumerate(pattern):
        m[row, row] = 1.0
        m[row, row + 1] = -1.0
        m[row, 5 + row] = sign
        m[row, 6 + row] = -sign

    if cid is CaseId.A0:
        m[5, 2], m[5, 7] = r, -1.0
        m[7, 2:5] = (c, d - c, -d)
        m[7, 8] = ep
        m[9, 1], m[9, 6] = r, -1.0
    elif cid is CaseId.A1:
        m[5, 1:4] = (b, c - b, -c)
        m[5, 7] = -ep
        m[7, 3], m[7, 8] = r, -1.0
        m[9, 1], m[9, 6] = -r, -1.0
    elif cid is CaseId.A2:
        m[5, 1:4] = (b, c - b, -c)
        m[5, 7] = -ep
        m[7, 2:5] = (-c, c - d, d)
        m[7, 8] = -ep
        m[9, 1], m[9, 6] = -r, -1.0
    else:
        m[5, 1:4] = (-b, b - c, c)
        m[5, 7] = -ep
        m[7, 2:5] = (c, d - c, -d)
        m[7, 8] = -ep
        m[9, 0:3] = (a, b - a, -b)
        m[9, 6] = -ep
    return m


def det_factored(case: SystemCase) -> float:
    """Closed-form |det| of ``build_system(case)``."""
    a, b, c, d = case.omega_nm2, case.omega_nm1, case.omega_n, case.omega_np1
    e, ep = case.energy, case.energy_prime
    cid = case.case_id
    if cid in (CaseId.A0, CaseId.A1) and ep == 0:
        raise ZeroEnergyError(f"closed form for {cid.value} divides by E'")
    if cid is CaseId.A0:
        value = 4.0 * e / ep * (e + ep) * a * d * (c + (ep - e) / 4.0)
    elif cid is CaseId.A1:
        value = 4.0 * e / ep * a * d * (b * c - (e + ep) ** 2 / 4.0)
    elif cid is CaseId.A2:
        value = 4.0 * e * (e + ep) * a * d * (c + (ep - e) / 4.0)
    else:
        value = e * ep * a * d * (4.0 * b + ep - e) * (ep - e + 4.0 * c)
    return abs(value)


def determinant_scale(case: SystemCase) -> float:
    """The closed form with every |x + y| replaced by |x| + |y|."""
    a, b, c, d = (abs(x) for x in (case.omega_nm2, case.omega_nm1, case.omega_n, case.omega_np1))
    e, ep = abs(case.energy), abs(case.energy_prime)
    cid = case.case_id
    if cid is CaseId.A0:
        return 4.0 * e / ep * (e + ep) * a * d * (c + (ep + e) / 4.0)
    if cid is CaseId.A1:
        return 4.0 * e / ep * a * d * (b * c + (e + ep) ** 2 / 4.0)
    if cid is CaseId.A2:
        return 4.0 * e * (e + ep) * a * d * (c + (ep + e) / 4.0)
    return e * ep * a * d * (4.0 * b + ep + e) * (ep + e + 4.0 * c)


def oracle_determinant(matrix: np.ndarray) -> float:
    """|det| by LU with partial pivoting."""
    lu, piv = scipy.linalg.lu_factor(matrix, check_finite=False)
    swaps = int(np.count_nonzero(piv != np.arange(piv.size)))
    det = float(np.prod(np.diag(lu))) * (-1.0) ** swaps
    return abs(det)


def relative_error(case: SystemCase) -> float:
    return abs(det_factored(case) - oracle_determinant(build_system(case))) / determinant_scale(case)


@dataclass(frozen=True)
class DeterminantCheck:
    case: CaseId
    draws: int
    max_rel_err: float
    max_zero_factor: float


def random_case(case_id: CaseId, rng: np.random.Generator) -> SystemCase:
    """Weights in [0.5, 1.5], energies in [0.2, 4] with E != E'."""
    weights = rng.uniform(0.5, 1.5, 4)
    e, ep = rng.uniform(0.2, 4.0, 2)
    while e == ep:
        ep = rng.uniform(0.2, 4.0)
    return SystemCase(case_id, *weights, e, ep)


def check_determinants(draws: int, seeds: SeedPolicy) -> list[DeterminantCheck]:
    """Closed forms against the LU oracle over random draws, one stream per case.

    ``max_zero_factor`` is the largest |det| / scale after the zero-factor
    substitution.
    """
    results = []
    for k, case_id in enumerate(CaseId):
        rng = seeds.generator(k)
        worst = zero = 0.0
        for _ in range(draws):
            case = random_case(case_id, rng)
            worst = max(worst, relative_error(case))
            degenerate = case.with_zero_factor()
            zero = max(zero, oracle_determinant(build_system(degenerate)) / determinant_scale(degenerate))
        logger.info("determinant check %s: draws=%d max_rel_err=%.3e zero=%.3e",
                    case_id.value, draws, worst, zero)
        results.append(DeterminantCheck(case_id, draws, worst, zero))
    return results
