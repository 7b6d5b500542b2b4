# spectralab/hamiltonian.py
"""Periodic finite-volume operator with bond disorder and its transfer matrices.

Index convention (0-based): bond ``g`` couples sites ``g`` and ``g + 1 (mod N)``,
so the eigenequation at site ``n`` involves bonds ``n - 1`` and ``n``::

    (H u)(n) = w[n] (u[n] - u[n+1]) - w[n-1] (u[n-1] - u[n])
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import SingularBondError, UnboundedTransferError

logger = logging.getLogger(__name__)


def half_length(n_sites: int) -> int:
    """L such that a ring of ``n_sites`` plays the role of [-L, L]."""
    return (n_sites - 1) // 2


@dataclass(frozen=True, eq=False)
class WeightField:
    """One realization of bond weights on a ring of N bonds."""

    weights: np.ndarray
    source: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.array(self.weights, dtype=float)
        if arr.ndim != 1 or arr.size < 3:
            raise ValueError(f"a weight field needs a 1-D array of at least 3 bonds (got shape {arr.shape})")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("weights must be finite and >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)
        object.__setattr__(self, "source", dict(self.source))

    @classmethod
    def constant(cls, value: float, n_sites: int) -> "WeightField":
        return cls(np.full(n_sites, float(value)), source={"constant": float(value)})

    @property
    def n_sites(self) -> int:
        return int(self.weights.size)

    def weight(self, gamma: int) -> float:
        return float(self.weights[gamma % self.n_sites])

    def rotated(self, k: int) -> "WeightField":
        """Relabel bonds cyclically: new bond g is old bond g + k."""
        return WeightField(np.roll(self.weights, -k), source={**self.source, "rotated": int(k)})

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["omega"])
            for w in self.weights:
                writer.writerow([repr(float(w))])

    @classmethod
    def from_csv(cls, path: str) -> "WeightField":
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or "omega" not in reader.fieldnames:
                raise ValueError(f"{path}: expected header 'omega'")
            weights = [float(row["omega"]) for row in reader]
        return cls(np.asarray(weights), source={"csv": path})


def build_matrix(field: WeightField) -> np.ndarray:
    w = field.weights
    n = field.n_sites
    idx = np.arange(n)
    nxt = (idx + 1) % n
    h = np.zeros((n, n))
    h[idx, idx] = w + np.roll(w, 1)
    h[idx, nxt] = -w
    h[nxt, idx] = -w
    return h


def apply(field: WeightField, u: np.ndarray) -> np.ndarray:
    """Matrix-free H u."""
    u = np.asarray(u, dtype=float)
    if u.shape != (field.n_sites,):
        raise ValueError(f"vector length {u.shape} does not match {field.n_sites} sites")
    flux = field.weights * (u - np.roll(u, -1))
    return flux - np.roll(flux, 1)


def quadratic_form(field: WeightField, u: np.ndarray) -> float:
    """<H u, u> = sum_g w[g] (u[g] - u[g+1])**2."""
    u = np.asarray(u, dtype=float)
    return float(np.sum(field.weights * (u - np.roll(u, -1)) ** 2))


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    site: int
    energy: float
    entries: np.ndarray

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.entries @ np.asarray(v, dtype=float)

    @property
    def determinant(self) -> float:
        return float(-self.entries[0, 1])

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.entries)


def transfer_matrix(field: WeightField, n: int, energy: float) -> TransferMatrix:
    """T(n, E) with (u[n+1], u[n]) = T(n, E) (u[n], u[n-1])."""
    right = field.weight(n)
    left = field.weight(n - 1)
    if right == 0:
        raise SingularBondError(f"bond {n % field.n_sites} has weight 0; transfer matrix undefined")
    entries = np.array([[(right + left - energy) / right, -left / right], [1.0, 0.0]])
    return TransferMatrix(site=n % field.n_sites, energy=float(energy), entries=entries)


def propagate(field: WeightField, energy: float, v_start: np.ndarray, start: int, steps: int) -> np.ndarray:
    """Apply T(start+1), ..., T(start+steps) to v(start) = (u[start+1], u[start]).

    Returns the trajectory, shape (steps + 1, 2), row k being v(start + k).
    """
    out = np.empty((steps + 1, 2))
    out[0] = v_start
    for k in range(1, steps + 1):
        out[k] = transfer_matrix(field, start + k, energy) @ out[k - 1]
    return out


# ---- uniform bounds ----------------------------------------------------------

def transfer_norm_bound(left: np.ndarray | float, right: np.ndarray | float,
                        energy: np.ndarray | float) -> np.ndarray:
    """max of the l1 and l-infinity operator norms of T and T^-1.

    Both norms dominate the spectral norm, since ||A||_2**2 <= ||A||_1 ||A||_inf.
    """
    a = np.asarray(left, dtype=float)
    b = np.asarray(right, dtype=float)
    e = np.asarray(energy, dtype=float)
    diag = np.abs(a + b - e)
    t_inf = np.maximum(diag / b + a / b, 1.0)
    t_one = np.maximum(diag / b + 1.0, a / b)
    inv_inf = np.maximum(b / a + diag / a, 1.0)
    inv_one = np.maximum(b / a, 1.0 + diag / a)
    return np.maximum.reduce([t_inf, t_one, inv_inf, inv_one])


def growth_constant(alpha0: float, beta0: float, window: tuple[float, float] | None = None) -> float:
    """eta = log C, C a uniform bound on ||T|| and ||T^-1|| over the weight box.

    Each norm is convex in the energy, in one weight, and in the reciprocal of
    the other, so the supremum over [alpha0, beta0]**2 x window sits on one of
    the eight vertices.
    """
    if alpha0 <= 0:
        raise UnboundedTransferError(
            "alpha0 = 0 admits arbitrarily small weights; use realized_growth_constant per field"
        )
    if beta0 < alpha0:
        raise ValueError(f"beta0 must be >= alpha0 (got {alpha0}, {beta0})")
    lo, hi = window if window is not None else (0.0, 4.0 * beta0)
    corners = np.array(list(itertools.product((alpha0, beta0), (alpha0, beta0), (lo, hi))))
    c = float(transfer_norm_bound(corners[:, 0], corners[:, 1], corners[:, 2]).max())
    return math.log(c)


def realized_growth_constant(field: WeightField, window: tuple[float, float] | None = None) -> float:
    """eta for one realization: the bound taken over the weights actually present."""
    w = field.weights
    if np.any(w == 0):
        raise SingularBondError("field contains a zero bond; transfer matrices are unbounded")
    lo, hi = window if window is not None else (0.0, 4.0 * float(w.max()))
    left = np.roll(w, 1)
    c = max(
        float(transfer_norm_bound(left, w, lo).max()),
        float(transfer_norm_bound(left, w, hi).max()),
    )
    return math.log(c)


@dataclass(frozen=True)
class WindowCheck:
    k0: int
    halfwidth: int
    verified: bool
    threshold: float
    min_mass: float
    skipped: bool = False


def pair_mass(u: np.ndarray) -> np.ndarray:
    """u[k]**2 + u[k+1]**2 for interior k = 0 .. N-2 (no wrap)."""
    u = np.asarray(u, dtype=float)
    return u[:-1] ** 2 + u[1:] ** 2


def lower_bound_window(field: WeightField, energy: float, u: np.ndarray, beta: float, *,
                       eta: float | None = None, halfwidth: int | None = None) -> WindowCheck:
    """Check u[k]**2 + u[k+1]**2 >= exp(-L**beta / 2) near the peak of u.

    The window is centered at k0 = argmax of the pair mass and has half-width
    floor(L**beta / (8 eta)) unless ``halfwidth`` is given. With ``eta`` unset
    the realized growth constant of the field over [0, 4 max w] is used.
    A window reaching past either end of the interior pairs would wrap the
    periodic seam; it is returned with ``skipped`` set and ``verified`` False.
    """
    if not 0.5 < beta < 1.0:
        raise ValueError(f"beta must lie in (1/2, 1) (got {beta})")
    n = field.n_sites
    big_l = half_length(n)
    mass = pair_mass(u)
    k0 = int(np.argmax(mass))
    if halfwidth is None:
        if eta is None:
            eta = realized_growth_constant(field)
        halfwidth = int(math.floor(big_l ** beta / (8.0 * eta))) if eta > 0 else n
    lo, hi = k0 - halfwidth, k0 + halfwidth
    threshold = math.exp(-(big_l ** beta) / 2.0)
    if lo < 0 or hi > n - 2:
        logger.debug("window k0=%d halfwidth=%d E=%.6f wraps the seam, skipped", k0, halfwidth, energy)
        return WindowCheck(k0=k0, halfwidth=int(halfwidth), verified=False,
                           threshold=threshold, min_mass=math.nan, skipped=True)
    window_min = float(mass[lo:hi + 1].min())
    logger.debug("window k0=%d halfwidth=%d E=%.6f min=%.3e threshold=%.3e",
                 k0, halfwidth, energy, window_min, threshold)
    return WindowCheck(k0=k0, halfwidth=int(halfwidth), verified=window_min >= threshold,
                       threshold=threshold, min_mass=window_min)
