# spectralab/stats.py
"""Density of states, rescaled level process, window counts and decay fits."""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats as sps

from . import config
from .disorder import DisorderSpec, SeedPolicy, sample_weights
from .eigen import SpectralDecomposition, spectrum
from .errors import ConfigurationError
from .hamiltonian import half_length

logger = logging.getLogger(__name__)

DOS_GRID_SIZE = 401
DOS_HISTOGRAM_BINS = 4096

Window = tuple[float, float]


def check_reference_energy(energy: float, beta0: float, allow_low_energy: bool = False) -> None:
    """Refuse reference energies in the bottom of the band unless allowed."""
    floor = config.LOW_ENERGY_FRACTION * 4.0 * beta0
    if energy < floor and not allow_low_energy:
        raise ConfigurationError(
            f"reference energy {energy} is below {floor:g} = {config.LOW_ENERGY_FRACTION} * 4 beta0; "
            "set allow_low_energy to explore it"
        )


# ---- density of states -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DosEstimate:
    grid: np.ndarray
    n_hat: np.ndarray
    nu_hat: np.ndarray
    n_samples: int
    n_sites: int
    bandwidth: float

    def nu_at(self, energy: float) -> float:
        return float(np.interp(energy, self.grid, self.nu_hat))

    def n_at(self, energy: float) -> float:
        return float(np.interp(energy, self.grid, self.n_hat))


def default_bandwidth(beta0: float, n_sites: int) -> float:
    return 4.0 * beta0 * n_sites ** (-1.0 / 3.0)


def sample_spectrum(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, index: int) -> dict[str, Any]:
    """Per-sample record: the sorted eigenvalues of one field."""
    values = spectrum(sample_weights(spec, n_sites, seeds, index))
    return {"index": index, "eigenvalues": values.tolist()}


def dos_from_spectra(spectra: Sequence[Sequence[float]], beta0: float, n_sites: int,
                     bandwidth: float | None = None, grid_size: int = DOS_GRID_SIZE) -> DosEstimate:
    """IDS and smoothed density from per-sample eigenvalue lists.

    N_hat is the exact pooled eigenvalue CDF. nu_hat is a Gaussian kernel
    estimate reflected at both band edges, evaluated from a fine histogram.
    """
    if bandwidth is None:
        bandwidth = default_bandwidth(beta0, n_sites)
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be > 0 (got {bandwidth})")
    if len(spectra) < 1:
        raise ValueError("need at least one sample")
    top = 4.0 * beta0
    values = np.clip(np.sort(np.concatenate([np.asarray(s, dtype=float) for s in spectra])), 0.0, top)
    grid = np.linspace(0.0, top, grid_size)
    n_hat = np.searchsorted(values, grid, side="right") / values.size

    counts, edges = np.histogram(values, bins=DOS_HISTOGRAM_BINS, range=(0.0, top))
    centers = 0.5 * (edges[:-1] + edges[1:])
    weights = counts / values.size
    kernel = np.zeros_like(grid)
    for image in (centers, -centers, 2.0 * top - centers):
        kernel += sps.norm.pdf((grid[:, None] - image[None, :]) / bandwidth) @ weights
    nu_hat = kernel / bandwidth
    return DosEstimate(grid, n_hat, nu_hat, len(spectra), n_sites, float(bandwidth))


def estimate_dos(spec: DisorderSpec, n_sites: int, n_samples: int, seeds: SeedPolicy,
                 bandwidth: float | None = None, *,
                 mapper: Callable[[str, Callable[[int], dict], int], list[dict]] | None = None,
                 grid_size: int = DOS_GRID_SIZE) -> DosEstimate:
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1 (got {n_samples})")
    if bandwidth is not None and bandwidth <= 0:
        raise ValueError(f"bandwidth must be > 0 (got {bandwidth})")
    task = functools.partial(sample_spectrum, spec, n_sites, seeds)
    records = mapper("dos", task, n_samples) if mapper else [task(i) for i in range(n_samples)]
    dos = dos_from_spectra([r["eigenvalues"] for r in records], spec.beta0, n_sites, bandwidth, grid_size)
    logger.info("DOS estimate: N=%d samples=%d bandwidth=%.4f", n_sites, n_samples, dos.bandwidth)
    return dos


# ---- rescaled process ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RescaledProcess:
    reference_energy: float
    nu_at_e: float
    volume: int
    points: np.ndarray
    source: dict[str, Any] = field(default_factory=dict)

    def unrescale(self) -> np.ndarray:
        return self.reference_energy + self.points / (self.volume * self.nu_at_e)

    def count(self, window: Window) -> int:
        """Points in the half-open window [a, b), with multiplicity."""
        a, b = window
        return int(np.searchsorted(self.points, b, side="left") - np.searchsorted(self.points, a, side="left"))


def rescale(decomp: SpectralDecomposition | np.ndarray, energy: float, nu_at_e: float,
            volume: int | None = None) -> RescaledProcess:
    if nu_at_e <= 0:
        raise ValueError(f"density of states at E must be > 0 (got {nu_at_e})")
    if isinstance(decomp, SpectralDecomposition):
        values, source = decomp.eigenvalues, decomp.source
    else:
        values, source = np.asarray(decomp, dtype=float), {}
    volume = values.size if volume is None else int(volume)
    points = volume * nu_at_e * (values - energy)
    return RescaledProcess(float(energy), float(nu_at_e), volume, points, dict(source))


def validate_windows(windows: Sequence[Sequence[float]]) -> list[Window]:
    """Check windows are bounded, nonempty and pairwise disjoint as [a, b)."""
    out = []
    for w in windows:
        a, b = float(w[0]), float(w[1])
        if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
            raise ValueError(f"window {w!r} must be a bounded interval with a < b")
        out.append((a, b))
    ordered = sorted(out)
    for (a0, b0), (a1, b1) in zip(ordered, ordered[1:]):
        if a1 < b0:
            raise ValueError(f"windows [{a0}, {b0}) and [{a1}, {b1}) overlap")
    return out


def count_in_windows(points: np.ndarray, windows: Sequence[Window]) -> list[int]:
    points = np.asarray(points)
    return [int(np.searchsorted(points, b, side="left") - np.searchsorted(points, a, side="left"))
            for a, b in windows]


@dataclass(frozen=True, eq=False)
class CountRecord:
    windows: tuple[Window, ...]
    counts: np.ndarray  # (n_samples, n_windows)
    targets: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        windows = tuple(validate_windows(self.windows))
        counts = np.asarray(self.counts, dtype=int).reshape(-1, len(windows))
        if np.any(counts < 0):
            raise ValueError("counts must be >= 0")
        if self.targets is not None and len(self.targets) != len(windows):
            raise ValueError("one target count per window is required")
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "counts", counts)

    @property
    def n_samples(self) -> int:
        return int(self.counts.shape[0])


def synthetic_poisson_counts(intensities: Sequence[float], n_samples: int, seeds: SeedPolicy,
                             windows: Sequence[Window] | None = None) -> CountRecord:
    """Counts drawn directly from independent Poisson laws."""
    rng = seeds.generator(0)
    lam = np.asarray(intensities, dtype=float)
    counts = rng.poisson(lam, size=(n_samples, lam.size))
    if windows is None:
        edges = np.concatenate(([0.0], np.cumsum(lam)))
        windows = list(zip(edges[:-1], edges[1:]))
    return CountRecord(tuple(windows), counts)


# ---- Poisson fit ---------------------------------------------------------------------

def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    ci = sps.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class WindowFit:
    window: Window
    intensity: float
    ks: tuple[int, ...]
    empirical: tuple[float, ...]
    poisson: tuple[float, ...]
    tv: float


@dataclass(frozen=True)
class PoissonFit:
    windows: tuple[WindowFit, ...]
    n_samples: int
    joint_targets: tuple[int, ...] | None
    joint_empirical: float | None
    joint_interval: tuple[float, float] | None
    joint_poisson: float | None

    @property
    def max_tv(self) -> float:
        return max(w.tv for w in self.windows)


def poisson_fit(records: CountRecord, intensities: Sequence[float] | None = None, *,
                min_samples: int = 1000, confidence: float = 0.95) -> PoissonFit:
    """Compare per-window count laws with Poisson(|U_j|).

    The total-variation distance includes the Poisson tail beyond the largest
    observed count.
    """
    n = records.n_samples
    if n < min_samples:
        raise ValueError(f"poisson_fit needs at least {min_samples} samples (got {n})")
    if intensities is None:
        intensities = [b - a for a, b in records.windows]
    fits = []
    for j, (window, lam) in enumerate(zip(records.windows, intensities)):
        column = records.counts[:, j]
        kmax = int(column.max())
        ks = np.arange(kmax + 1)
        empirical = np.bincount(column, minlength=kmax + 1) / n
        reference = sps.poisson.pmf(ks, lam)
        tail = float(sps.poisson.sf(kmax, lam))
        tv = 0.5 * (float(np.abs(empirical - reference).sum()) + tail)
        fits.append(WindowFit(window, float(lam), tuple(int(k) for k in ks),
                              tuple(float(p) for p in empirical), tuple(float(p) for p in reference), tv))

    joint = interval = product = None
    if records.targets is not None:
        hits = int(np.all(records.counts == np.asarray(records.targets), axis=1).sum())
        joint = hits / n
        interval = wilson_interval(hits, n, confidence)
        product = float(np.prod([sps.poisson.pmf(k, lam) for k, lam in zip(records.targets, intensities)]))
    return PoissonFit(tuple(fits), n, records.targets, joint, interval, product)


# ---- localization diagnostics ----------------------------------------------------------

@dataclass(frozen=True)
class LocalizationDiagnostic:
    index: int
    energy: float
    center: int
    decay_rate: float
    sup_bound_ok: bool | None


CORE_RADIUS = 2
AMPLITUDE_FLOOR = 1e-12


def periodic_distance(n_sites: int, center: int) -> np.ndarray:
    d = np.abs(np.arange(n_sites) - center)
    return np.minimum(d, n_sites - d)


def diagnose_vector(u: np.ndarray, *, q: float | None = None,
                    nu: float | None = None) -> tuple[int, float, bool | None]:
    """(center, decay_rate, sup_bound_ok) for one normalized vector.

    The center is the largest index among the maximizers of |u|. The decay
    rate is minus the least-squares slope of log|u| against the periodic
    distance to the center, over entries above the amplitude floor and
    outside a core of radius 2; +inf when fewer than two distances remain.
    """
    amp = np.abs(np.asarray(u, dtype=float))
    n = amp.size
    peak = amp.max()
    center = int(np.flatnonzero(amp >= peak * (1.0 - 1e-12)).max())
    dist = periodic_distance(n, center)
    keep = (dist > CORE_RADIUS) & (amp > AMPLITUDE_FLOOR)
    if np.unique(dist[keep]).size < 2:
        rate = math.inf
    else:
        slope = sps.linregress(dist[keep], np.log(amp[keep])).slope
        rate = float(-slope)

    ok = None
    if q is not None and nu is not None:
        envelope = half_length(n) ** q * np.exp(-nu * dist)
        ok = bool(np.all(amp <= envelope * (1.0 + 1e-12)))
    return center, rate, ok


def localization_diagnostics(decomp: SpectralDecomposition, window: Window, *,
                             q: float | None = None, nu: float | None = None) -> list[LocalizationDiagnostic]:
    lo, hi = window
    out = []
    for i in np.flatnonzero((decomp.eigenvalues >= lo) & (decomp.eigenvalues <= hi)):
        center, rate, ok = diagnose_vector(decomp.vector(int(i)), q=q, nu=nu)
        out.append(LocalizationDiagnostic(int(i), float(decomp.eigenvalues[i]), center, rate, ok))
    return out
