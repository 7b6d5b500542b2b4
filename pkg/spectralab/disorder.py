# spectralab/disorder.py
"""Bond-weight laws and reproducible sampling.

Three laws are supported:

- ``UniformInterval``: uniform on [alpha0, beta0] (alpha0 == beta0 is a point mass)
- ``TabulatedDensity``: piecewise-linear density through (t, rho) knots
- ``HeavyNearZero``: F(t) = exp(beta0**-eta - t**-eta) on (0, beta0]

Every draw goes through a :class:`SeedPolicy`, which derives an independent
counter-based stream for each sample index.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import ConfigurationError
from .hamiltonian import WeightField

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-9


class DisorderKind(str, Enum):
    UNIFORM = "UniformInterval"
    TABULATED = "TabulatedDensity"
    HEAVY = "HeavyNearZero"


@dataclass(frozen=True)
class DisorderSpec:
    kind: DisorderKind
    alpha0: float = 0.0
    beta0: float = 1.0
    eta: float = 1.0
    density_table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        try:
            kind = DisorderKind(self.kind)
        except ValueError:
            valid = ", ".join(k.value for k in DisorderKind)
            raise ConfigurationError(f"unknown disorder kind {self.kind!r} (valid: {valid})")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "beta0", float(self.beta0))
        object.__setattr__(self, "eta", float(self.eta))
        if self.density_table is not None:
            table = tuple((float(t), float(r)) for t, r in self.density_table)
            object.__setattr__(self, "density_table", table)

        problems = self._problems()
        if problems:
            raise ConfigurationError(f"invalid {kind.value} disorder spec", problems)

    # ---- constructors -------------------------------------------------

    @classmethod
    def uniform(cls, alpha0: float, beta0: float) -> "DisorderSpec":
        return cls(DisorderKind.UNIFORM, alpha0, beta0)

    @classmethod
    def heavy(cls, beta0: float = 1.0, eta: float = 1.0) -> "DisorderSpec":
        return cls(DisorderKind.HEAVY, 0.0, beta0, eta)

    @classmethod
    def tabulated(cls, knots: Iterable[Sequence[float]],
                  alpha0: float | None = None, beta0: float | None = None) -> "DisorderSpec":
        table = tuple((float(t), float(r)) for t, r in knots)
        if not table:
            raise ConfigurationError("density table is empty")
        lo = table[0][0] if alpha0 is None else alpha0
        hi = table[-1][0] if beta0 is None else beta0
        return cls(DisorderKind.TABULATED, lo, hi, density_table=table)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "DisorderSpec":
        if not isinstance(raw, dict):
            raise ConfigurationError("disorder must be an object")
        kind = raw.get("kind", DisorderKind.UNIFORM.value)
        table = raw.get("density_table")
        if table is None and raw.get("density_csv"):
            table = load_density_csv(raw["density_csv"])
        if kind == DisorderKind.TABULATED.value and table is not None and "alpha0" not in raw:
            return cls.tabulated(table, beta0=raw.get("beta0"))
        return cls(
            kind,
            raw.get("alpha0", 0.0),
            raw.get("beta0", 1.0),
            raw.get("eta", 1.0),
            tuple(tuple(k) for k in table) if table is not None else None,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "alpha0": self.alpha0, "beta0": self.beta0}
        if self.kind is DisorderKind.HEAVY:
            out["eta"] = self.eta
        if self.density_table is not None:
            out["density_table"] = [list(k) for k in self.density_table]
        return out

    # ---- validation ---------------------------------------------------

    def _problems(self) -> list[str]:
        problems: list[str] = []
        a, b = self.alpha0, self.beta0
        if not (math.isfinite(a) and math.isfinite(b)):
            return ["alpha0 and beta0 must be finite"]
        if a < 0:
            problems.append(f"alpha0 must be >= 0 (got {a})")
        if self.kind is DisorderKind.UNIFORM:
            if b < a:
                problems.append(f"beta0 must be >= alpha0 (got alpha0={a}, beta0={b})")
            if b <= 0:
                problems.append("beta0 must be > 0")
        elif b <= a:
            problems.append(f"beta0 must be > alpha0 (got alpha0={a}, beta0={b})")

        if self.kind is DisorderKind.HEAVY:
            if self.eta <= 0:
                problems.append(f"eta must be > 0 (got {self.eta})")
            if a != 0:
                problems.append("HeavyNearZero support is (0, beta0]; alpha0 must be 0")

        if self.kind is DisorderKind.TABULATED:
            problems.extend(self._table_problems())
        elif self.density_table is not None:
            problems.append("density_table is only valid for TabulatedDensity")
        return problems

    def _table_problems(self) -> list[str]:
        if not self.density_table or len(self.density_table) < 2:
            return ["density_table needs at least two (t, rho) knots"]
        t, rho = _table_arrays(self)
        problems = []
        if np.any(np.diff(t) <= 0):
            problems.append("density_table knots must be strictly increasing")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            problems.append("density_table values must be finite and >= 0")
        if t[0] < self.alpha0 or t[-1] > self.beta0:
            problems.append(f"density_table knots must lie in [alpha0, beta0] = [{self.alpha0}, {self.beta0}]")
        if not problems:
            mass = float(np.sum(0.5 * (rho[:-1] + rho[1:]) * np.diff(t)))
            if abs(mass - 1.0) > NORMALIZATION_TOL:
                problems.append(f"density_table integrates to {mass:.12f}, not 1 (tol {NORMALIZATION_TOL})")
        return problems

    @property
    def is_point_mass(self) -> bool:
        return self.kind is DisorderKind.UNIFORM and self.alpha0 == self.beta0


@dataclass(frozen=True)
class SeedPolicy:
    """Counter-based stream derivation.

    Sample ``index`` on stream ``stream`` draws from
    ``Philox(SeedSequence(master_seed, spawn_key=(stream, index)))``. The
    mapping is stable across processes and numpy releases that keep the
    SeedSequence hashing, so no generator state is ever shared.
    """

    master_seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        seed = int(self.master_seed)
        if not 0 <= seed < 2**64:
            raise ConfigurationError(f"master_seed must be a 64-bit unsigned integer (got {self.master_seed})")
        if int(self.stream) < 0:
            raise ConfigurationError(f"stream must be >= 0 (got {self.stream})")
        object.__setattr__(self, "master_seed", seed)
        object.__setattr__(self, "stream", int(self.stream))

    def with_stream(self, stream: int) -> "SeedPolicy":
        return SeedPolicy(self.master_seed, stream)

    def generator(self, index: int) -> np.random.Generator:
        if index < 0:
            raise ValueError(f"sample index must be >= 0 (got {index})")
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream, int(index)))
        return np.random.Generator(np.random.Philox(seq))

    def source(self, index: int) -> dict[str, int]:
        return {"master_seed": self.master_seed, "stream": self.stream, "index": int(index)}


# ---- law evaluation ---------------------------------------------------------

def _table_arrays(spec: DisorderSpec) -> tuple[np.ndarray, np.ndarray]:
    table = np.asarray(spec.density_table, dtype=float)
    return table[:, 0], table[:, 1]


def _table_cumulative(spec: DisorderSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t, rho = _table_arrays(spec)
    steps = np.diff(t)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (rho[:-1] + rho[1:]) * steps)))
    return t, rho, cum


def cdf(spec: DisorderSpec, t: np.ndarray | float) -> np.ndarray:
    """Exact distribution function of the bond law."""
    x = np.asarray(t, dtype=float)
    a, b = spec.alpha0, spec.beta0

    if spec.kind is DisorderKind.UNIFORM:
        if spec.is_point_mass:
            return (x >= a).astype(float)
        return np.clip((x - a) / (b - a), 0.0, 1.0)

    if spec.kind is DisorderKind.HEAVY:
        out = np.zeros_like(x)
        inside = (x > 0) & (x < b)
        with np.errstate(divide="ignore", over="ignore"):
            out[inside] = np.exp(b ** -spec.eta - x[inside] ** -spec.eta)
        out[x >= b] = 1.0
        return out

    knots, rho, cum = _table_cumulative(spec)
    seg = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(knots) - 2)
    s = np.clip(x - knots[seg], 0.0, knots[seg + 1] - knots[seg])
    slope = (rho[seg + 1] - rho[seg]) / (knots[seg + 1] - knots[seg])
    out = cum[seg] + rho[seg] * s + 0.5 * slope * s * s
    out = np.where(x < knots[0], 0.0, out)
    out = np.where(x >= knots[-1], cum[-1], out)
    return np.clip(out / cum[-1], 0.0, 1.0)


def density(spec: DisorderSpec, t: np.ndarray | float) -> np.ndarray:
    x = np.asarray(t, dtype=float)
    a, b = spec.alpha0, spec.beta0
    if spec.kind is DisorderKind.UNIFORM:
        if spec.is_point_mass:
            return np.where(x == a, np.inf, 0.0)
        return np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0)
    if spec.kind is DisorderKind.HEAVY:
        out = np.zeros_like(x)
        inside = (x > 0) & (x <= b)
        xi = x[inside]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out[inside] = spec.eta * xi ** (-spec.eta - 1.0) * np.exp(b ** -spec.eta - xi ** -spec.eta)
        return np.nan_to_num(out, nan=0.0, posinf=0.0)
    knots, rho = _table_arrays(spec)
    return np.interp(x, knots, rho, left=0.0, right=0.0)


def tail_constant(spec: DisorderSpec) -> float:
    """Constant K with P(omega <= t) = K * exp(-t**-eta) for the heavy law."""
    if spec.kind is not DisorderKind.HEAVY:
        raise ConfigurationError("tail_constant is only defined for HeavyNearZero")
    return math.exp(spec.beta0 ** -spec.eta)


# ---- sampling ------------------------------------------------------------------

def draw(spec: DisorderSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` i.i.d. weights from ``spec`` using ``rng``."""
    a, b = spec.alpha0, spec.beta0

    if spec.kind is DisorderKind.UNIFORM:
        if spec.is_point_mass:
            return np.full(size, a)
        return rng.uniform(a, b, size)

    # u in (0, 1] keeps log(u) finite
    u = 1.0 - rng.random(size)

    if spec.kind is DisorderKind.HEAVY:
        return (b ** -spec.eta - np.log(u)) ** (-1.0 / spec.eta)

    knots, rho, cum = _table_cumulative(spec)
    p = u * cum[-1]
    seg = np.clip(np.searchsorted(cum, p, side="right") - 1, 0, len(knots) - 2)
    width = knots[seg + 1] - knots[seg]
    slope = (rho[seg + 1] - rho[seg]) / width
    q = p - cum[seg]
    # root of rho*s + slope*s^2/2 = q in the cancellation-free form
    root = np.sqrt(np.maximum(rho[seg] ** 2 + 2.0 * slope * q, 0.0))
    denom = rho[seg] + root
    s = np.divide(2.0 * q, denom, out=np.zeros_like(q), where=denom > 0)
    return knots[seg] + np.clip(s, 0.0, width)


def sample_weights(spec: DisorderSpec, n_bonds: int, seeds: SeedPolicy, index: int) -> WeightField:
    if n_bonds < 3:
        raise ConfigurationError(f"n_bonds must be >= 3 (got {n_bonds})")
    rng = seeds.generator(index)
    weights = draw(spec, n_bonds, rng)
    return WeightField(weights, source=seeds.source(index))


# ---- functionals --------------------------------------------------------------

def _log_sup(spec: DisorderSpec, log_f) -> float:
    """Supremum of exp(log_f(t)) over (0, beta0], searched in log t."""
    hi = math.log(spec.beta0)
    res = optimize.minimize_scalar(
        lambda x: -log_f(math.exp(x)),
        bounds=(hi - 60.0, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(math.exp(max(-res.fun, log_f(spec.beta0))))


def density_functionals(spec: DisorderSpec) -> tuple[float, float]:
    """Return (sup rho, sup |s rho(s)|) for the law.

    Uniform laws are analytic. Tabulated densities are exact: rho is linear
    on each segment, so s*rho(s) is a quadratic whose vertex is checked
    alongside the knots. The heavy law is maximized numerically in log t.
    """
    a, b = spec.alpha0, spec.beta0

    if spec.kind is DisorderKind.UNIFORM:
        if spec.is_point_mass:
            return math.inf, math.inf
        height = 1.0 / (b - a)
        return height, b * height

    if spec.kind is DisorderKind.HEAVY:
        eta, c = spec.eta, b ** -spec.eta

        def log_rho(t: float) -> float:
            return math.log(eta) - (eta + 1.0) * math.log(t) + c - t ** -eta

        def log_s_rho(t: float) -> float:
            return math.log(eta) - eta * math.log(t) + c - t ** -eta

        return _log_sup(spec, log_rho), _log_sup(spec, log_s_rho)

    knots, rho = _table_arrays(spec)
    rho_sup = float(rho.max())
    s_rho = list(np.abs(knots * rho))
    for i in range(len(knots) - 1):
        slope = (rho[i + 1] - rho[i]) / (knots[i + 1] - knots[i])
        if slope != 0:
            vertex = (slope * knots[i] - rho[i]) / (2.0 * slope)
            if knots[i] < vertex < knots[i + 1]:
                s_rho.append(abs(vertex * (rho[i] + slope * (vertex - knots[i]))))
    return rho_sup, float(max(s_rho))


def ks_distance(spec: DisorderSpec, samples: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between samples and the exact law."""
    if spec.is_point_mass:
        return float(np.max(np.abs(np.asarray(samples) - spec.alpha0)) > 0)
    return float(stats.kstest(np.asarray(samples, dtype=float), lambda x: cdf(spec, x)).statistic)


# ---- CSV ---------------------------------------------------------------------

def load_density_csv(path: str) -> list[tuple[float, float]]:
    """Read a two-column ``t,rho`` CSV with header."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"t", "rho"} <= set(reader.fieldnames):
            raise ConfigurationError(f"{path}: expected header 't,rho'")
        try:
            knots = [(float(row["t"]), float(row["rho"])) for row in reader]
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: non-numeric density row ({exc})") from exc
    logger.debug("Loaded %d density knots from %s", len(knots), path)
    return knots
