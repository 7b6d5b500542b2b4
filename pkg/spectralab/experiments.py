# spectralab/experiments.py
"""Monte Carlo experiments on the disordered ring.

Each experiment is split into a pure per-sample task (a module-level function
of the sample index returning a JSON-ready record) and an aggregation step
over the records in index order. Tasks are dispatched through a ``mapper``
with the signature of :meth:`spectralab.parallel.SampleRunner.map`.
"""
from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats as sps

from . import config
from .disorder import DisorderKind, DisorderSpec, SeedPolicy, cdf, density_functionals, sample_weights
from .eigen import decompose, spectrum
from .errors import ConfigurationError, LocalizationGateError
from .hamiltonian import WeightField, lower_bound_window, realized_growth_constant
from .parallel import inline_map
from .perturb import (bond_gradient, fit_hessian_constant, gradient, gradient_separation, hessian,
                      hessian_norm, sum_rule_residual)
from .stats import (CountRecord, DosEstimate, PoissonFit, check_reference_energy, diagnose_vector,
                    estimate_dos, poisson_fit, validate_windows, wilson_interval)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
THREE_SIGMA = 0.9973

Mapper = Callable[[str, Callable[[int], dict], int], list[dict]]


@dataclass
class ExperimentResult:
    name: str
    parameters: dict[str, Any]
    estimate: float
    interval: tuple[float, float] | None
    reference_bound: float | None
    verdict: bool | None
    details: dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["interval"] = list(self.interval) if self.interval is not None else None
        return out


def _mapper(mapper: Mapper | None) -> Mapper:
    return mapper if mapper is not None else inline_map


def within_bound(successes: int, trials: int, bound: float) -> bool:
    """True when the lower end of the 99.73% (3 sigma) Wilson interval is <= bound.

    This is the reading of "estimate <= bound + 3 sigma" used by every verdict:
    the bound is accepted unless it lies more than three standard errors below
    the observed frequency.
    """
    low, _ = wilson_interval(successes, trials, THREE_SIGMA)
    return low <= bound


def _spec_params(spec: DisorderSpec, seeds: SeedPolicy, n_samples: int) -> dict[str, Any]:
    return {"spec": spec.to_dict(), "master_seed": seeds.master_seed, "stream": seeds.stream,
            "n_samples": n_samples}


# ---- per-sample tasks ------------------------------------------------------------

def nearest_distance_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, energy: float,
                            index: int) -> dict[str, Any]:
    values = spectrum(sample_weights(spec, n_sites, seeds, index))
    return {"index": index, "dist": float(np.min(np.abs(values - energy)))}


def window_spectrum_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, lo: float, hi: float,
                           index: int) -> dict[str, Any]:
    values = spectrum(sample_weights(spec, n_sites, seeds, index))
    inside = values[(values >= lo) & (values <= hi)]
    return {"index": index, "eigenvalues": inside.tolist()}


def decorrelation_record(spec: DisorderSpec, box_sites: int, seeds: SeedPolicy, energy: float,
                         energy_prime: float, radius: float, index: int) -> dict[str, Any]:
    values = spectrum(sample_weights(spec, box_sites, seeds, index))
    return {
        "index": index,
        "hit": bool(np.any(np.abs(values - energy) < radius)),
        "hit_prime": bool(np.any(np.abs(values - energy_prime) < radius)),
    }


def window_count_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy,
                        windows: Sequence[tuple[float, float]], box_sites: int | None,
                        index: int) -> dict[str, Any]:
    """Eigenvalue counts in absolute energy windows [lo, hi).

    With ``box_sites`` the ring is cut into disjoint periodic boxes and the
    count for a window is the number of boxes with at least one eigenvalue
    in it. ``bits`` holds one 0/1 vector per box (one per sample otherwise).
    """
    field = sample_weights(spec, n_sites, seeds, index)
    if box_sites is None:
        values = spectrum(field)
        counts = [int(np.searchsorted(values, hi, "left") - np.searchsorted(values, lo, "left"))
                  for lo, hi in windows]
        return {"index": index, "counts": counts, "bits": [[int(c > 0) for c in counts]]}

    bits = []
    w = field.weights
    for b in range(n_sites // box_sites):
        box = WeightField(w[b * box_sites:(b + 1) * box_sites], source={**field.source, "box": b})
        values = spectrum(box)
        bits.append([int(np.searchsorted(values, hi, "left") > np.searchsorted(values, lo, "left"))
                     for lo, hi in windows])
    counts = [int(sum(col)) for col in zip(*bits)]
    return {"index": index, "counts": counts, "bits": bits}


def heavytail_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, threshold: float, beta: float,
                     halfwidth: int, verify: bool, index: int) -> dict[str, Any]:
    field = sample_weights(spec, n_sites, seeds, index)
    smallest = float(field.weights.min())
    record: dict[str, Any] = {"index": index, "min": smallest, "bad": smallest <= threshold,
                              "eta": None, "checked": 0, "verified": 0, "skipped": 0}
    if record["bad"]:
        return record
    record["eta"] = realized_growth_constant(field, (0.0, 4.0 * spec.beta0))
    if verify:
        decomp = decompose(field)
        checked = passed = skipped = 0
        for i in range(decomp.n_sites):
            check = lower_bound_window(field, float(decomp.eigenvalues[i]), decomp.vector(i), beta,
                                       halfwidth=halfwidth)
            if check.skipped:
                skipped += 1
                continue
            checked += 1
            passed += int(check.verified)
        record["checked"] = checked
        record["verified"] = passed
        record["skipped"] = skipped
    return record


def separation_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, energy: float,
                      energy_prime: float, radius: float, index: int) -> dict[str, Any]:
    field = sample_weights(spec, n_sites, seeds, index)
    decomp = decompose(field)
    values = decomp.eigenvalues
    i, j = int(np.argmin(np.abs(values - energy))), int(np.argmin(np.abs(values - energy_prime)))
    if abs(values[i] - energy) >= radius or abs(values[j] - energy_prime) >= radius or i == j:
        return {"index": index, "pair": None}
    sep = gradient_separation(field, decomp.pair(i), decomp.pair(j), energy - energy_prime, spec.beta0)
    return {"index": index, "pair": [sep.l1_distance, sep.lower_bound, sep.violated]}


def decay_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, energies: Sequence[float],
                 radius: float, index: int) -> dict[str, Any]:
    decomp = decompose(sample_weights(spec, n_sites, seeds, index))
    rates = []
    for e in energies:
        near = np.flatnonzero(np.abs(decomp.eigenvalues - e) <= radius)
        rates.append([diagnose_vector(decomp.vector(int(k)))[1] for k in near])
    return {"index": index, "rates": rates}


def _nearest(values: np.ndarray, target: float) -> float:
    return float(values[np.argmin(np.abs(values - target))])


def perturbation_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, pairs_per_sample: int,
                        min_gap: float, step: float, step2: float, hessian_entries: int,
                        index: int) -> dict[str, Any]:
    """Analytic gradient/Hessian of chosen eigenpairs against finite differences.

    Perturbed eigenvalues are tracked by nearest match, which is safe while
    ``min_gap`` dominates the shifts caused by the steps.
    """
    field = sample_weights(spec, n_sites, seeds, index)
    decomp = decompose(field)
    rng = seeds.with_stream(seeds.stream + 1).generator(index)
    eligible = [k for k in range(1, n_sites) if decomp.gaps[k] >= min_gap]
    chosen = [int(k) for k in rng.permutation(eligible)[:pairs_per_sample]] if eligible else []
    w = field.weights

    def shifted(*moves: tuple[int, float]) -> np.ndarray:
        moved = w.copy()
        for g, dh in moves:
            moved[g] += dh
        return spectrum(WeightField(moved))

    rows = []
    for k in chosen:
        pair = decomp.pair(k)
        grad = gradient(field, decomp, k)
        fd = np.array([
            (_nearest(shifted((g, step)), pair.energy) - _nearest(shifted((g, -step)), pair.energy)) / (2.0 * step)
            for g in range(n_sites)
        ])
        grad_scale = float(np.max(np.abs(grad)))
        grad_err = float(np.max(np.abs(fd - grad))) / grad_scale

        hess = hessian(field, decomp, k)
        hess_scale = float(np.max(np.abs(hess)))
        n_diag = max(1, hessian_entries // 3)
        diag = [(int(g), int(g)) for g in rng.choice(n_sites, size=min(n_diag, n_sites), replace=False)]
        off = []
        while len(off) < hessian_entries - len(diag):
            g, b = (int(x) for x in rng.choice(n_sites, size=2, replace=False))
            off.append((g, b))
        hess_err = 0.0
        for g, b in diag + off:
            if g == b:
                value = (_nearest(shifted((g, step2)), pair.energy) - 2.0 * pair.energy
                         + _nearest(shifted((g, -step2)), pair.energy)) / step2 ** 2
            else:
                value = (_nearest(shifted((g, step2), (b, step2)), pair.energy)
                         - _nearest(shifted((g, step2), (b, -step2)), pair.energy)
                         - _nearest(shifted((g, -step2), (b, step2)), pair.energy)
                         + _nearest(shifted((g, -step2), (b, -step2)), pair.energy)) / (4.0 * step2 ** 2)
            hess_err = max(hess_err, abs(value - hess[g, b]) / hess_scale)

        rows.append({
            "n_sites": n_sites,
            "sample": index,
            "index": k,
            "energy": pair.energy,
            "gap": pair.gap,
            "grad_rel_err": grad_err,
            "sum_rule_rel_err": sum_rule_residual(field, pair) / abs(pair.energy),
            "hess_rel_err": hess_err,
            "hessian_norm": hessian_norm(hess),
            "grad_l1": float(bond_gradient(pair.vector).sum()),
        })
    return {"index": index, "rows": rows}


# ---- Wegner / Minami -------------------------------------------------------------

def wegner_bound(spec: DisorderSpec, energy: float, epsilon: float, n_sites: int, dimension: int = 1) -> float:
    _, s_rho_sup = density_functionals(spec)
    return 2.0 * dimension * s_rho_sup / (energy - epsilon) * epsilon * n_sites


def minami_bound(spec: DisorderSpec, interval: tuple[float, float], n_sites: int) -> float:
    rho_sup, s_rho_sup = density_functionals(spec)
    a, b = interval
    return spec.beta0 * rho_sup * s_rho_sup * ((b - a) * n_sites) ** 2 / (2.0 * a * a)


def run_wegner_sweep(spec: DisorderSpec, energy: float, epsilons: Sequence[float], n_sites: int,
                     n_samples: int, seeds: SeedPolicy, *, mapper: Mapper | None = None,
                     allow_low_energy: bool = False) -> list[ExperimentResult]:
    """P(dist(E, spectrum) <= eps) for several eps over one shared ensemble."""
    for eps in epsilons:
        if not 0 < eps < energy:
            raise ValueError(f"epsilon must satisfy 0 < epsilon < E (got epsilon={eps}, E={energy})")
    check_reference_energy(energy, spec.beta0, allow_low_energy)
    task = functools.partial(nearest_distance_record, spec, n_sites, seeds, energy)
    dists = np.array([r["dist"] for r in _mapper(mapper)("wegner", task, n_samples)])

    results = []
    for eps in epsilons:
        hits = int(np.count_nonzero(dists <= eps))
        bound = wegner_bound(spec, energy, eps, n_sites)
        results.append(ExperimentResult(
            name="wegner",
            parameters={**_spec_params(spec, seeds, n_samples), "E": energy, "epsilon": eps, "n_sites": n_sites},
            estimate=hits / n_samples,
            interval=wilson_interval(hits, n_samples),
            reference_bound=bound,
            verdict=within_bound(hits, n_samples, bound),
            details={"hits": hits, "vacuous": bound >= 1.0},
        ))
        logger.info("wegner E=%g eps=%g: p=%.3e bound=%.3e", energy, eps, hits / n_samples, bound)
    return results


def run_wegner(spec: DisorderSpec, energy: float, epsilon: float, n_sites: int, n_samples: int,
               seeds: SeedPolicy, **kwargs: Any) -> ExperimentResult:
    return run_wegner_sweep(spec, energy, [epsilon], n_sites, n_samples, seeds, **kwargs)[0]


def run_minami_sweep(spec: DisorderSpec, intervals: Sequence[tuple[float, float]], n_sites: int,
                     n_samples: int, seeds: SeedPolicy, *, mapper: Mapper | None = None,
                     allow_low_energy: bool = False) -> list[ExperimentResult]:
    """P(at least two eigenvalues in J) for several J over one shared ensemble."""
    for a, b in intervals:
        if a <= 0:
            raise ValueError(f"interval J=[{a}, {b}] must have a > 0")
        if not a < b:
            raise ValueError(f"interval J=[{a}, {b}] must have a < b")
        check_reference_energy(a, spec.beta0, allow_low_energy)
    lo = min(a for a, _ in intervals)
    hi = max(b for _, b in intervals)
    task = functools.partial(window_spectrum_record, spec, n_sites, seeds, lo, hi)
    records = _mapper(mapper)("minami", task, n_samples)
    samples = [np.asarray(r["eigenvalues"]) for r in records]

    results = []
    for a, b in intervals:
        hits = sum(int(np.count_nonzero((s >= a) & (s <= b)) >= 2) for s in samples)
        bound = minami_bound(spec, (a, b), n_sites)
        results.append(ExperimentResult(
            name="minami",
            parameters={**_spec_params(spec, seeds, n_samples), "J": [a, b], "n_sites": n_sites},
            estimate=hits / n_samples,
            interval=wilson_interval(hits, n_samples),
            reference_bound=bound,
            verdict=within_bound(hits, n_samples, bound),
            details={"hits": hits, "vacuous": bound >= 1.0},
        ))
        logger.info("minami J=[%g, %g]: p=%.3e bound=%.3e", a, b, hits / n_samples, bound)
    return results


def run_minami(spec: DisorderSpec, interval: tuple[float, float], n_sites: int, n_samples: int,
               seeds: SeedPolicy, **kwargs: Any) -> ExperimentResult:
    return run_minami_sweep(spec, [interval], n_sites, n_samples, seeds, **kwargs)[0]


# ---- decorrelation -----------------------------------------------------------------

def box_half_width(big_l: int, alpha: float, c: float = 1.0) -> int:
    return int(math.ceil(c * big_l ** alpha))


def run_decorrelation(spec: DisorderSpec, energy: float, energy_prime: float, l_list: Sequence[int],
                      alpha: float, beta: float, n_samples: int, seeds: SeedPolicy, *,
                      c: float = 1.0, min_slope: float = 1.7, mapper: Mapper | None = None,
                      allow_low_energy: bool = False) -> list[ExperimentResult]:
    """Joint hit probability of two spectral windows of width 2/L on the box of size 2l+1.

    Returns one result per L and a final ``decorrelation_slope`` result for
    the log-log slope of P_joint against l/L. The reference bound is
    (l/L)**2 exp((log L)**beta) with unit constant and is reported only.
    """
    if energy == energy_prime:
        raise ValueError("E and E' must differ")
    if energy <= 0 or energy_prime <= 0:
        raise ValueError("E and E' must be > 0")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1) (got {alpha})")
    if not 0.5 < beta < 1:
        raise ValueError(f"beta must lie in (1/2, 1) (got {beta})")
    for e in (energy, energy_prime):
        if e <= 4.0 * spec.beta0:
            check_reference_energy(e, spec.beta0, allow_low_energy)

    mapper = _mapper(mapper)
    results = []
    xs, ys, log_ls, log_ratios = [], [], [], []
    for k, big_l in enumerate(l_list):
        small_l = box_half_width(big_l, alpha, c)
        box_sites = 2 * small_l + 1
        stream = seeds.with_stream(seeds.stream + 1 + k)
        task = functools.partial(decorrelation_record, spec, box_sites, stream, energy, energy_prime, 1.0 / big_l)
        records = mapper(f"decorrelation_L{big_l}", task, n_samples)
        hit = np.array([r["hit"] for r in records], dtype=bool)
        hit_p = np.array([r["hit_prime"] for r in records], dtype=bool)
        joint_hits = int(np.count_nonzero(hit & hit_p))
        p_joint = joint_hits / n_samples
        p_e, p_ep = float(hit.mean()), float(hit_p.mean())
        product = p_e * p_ep
        ratio = p_joint / product if product > 0 else math.nan
        scale = small_l / big_l
        bound = scale ** 2 * math.exp(math.log(big_l) ** beta)
        results.append(ExperimentResult(
            name="decorrelation",
            parameters={**_spec_params(spec, stream, n_samples), "E": energy, "E_prime": energy_prime,
                        "L": big_l, "l": small_l, "alpha": alpha, "beta": beta, "c": c},
            estimate=p_joint,
            interval=wilson_interval(joint_hits, n_samples),
            reference_bound=bound,
            verdict=None,
            details={"p_e": p_e, "p_e_prime": p_ep, "product": product, "ratio": ratio,
                     "box_sites": box_sites, "l_over_L": scale},
        ))
        logger.info("decorrelation L=%d l=%d: P_joint=%.3e P_E=%.3e P_E'=%.3e", big_l, small_l, p_joint, p_e, p_ep)
        if p_joint > 0:
            xs.append(math.log(scale))
            ys.append(math.log(p_joint))
            if product > 0:
                log_ls.append(math.log(big_l))
                log_ratios.append(math.log(ratio))

    slope = stderr = math.nan
    if len(set(xs)) >= 2:
        fit = sps.linregress(xs, ys)
        slope, stderr = float(fit.slope), float(fit.stderr)
    trend = trend_err = math.nan
    if len(set(log_ls)) >= 2:
        fit = sps.linregress(log_ls, log_ratios)
        trend, trend_err = float(fit.slope), float(fit.stderr)
    ratio_bounded = bool(math.isnan(trend) or trend - 1.96 * trend_err <= 0)
    results.append(ExperimentResult(
        name="decorrelation_slope",
        parameters={**_spec_params(spec, seeds, n_samples), "E": energy, "E_prime": energy_prime,
                    "L_list": list(l_list), "alpha": alpha, "beta": beta, "c": c},
        estimate=slope,
        interval=(slope - 1.96 * stderr, slope + 1.96 * stderr) if not math.isnan(slope) else None,
        reference_bound=min_slope,
        verdict=bool(not math.isnan(slope) and slope >= min_slope),
        details={"ratio_trend": trend, "ratio_trend_stderr": trend_err, "ratio_bounded": ratio_bounded,
                 "points": len(xs)},
    ))
    return results


# ---- independence / Laplace ---------------------------------------------------------

@dataclass(frozen=True)
class BernoulliCounts:
    """Joint law of X_i = 1{window i holds an eigenvalue} over {0,1}**n."""

    energies: tuple[float, ...]
    windows: tuple[tuple[float, float], ...]
    histogram: dict[tuple[int, ...], int]
    n_samples: int

    def __post_init__(self) -> None:
        if sum(self.histogram.values()) != self.n_samples:
            raise ValueError("histogram does not sum to n_samples")

    @classmethod
    def from_bits(cls, energies: Sequence[float], windows: Sequence[tuple[float, float]],
                  bits: Sequence[Sequence[int]]) -> "BernoulliCounts":
        hist: dict[tuple[int, ...], int] = {}
        for row in bits:
            key = tuple(int(b) for b in row)
            hist[key] = hist.get(key, 0) + 1
        return cls(tuple(energies), tuple(tuple(w) for w in windows), hist, len(bits))

    def pmf(self) -> np.ndarray:
        n = len(self.energies)
        out = np.zeros((2,) * n)
        for key, count in self.histogram.items():
            out[key] = count / self.n_samples
        return out


@dataclass(frozen=True)
class LaplaceReport:
    lhs: float
    product: float
    expansion: float
    product_expansion: float
    pair_term: float
    triple_term: float
    expansion_error: float
    discrepancy_error: float


def laplace_identity_check(pmf: np.ndarray | Sequence[float], a: Sequence[float]) -> LaplaceReport:
    """Exact check of the Laplace-transform expansion for three Bernoulli variables.

    With b_i = e**a_i - 1 and p_i, p_ij, p_123 the joint moments,
    E exp(sum a_i X_i) = 1 + sum b_i p_i + sum b_i b_j p_ij + b_1 b_2 b_3 p_123,
    and its difference from prod E exp(a_i X_i) is
    sum b_i b_j (p_ij - p_i p_j) + b_1 b_2 b_3 (p_123 - p_1 p_2 p_3).
    """
    p = np.asarray(pmf, dtype=float).reshape(2, 2, 2)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"pmf must be nonnegative and sum to 1 (sum={p.sum()!r})")
    a = np.asarray(a, dtype=float)
    if a.shape != (3,):
        raise ValueError("need exactly three Laplace parameters")
    b = np.expm1(a)

    atoms = list(itertools.product((0, 1), repeat=3))
    lhs = float(sum(p[x] * math.exp(float(np.dot(a, x))) for x in atoms))
    m = [float(p.sum(axis=tuple(j for j in range(3) if j != i))[1]) for i in range(3)]
    pair = {(i, j): float(sum(p[x] for x in atoms if x[i] == 1 and x[j] == 1))
            for i, j in itertools.combinations(range(3), 2)}
    triple = float(p[1, 1, 1])

    product = float(np.prod([1.0 + b[i] * m[i] for i in range(3)]))
    first = float(sum(b[i] * m[i] for i in range(3)))
    expansion = (1.0 + first + sum(b[i] * b[j] * pij for (i, j), pij in pair.items())
                 + b[0] * b[1] * b[2] * triple)
    product_expansion = (1.0 + first + sum(b[i] * b[j] * m[i] * m[j] for i, j in pair)
                         + b[0] * b[1] * b[2] * m[0] * m[1] * m[2])
    pair_term = float(sum(b[i] * b[j] * (pij - m[i] * m[j]) for (i, j), pij in pair.items()))
    triple_term = float(b[0] * b[1] * b[2] * (triple - m[0] * m[1] * m[2]))
    return LaplaceReport(
        lhs=lhs,
        product=product,
        expansion=float(expansion),
        product_expansion=float(product_expansion),
        pair_term=pair_term,
        triple_term=triple_term,
        expansion_error=max(abs(lhs - expansion), abs(product - product_expansion)),
        discrepancy_error=abs((lhs - product) - (pair_term + triple_term)),
    )


def run_independence(spec: DisorderSpec, energies: Sequence[float], windows: Sequence[Sequence[float]],
                     n_sites: int, n_samples: int, seeds: SeedPolicy, *, dos: DosEstimate | None = None,
                     calibration_samples: int = 500, targets: Sequence[int] | None = None,
                     events: Sequence[Sequence[int]] | None = None, box_half_width: int | None = None,
                     laplace_a: Sequence[float] = (1.0, 1.0, 1.0), tolerance: float = 0.03,
                     max_correlation: float = 0.07, mapper: Mapper | None = None,
                     allow_low_energy: bool = False) -> ExperimentResult:
    """Joint versus product statistics of window counts at several energies.

    Window j is E_j + U_j / (N nu(E_j)) on the full ring. With
    ``box_half_width`` = l the count at E_j is the number of disjoint
    periodic boxes of 2l+1 sites whose spectrum meets that window.
    """
    energies = [float(e) for e in energies]
    if len(set(energies)) != len(energies):
        raise ValueError(f"energies must be pairwise distinct (got {energies})")
    if len(windows) != len(energies):
        raise ValueError("one window per energy is required")
    for e in energies:
        check_reference_energy(e, spec.beta0, allow_low_energy)
    windows = [(float(w[0]), float(w[1])) for w in windows]
    for w in windows:
        validate_windows([w])
    mapper = _mapper(mapper)
    if dos is None:
        dos = estimate_dos(spec, n_sites, calibration_samples, seeds.with_stream(seeds.stream + 1), mapper=mapper)

    nus = [dos.nu_at(e) for e in energies]
    if min(nus) <= 0:
        raise ValueError(f"density of states vanishes at one of {energies}")
    absolute = [(e + a / (n_sites * nu), e + b / (n_sites * nu)) for e, nu, (a, b) in zip(energies, nus, windows)]
    box_sites = None
    if box_half_width is not None:
        box_sites = 2 * int(box_half_width) + 1
        if box_sites > n_sites:
            raise ValueError(f"box of {box_sites} sites does not fit in {n_sites}")

    task = functools.partial(window_count_record, spec, n_sites, seeds, absolute, box_sites)
    records = mapper("independence", task, n_samples)
    counts = np.array([r["counts"] for r in records], dtype=int).reshape(n_samples, len(energies))
    bits = [row for r in records for row in r["bits"]]
    m = len(energies)

    if events is None:
        events = list(itertools.product((0, 1), repeat=m))
    primary = tuple(targets) if targets is not None else (0,) * m
    if primary not in [tuple(e) for e in events]:
        events = [primary, *events]

    def joint(event: Sequence[int], cols: Sequence[int]) -> float:
        return float(np.all(counts[:, cols] == np.asarray(event), axis=1).mean())

    def marginal_product(event: Sequence[int], cols: Sequence[int]) -> float:
        return float(np.prod([np.mean(counts[:, c] == k) for c, k in zip(cols, event)]))

    intensities = [b - a for a, b in windows]
    everything = list(range(m))
    table = []
    for event in events:
        pj = joint(event, everything)
        pm = marginal_product(event, everything)
        pp = float(np.prod([sps.poisson.pmf(k, lam) for k, lam in zip(event, intensities)]))
        table.append({"event": list(event), "joint": pj, "product": pm, "poisson": pp, "discrepancy": abs(pj - pm)})
    max_disc = max(row["discrepancy"] for row in table)

    pair_disc = 0.0
    correlations = {}
    for i, j in itertools.combinations(everything, 2):
        for event in {(e[i], e[j]) for e in events}:
            pair_disc = max(pair_disc, abs(joint(event, [i, j]) - marginal_product(event, [i, j])))
        ci, cj = counts[:, i], counts[:, j]
        corr = float(np.corrcoef(ci, cj)[0, 1]) if ci.std() > 0 and cj.std() > 0 else 0.0
        correlations[f"{i},{j}"] = corr
    max_corr = max((abs(c) for c in correlations.values()), default=0.0)

    hits = int(np.all(counts == np.asarray(primary), axis=1).sum())
    bernoulli = BernoulliCounts.from_bits(energies, absolute, bits)
    details: dict[str, Any] = {
        "events": table,
        "max_discrepancy": max_disc,
        "max_pair_discrepancy": pair_disc,
        "correlations": correlations,
        "max_abs_correlation": max_corr,
        "nu": nus,
        "absolute_windows": [list(w) for w in absolute],
        "bernoulli_histogram": {"".join(map(str, k)): v for k, v in sorted(bernoulli.histogram.items())},
    }
    if m == 3:
        details["laplace"] = asdict(laplace_identity_check(bernoulli.pmf(), laplace_a))

    product_primary = marginal_product(primary, everything)
    return ExperimentResult(
        name="independence",
        parameters={**_spec_params(spec, seeds, n_samples), "energies": energies,
                    "windows": [list(w) for w in windows], "n_sites": n_sites, "targets": list(primary),
                    "box_half_width": box_half_width},
        estimate=hits / n_samples,
        interval=wilson_interval(hits, n_samples),
        reference_bound=product_primary,
        verdict=bool(max(max_disc, pair_disc) <= tolerance and max_corr <= max_correlation),
        details=details,
    )


# ---- level statistics ---------------------------------------------------------------

@dataclass(frozen=True)
class LevelStatistics:
    dos: DosEstimate
    counts: CountRecord
    fit: PoissonFit
    result: ExperimentResult


def run_level_statistics(spec: DisorderSpec, energy: float, windows: Sequence[Sequence[float]],
                         n_sites: int, n_samples: int, seeds: SeedPolicy, *,
                         calibration_samples: int = 500, bandwidth: float | None = None,
                         targets: Sequence[int] | None = None, tv_tolerance: float = 0.1,
                         min_samples: int = 1000, mapper: Mapper | None = None,
                         allow_low_energy: bool = False) -> LevelStatistics:
    """Calibrate nu(E), count rescaled levels in the windows, and fit Poisson laws."""
    check_reference_energy(energy, spec.beta0, allow_low_energy)
    rescaled = validate_windows(windows)
    mapper = _mapper(mapper)
    dos = estimate_dos(spec, n_sites, calibration_samples, seeds.with_stream(seeds.stream + 1),
                       bandwidth, mapper=mapper)
    nu = dos.nu_at(energy)
    if nu <= 0:
        raise ValueError(f"estimated density of states at E={energy} is not positive")
    absolute = [(energy + a / (n_sites * nu), energy + b / (n_sites * nu)) for a, b in rescaled]
    task = functools.partial(window_count_record, spec, n_sites, seeds, absolute, None)
    records = mapper("levelstats", task, n_samples)
    counts = CountRecord(tuple(rescaled), np.array([r["counts"] for r in records], dtype=int),
                         tuple(targets) if targets is not None else None)
    fit = poisson_fit(counts, min_samples=min_samples)
    result = ExperimentResult(
        name="levelstats",
        parameters={**_spec_params(spec, seeds, n_samples), "E": energy, "windows": [list(w) for w in rescaled],
                    "n_sites": n_sites, "calibration_samples": calibration_samples},
        estimate=fit.max_tv,
        interval=None,
        reference_bound=tv_tolerance,
        verdict=fit.max_tv <= tv_tolerance,
        details={"nu_at_E": nu, "tv": [w.tv for w in fit.windows], "joint_empirical": fit.joint_empirical,
                 "joint_interval": list(fit.joint_interval) if fit.joint_interval else None,
                 "joint_poisson": fit.joint_poisson, "bandwidth": dos.bandwidth},
    )
    logger.info("levelstats E=%g nu=%.4f max TV=%.4f", energy, nu, fit.max_tv)
    return LevelStatistics(dos, counts, fit, result)


# ---- heavy-tail variant ---------------------------------------------------------------

def heavytail_thresholds(spec: DisorderSpec, big_l: int, delta: float) -> tuple[float, float, float]:
    """(t_L, plain union bound, union bound under the sampled law)."""
    t_l = math.exp(-math.log(big_l) ** delta)
    sites = 2 * big_l + 1
    plain = sites * math.exp(-math.exp(math.log(big_l) ** delta))
    adjusted = sites * float(cdf(spec, t_l))
    return t_l, plain, adjusted


def run_heavytail_variant(spec: DisorderSpec, big_l: int, delta: float, beta: float, epsilon: float,
                          n_samples: int, seeds: SeedPolicy, *, verify_samples: int = 50,
                          required_rate: float = 0.99, mapper: Mapper | None = None) -> ExperimentResult:
    """Bad-event frequency {min w <= exp(-(log L)**delta)} and window verification on good fields.

    Fields live on 2L+1 sites. Windows have half-width floor(L**(beta-eps)/4).
    Every eigenvector is checked for the good fields among sample indices
    below ``verify_samples``.
    Windows wrapping the seam are skipped and left out of the rate. The
    verdict needs the bad-event frequency within the bound and a window rate
    of at least ``required_rate``.
    """
    if spec.kind is not DisorderKind.HEAVY:
        raise ConfigurationError(f"heavy-tail variant needs a HeavyNearZero spec (got {spec.kind.value})")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1) (got {delta})")
    if not 0.5 < beta < 1:
        raise ValueError(f"beta must lie in (1/2, 1) (got {beta})")
    if not 0 < epsilon < beta:
        raise ValueError(f"epsilon must lie in (0, beta) (got {epsilon})")

    n_sites = 2 * big_l + 1
    t_l, plain, adjusted = heavytail_thresholds(spec, big_l, delta)
    halfwidth = int(math.floor(big_l ** (beta - epsilon) / 4.0))
    task = _HeavyTailTask(spec, n_sites, seeds, t_l, beta, halfwidth, verify_samples)
    records = _mapper(mapper)("heavytail", task, n_samples)

    bad = sum(int(r["bad"]) for r in records)
    checked = sum(r["checked"] for r in records)
    verified = sum(r["verified"] for r in records)
    skipped = sum(r.get("skipped", 0) for r in records)
    etas = np.array([r["eta"] for r in records if r["eta"] is not None], dtype=float)
    rate = verified / checked if checked else math.nan
    _, rate_high = wilson_interval(verified, checked, THREE_SIGMA) if checked else (math.nan, math.nan)
    window_ok = bool(checked and rate_high >= 1.0 - adjusted)
    meets_required = bool(checked and rate >= required_rate)
    eta_median = float(np.median(etas)) if etas.size else math.nan

    result = ExperimentResult(
        name="heavytail",
        parameters={**_spec_params(spec, seeds, n_samples), "L": big_l, "delta": delta, "beta": beta,
                    "epsilon": epsilon, "verify_samples": verify_samples},
        estimate=bad / n_samples,
        interval=wilson_interval(bad, n_samples),
        reference_bound=adjusted,
        verdict=bool(within_bound(bad, n_samples, adjusted) and window_ok and meets_required),
        details={
            "threshold": t_l,
            "union_bound_plain": plain,
            "union_bound_law": adjusted,
            "tail_constant_applied": adjusted / plain if plain > 0 else math.inf,
            "window_halfwidth": halfwidth,
            "eigenvectors_checked": checked,
            "eigenvectors_skipped": skipped,
            "window_rate": rate,
            "window_rate_interval": list(wilson_interval(verified, checked)) if checked else None,
            "window_rate_ok": window_ok,
            "window_rate_meets_required": meets_required,
            "required_rate": required_rate,
            "eta_median": eta_median,
            "eta_over_logL_delta": eta_median / math.log(big_l) ** delta if etas.size else math.nan,
        },
    )
    logger.info("heavytail L=%d: bad=%.4f (bound %.4f) window rate=%.4f over %d vectors",
                big_l, bad / n_samples, adjusted, rate, checked)
    return result


@dataclass(frozen=True)
class _HeavyTailTask:
    spec: DisorderSpec
    n_sites: int
    seeds: SeedPolicy
    threshold: float
    beta: float
    halfwidth: int
    verify_samples: int

    def __call__(self, index: int) -> dict[str, Any]:
        return heavytail_record(self.spec, self.n_sites, self.seeds, self.threshold, self.beta,
                                self.halfwidth, index < self.verify_samples, index)


# ---- gradient separation ----------------------------------------------------------------

def run_gradient_separation(spec: DisorderSpec, energy: float, energy_prime: float, n_sites: int,
                            n_samples: int, seeds: SeedPolicy, *, radius: float | None = None,
                            mapper: Mapper | None = None) -> ExperimentResult:
    """Count violations of ||grad E - grad E'||_1 >= |E - E'| / (2 beta0 sqrt(N))."""
    if energy == energy_prime:
        raise ValueError("E and E' must differ")
    if radius is None:
        radius = 4.0 * spec.beta0 / n_sites
    task = functools.partial(separation_record, spec, n_sites, seeds, energy, energy_prime, radius)
    pairs = [r["pair"] for r in _mapper(mapper)("separation", task, n_samples) if r["pair"] is not None]
    violations = sum(int(p[2]) for p in pairs)
    margins = [p[0] / p[1] for p in pairs if p[1] > 0]
    return ExperimentResult(
        name="gradient_separation",
        parameters={**_spec_params(spec, seeds, n_samples), "E": energy, "E_prime": energy_prime,
                    "n_sites": n_sites, "radius": radius},
        estimate=violations / len(pairs) if pairs else math.nan,
        interval=wilson_interval(violations, len(pairs)) if pairs else None,
        reference_bound=0.0,
        verdict=bool(pairs) and violations == 0,
        details={"pairs": len(pairs), "violations": violations,
                 "min_margin": min(margins) if margins else math.nan},
    )


# ---- perturbation check ------------------------------------------------------------------

PERTURBATION_TOLERANCES = {"grad_rel_err": 1e-6, "sum_rule_rel_err": 1e-10, "hess_rel_err": 1e-4}


def run_perturbation_check(spec: DisorderSpec, sizes: Sequence[int], n_samples: int, seeds: SeedPolicy, *,
                           pairs_per_sample: int = 1, min_gap: float = 0.05, step: float = 1e-5,
                           step2: float = 2e-4, hessian_entries: int = 12,
                           mapper: Mapper | None = None) -> tuple[list[dict[str, Any]], ExperimentResult]:
    """Gradient, sum rule and Hessian against finite differences on each size."""
    mapper = _mapper(mapper)
    rows: list[dict[str, Any]] = []
    for k, n_sites in enumerate(sizes):
        stream = seeds.with_stream(seeds.stream + 2 * k)
        task = functools.partial(perturbation_record, spec, n_sites, stream, pairs_per_sample, min_gap,
                                 step, step2, hessian_entries)
        for record in mapper(f"perturbation_N{n_sites}", task, n_samples):
            rows.extend(record["rows"])

    worst = {key: max((r[key] for r in rows), default=math.nan) for key in PERTURBATION_TOLERANCES}
    ok = bool(rows) and all(worst[key] <= tol for key, tol in PERTURBATION_TOLERANCES.items())
    details: dict[str, Any] = {"pairs": len(rows), **{f"max_{k}": v for k, v in worst.items()},
                               "grad_l1_variance": float(np.var([r["grad_l1"] for r in rows])) if rows else math.nan}
    for n_sites in sizes:
        sized = [r for r in rows if r["n_sites"] == n_sites]
        if len(sized) >= 4:
            fit = fit_hessian_constant([r["hessian_norm"] for r in sized], [r["gap"] for r in sized])
            details[f"hessian_constant_N{n_sites}"] = asdict(fit)
    result = ExperimentResult(
        name="check_perturbation",
        parameters={**_spec_params(spec, seeds, n_samples), "sizes": list(sizes), "step": step,
                    "step2": step2, "min_gap": min_gap},
        estimate=worst["grad_rel_err"],
        interval=None,
        reference_bound=PERTURBATION_TOLERANCES["grad_rel_err"],
        verdict=ok,
        details=details,
    )
    return rows, result


# ---- localization gate ----------------------------------------------------------------------

def certify_energies(spec: DisorderSpec, energies: Sequence[float], n_sites: int, seeds: SeedPolicy, *,
                     n_samples: int = 20, radius: float = 0.05,
                     threshold: float = config.LOCALIZATION_GATE,
                     mapper: Mapper | None = None) -> dict[float, float]:
    """Median eigenvector decay rate near each energy; refuse those below ``threshold``."""
    task = functools.partial(decay_record, spec, n_sites, seeds.with_stream(seeds.stream + 99),
                             list(energies), radius)
    records = _mapper(mapper)("localization_gate", task, n_samples)
    medians = {}
    for i, e in enumerate(energies):
        rates = [rate for r in records for rate in r["rates"][i]]
        medians[float(e)] = float(np.median(rates)) if rates else math.nan
    failing = {e: m for e, m in medians.items() if not m >= threshold}
    if failing:
        listing = ", ".join(f"E={e:g} (median decay {m:.4f})" for e, m in failing.items())
        raise LocalizationGateError(
            f"energies outside the certified localized regime (threshold {threshold}): {listing}"
        )
    logger.info("localization gate passed: %s", {e: round(m, 4) for e, m in medians.items()})
    return medians


# ---- Laplace property check ---------------------------------------------------------------

def run_laplace_check(n_pmfs: int, seeds: SeedPolicy, *, tolerance: float = 1e-12) -> ExperimentResult:
    """Exactness of the Laplace expansion over random joint laws on {0,1}**3."""
    worst_expansion = worst_discrepancy = 0.0
    for i in range(n_pmfs):
        rng = seeds.generator(i)
        pmf = rng.dirichlet(np.ones(8))
        a = rng.uniform(-2.0, 2.0, 3)
        report = laplace_identity_check(pmf, a)
        worst_expansion = max(worst_expansion, report.expansion_error)
        worst_discrepancy = max(worst_discrepancy, report.discrepancy_error)
    worst = max(worst_expansion, worst_discrepancy)
    return ExperimentResult(
        name="laplace_identity",
        parameters={"master_seed": seeds.master_seed, "stream": seeds.stream, "n_samples": n_pmfs},
        estimate=worst,
        interval=None,
        reference_bound=tolerance,
        verdict=worst <= tolerance,
        details={"max_expansion_error": worst_expansion, "max_discrepancy_error": worst_discrepancy},
    )


# ---- sample dumps ----------------------------------------------------------------------------

def sample_field_record(spec: DisorderSpec, n_sites: int, seeds: SeedPolicy, index: int) -> dict[str, Any]:
    """Weights, spectrum and solver self-checks of one field."""
    field = sample_weights(spec, n_sites, seeds, index)
    decomp = decompose(field)
    u = decomp.eigenvectors
    return {
        "index": index,
        "weights": field.weights.tolist(),
        "eigenvalues": decomp.eigenvalues.tolist(),
        "max_residual": float(decomp.residuals.max()),
        "orthonormality": float(np.max(np.abs(u.T @ u - np.eye(n_sites)))),
        "matrix_norm": decomp.matrix_norm,
    }
