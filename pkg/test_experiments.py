import functools
import math
import multiprocessing

import numpy as np
import pytest

from spectralab.disorder import DisorderSpec, SeedPolicy
from spectralab.errors import ConfigurationError, LocalizationGateError, RunInterrupted
from spectralab.experiments import (THREE_SIGMA, BernoulliCounts, box_half_width, certify_energies,
                                    heavytail_record, heavytail_thresholds, laplace_identity_check,
                                    minami_bound, nearest_distance_record, run_decorrelation,
                                    run_gradient_separation, run_heavytail_variant, run_independence,
                                    run_laplace_check, run_level_statistics, run_minami, run_minami_sweep,
                                    run_perturbation_check, run_wegner, run_wegner_sweep, wegner_bound,
                                    within_bound)
from spectralab.parallel import SampleRunner
from spectralab.stats import wilson_interval


def test_reference_bounds(uniform_spec):
    assert wegner_bound(uniform_spec, 1.0, 1e-3, 101) == pytest.approx(2 * 1.5 / 0.999 * 1e-3 * 101)
    assert minami_bound(uniform_spec, (1.0, 1.01), 101) == pytest.approx(1.5 * 1.0 * 1.5 * (0.01 * 101) ** 2 / 2)


def test_within_bound_uses_three_sigma():
    assert within_bound(0, 100, 0.0)
    assert within_bound(12, 100, 0.1)
    assert not within_bound(50, 100, 0.1)


def test_wegner_sweep(uniform_spec, seeds):
    results = run_wegner_sweep(uniform_spec, 1.0, [1e-3, 1e-2], 21, 200, seeds)
    assert [r.parameters["epsilon"] for r in results] == [1e-3, 1e-2]
    assert results[0].estimate <= results[1].estimate
    for r in results:
        assert r.interval[0] <= r.estimate <= r.interval[1]
        assert r.verdict
    single = run_wegner(uniform_spec, 1.0, 1e-2, 21, 200, seeds)
    assert single.estimate == results[1].estimate


def test_wegner_halving_epsilon_halves_probability(uniform_spec, seeds):
    half, full = run_wegner_sweep(uniform_spec, 1.0, [0.002, 0.004], 101, 2000, seeds)
    assert full.estimate > 0
    assert 0.3 <= half.estimate / full.estimate <= 0.7


def test_wegner_arguments(uniform_spec, seeds):
    with pytest.raises(ValueError):
        run_wegner(uniform_spec, 1.0, 1.5, 21, 10, seeds)
    with pytest.raises(ConfigurationError):
        run_wegner(uniform_spec, 0.1, 0.01, 21, 10, seeds)


def test_minami_sweep(uniform_spec, seeds):
    results = run_minami_sweep(uniform_spec, [(1.0, 1.01), (1.0, 1.1)], 21, 200, seeds)
    assert results[0].estimate <= results[1].estimate
    assert all(r.verdict for r in results)
    with pytest.raises(ValueError):
        run_minami(uniform_spec, (0.0, 0.1), 21, 10, seeds)
    with pytest.raises(ValueError):
        run_minami(uniform_spec, (1.0, 0.9), 21, 10, seeds)


def test_runner_matches_inline(uniform_spec, seeds):
    inline = run_wegner_sweep(uniform_spec, 1.0, [1e-2], 21, 120, seeds)
    pooled = run_wegner_sweep(uniform_spec, 1.0, [1e-2], 21, 120, seeds,
                              mapper=SampleRunner(workers=2, chunk_size=25).map)
    assert [r.to_dict() for r in inline] == [r.to_dict() for r in pooled]


def test_interrupted_pool_leaves_no_workers(uniform_spec, seeds):
    task = functools.partial(nearest_distance_record, uniform_spec, 21, seeds, 1.0)
    runner = SampleRunner(workers=2, chunk_size=10, stop_after_chunks=1)
    with pytest.raises(RunInterrupted):
        runner.map("wegner", task, 80)
    assert runner.computed_chunks == 1
    assert multiprocessing.active_children() == []


def test_decorrelation_structure(uniform_spec, seeds):
    results = run_decorrelation(uniform_spec, 0.8, 2.0, [16, 32], 0.5, 0.75, 300, seeds)
    assert [r.name for r in results] == ["decorrelation", "decorrelation", "decorrelation_slope"]
    assert results[0].details["box_sites"] == 2 * box_half_width(16, 0.5) + 1 == 9
    assert results[1].details["box_sites"] == 13
    for r in results[:2]:
        assert r.estimate <= min(r.details["p_e"], r.details["p_e_prime"])
    with pytest.raises(ValueError):
        run_decorrelation(uniform_spec, 1.0, 1.0, [16], 0.5, 0.75, 10, seeds)
    with pytest.raises(ValueError):
        run_decorrelation(uniform_spec, 0.8, 2.0, [16], 0.5, 0.4, 10, seeds)


def test_decorrelation_with_energy_above_the_band(uniform_spec, seeds):
    results = run_decorrelation(uniform_spec, 0.8, 4.0 * uniform_spec.beta0 + 1.0, [16, 32, 64], 0.5, 0.75,
                                200, seeds)
    for r in results[:-1]:
        assert r.estimate == 0.0
        assert r.details["p_e_prime"] == 0.0
    assert results[-1].details["points"] == 0
    assert results[-1].verdict is False


def test_laplace_identity_for_independent_bits():
    p = np.array([0.3, 0.6, 0.5])
    pmf = np.einsum("i,j,k->ijk", [1 - p[0], p[0]], [1 - p[1], p[1]], [1 - p[2], p[2]])
    report = laplace_identity_check(pmf, [0.4, -1.0, 2.0])
    assert report.pair_term == pytest.approx(0.0, abs=1e-14)
    assert report.triple_term == pytest.approx(0.0, abs=1e-14)
    assert report.lhs == pytest.approx(report.product)


def test_laplace_identity_for_coupled_bits():
    pmf = np.zeros((2, 2, 2))
    pmf[0, 0, 0] = pmf[1, 1, 1] = 0.5
    report = laplace_identity_check(pmf, [1.0, 1.0, 1.0])
    assert report.lhs == pytest.approx(0.5 + 0.5 * math.e ** 3)
    assert report.discrepancy_error <= 1e-12
    assert report.expansion_error <= 1e-12
    with pytest.raises(ValueError):
        laplace_identity_check(np.full(8, 0.2), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        laplace_identity_check(np.full(8, 0.125), [0.0, 0.0])


def test_laplace_check_over_random_laws():
    result = run_laplace_check(1000, SeedPolicy(3))
    assert result.verdict
    assert result.estimate <= 1e-12


def test_bernoulli_counts():
    counts = BernoulliCounts.from_bits((1.0, 2.0), ((0, 1), (2, 3)), [[0, 1], [0, 1], [1, 1], [0, 0]])
    pmf = counts.pmf()
    assert pmf[0, 1] == 0.5
    assert pmf[1, 1] == 0.25
    assert pmf.sum() == 1.0


def test_level_statistics_outputs(uniform_spec, seeds):
    out = run_level_statistics(uniform_spec, 1.0, [[-1.0, 1.0]], 101, 200, seeds,
                               calibration_samples=50, min_samples=100)
    assert out.counts.counts.shape == (200, 1)
    assert out.result.estimate == out.fit.max_tv
    assert out.result.details["nu_at_E"] > 0
    assert out.dos.n_samples == 50


def test_independence_direct_counts(uniform_spec, seeds):
    result = run_independence(uniform_spec, [0.8, 2.0], [[-1, 1], [-1, 1]], 101, 200, seeds,
                              calibration_samples=50)
    table = result.details["events"]
    assert len(table) == 4
    assert sum(row["joint"] for row in table) <= 1.0 + 1e-12
    assert "laplace" not in result.details
    assert result.reference_bound == pytest.approx(table[0]["product"])


def test_independence_boxes_and_laplace(uniform_spec, seeds):
    result = run_independence(uniform_spec, [0.8, 1.6, 2.4], [[-1, 1]] * 3, 101, 100, seeds,
                              calibration_samples=50, box_half_width=10)
    hist = result.details["bernoulli_histogram"]
    assert sum(hist.values()) == 100 * (101 // 21)
    assert result.details["laplace"]["discrepancy_error"] <= 1e-12
    with pytest.raises(ValueError):
        run_independence(uniform_spec, [0.8, 0.8], [[-1, 1]] * 2, 101, 10, seeds)
    with pytest.raises(ValueError):
        run_independence(uniform_spec, [0.8, 2.0], [[-1, 1]], 101, 10, seeds)


def test_heavytail_thresholds(heavy_spec):
    t_l, plain, adjusted = heavytail_thresholds(heavy_spec, 512, 0.5)
    assert t_l == pytest.approx(math.exp(-math.sqrt(math.log(512))))
    assert plain == pytest.approx(1025 * math.exp(-math.exp(math.sqrt(math.log(512)))))
    assert adjusted == pytest.approx(math.e * plain)


def test_heavytail_small_run(heavy_spec, seeds):
    result = run_heavytail_variant(heavy_spec, 32, 0.5, 0.75, 0.1, 200, seeds, verify_samples=5)
    assert 0.0 <= result.estimate <= 1.0
    assert result.details["eigenvectors_checked"] <= 5 * 65
    with pytest.raises(ConfigurationError):
        run_heavytail_variant(DisorderSpec.uniform(0.5, 1.5), 32, 0.5, 0.75, 0.1, 10, seeds)
    with pytest.raises(ValueError):
        run_heavytail_variant(heavy_spec, 32, 1.5, 0.75, 0.1, 10, seeds)


def _window_records(checked, verified, skipped=0):
    def mapper(stage, task, n):
        return [{"index": i, "min": 0.5, "bad": False, "eta": 1.0, "checked": checked,
                 "verified": verified, "skipped": skipped} for i in range(n)]
    return mapper


def test_heavytail_verdict_needs_required_window_rate(heavy_spec, seeds):
    low = run_heavytail_variant(heavy_spec, 100, 0.5, 0.75, 0.1, 1000, seeds, mapper=_window_records(100, 97, 2))
    assert low.details["window_rate"] == pytest.approx(0.97)
    assert low.details["window_rate_ok"]
    assert not low.details["window_rate_meets_required"]
    assert low.details["eigenvectors_skipped"] == 2000
    assert low.verdict is False

    high = run_heavytail_variant(heavy_spec, 100, 0.5, 0.75, 0.1, 1000, seeds, mapper=_window_records(200, 199))
    assert high.details["window_rate_meets_required"]
    assert high.verdict is True
    relaxed = run_heavytail_variant(heavy_spec, 100, 0.5, 0.75, 0.1, 1000, seeds, required_rate=0.95,
                                    mapper=_window_records(100, 97))
    assert relaxed.verdict is True


def test_heavytail_record_leaves_seam_windows_out(heavy_spec, seeds):
    wide = heavytail_record(heavy_spec, 21, seeds, 0.0, 0.75, 100, True, 0)
    assert wide["skipped"] == 21
    assert wide["checked"] == wide["verified"] == 0
    narrow = heavytail_record(heavy_spec, 21, seeds, 0.0, 0.75, 0, True, 0)
    assert narrow["skipped"] == 0
    assert narrow["checked"] == 21
    assert narrow["verified"] <= narrow["checked"]


def test_gradient_separation_run(uniform_spec, seeds):
    result = run_gradient_separation(uniform_spec, 0.8, 2.0, 41, 60, seeds)
    assert result.details["pairs"] > 0
    assert result.details["violations"] == 0
    assert result.verdict


def test_perturbation_check_small(uniform_spec, seeds):
    rows, result = run_perturbation_check(uniform_spec, [16], 4, seeds)
    assert rows
    assert {r["n_sites"] for r in rows} == {16}
    assert result.details["max_grad_rel_err"] <= 1e-6
    assert result.details["max_sum_rule_rel_err"] <= 1e-10
    assert result.details["max_hess_rel_err"] <= 1e-4
    assert result.details["grad_l1_variance"] > 0


def test_hessian_constant_is_stable(uniform_spec, seeds):
    _, result = run_perturbation_check(uniform_spec, [16], 600, seeds)
    fit = result.details["hessian_constant_N16"]
    assert fit["constant"] > 0
    assert len(fit["batch_constants"]) == 4
    assert fit["spread"] <= 0.5
    assert fit["stable"] is True
    assert result.details["grad_l1_variance"] > 0


def test_localization_gate(uniform_spec, seeds):
    medians = certify_energies(uniform_spec, [1.0], 64, seeds, n_samples=10, radius=0.1, threshold=-1.0)
    assert set(medians) == {1.0}
    with pytest.raises(LocalizationGateError):
        certify_energies(uniform_spec, [1.0], 64, seeds, n_samples=10, radius=0.1, threshold=100.0)


# ---- acceptance-scale runs --------------------------------------------------------------

@pytest.mark.slow
def test_wegner_minami_acceptance(uniform_spec):
    seeds = SeedPolicy(2024)
    for r in run_wegner_sweep(uniform_spec, 1.0, [1e-3, 1e-4, 1e-5], 101, 100_000, seeds):
        assert r.verdict
    for r in run_minami_sweep(uniform_spec, [(1.0, 1.01), (1.0, 1.001)], 101, 100_000, seeds):
        assert r.verdict


@pytest.mark.slow
def test_poisson_statistics_acceptance(uniform_spec):
    out = run_level_statistics(uniform_spec, 1.0, [[-1.0, 1.0]], 513, 5000, SeedPolicy(2024),
                               calibration_samples=500)
    assert out.fit.max_tv <= 0.1


@pytest.mark.slow
def test_two_energy_independence_acceptance(uniform_spec):
    result = run_independence(uniform_spec, [0.8, 2.0], [[-1, 1], [-1, 1]], 513, 5000, SeedPolicy(2024))
    assert result.details["max_discrepancy"] <= 0.03
    assert result.details["max_abs_correlation"] <= 0.07


@pytest.mark.slow
def test_decorrelation_slope_acceptance(uniform_spec):
    results = run_decorrelation(uniform_spec, 0.8, 2.0, [256, 512, 1024, 2048], 0.5, 0.75, 100_000,
                                SeedPolicy(2024))
    assert results[-1].estimate >= 1.7


@pytest.mark.slow
def test_heavytail_acceptance(heavy_spec):
    result = run_heavytail_variant(heavy_spec, 512, 0.5, 0.75, 0.1, 10_000, SeedPolicy(2024))
    assert result.verdict
    assert result.details["window_rate"] >= 0.99


@pytest.mark.slow
def test_gradient_separation_acceptance(uniform_spec):
    result = run_gradient_separation(uniform_spec, 0.8, 2.0, 257, 1000, SeedPolicy(2024))
    assert result.details["violations"] == 0


@pytest.mark.slow
def test_perturbation_acceptance(uniform_spec):
    _, result = run_perturbation_check(uniform_spec, [16, 32, 64], 34, SeedPolicy(2024), pairs_per_sample=1)
    assert result.details["pairs"] >= 100
    assert result.verdict


@pytest.mark.slow
def test_minami_quadrupling_interval_scales_quadratically():
    spec = DisorderSpec.uniform(0.1, 1.9)
    narrow, wide = run_minami_sweep(spec, [(3.0, 3.003), (3.0, 3.012)], 101, 40_000, SeedPolicy(2024))
    h_narrow, h_wide = narrow.details["hits"], wide.details["hits"]
    assert 0 < h_narrow < h_wide
    low_n, high_n = wilson_interval(h_narrow, 40_000, THREE_SIGMA)
    low_w, high_w = wilson_interval(h_wide, 40_000, THREE_SIGMA)
    assert low_w / high_n <= 16.0 <= high_w / low_n


@pytest.mark.slow
def test_three_energy_independence_acceptance(uniform_spec):
    result = run_independence(uniform_spec, [0.8, 2.0, 3.0], [[-1, 1]] * 3, 513, 5000, SeedPolicy(2024))
    assert len(result.details["events"]) == 8
    assert result.details["max_discrepancy"] <= 0.03
    assert result.details["max_pair_discrepancy"] <= 0.03
    assert result.details["laplace"]["discrepancy_error"] <= 1e-12
