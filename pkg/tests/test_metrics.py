import numpy as np
import pytest

from cpa_parallab import (ArrayConfig, WeightDistribution, correlation_vs_snr,
                          cross_pe_dependence, crossing_point, generate_campaign,
                          parallelism_sweep, snr_curve)
from cpa_parallab.leakage import chain_leakage, mac_chain_patterns


@pytest.fixture(scope="module")
def small_sweep():
    return parallelism_sweep(16, WeightDistribution.uniform(), 8, 800, 60,
                             master_seed=7, taus=range(8))


class TestSnrCurve:
    def test_single_pe_is_infinite_sentinel(self, small_sweep):
        pts = snr_curve(small_sweep, tau=0)
        assert np.isinf(pts[0].snr)
        assert all(np.isfinite(p.snr) for p in pts[1:])

    def test_snr_decreases_with_width(self, small_sweep):
        for tau in (0, 7):
            pts = snr_curve(small_sweep, tau)
            vals = [p.snr for p in pts[1:]]
            # allow tiny statistical wiggle between adjacent widths
            assert all(b <= a * 1.15 for a, b in zip(vals, vals[1:]))

    def test_campaign_list_path_matches_direct_variance_oracle(self):
        camp = generate_campaign(ArrayConfig(n_pe=3), WeightDistribution.uniform(),
                                 4, 500, 5, master_seed=31)
        pts = snr_curve([camp], tau=2)
        ratios = []
        for run in camp.runs:
            leak = chain_leakage(mac_chain_patterns(run.weights, run.inputs, 32))
            leak = leak.astype(np.float64)
            ratios.append(leak[0, :, 2].var() / leak[1:, :, 2].sum(axis=0).var())
        assert pts[0].snr == pytest.approx(np.mean(ratios), rel=1e-12)

    def test_snr_scale_invariance(self):
        # ratio of variances is invariant under common scaling of all leakage
        rng = np.random.default_rng(0)
        target = rng.normal(size=1000)
        others = rng.normal(size=1000)
        base = target.var() / others.var()
        scaled = (3.7 * target).var() / (3.7 * others).var()
        assert scaled == pytest.approx(base, rel=1e-12)


class TestCrossPeDependence:
    def test_first_step_witness_is_exactly_one(self):
        res = cross_pe_dependence(0, n_runs=5, n_traces=200, seed=1)
        assert res.witness_max is not None
        assert abs(res.max_abs_rho - 1.0) <= 1e-9

    def test_later_step_below_first(self):
        first = cross_pe_dependence(0, n_runs=40, n_traces=800, seed=2)
        late = cross_pe_dependence(7, n_runs=40, n_traces=800, seed=2)
        assert late.witness_max is None
        assert late.max_abs_rho < first.max_abs_rho

    def test_deterministic_given_seed(self):
        a = cross_pe_dependence(3, n_runs=10, n_traces=300, seed=5)
        b = cross_pe_dependence(3, n_runs=10, n_traces=300, seed=5)
        assert a == b


class TestCrossingPoint:
    def test_constructed_crossing(self):
        cp = crossing_point([1, 2, 4], [0.9, 0.5, 0.2], [0.3, 0.3, 0.3], tau=0)
        assert cp.n_pe_star == 4

    def test_no_crossing_returns_none(self):
        cp = crossing_point([1, 2, 3], [0.9, 0.8, 0.7], [0.3, 0.3, 0.3], tau=0)
        assert cp.n_pe_star is None

    def test_unsorted_abscissae_rejected(self):
        with pytest.raises(ValueError):
            crossing_point([2, 1, 4], [0.9, 0.5, 0.2], [0.3, 0.3, 0.3], tau=0)
        with pytest.raises(ValueError):
            crossing_point([1, 1, 4], [0.9, 0.5, 0.2], [0.3, 0.3, 0.3], tau=0)

    def test_monotone_transform_invariance(self):
        n_pe = [1, 2, 3, 4, 5]
        cw = np.array([0.9, 0.7, 0.5, 0.35, 0.3])
        inc = np.array([0.4, 0.4, 0.4, 0.4, 0.4])
        base = crossing_point(n_pe, cw, inc, tau=0).n_pe_star
        for f in (np.sqrt, lambda v: v ** 3, lambda v: 2 * v + 1):
            got = crossing_point(n_pe, f(cw), f(inc), tau=0).n_pe_star
            assert got == base

    def test_confidence_from_run_samples(self):
        rng = np.random.default_rng(1)
        n = 40
        cw_runs = np.stack([np.full(n, 0.6), np.full(n, 0.45), np.full(n, 0.35)]) \
            + rng.normal(0, 0.05, size=(3, n))
        inc_runs = np.full((3, n), 0.45) + rng.normal(0, 0.05, size=(3, n))
        cp = crossing_point([1, 2, 3], cw_runs.mean(1), inc_runs.mean(1), tau=0,
                            rho_correct_runs=cw_runs, best_incorrect_runs=inc_runs)
        assert cp.n_pe_star is not None
        assert cp.confidence >= 0.0


class TestCorrelationVsSnr:
    def test_aggregation_shapes_and_thresholds(self, small_sweep):
        agg = correlation_vs_snr(small_sweep)
        filled = agg.counts > 0
        assert filled.any()
        assert np.all(agg.env_min[filled] <= agg.mean_rho[filled] + 1e-12)
        assert np.all(agg.mean_rho[filled] <= agg.env_max[filled] + 1e-12)
        # every per-tau threshold that exists lies inside the bin range
        for v in agg.per_tau_snr_star.values():
            if v is not None:
                assert agg.bin_edges[0] <= v <= agg.bin_edges[-1]
        if agg.snr_star_worst is not None and agg.snr_star_mean is not None:
            assert agg.snr_star_worst >= agg.snr_star_mean * 0.5

    def test_infinite_snr_points_excluded(self, small_sweep):
        agg = correlation_vs_snr(small_sweep)
        # the single-PE rho of 1.0 must not leak into any bin
        assert np.nanmax(agg.env_max[agg.counts > 0]) < 1.0
