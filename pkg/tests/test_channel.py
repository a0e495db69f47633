"""Channel closed forms, finite-horizon variance, traces and estimators."""

import numpy as np
import pytest

from sosched import channel as ch
from sosched.errors import DomainError, InsufficientRuns


def cp(p, q):
    return ch.ChannelParams(p, q)


class TestParams:
    def test_valid_range(self):
        cp(1.0, 1.0)
        cp(1e-9, 0.3)

    @pytest.mark.parametrize("p,q", [(0.0, 0.5), (0.5, 0.0), (-0.1, 0.5), (1.1, 0.5)])
    def test_rejects_bad_probs(self, p, q):
        with pytest.raises(DomainError):
            cp(p, q)

    def test_stationary_split(self):
        assert cp(0.2, 0.8).off_prob == pytest.approx(0.2)
        assert cp(0.1, 0.1).off_prob == pytest.approx(0.5)
        assert ch.stationary_off_prob(cp(0.3, 0.6)) == pytest.approx(1.0 / 3.0)


class TestStep:
    def test_on_to_off_forced(self):
        assert ch.step(ch.ChannelState(True), cp(1.0, 0.5), 0.5).on is False

    def test_off_to_on_forced(self):
        assert ch.step(ch.ChannelState(False), cp(0.5, 1.0), 0.0).on is True

    def test_keeps_state_when_u_at_least_p(self):
        assert ch.step(ch.ChannelState(True), cp(0.2, 0.8), 0.25).on is True

    def test_rejects_bad_u(self):
        with pytest.raises(DomainError):
            ch.step(ch.ChannelState(True), cp(0.2, 0.8), 1.0)


class TestGCorrelation:
    def test_lag_one_is_exactly_one(self):
        assert ch.g_correlation(cp(0.37, 0.113), 1) == 1.0

    def test_memoryless_after_one_step(self):
        # 1 - p - q = 0 makes later slots independent of the first.
        assert ch.g_correlation(cp(0.2, 0.8), 2) == pytest.approx(0.2)

    def test_slow_chain(self):
        assert ch.g_correlation(cp(0.1, 0.1), 2) == pytest.approx(0.9)

    def test_geometric_decay_envelope(self):
        for p in (0.05, 0.3, 0.7, 0.95):
            for q in (0.05, 0.4, 0.95):
                params = cp(p, q)
                for k in (1, 2, 5, 20, 60):
                    gap = abs(ch.g_correlation(params, k) - params.off_prob)
                    bound = params.on_prob * abs(params.memory) ** (k - 1)
                    assert gap <= bound + 1e-15


class TestSubsetClosedForms:
    def test_single_client_mean(self):
        assert ch.subset_mean([cp(0.2, 0.8)]) == pytest.approx(0.8)

    def test_two_iid_mean(self):
        assert ch.subset_mean([cp(0.5, 0.5)] * 2) == pytest.approx(0.75)

    def test_almost_always_on_limit(self):
        assert ch.subset_mean([cp(1e-12, 1.0), cp(0.9, 0.1)]) == pytest.approx(1.0)

    def test_empty_subset_rejected(self):
        with pytest.raises(DomainError):
            ch.subset_mean([])
        with pytest.raises(DomainError):
            ch.subset_variance([])

    def test_single_client_memoryless_variance(self):
        assert ch.subset_variance([cp(0.2, 0.8)]) == pytest.approx(0.16)

    def test_single_client_slow_chain_variance(self):
        # geometric series: a*b*(1+rho)/(1-rho) with a=b=0.5, rho=0.8
        assert ch.subset_variance([cp(0.1, 0.1)]) == pytest.approx(2.25, abs=1e-8)

    def test_two_iid_variance(self):
        assert ch.subset_variance([cp(0.5, 0.5)] * 2) == pytest.approx(0.1875)

    def test_iid_subset_stats(self):
        stats = ch.iid_subset_stats([0.5, 0.5])
        assert stats.mean == pytest.approx(0.75)
        assert stats.variance == pytest.approx(0.1875)
        edge = ch.iid_subset_stats([1.0])
        assert edge.mean == 1.0 and edge.variance == 0.0

    def test_iid_matches_general_forms_at_p_plus_q_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            qs = rng.uniform(0.05, 0.95, size=rng.integers(1, 5))
            params = [cp(1.0 - q, q) for q in qs]
            stats = ch.iid_subset_stats(list(qs))
            assert ch.subset_mean(params) == pytest.approx(stats.mean, abs=1e-12)
            assert ch.subset_variance(params) == pytest.approx(stats.variance, abs=1e-12)

    def test_variance_nonnegative_on_grid(self):
        grid = np.arange(0.05, 1.0, 0.1)
        rng = np.random.default_rng(7)
        for p in grid:
            for q in grid:
                assert ch.subset_variance([cp(p, q)]) >= 0.0
        for _ in range(100):
            size = rng.integers(2, 5)
            params = [
                cp(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)) for _ in range(size)
            ]
            assert ch.subset_variance(params) >= 0.0


class TestSecondOrderStats:
    def test_tables_match_scalar_paths(self):
        rng = np.random.default_rng(11)
        params = [cp(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)) for _ in range(5)]
        stats = ch.SecondOrderStats(params)
        means = stats.means_all()
        variances = stats.variances_all()
        assert means[0] == 0.0 and variances[0] == 0.0
        for mask in range(1, 1 << 5):
            members = [params[i] for i in ch.mask_indices(mask)]
            assert means[mask] == ch.subset_mean(members)
            assert variances[mask] == ch.subset_variance(members)

    def test_full_set_shortcuts(self):
        stats = ch.SecondOrderStats([cp(0.2, 0.8), cp(0.5, 0.5)])
        assert stats.full_mean == stats.mean(0b11)
        assert stats.full_variance == stats.variance(0b11)

    def test_mean_monotone_and_submodular(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            params = [
                cp(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)) for _ in range(n)
            ]
            means = ch.SecondOrderStats(params).means_all()
            for mask in range(1, (1 << n) - 1):
                for i in range(n):
                    if not mask & (1 << i):
                        assert means[mask] <= means[mask | (1 << i)] + 1e-12
            # marginal gains shrink along every single-element extension,
            # which gives the general S subset-of T case by chaining
            for i in range(n):
                bit = 1 << i
                for t_mask in range(1 << n):
                    if t_mask & bit:
                        continue
                    gain_t = means[t_mask | bit] - means[t_mask]
                    for j in range(n):
                        if t_mask & (1 << j):
                            s_mask = t_mask & ~(1 << j)
                            gain_s = means[s_mask | bit] - means[s_mask]
                            assert gain_s >= gain_t - 1e-12


class TestFiniteHorizonVariance:
    def test_single_slot_is_bernoulli(self):
        params = cp(0.3, 0.6)
        a = params.on_prob
        assert ch.finite_horizon_variance(params, 1) == pytest.approx(a * (1 - a))

    def test_memoryless_is_linear(self):
        assert ch.finite_horizon_variance(cp(0.2, 0.8), 5) == pytest.approx(0.8)

    def test_slow_chain_matches_enumeration(self):
        params = cp(0.1, 0.1)
        # frozen value from the exact 2^10 path enumeration
        assert ch.finite_horizon_variance(params, 10) == pytest.approx(
            13.573741824, abs=1e-9
        )
        assert ch.finite_horizon_variance(params, 10) == pytest.approx(
            ch.enumerated_count_variance(params, 10), abs=1e-9
        )

    def test_algebraic_candidate_is_rejected(self):
        # The candidate closed form disagrees with exact enumeration (it fails
        # even the memoryless case), so the recurrence must be in use.
        assert not ch._closed_form_is_valid(0.2, 0.8)
        cf = ch._count_variance_closed_form(0.2, 0.8, 5)
        assert abs(cf - 0.8) > 0.1
        assert ch.finite_horizon_variance(cp(0.2, 0.8), 5) == pytest.approx(
            ch._count_variance_recurrence(0.2, 0.8, 5)
        )

    def test_recurrence_matches_enumeration_randomly(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            p, q = rng.uniform(0.05, 0.95, 2)
            for t in (1, 2, 3, 7, 12):
                assert ch._count_variance_recurrence(p, q, t) == pytest.approx(
                    ch.enumerated_count_variance(cp(p, q), t), abs=1e-9
                )

    def test_per_slot_variance_converges_to_temporal_variance(self):
        for p, q in ((0.05, 0.05), (0.3, 0.2), (0.8, 0.6)):
            params = cp(p, q)
            v = ch.subset_variance([params], truncation_k=10000)
            ratio = ch.finite_horizon_variance(params, 10000) / 10000 / v
            assert abs(ratio - 1.0) <= 0.01


class TestTraces:
    def test_bit_identical_given_seed(self):
        params = [cp(0.3, 0.4), cp(0.6, 0.2)]
        a = ch.sample_traces(params, 500, 4, seed=9)
        b = ch.sample_traces(params, 500, 4, seed=9)
        assert np.array_equal(a.on, b.on)

    def test_time_block_does_not_change_traces(self):
        params = [cp(0.3, 0.4)]
        a = ch.sample_traces(params, 1000, 3, seed=2, time_block=64)
        b = ch.sample_traces(params, 1000, 3, seed=2, time_block=4096)
        assert np.array_equal(a.on, b.on)

    def test_near_always_on(self):
        traces = ch.sample_traces([cp(1e-9, 1.0)], 200, 3, seed=1)
        assert traces.on.all()

    def test_stationary_fraction(self):
        params = cp(0.4, 0.2)
        traces = ch.sample_traces([params], 20000, 200, seed=4)
        est = ch.empirical_subset_stats(traces, 1, 20000)
        assert abs(est.mean - params.on_prob) <= 3 * est.mean_se

    def test_insufficient_runs(self):
        traces = ch.sample_traces([cp(0.3, 0.3)], 100, 1, seed=0)
        with pytest.raises(InsufficientRuns):
            ch.empirical_subset_stats(traces, 1, 100)

    def test_identical_runs_reduce_to_squared_offset(self):
        # With zero across-run spread the estimate is exactly the squared
        # CLT-normalized gap between the single realized count and t*m_S.
        params = (cp(0.5, 0.5),)
        row = np.zeros((1, 1, 100), dtype=np.uint8)
        row[..., ::2] = 1
        traces = ch.Traces(on=np.repeat(row, 5, axis=0), params=params, seed=0)
        est = ch.empirical_subset_stats(traces, 1, 100)
        count = row.sum()
        expected = (count - 100 * 0.5) ** 2 / 100
        assert est.mean == pytest.approx(count / 100)
        assert est.variance == pytest.approx(expected)

    def test_subset_estimates_match_closed_forms(self):
        params = [cp(0.5, 0.5), cp(0.5, 0.5)]
        traces = ch.sample_traces(params, 10000, 300, seed=8)
        est = ch.empirical_subset_stats(traces, 0b11, 10000)
        assert abs(est.mean - 0.75) <= 3 * est.mean_se
        assert abs(est.variance - 0.1875) <= 3 * est.variance_se
