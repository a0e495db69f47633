"""Outer/inner feasibility checks and subset-constraint enumeration."""

import math

import numpy as np
import pytest

from sosched import capacity as cap
from sosched import channel as ch
from sosched.errors import DimensionMismatch, DomainError, TooManyClients


def iid_stats(*qs):
    return ch.SecondOrderStats([ch.ChannelParams(1.0 - q, q) for q in qs])


def random_stats(rng, n):
    return ch.SecondOrderStats(
        [ch.ChannelParams(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)) for _ in range(n)]
    )


def proportional_point(stats):
    n = stats.n_clients
    singles = np.array([stats.mean(1 << i) for i in range(n)])
    mu = singles * stats.full_mean / singles.sum()
    sd = math.sqrt(stats.full_variance)
    sigma = np.full(n, sd / n)
    return cap.OperatingPoint(mu=mu, sigma2=sigma**2)


class TestOperatingPoint:
    def test_shape_validation(self):
        with pytest.raises(DomainError):
            cap.OperatingPoint(mu=[0.1, 0.2], sigma2=[0.1])

    def test_sigma_accessor(self):
        pt = cap.OperatingPoint(mu=[0.5], sigma2=[0.25])
        assert pt.sigma[0] == pytest.approx(0.5)


class TestCheckOuter:
    def test_single_client_boundary_point_feasible(self):
        stats = ch.SecondOrderStats([ch.ChannelParams(0.2, 0.8)])
        pt = cap.OperatingPoint(mu=[stats.full_mean], sigma2=[stats.full_variance])
        assert cap.check_outer(stats, pt, tol=0.0).feasible

    def test_overloaded_rates_infeasible(self):
        stats = iid_stats(0.5, 0.5)
        report = cap.check_outer(stats, cap.OperatingPoint([0.5, 0.5], [0.1, 0.1]))
        assert not report.feasible
        assert any(v.constraint == "total_rate" for v in report.violations)

    def test_zero_variance_violates_sd_budget(self):
        stats = iid_stats(0.5, 0.5)
        mu = [0.375, 0.375]
        report = cap.check_outer(stats, cap.OperatingPoint(mu, [0.0, 0.0]))
        assert any(v.constraint == "total_sd" for v in report.violations)

    def test_negative_rate_flagged(self):
        stats = iid_stats(0.6, 0.6)
        report = cap.check_outer(
            stats, cap.OperatingPoint([-0.01, stats.full_mean + 0.01], [0.1, 0.1])
        )
        assert any(v.constraint == "nonneg_rate" and v.subset == 1 for v in report.violations)

    def test_dimension_mismatch(self):
        stats = iid_stats(0.5)
        with pytest.raises(DimensionMismatch):
            cap.check_outer(stats, cap.OperatingPoint([0.1, 0.1], [0.1, 0.1]))

    def test_monotone_in_tol(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            stats = random_stats(rng, int(rng.integers(2, 5)))
            n = stats.n_clients
            mu = rng.uniform(0, 0.6, n)
            pt = cap.OperatingPoint(mu, rng.uniform(0.01, 0.5, n))
            if cap.check_outer(stats, pt, tol=0.01).feasible:
                assert cap.check_outer(stats, pt, tol=0.05).feasible


class TestCheckInner:
    def test_symmetric_interior_point_feasible(self):
        stats = iid_stats(0.5, 0.5)
        sd = math.sqrt(stats.full_variance)
        pt = cap.OperatingPoint([0.375, 0.375], [(sd / 2) ** 2, (sd / 2) ** 2])
        assert cap.check_inner(stats, pt, delta=0.01).feasible

    def test_zero_variance_always_infeasible(self):
        stats = iid_stats(0.5, 0.5)
        pt = cap.OperatingPoint([0.375, 0.375], [0.0, stats.full_variance])
        report = cap.check_inner(stats, pt, delta=0.01)
        assert any(v.constraint == "positive_variance" for v in report.violations)

    def test_delta_must_be_positive(self):
        stats = iid_stats(0.5, 0.5)
        pt = proportional_point(stats)
        with pytest.raises(DomainError):
            cap.check_inner(stats, pt, delta=0.0)

    def test_monotone_in_delta(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            stats = random_stats(rng, int(rng.integers(2, 5)))
            pt = proportional_point(stats)
            if cap.check_inner(stats, pt, delta=0.02).feasible:
                assert cap.check_inner(stats, pt, delta=0.005).feasible

    def test_inner_implies_outer(self):
        rng = np.random.default_rng(41)
        n_feasible = 0
        for _ in range(100):
            stats = random_stats(rng, int(rng.integers(2, 7)))
            pt = proportional_point(stats)
            if cap.check_inner(stats, pt, delta=1e-3).feasible:
                n_feasible += 1
                assert cap.check_outer(stats, pt, tol=0.0).feasible
        assert n_feasible >= 50  # the implication must not pass vacuously


class TestMostViolatedSubset:
    def test_zero_rates_pick_worst_singleton(self):
        stats = iid_stats(0.9, 0.1)
        mask, slack = cap.most_violated_subset(stats, [0.0, 0.0])
        assert mask == 0b10
        assert slack == pytest.approx(0.1)

    def test_exact_arithmetic_tie_breaks_low_bitmask(self):
        # both singletons tie at slack 0.05 in exact arithmetic
        stats = iid_stats(0.9, 0.1)
        mask, slack = cap.most_violated_subset(stats, [0.85, 0.05])
        assert mask == 0b01
        assert slack == pytest.approx(0.05)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(13)
        for _ in range(60):
            n = int(rng.integers(2, 11))
            stats = random_stats(rng, n)
            mu = rng.uniform(0.0, 0.4, n)
            got_mask, got_slack = cap.most_violated_subset(stats, mu)
            best_mask, best = None, math.inf
            for mask in range(1, (1 << n) - 1):
                members = [i for i in range(n) if mask & (1 << i)]
                slack = ch.subset_mean(
                    [stats.params[i] for i in members]
                ) - sum(mu[i] for i in members)
                if slack < best - cap.TIE_TOL:
                    best_mask, best = mask, slack
            assert got_mask == best_mask
            assert got_slack == pytest.approx(best, abs=1e-9)

    def test_single_client_has_no_proper_subsets(self):
        stats = iid_stats(0.5)
        mask, slack = cap.most_violated_subset(stats, [0.2])
        assert mask == 0 and slack == math.inf

    def test_size_guard(self):
        stats = ch.SecondOrderStats([ch.ChannelParams(0.5, 0.5)] * 26)
        with pytest.raises(TooManyClients):
            cap.most_violated_subset(stats, np.full(26, 0.01))
