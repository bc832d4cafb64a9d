"""Unit tests for valuation sampling and conditional supports.

Tests cover:
- DistributionSpec validation
- Equal revenue inverse CDF and closed-form moments
- Deterministic, chunk-independent sampling
- Per-kind generative structure
- Conditional supports of every kind
"""
import numpy as np
import pytest
from pydantic import ValidationError

from src.core.errors import UnsupportedDistributionError
from src.schemas.distribution import DistributionKind, DistributionSpec
from src.services.distributions import (
    Sampler,
    TEST_STREAM,
    analytic_moments,
    conditional_support,
    equal_revenue_inverse_cdf,
    full_surplus_of,
    held_out,
    make_rng,
    sample,
)


def spec_of(kind: DistributionKind, n: int = 2, m: int = 1, **kwargs) -> DistributionSpec:
    return DistributionSpec(kind=kind, n=n, m=m, **kwargs)


@pytest.fixture
def two_bidder_spec():
    return spec_of(DistributionKind.EQUAL_REVENUE_CORRELATED, epsilon=0.1, equal_revenue_mode="two-bidder", seed=3)


class TestDistributionSpec:

    @pytest.mark.parametrize(
        "kind, n, m, extra",
        [
            (DistributionKind.LINEAR_MIXTURE_SYM, 3, 1, {}),
            (DistributionKind.PERFECT_NEGATIVE_LINEAR, 3, 2, {}),
            (DistributionKind.EQUAL_REVENUE_CORRELATED, 2, 2, {}),
            (DistributionKind.EQUAL_REVENUE_CORRELATED, 2, 1, {"epsilon1": 0.2, "epsilon": 0.1}),
            (DistributionKind.EQUAL_REVENUE_CORRELATED, 3, 1, {"equal_revenue_mode": "two-bidder"}),
            (DistributionKind.DIRICHLET_VALUE_SHARE, 2, 2, {"alpha": 0.0}),
            (DistributionKind.LINEAR_MIXTURE_ASYM, 2, 1, {"alpha": 1.5}),
        ],
    )
    def test_unsupported_combinations_rejected(self, kind, n, m, extra):
        with pytest.raises((ValidationError, UnsupportedDistributionError)):
            spec_of(kind, n, m, **extra)

    def test_slope_by_mode(self, two_bidder_spec):
        assert two_bidder_spec.equal_revenue_slope == pytest.approx(1.0 / 9.0)
        n_bidder = spec_of(DistributionKind.EQUAL_REVENUE_CORRELATED, epsilon=0.1, epsilon1=0.05)
        assert n_bidder.equal_revenue_slope == 0.05


class TestEqualRevenue:

    def test_inverse_cdf_median(self):
        assert equal_revenue_inverse_cdf(0.5, 0.1) == pytest.approx(0.18182, abs=1e-5)

    def test_inverse_cdf_endpoints(self):
        assert equal_revenue_inverse_cdf(0.0, 0.1) == pytest.approx(0.1)
        assert equal_revenue_inverse_cdf(0.999999, 0.1) == pytest.approx(1.0, abs=1e-5)

    @pytest.mark.parametrize("u, eps", [(1.0, 0.1), (-0.1, 0.1), (0.5, 0.0), (0.5, 1.0)])
    def test_inverse_cdf_rejects_bad_inputs(self, u, eps):
        with pytest.raises(ValueError):
            equal_revenue_inverse_cdf(u, eps)

    def test_analytic_moments(self, two_bidder_spec):
        moments = analytic_moments(two_bidder_spec)
        assert moments.optimal_full_surplus == pytest.approx(0.25584, abs=1e-5)
        assert moments.vcg_revenue == pytest.approx(0.08268, abs=1e-5)

    def test_monte_carlo_agrees_with_closed_form(self, two_bidder_spec):
        data = sample(two_bidder_spec, 100_000)
        assert full_surplus_of(data.profiles) == pytest.approx(0.25584, abs=0.005)
        assert data.profiles[:, 1, 0].mean() == pytest.approx(0.08268, abs=0.002)

    def test_other_bidders_follow_linear_map(self):
        spec = spec_of(DistributionKind.EQUAL_REVENUE_CORRELATED, n=3, epsilon=0.1, epsilon1=0.05)
        values = sample(spec, 1000).profiles
        expected = 0.05 * (1.0 - values[:, 0, 0])
        np.testing.assert_allclose(values[:, 1, 0], expected)
        np.testing.assert_allclose(values[:, 2, 0], expected)
        assert values[:, 0, 0].min() >= 0.1

    def test_no_closed_form_for_uniform(self):
        with pytest.raises(UnsupportedDistributionError):
            analytic_moments(spec_of(DistributionKind.UNIFORM_IID))

    def test_perfect_negative_moments(self):
        moments = analytic_moments(spec_of(DistributionKind.PERFECT_NEGATIVE_LINEAR, m=2))
        assert moments.optimal_full_surplus == pytest.approx(1.5)
        assert moments.vcg_revenue == pytest.approx(0.5)


class TestSampling:

    def test_same_seed_same_profiles(self):
        spec = spec_of(DistributionKind.DIRICHLET_VALUE_SHARE, n=3, m=2, alpha=0.5, seed=11)
        np.testing.assert_array_equal(sample(spec, 500).profiles, sample(spec, 500).profiles)

    def test_different_seeds_differ(self):
        a = sample(spec_of(DistributionKind.UNIFORM_IID, seed=1), 100).profiles
        b = sample(spec_of(DistributionKind.UNIFORM_IID, seed=2), 100).profiles
        assert not np.array_equal(a, b)

    def test_prefix_independent_of_count(self):
        spec = spec_of(DistributionKind.UNIFORM_IID, n=2, m=2, seed=4)
        short = sample(spec, 10).profiles
        long = sample(spec, 10_000).profiles
        np.testing.assert_array_equal(short, long[:10])

    def test_worker_count_does_not_change_draws(self):
        spec = spec_of(DistributionKind.UNIFORM_IID, n=2, m=2, seed=4)
        serial = Sampler(spec, chunk_size=64, max_workers=1).draw(1000)
        parallel = Sampler(spec, chunk_size=64, max_workers=4).draw(1000)
        np.testing.assert_array_equal(serial, parallel)

    def test_test_stream_is_disjoint_from_dataset_stream(self):
        spec = spec_of(DistributionKind.UNIFORM_IID, seed=5)
        test = held_out(spec, 50)
        assert test.manifest.stream == TEST_STREAM
        assert not np.array_equal(test.profiles, sample(spec, 50).profiles)

    def test_training_batches_differ_per_iteration(self):
        sampler = Sampler(spec_of(DistributionKind.UNIFORM_IID, seed=5))
        assert not np.array_equal(sampler.batch(0, 32), sampler.batch(1, 32))
        np.testing.assert_array_equal(sampler.batch(7, 32), sampler.batch(7, 32))

    def test_make_rng_keys_are_independent(self):
        assert make_rng(0, 1).random() != make_rng(0, 2).random()

    def test_count_must_be_positive(self):
        with pytest.raises(ValueError):
            Sampler(spec_of(DistributionKind.UNIFORM_IID)).draw(0)

    def test_manifest_records_provenance(self):
        data = sample(spec_of(DistributionKind.UNIFORM_IID, seed=9), 20)
        assert data.manifest.seed == 9
        assert data.manifest.count == 20
        assert len(data) == 20


class TestGenerativeStructure:

    def test_uniform_cdf(self):
        values = sample(spec_of(DistributionKind.UNIFORM_IID, n=3, m=2, seed=1), 20_000).profiles
        for q in (0.1, 0.5, 0.9):
            assert (values <= q).mean() == pytest.approx(q, abs=0.01)

    def test_dirichlet_item_totals_between_half_and_one(self):
        values = sample(spec_of(DistributionKind.DIRICHLET_VALUE_SHARE, n=3, m=2, alpha=0.5), 2000).profiles
        totals = values.sum(axis=1)
        assert totals.min() >= 0.5 - 1e-12
        assert totals.max() <= 1.0 + 1e-12
        assert values.min() >= 0.0

    def test_perfect_negative_sums_to_one(self):
        values = sample(spec_of(DistributionKind.PERFECT_NEGATIVE_LINEAR, m=3), 500).profiles
        np.testing.assert_allclose(values.sum(axis=1), 1.0)

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_symmetric_mixture_branch_frequency(self, alpha):
        spec = spec_of(DistributionKind.LINEAR_MIXTURE_SYM, alpha=alpha, seed=2)
        values = sample(spec, 20_000).profiles
        on_line = np.isclose(values[:, 1, 0], 1.0 - values[:, 0, 0], atol=1e-12)
        assert on_line.mean() == pytest.approx(alpha, abs=0.015)

    def test_asymmetric_mixture_second_bidder_below_quarter(self):
        spec = spec_of(DistributionKind.LINEAR_MIXTURE_ASYM, alpha=0.5, seed=2)
        values = sample(spec, 5000).profiles
        assert values[:, 1, :].max() <= 0.25


class TestConditionalSupport:

    def test_uniform_is_full_box(self):
        support = conditional_support(spec_of(DistributionKind.UNIFORM_IID, n=3, m=2), 1, np.zeros(4))
        assert support.kind == "full-box"

    def test_perfect_negative_is_singleton(self):
        support = conditional_support(spec_of(DistributionKind.PERFECT_NEGATIVE_LINEAR, m=2), 0, np.array([0.3, 0.6]))
        assert support.kind == "singleton"
        np.testing.assert_allclose(support.points[0], [0.7, 0.4])

    def test_equal_revenue_inverts_linear_map(self, two_bidder_spec):
        first = conditional_support(two_bidder_spec, 0, np.array([0.05]))
        assert first.points[0, 0] == pytest.approx(1.0 - 0.05 * 9.0)
        second = conditional_support(two_bidder_spec, 1, np.array([0.4]))
        assert second.points[0, 0] == pytest.approx((1.0 - 0.4) / 9.0)

    def test_mixture_is_union_of_point_and_box(self):
        spec = spec_of(DistributionKind.LINEAR_MIXTURE_SYM, alpha=0.5)
        support = conditional_support(spec, 1, np.array([0.3]))
        assert support.kind == "union"
        assert support.points[0, 0] == pytest.approx(0.7)
        candidates = support.candidates(points_per_dim=11)
        assert candidates.shape == (12, 1)

    def test_asymmetric_mixture_drops_unreachable_point(self):
        spec = spec_of(DistributionKind.LINEAR_MIXTURE_ASYM, alpha=0.5)
        # bidder 0 on the correlated line would need v1 = 1 - 4 * 0.3 < 0
        support = conditional_support(spec, 0, np.array([0.3]))
        assert len(support.points) == 0
        assert support.kind == "full-box"

    def test_dirichlet_box_from_claimed_mass(self):
        spec = spec_of(DistributionKind.DIRICHLET_VALUE_SHARE, n=2, m=1, alpha=1.0)
        support = conditional_support(spec, 0, np.array([0.2]))
        box = support.boxes[0]
        assert box.low[0] == pytest.approx(0.3)
        assert box.high[0] == pytest.approx(0.8)

    def test_bidder_out_of_range(self):
        with pytest.raises(ValueError):
            conditional_support(spec_of(DistributionKind.UNIFORM_IID), 2, np.zeros(1))
