import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdmarket.consensus import (
    ConsensusConfig,
    Grouping,
    PayloadKind,
    PrivacyLedger,
    Scope,
    Strategy,
    consensus_mean,
    consensus_mean_median,
    consensus_median,
    form_groups,
    group_means,
    practical_breakdown,
    resolve_group_size,
    run_consensus,
    theoretical_breakdown,
)
from crowdmarket.core import SeededRng
from crowdmarket.errors import ConfigError

MM3 = ConsensusConfig(Strategy.MEAN_MEDIAN_FIXED, 3)


def ids(n):
    return [f"a{i:02d}" for i in range(n)]


class TestFormGroups:
    def test_exact_division(self):
        g = form_groups(ids(9), 3, SeededRng(0))
        assert g.g == 3 and all(len(gr) == 3 for gr in g.groups)

    def test_remainder_round_robin(self):
        g = form_groups(ids(20), 3, SeededRng(0))
        assert g.g == 6
        assert sorted(len(gr) for gr in g.groups) == [3, 3, 3, 3, 4, 4]

    def test_sqrt_group_size(self):
        assert resolve_group_size(ConsensusConfig(Strategy.MEAN_MEDIAN_SQRT), 20) == 4
        g = form_groups(ids(20), 4, SeededRng(0))
        assert g.g == 5 and all(len(gr) == 4 for gr in g.groups)

    def test_too_few_members(self):
        with pytest.raises(ValueError):
            form_groups(ids(2), 3, SeededRng(0))

    def test_config_rejects_singleton_production_groups(self):
        with pytest.raises(ConfigError):
            ConsensusConfig(Strategy.MEAN_MEDIAN_FIXED, 1)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 80), s=st.integers(1, 8), seed=st.integers(0, 10**6))
    def test_partition_property(self, n, s, seed):
        if n < s:
            return
        g = form_groups(ids(n), s, SeededRng(seed))
        flat = [a for gr in g.groups for a in gr]
        assert sorted(flat) == sorted(ids(n))
        assert g.g == n // s
        assert all(len(gr) >= s for gr in g.groups)
        assert n >= s * g.g


class TestPlainEstimators:
    def test_mean_examples(self):
        assert consensus_mean([5, 5, 5]) == 5
        assert consensus_mean(list(range(1, 10))) == 5  # 45 / 9

    def test_mean_breaks_with_one_adversary(self):
        # nine honest zeros plus one report of 1e6 drags the mean to 1e5
        assert consensus_mean([0.0] * 9 + [1e6]) == 1e5

    def test_median_examples(self):
        assert consensus_median([1, 2, 100]) == 2
        assert consensus_median([1, 2, 3, 4]) == 2.5

    def test_median_robust_below_half(self):
        values = [1e6] * 49 + [0.0] * 51
        assert consensus_median(values) == 0.0

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            consensus_mean([])
        with pytest.raises(ValueError):
            consensus_median([])


class TestMeanMedian:
    def test_hand_computed_with_pinned_rng(self):
        # learn the grouping from an identically-seeded shuffle, then compute
        # the expected value independently from raw group arithmetic
        coalition = [(a, float(i + 1)) for i, a in enumerate(ids(9))]
        grouping = form_groups(ids(9), 3, SeededRng(99))
        values = dict(coalition)
        expected_means = [
            sum(values[a] for a in gr) / len(gr) for gr in grouping.groups
        ]
        expected = sorted(expected_means)[1]  # median of three group means
        result = consensus_mean_median(coalition, MM3, SeededRng(99), PrivacyLedger())
        assert result.value == expected
        assert result.grouping == grouping
        assert result.group_means == tuple(expected_means)

    def test_constant_data(self):
        coalition = [(a, 4.25) for a in ids(12)]
        result = consensus_mean_median(coalition, MM3, SeededRng(3), PrivacyLedger())
        assert result.value == 4.25

    def test_privacy_k(self):
        coalition = [(a, 1.0) for a in ids(12)]
        assert consensus_mean_median(coalition, MM3, SeededRng(0), PrivacyLedger()).privacy_k == 2
        sqrt_cfg = ConsensusConfig(Strategy.MEAN_MEDIAN_SQRT)
        res = consensus_mean_median(coalition, sqrt_cfg, SeededRng(0), PrivacyLedger())
        assert res.privacy_k == resolve_group_size(sqrt_cfg, 12) - 1 == 2

    def test_monte_carlo_poisoning_resilience(self):
        # 10% adversaries displaced by 10 sigma: estimate stays within 1 sigma
        # of truth in at least 95 of 100 seeded trials
        n, mu, sigma = 1000, 0.0, 1.0
        hits = 0
        for trial in range(100):
            rng = SeededRng(1234, trial)
            values = rng.gen.normal(mu, sigma, n)
            values[rng.gen.permutation(n)[:100]] = mu + 10 * sigma
            coalition = list(zip(ids(n), values.tolist()))
            res = consensus_mean_median(coalition, MM3, rng, PrivacyLedger())
            hits += abs(res.value - mu) < sigma
        assert hits >= 95

    def test_privacy_ledger_flow(self):
        ledger = PrivacyLedger()
        coalition = [(a, float(i)) for i, a in enumerate(ids(10))]
        consensus_mean_median(coalition, MM3, SeededRng(1), ledger)
        assert ledger.is_valid()
        raw = [m for m in ledger.messages if m[1] is PayloadKind.RAW_VALUE]
        cross = [m for m in ledger.messages if m[0] is Scope.CROSS_GROUP]
        assert len(raw) == 10  # every member shares its value group-locally
        assert len(cross) == 3  # one mean per group crosses groups
        assert all(m[1] is PayloadKind.GROUP_MEAN for m in cross)

    def test_relabeling_invariance(self):
        coalition = [(a, float(i * i)) for i, a in enumerate(ids(15))]
        renamed = [(f"z{a}", v) for a, v in coalition]
        v1 = consensus_mean_median(coalition, MM3, SeededRng(8), PrivacyLedger()).value
        v2 = consensus_mean_median(renamed, MM3, SeededRng(8), PrivacyLedger()).value
        assert v1 == v2


class TestRunConsensusDispatch:
    def test_mean_and_median_single_group(self):
        coalition = [(a, float(i)) for i, a in enumerate(ids(5))]
        mean_res = run_consensus(coalition, ConsensusConfig(Strategy.MEAN), SeededRng(0), PrivacyLedger())
        assert mean_res.value == 2.0 and mean_res.grouping.g == 1
        med_res = run_consensus(coalition, ConsensusConfig(Strategy.MEDIAN), SeededRng(0), PrivacyLedger())
        assert med_res.value == 2.0 and med_res.privacy_k == 0

    def test_mean_median_dispatch(self):
        coalition = [(a, 1.0) for a in ids(9)]
        res = run_consensus(coalition, MM3, SeededRng(0), PrivacyLedger())
        assert res.grouping.g == 3

    def test_plain_strategies_keep_ledger_valid(self):
        for strategy in (Strategy.MEAN, Strategy.MEDIAN):
            ledger = PrivacyLedger()
            run_consensus([(a, 1.0) for a in ids(6)],
                          ConsensusConfig(strategy), SeededRng(0), ledger)
            assert ledger.is_valid()


class TestBreakdown:
    def test_theoretical_examples(self):
        assert theoretical_breakdown(20, 6) == 0.15
        assert theoretical_breakdown(1000, 333) == 333 / 2000
        assert theoretical_breakdown(10, 10) == 0.5  # singleton groups = median

    def test_theoretical_domain(self):
        with pytest.raises(ValueError):
            theoretical_breakdown(5, 6)
        with pytest.raises(ValueError):
            theoretical_breakdown(5, 0)

    def test_practical_never_exceeded(self):
        results = [(s / 10, 0.0) for s in range(11)]
        assert practical_breakdown(results, 0.5, displacement=10.0) == 1.0

    def test_practical_step_function(self):
        # pure-median-style jump at 50%
        results = [(s / 50, 0.0 if s / 50 < 0.5 else 10.0) for s in range(51)]
        assert practical_breakdown(results, 0.5, displacement=10.0) == 0.5

    def test_practical_ramp(self):
        results = [(0.1, 0.0), (0.2, 0.1), (0.3, 0.6), (0.4, 0.9)]
        assert practical_breakdown(results, 0.5, displacement=1.0) == 0.3

    def test_practical_validation(self):
        with pytest.raises(ValueError):
            practical_breakdown([], 0.5)
        with pytest.raises(ValueError):
            practical_breakdown([(0.2, 0.0), (0.1, 0.0)], 0.5)
        with pytest.raises(ValueError):
            practical_breakdown([(0.1, 0.0)], 0.0)


class TestStructuralRobustness:
    def test_singleton_groups_reduce_to_median(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            values = rng.normal(0, 5, 11)
            grouping = form_groups(ids(11), 1, SeededRng(int(rng.integers(10**6))))
            means = group_means(grouping, dict(zip(ids(11), values)))
            assert np.isclose(np.median(means), consensus_median(values))

    def test_adversaries_controlling_majority_of_groups(self):
        # hand-placed: 5 groups of 3, adversaries own ceil(5/2)=3 whole groups
        mu_adv = 1e6
        members = ids(15)
        groups = tuple(tuple(members[i * 3 : (i + 1) * 3]) for i in range(5))
        grouping = Grouping(groups, 5, 3)
        values = {a: 0.1 * i for i, a in enumerate(members)}
        for a in groups[0] + groups[1] + groups[2]:
            values[a] = mu_adv
        means = group_means(grouping, values)
        assert np.median(means) == mu_adv  # output captured exactly

    def test_adversaries_below_majority_bounded_by_honest_means(self):
        mu_adv = 1e6
        members = ids(15)
        groups = tuple(tuple(members[i * 3 : (i + 1) * 3]) for i in range(5))
        grouping = Grouping(groups, 5, 3)
        values = {a: 0.1 * i for i, a in enumerate(members)}
        for a in groups[0] + groups[1]:  # only 2 of 5 groups captured
            values[a] = mu_adv
        means = group_means(grouping, values)
        honest = [
            np.mean([values[a] for a in gr]) for gr in groups[2:]
        ]
        assert min(honest) <= np.median(means) <= max(honest)


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(4, 40),
    seed=st.integers(0, 10**6),
    scale=st.floats(0.1, 100.0),
)
def test_mean_median_privacy_invariant_property(n, seed, scale):
    rng = SeededRng(seed)
    values = (rng.gen.random(n) * scale).tolist()
    ledger = PrivacyLedger()
    consensus_mean_median(list(zip(ids(n), values)), MM3, rng, ledger)
    assert ledger.is_valid()
