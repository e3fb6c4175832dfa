import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdmarket.core import Agent, SeededRng
from crowdmarket.errors import ConfigError, SolverError
from crowdmarket.voting import (
    Ordering,
    OrderingDistribution,
    PreferenceMatrix,
    VotingConfig,
    aggregate_preference_matrix,
    aggregate_preferences,
    build_agent_preference,
    elect_committee,
    enumerate_orderings,
    ordering_preference,
    preference_score,
    sample_outcome,
    solve_max_entropy,
)


def agent(aid, x, reps=None, adversary=False):
    return Agent(
        aid, 1, float(x), dict(reps or {}),
        is_adversary=adversary, adversary_value=float(x) if adversary else None,
    )


CFG = VotingConfig(winners_per_round=1)


class TestPreferenceScore:
    def test_same_measurement_high_reputation(self):
        voter = agent("v", 10.0, {"c": 1.0})
        assert preference_score(voter, agent("c", 10.0)) == 11.0

    def test_distance_discounts(self):
        # (1 + 10*1) / (1 + |10-20|) = 11/11
        voter = agent("v", 10.0, {"c": 1.0})
        assert preference_score(voter, agent("c", 20.0)) == 1.0

    def test_zero_measurement(self):
        voter = agent("v", 0.0, {"c": 123.0})
        assert preference_score(voter, agent("c", 0.0)) == 1.0

    def test_missing_reputation(self):
        with pytest.raises(ValueError):
            preference_score(agent("v", 1.0), agent("c", 1.0))

    def test_negative_reputation_rejected(self):
        voter = Agent("v", 1, 1.0, {})
        voter.reputation_out["c"] = -1.0  # bypass Agent validation
        with pytest.raises(ValueError):
            preference_score(voter, agent("c", 1.0))

    @settings(max_examples=60, deadline=None)
    @given(
        x_v=st.floats(-50, 50),
        x_c=st.floats(-50, 50),
        r=st.floats(0, 100),
        bump=st.floats(0.01, 100),
    )
    def test_monotone_in_reputation(self, x_v, x_c, r, bump):
        lo = preference_score(agent("v", x_v, {"c": r}), agent("c", x_c))
        hi = preference_score(agent("v", x_v, {"c": r + bump}), agent("c", x_c))
        assert hi >= lo
        if abs(x_v) > 1e-9:
            assert hi > lo


class TestAgentPreference:
    def test_three_candidate_example_matrix(self):
        # voter prefers itself strictly, ties the two distant candidates
        voter = agent("ai", 10.0, {"ai": 1.0, "aj": 1.0, "ak": 1.0})
        candidates = [voter, agent("aj", 20.0), agent("ak", 20.0)]
        m = build_agent_preference(voter, candidates)
        expected = np.array([[0, 1, 1], [0, 0, 0.5], [0, 0.5, 0]])
        assert np.array_equal(m.entries, expected)

    def test_all_equal_scores(self):
        voter = agent("v", 5.0, {"a": 1.0, "b": 1.0, "c": 1.0})
        candidates = [agent(c, 5.0) for c in "abc"]
        m = build_agent_preference(voter, candidates)
        off = ~np.eye(3, dtype=bool)
        assert np.all(m.entries[off] == 0.5)

    def test_two_candidates_strict(self):
        voter = agent("v", 1.0, {"a": 4.0, "b": 2.0})  # scores 5 vs 3
        m = build_agent_preference(voter, [agent("a", 1.0), agent("b", 1.0)])
        assert np.array_equal(m.entries, np.array([[0, 1], [0, 0]]))

    def test_empty_candidates(self):
        with pytest.raises(ValueError):
            build_agent_preference(agent("v", 1.0), [])


class TestAggregation:
    def test_single_matrix_identity(self):
        m = PreferenceMatrix(np.array([[0.0, 1.0], [0.0, 0.0]]), ("a", "b"))
        assert np.array_equal(aggregate_preferences([m]).entries, m.entries)

    def test_two_opposed_votes_average(self):
        m1 = PreferenceMatrix(np.array([[0.0, 1.0], [0.0, 0.0]]), ("a", "b"))
        m2 = PreferenceMatrix(np.array([[0.0, 0.0], [1.0, 0.0]]), ("a", "b"))
        agg = aggregate_preferences([m1, m2])
        assert np.array_equal(agg.entries, np.array([[0, 0.5], [0.5, 0]]))

    def test_idempotent_mean(self):
        m = PreferenceMatrix(np.array([[0.0, 0.25], [0.75, 0.0]]), ("a", "b"))
        agg = aggregate_preferences([m] * 5)
        assert np.allclose(agg.entries, m.entries)

    def test_index_mismatch(self):
        m1 = PreferenceMatrix(np.zeros((2, 2)) + np.array([[0, 1], [0, 0]]), ("a", "b"))
        m2 = PreferenceMatrix(np.array([[0.0, 1.0], [0.0, 0.0]]), ("a", "c"))
        with pytest.raises(ValueError):
            aggregate_preferences([m1, m2])

    def test_vectorized_matches_per_voter_average(self):
        rng = SeededRng(11)
        ids = [f"a{i}" for i in range(6)]
        agents = []
        for i in ids:
            reps = {j: float(rng.gen.random()) * 5 for j in ids}
            agents.append(agent(i, rng.gen.normal(), reps))
        fast = aggregate_preference_matrix(agents)
        slow = aggregate_preferences([build_agent_preference(v, agents) for v in agents])
        assert fast.candidate_index == slow.candidate_index
        assert np.allclose(fast.entries, slow.entries, atol=1e-15)


class TestPreferenceMatrixInvariants:
    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValueError):
            PreferenceMatrix(np.array([[0.5, 1.0], [0.0, 0.0]]), ("a", "b"))

    def test_rejects_broken_complementarity(self):
        with pytest.raises(ValueError):
            PreferenceMatrix(np.array([[0.0, 0.9], [0.2, 0.0]]), ("a", "b"))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            PreferenceMatrix(np.array([[0.0, 1.5], [-0.5, 0.0]]), ("a", "b"))

    def test_restrict_submatrix(self):
        entries = np.array([[0, 1, 0.25], [0, 0, 0.5], [0.75, 0.5, 0]])
        m = PreferenceMatrix(entries, ("a", "b", "c"))
        sub = m.restrict(("a", "c"))
        assert np.array_equal(sub.entries, np.array([[0, 0.25], [0.75, 0]]))


class TestOrderings:
    def test_three_singletons_match_minimal_set(self):
        orderings = enumerate_orderings(("ai", "aj", "ak"), 1)
        assert [o.preferred for o in orderings] == [("ai",), ("aj",), ("ak",)]
        assert orderings[0].non_preferred == ("aj", "ak")

    def test_combination_count(self):
        cands = tuple(f"a{i}" for i in range(30))
        assert len(enumerate_orderings(cands, 3)) == math.comb(30, 3) == 4060

    def test_everyone_preferred(self):
        orderings = enumerate_orderings(("a", "b"), 2)
        assert len(orderings) == 1 and orderings[0].non_preferred == ()

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            enumerate_orderings(("a", "b"), 3)
        with pytest.raises(ValueError):
            enumerate_orderings(("a", "b"), 0)

    def test_ordering_disjointness_enforced(self):
        with pytest.raises(ValueError):
            Ordering(("a",), ("a", "b"))


class TestOrderingPreference:
    def test_minimal_set_first_outcome(self):
        cands = ("ai", "aj", "ak")
        m = ordering_preference(Ordering(("ai",), ("aj", "ak")), cands)
        expected = np.array([[0, 1, 1], [0, 0, 0.5], [0, 0.5, 0]])
        assert np.array_equal(m.entries, expected)

    def test_everyone_preferred_all_half(self):
        cands = ("a", "b", "c")
        m = ordering_preference(Ordering(cands, ()), cands)
        off = ~np.eye(3, dtype=bool)
        assert np.all(m.entries[off] == 0.5)

    def test_two_candidate_case(self):
        m = ordering_preference(Ordering(("a",), ("b",)), ("a", "b"))
        assert np.array_equal(m.entries, np.array([[0, 1], [0, 0]]))

    def test_partition_mismatch(self):
        with pytest.raises(ValueError):
            ordering_preference(Ordering(("a",), ("b",)), ("a", "b", "c"))


def feasible_instance(n, k, seed):
    """S(A) built as a known mixture of outcome matrices: always achievable."""
    rng = np.random.default_rng(seed)
    cands = tuple(f"c{i}" for i in range(n))
    orderings = enumerate_orderings(cands, k)
    weights = rng.dirichlet(np.ones(len(orderings)))
    entries = sum(
        w * ordering_preference(o, cands).entries for w, o in zip(weights, orderings)
    )
    return PreferenceMatrix(entries, cands), orderings, weights


class TestSolveMaxEntropy:
    def test_indifferent_matrix_gives_uniform(self):
        for n, k in ((3, 1), (4, 2), (5, 3)):
            cands = tuple(f"c{i}" for i in range(n))
            entries = np.full((n, n), 0.5)
            np.fill_diagonal(entries, 0.0)
            orderings = enumerate_orderings(cands, k)
            dist = solve_max_entropy(PreferenceMatrix(entries, cands), orderings, CFG)
            assert np.all(np.abs(dist.probs - 1.0 / len(orderings)) <= 1e-6)
            assert dist.residual <= 1e-6

    def test_recovers_known_singleton_distribution(self):
        # K=1: marginals pin the distribution, so the unique feasible point
        # (0.5, 0.3, 0.2) is also the entropy maximizer
        cands = ("a1", "a2", "a3")
        orderings = enumerate_orderings(cands, 1)
        target = np.array([0.5, 0.3, 0.2])
        entries = sum(
            w * ordering_preference(o, cands).entries
            for w, o in zip(target, orderings)
        )
        dist = solve_max_entropy(PreferenceMatrix(entries, cands), orderings, CFG)
        assert np.abs(dist.probs - target).max() <= 1e-3
        assert dist.residual <= 1e-3
        # the most probable single winner is the first candidate
        assert dist.orderings[int(np.argmax(dist.probs))].preferred == ("a1",)

    def test_feasible_residual_small(self):
        for seed in range(5):
            s_a, orderings, _ = feasible_instance(5, 2, seed)
            dist = solve_max_entropy(s_a, orderings, CFG)
            assert dist.residual <= 1e-3

    def test_entropy_not_below_feasible_alternatives(self):
        # any feasible distribution must have entropy <= H(pi*) + 1e-4
        for seed in range(5):
            s_a, orderings, weights = feasible_instance(4, 2, seed)
            dist = solve_max_entropy(s_a, orderings, CFG)
            cands = s_a.candidate_index
            mats = np.array([ordering_preference(o, cands).entries for o in orderings])
            iu = np.triu_indices(len(cands), k=1)
            constraints = np.vstack([mats[:, iu[0], iu[1]].T, np.ones(len(orderings))])
            _, _, vt = np.linalg.svd(constraints)
            null = vt[np.linalg.matrix_rank(constraints):]
            rng = np.random.default_rng(seed)
            for _ in range(50):
                if len(null) == 0:
                    break
                perturbed = weights + null.T @ rng.normal(0, 0.05, len(null))
                if perturbed.min() < 1e-12:
                    continue
                feasible_entropy = -float(perturbed @ np.log(perturbed))
                assert feasible_entropy <= dist.entropy + 1e-4

    def test_permutation_equivariance(self):
        s_a, orderings, _ = feasible_instance(5, 2, 123)
        dist = solve_max_entropy(s_a, orderings, CFG)
        perm = [2, 0, 4, 1, 3]
        cands = s_a.candidate_index
        permuted_ids = tuple(cands[i] for i in perm)
        permuted = s_a.restrict(permuted_ids)  # row/col reorder
        orderings_p = enumerate_orderings(permuted_ids, 2)
        dist_p = solve_max_entropy(permuted, orderings_p, CFG)
        by_set = {frozenset(o.preferred): p for o, p in zip(dist.orderings, dist.probs)}
        for o, p in zip(dist_p.orderings, dist_p.probs):
            assert abs(by_set[frozenset(o.preferred)] - p) <= 1e-9

    def test_infeasible_target_still_converges(self):
        # hard total order cannot be matched by K-subset outcomes: solver
        # reports the gap instead of failing
        cands = ("a", "b", "c", "d")
        entries = np.triu(np.ones((4, 4)), k=1)
        s_a = PreferenceMatrix(entries, cands)
        dist = solve_max_entropy(s_a, enumerate_orderings(cands, 2), CFG)
        assert dist.residual > 0.01
        assert abs(dist.probs.sum() - 1.0) <= 1e-9

    def test_single_ordering_degenerate(self):
        cands = ("a", "b")
        entries = np.array([[0.0, 0.5], [0.5, 0.0]])
        dist = solve_max_entropy(
            PreferenceMatrix(entries, cands), enumerate_orderings(cands, 2), CFG
        )
        assert dist.probs.tolist() == [1.0] and dist.entropy == 0.0

    def test_non_convergence_raises_with_iterate(self):
        cands = ("a", "b", "c", "d")
        entries = np.triu(np.ones((4, 4)), k=1)
        s_a = PreferenceMatrix(entries, cands)
        tiny = VotingConfig(winners_per_round=2, max_iterations=1)
        with pytest.raises(SolverError) as err:
            solve_max_entropy(s_a, enumerate_orderings(cands, 2), tiny)
        assert err.value.distribution is not None

    def test_empty_orderings(self):
        s_a = PreferenceMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]), ("a", "b"))
        with pytest.raises(ValueError):
            solve_max_entropy(s_a, [], CFG)


class TestSampling:
    def test_point_mass(self):
        orderings = tuple(enumerate_orderings(("a", "b", "c"), 1))
        dist = OrderingDistribution(orderings, np.array([1.0, 0.0, 0.0]), 0.0, 0.0)
        assert all(
            sample_outcome(dist, SeededRng(s)) == orderings[0] for s in range(20)
        )

    def test_empirical_frequencies(self):
        orderings = tuple(enumerate_orderings(("a", "b", "c"), 1))
        probs = np.array([0.5, 0.3, 0.2])
        dist = OrderingDistribution(orderings, probs, 0.0, 1.0)
        rng = SeededRng(77)
        counts = np.zeros(3)
        for _ in range(100_000):
            counts[orderings.index(sample_outcome(dist, rng))] += 1
        assert np.abs(counts / 100_000 - probs).max() <= 0.01

    def test_deterministic_given_seed(self):
        orderings = tuple(enumerate_orderings(("a", "b", "c"), 1))
        dist = OrderingDistribution(orderings, np.array([0.2, 0.5, 0.3]), 0.0, 1.0)
        assert sample_outcome(dist, SeededRng(5)) == sample_outcome(dist, SeededRng(5))


def reputation_agents(n, seed=0):
    rng = SeededRng(seed)
    ids = [f"a{i:02d}" for i in range(n)]
    out = []
    for i in ids:
        reps = {j: float(rng.gen.random() * 3) for j in ids}
        out.append(agent(i, rng.gen.normal(), reps))
    return out


class TestElectCommittee:
    def test_single_round_everyone(self):
        agents = reputation_agents(4)
        groups = elect_committee(agents, VotingConfig(winners_per_round=4, rounds=1), SeededRng(1))
        assert len(groups) == 1 and sorted(groups[0]) == [a.id for a in agents]

    def test_disjoint_triples(self):
        agents = reputation_agents(10)
        groups = elect_committee(agents, VotingConfig(3, 3), SeededRng(2))
        assert len(groups) == 3
        winners = [a for g in groups for a in g]
        assert len(winners) == len(set(winners)) == 9

    def test_five_rounds_of_three_from_thirty(self):
        agents = reputation_agents(30)
        transcript = []
        groups = elect_committee(agents, VotingConfig(3, 5), SeededRng(3), transcript=transcript)
        winners = {a for g in groups for a in g}
        assert len(winners) == 15
        assert len({a.id for a in agents} - winners) == 15
        # exactly one solve per round over the shrinking pool
        assert [r.ordering_count for r in transcript] == [
            math.comb(30, 3), math.comb(27, 3), math.comb(24, 3),
            math.comb(21, 3), math.comb(18, 3),
        ]

    def test_pool_too_small(self):
        with pytest.raises(ValueError):
            elect_committee(reputation_agents(5), VotingConfig(3, 2), SeededRng(0))

    def test_deterministic_given_seed(self):
        agents = reputation_agents(12)
        cfg = VotingConfig(3, 2)
        assert elect_committee(agents, cfg, SeededRng(9)) == elect_committee(
            agents, cfg, SeededRng(9)
        )


def test_iterated_complexity_inequality():
    n, k, j = 30, 3, 5
    iterated = sum(math.comb(n - k * i, k) for i in range(j))
    repeated = j * math.comb(n, k)
    joint = math.comb(n, k * j)
    assert iterated < repeated < joint
    assert (iterated, repeated, joint) == (11155, 20300, 155117520)


def test_voting_config_validation():
    for bad in (
        dict(winners_per_round=0),
        dict(winners_per_round=1, rounds=0),
        dict(winners_per_round=1, solver_tolerance=0.0),
        dict(winners_per_round=1, max_iterations=0),
        dict(winners_per_round=1, penalty_rho=-1.0),
    ):
        with pytest.raises(ConfigError):
            VotingConfig(**bad)
