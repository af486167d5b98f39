"""Committee election: eligibility gating, sortition, partition, verification."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebrc.crypto import GENESIS_SEED, KeyRegistry, SimulatedVrf, VRF_RANGE, derive_seed
from ebrc.election import (
    MIN_COMMITTEE,
    CommitteeAssignment,
    ElectionConfig,
    ElectionFailed,
    eligible_nodes,
    form_committee,
    is_eligible,
    rank_by_growth,
    rank_by_reputation,
)
from ebrc.reputation import new_record, update_behavior_table


def make_registry(n: int) -> KeyRegistry:
    reg = KeyRegistry(seed=b"election-tests")
    for node in range(n):
        reg.register(node)
    return reg


def equal_table(n: int, registry: KeyRegistry):
    return {
        i: new_record(i, registry.public_key(i), 100.0) for i in range(n)
    }


def table_with_scores(registry, scores, growths=None):
    """Table whose records carry the given current reputation/growth values."""
    table = {}
    for i, score in enumerate(scores):
        rec = new_record(i, registry.public_key(i), 100.0)
        rec.reputation_history.append(score)
        rec.growth_history.append(growths[i] if growths else 0.5)
        table[i] = rec
    return table


class TestEligibility:
    def test_top_ranked_node_eligible(self):
        reg = make_registry(20)
        scores = [1.0 - i * 0.01 for i in range(20)]
        table = table_with_scores(reg, scores)
        assert is_eligible(0, table, 0.85)

    def test_bottom_band_ineligible(self):
        # Rank 18 of 20 by reputation sits below the 85th-percentile cut.
        reg = make_registry(20)
        scores = [1.0 - i * 0.01 for i in range(20)]
        table = table_with_scores(reg, scores)
        assert not is_eligible(17, table, 0.85)
        assert not is_eligible(18, table, 0.85)
        assert not is_eligible(19, table, 0.85)

    def test_requires_both_rankings(self):
        # Strong reputation with weak growth is still ineligible: the gate
        # is a conjunction over both orderings.
        reg = make_registry(20)
        scores = [1.0 - i * 0.01 for i in range(20)]
        growths = [0.5] * 20
        growths[4] = -0.4  # rank 5 by reputation, last by growth
        table = table_with_scores(reg, scores, growths)
        assert not is_eligible(4, table, 0.85)

    def test_unknown_node_ineligible(self):
        reg = make_registry(4)
        assert not is_eligible(99, equal_table(4, reg), 0.85)

    def test_tie_break_by_node_id(self):
        reg = make_registry(4)
        table = equal_table(4, reg)
        assert rank_by_reputation(table) == [0, 1, 2, 3]
        assert rank_by_growth(table) == [0, 1, 2, 3]

    def test_cutoff_float_artifact(self):
        # floor(20 * 0.85) must be 17, not 16, despite 0.85 * 20 = 16.999...
        reg = make_registry(20)
        scores = [1.0 - i * 0.01 for i in range(20)]
        table = table_with_scores(reg, scores)
        assert len(eligible_nodes(table, 0.85)) == 17

    def test_boundary_ties_admitted(self):
        # The cut is by score value: nodes tied with the last admitted rank
        # stay eligible instead of being dropped by id.
        reg = make_registry(20)
        table = equal_table(20, reg)
        assert len(eligible_nodes(table, 0.85)) == 20
        scores = [0.9] * 18 + [0.2, 0.2]
        tied = table_with_scores(reg, scores)
        assert eligible_nodes(tied, 0.85) == set(range(18))


class TestFormCommittee:
    def config(self, **kwargs):
        base = dict(
            sortition_threshold=1.0,
            target_committee_size=4,
            eligibility_percentile=1.0,
            consensus_percentile=0.5,
        )
        base.update(kwargs)
        return ElectionConfig(**base)

    def test_partition_at_full_selection(self):
        # 20 equal nodes, everyone selected: 10 consensus, 7 candidates,
        # 3 spares under the 50%/85% split with id tie-breaking.
        reg = make_registry(20)
        table = equal_table(20, reg)
        config_all = ElectionConfig(
            sortition_threshold=1.0,
            target_committee_size=4,
            eligibility_percentile=1.0,
            consensus_percentile=0.5,
        )
        assignment, reports = form_committee(table, config_all, GENESIS_SEED, reg)
        assert reports == []
        assert len(assignment.consensus_nodes) == 10
        assert assignment.consensus_nodes == tuple(range(10))
        # 50%..100% band of the verified set becomes candidates at elig 1.0.
        assert assignment.candidates == tuple(range(10, 20))
        assert assignment.spares == ()

    def test_partition_bands_with_eligibility_cut(self):
        # 20 equal nodes all tie through the 85% gate and all self-select:
        # floor(20*0.5)=10 consensus, floor(20*0.85)=17 -> 7 candidates,
        # 3 spares.
        reg = make_registry(20)
        table = equal_table(20, reg)
        config = self.config(eligibility_percentile=0.85, consensus_percentile=0.5)
        assignment, _ = form_committee(table, config, GENESIS_SEED, reg)
        assert len(assignment.consensus_nodes) == 10
        assert len(assignment.candidates) == 7
        assert len(assignment.spares) == 3

    def test_partition_bands_with_distinct_scores(self):
        # Distinct scores: the 85% gate keeps 17, all self-select, and the
        # bands follow floor(17*0.5)=8 and floor(17*0.85)=14.
        reg = make_registry(20)
        scores = [1.0 - i * 0.01 for i in range(20)]
        table = table_with_scores(reg, scores)
        config = self.config(eligibility_percentile=0.85, consensus_percentile=0.5)
        assignment, _ = form_committee(table, config, GENESIS_SEED, reg)
        assert len(assignment.consensus_nodes) == 8
        assert len(assignment.candidates) == 6
        assert len(assignment.spares) == 3

    def test_partition_disjoint_and_complete(self):
        reg = make_registry(20)
        table = equal_table(20, reg)
        assignment, _ = form_committee(table, self.config(), GENESIS_SEED, reg)
        groups = (
            set(assignment.consensus_nodes),
            set(assignment.candidates),
            set(assignment.spares),
        )
        assert sum(len(g) for g in groups) == len(set().union(*groups)) == 20

    def test_consensus_nodes_reputation_sorted(self):
        reg = make_registry(8)
        scores = [0.5, 0.9, 0.4, 0.8, 0.7, 0.6, 0.95, 0.55]
        table = table_with_scores(reg, scores)
        assignment, _ = form_committee(table, self.config(), GENESIS_SEED, reg)
        ranked = sorted(range(8), key=lambda i: (-scores[i], i))
        assert list(assignment.consensus_nodes) == ranked[: len(assignment.consensus_nodes)]

    def test_deterministic(self):
        reg = make_registry(12)
        table = equal_table(12, reg)
        a, _ = form_committee(table, self.config(), GENESIS_SEED, reg)
        b, _ = form_committee(table, self.config(), GENESIS_SEED, reg)
        assert a == b

    def test_seed_changes_selection(self):
        reg = make_registry(30)
        table = equal_table(30, reg)
        config = self.config(sortition_threshold=0.4)
        results = set()
        seed = GENESIS_SEED
        for _ in range(6):
            try:
                assignment, _ = form_committee(table, config, seed, reg)
                results.add(assignment.consensus_nodes)
            except ElectionFailed:
                pass
            seed = derive_seed(seed)
        assert len(results) >= 2

    def test_corrupt_proof_excluded_and_reported(self):
        reg = make_registry(8)
        table = equal_table(8, reg)
        assignment, reports = form_committee(
            table, self.config(), GENESIS_SEED, reg, corrupt_proofs={3}
        )
        assert (3, "invalid-sortition-proof") in reports
        assert 3 not in assignment.committee
        assert 3 not in assignment.spares

    def test_too_few_selectees_raises(self):
        reg = make_registry(4)
        table = equal_table(4, reg)
        with pytest.raises(ElectionFailed):
            form_committee(
                table, self.config(), GENESIS_SEED, reg, corrupt_proofs={0, 1, 2, 3}
            )

    def test_too_few_eligible_raises(self):
        reg = make_registry(3)
        table = equal_table(3, reg)
        with pytest.raises(ElectionFailed):
            form_committee(table, self.config(), GENESIS_SEED, reg)

    def test_fault_budget_formula(self):
        reg = make_registry(20)
        table = equal_table(20, reg)
        assignment, _ = form_committee(table, self.config(), GENESIS_SEED, reg)
        m = len(assignment.consensus_nodes)
        assert assignment.f == (m - 1) // 3

    def test_assignment_validation_catches_overlap(self):
        bad = CommitteeAssignment(
            epoch=0,
            seed=GENESIS_SEED,
            consensus_nodes=(0, 1, 2, 3),
            candidates=(3,),
            spares=(),
            f=1,
            master_index=0,
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ElectionConfig(sortition_threshold=0.0).validate()
        with pytest.raises(ValueError):
            ElectionConfig(target_committee_size=3).validate()
        with pytest.raises(ValueError):
            ElectionConfig(
                consensus_percentile=0.9, eligibility_percentile=0.5
            ).validate()

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_partition_property_random_scores(self, raw_seed):
        import random

        rng = random.Random(raw_seed)
        n = rng.randint(8, 24)
        reg = make_registry(n)
        scores = [round(rng.uniform(0.05, 1.0), 6) for _ in range(n)]
        table = table_with_scores(reg, scores)
        config = ElectionConfig(
            sortition_threshold=1.0,
            target_committee_size=4,
            eligibility_percentile=1.0,
            consensus_percentile=0.5,
        )
        assignment, _ = form_committee(table, config, GENESIS_SEED, reg)
        members = assignment.consensus_nodes
        # Reputation-descending order with id ties.
        keys = [(-table[node].reputation, node) for node in members]
        assert keys == sorted(keys)
        assert len(members) >= MIN_COMMITTEE
        assert assignment.f == (len(members) - 1) // 3

    def test_bottom_band_never_elected(self):
        # A node in the bottom 15% by reputation stays out across epochs.
        reg = make_registry(20)
        scores = [0.9] * 17 + [0.2, 0.2, 0.2]
        table = table_with_scores(reg, scores)
        config = ElectionConfig(
            sortition_threshold=1.0,
            target_committee_size=4,
            eligibility_percentile=0.85,
            consensus_percentile=0.5,
        )
        seed = GENESIS_SEED
        for _ in range(10):
            assignment, _ = form_committee(table, config, seed, reg)
            for low_node in (17, 18, 19):
                assert low_node not in assignment.committee
                assert low_node not in assignment.spares
            seed = derive_seed(seed)

    def test_poisoned_reputation_demotes(self):
        # Nodes carrying confirmed-report history rank below clean peers and
        # fall out of the consensus slice.
        reg = make_registry(8)
        table = equal_table(8, reg)
        from ebrc.reputation import ConfirmedReport, Participation

        events = [Participation(i, 10) for i in range(8)]
        events += [ConfirmedReport(6), ConfirmedReport(6), ConfirmedReport(7)]
        table = update_behavior_table(table, events)
        assignment, _ = form_committee(table, self.config(), GENESIS_SEED, reg)
        assert 6 not in assignment.consensus_nodes
        assert 7 not in assignment.consensus_nodes
