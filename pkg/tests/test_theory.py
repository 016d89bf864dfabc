"""Synthetic success model: exact quantities, simulation, and sweeps."""

from __future__ import annotations

from fractions import Fraction

import pytest

from guided_sampling.errors import ModelError, QueryError
from guided_sampling.theory import (
    SWEEP_CSV_HEADER,
    SyntheticModel,
    condition_lhs,
    coverage_after_k,
    k_min,
    lower_bound,
    monte_carlo,
    p_gs,
    p_rs,
    random_model,
    relevant_mass,
    sweep_models,
    sweep_to_csv,
)


def worked_model() -> SyntheticModel:
    """Two concepts, one relevant, hand-checkable numbers."""
    return SyntheticModel(
        concept_probs={"alpha": 0.6, "beta": 0.4},
        relevant=frozenset({"alpha"}),
        base_correct=0.1,
        amplification={"alpha": 3.0},
        irrelevant_correct={"beta": 0.05},
    )


class TestModelValidation:
    def test_worked_model_constructs(self):
        worked_model()

    def test_empty_concepts_rejected(self):
        with pytest.raises(ModelError):
            SyntheticModel(
                concept_probs={},
                relevant=frozenset(),
                base_correct=0.1,
                amplification={},
                irrelevant_correct={},
            )

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ModelError, match="sum"):
            SyntheticModel(
                concept_probs={"a": 0.6, "b": 0.3},
                relevant=frozenset({"a"}),
                base_correct=0.1,
                amplification={"a": 2.0},
                irrelevant_correct={"b": 0.0},
            )

    def test_unknown_relevant_id_rejected(self):
        with pytest.raises(ModelError, match="unknown"):
            SyntheticModel(
                concept_probs={"a": 1.0},
                relevant=frozenset({"ghost"}),
                base_correct=0.1,
                amplification={"ghost": 2.0},
                irrelevant_correct={"a": 0.0},
            )

    def test_amplification_must_cover_relevant_exactly(self):
        with pytest.raises(ModelError, match="amplification"):
            SyntheticModel(
                concept_probs={"a": 0.5, "b": 0.5},
                relevant=frozenset({"a"}),
                base_correct=0.1,
                amplification={},
                irrelevant_correct={"b": 0.0},
            )

    def test_amplification_must_exceed_one(self):
        with pytest.raises(ModelError, match="> 1"):
            SyntheticModel(
                concept_probs={"a": 1.0},
                relevant=frozenset({"a"}),
                base_correct=0.1,
                amplification={"a": 1.0},
                irrelevant_correct={},
            )

    def test_amplified_probability_capped_at_one(self):
        with pytest.raises(ModelError, match="exceeds 1"):
            SyntheticModel(
                concept_probs={"a": 1.0},
                relevant=frozenset({"a"}),
                base_correct=0.5,
                amplification={"a": 3.0},
                irrelevant_correct={},
            )

    def test_irrelevant_correct_must_cover_exactly(self):
        with pytest.raises(ModelError, match="irrelevant"):
            SyntheticModel(
                concept_probs={"a": 0.5, "b": 0.5},
                relevant=frozenset({"a"}),
                base_correct=0.1,
                amplification={"a": 2.0},
                irrelevant_correct={},
            )

    def test_base_correct_must_be_probability(self):
        with pytest.raises(ModelError):
            SyntheticModel(
                concept_probs={"a": 1.0},
                relevant=frozenset(),
                base_correct=1.5,
                amplification={},
                irrelevant_correct={"a": 0.0},
            )

    def test_round_trip_dict(self):
        m = worked_model()
        assert SyntheticModel.from_dict(m.to_dict()) == m

    def test_round_trip_json(self, tmp_path):
        m = worked_model()
        path = tmp_path / "model.json"
        m.to_json(path)
        assert SyntheticModel.from_json(path) == m


class TestWorkedQuantities:
    def test_p_rs(self):
        assert p_rs(worked_model()) == 0.1

    def test_p_gs(self):
        # 0.6 * 3 * 0.1 + 0.4 * 0.05 = 0.18 + 0.02 = 0.20
        assert p_gs(worked_model()) == pytest.approx(0.20, abs=1e-12)

    def test_k_min(self):
        assert k_min(worked_model()) == 3.0

    def test_relevant_mass(self):
        assert relevant_mass(worked_model()) == pytest.approx(0.6, abs=1e-15)

    def test_condition_lhs(self):
        # (3 * 0.6 - 1) * 0.1 + 0.4 * 0.05 = 0.08 + 0.02 = 0.10
        assert condition_lhs(worked_model()) == pytest.approx(0.10, abs=1e-12)

    def test_lower_bound(self):
        # 3 * 0.1 * 0.6 + 0.02 = 0.20; equals p_gs here because the single
        # relevant concept attains k_min exactly
        assert lower_bound(worked_model()) == pytest.approx(0.20, abs=1e-12)

    def test_exact_variants_are_fractions(self):
        m = worked_model()
        gs = p_gs(m, exact=True)
        assert isinstance(gs, Fraction)
        expected = (
            Fraction(0.6) * Fraction(3.0) * Fraction(0.1)
            + Fraction(0.4) * Fraction(0.05)
        )
        assert gs == expected

    def test_gap_exceeds_condition_lhs(self):
        m = worked_model()
        gap = p_gs(m, exact=True) - p_rs(m, exact=True)
        assert gap >= condition_lhs(m, exact=True)

    def test_lower_bound_below_p_gs_exactly(self):
        m = worked_model()
        assert lower_bound(m, exact=True) <= p_gs(m, exact=True)

    def test_success_probability(self):
        m = worked_model()
        assert m.success_probability("alpha") == pytest.approx(0.3, abs=1e-12)
        assert m.success_probability("beta") == 0.05

    def test_empty_relevant_set_convention(self):
        m = SyntheticModel(
            concept_probs={"a": 0.5, "b": 0.5},
            relevant=frozenset(),
            base_correct=0.1,
            amplification={},
            irrelevant_correct={"a": 0.2, "b": 0.0},
        )
        assert k_min(m) == 1.0
        assert relevant_mass(m) == 0.0
        # condition reduces to irrelevant mass minus q: 0.1 - 0.1 = 0
        assert condition_lhs(m) == pytest.approx(0.0, abs=1e-15)
        assert p_gs(m) == pytest.approx(0.1, abs=1e-15)


class TestCoverage:
    def test_worked_values(self):
        assert coverage_after_k(0.2, 10) == pytest.approx(0.8926258176, rel=1e-9)
        assert coverage_after_k(0.1, 10) == pytest.approx(0.6513215599, rel=1e-9)

    def test_single_try_is_p(self):
        assert coverage_after_k(0.37, 1) == pytest.approx(0.37)

    def test_certainty_edges(self):
        assert coverage_after_k(1.0, 3) == 1.0
        assert coverage_after_k(0.0, 3) == 0.0

    def test_monotone_in_k(self):
        values = [coverage_after_k(0.2, k) for k in range(1, 20)]
        assert values == sorted(values)

    def test_bad_inputs(self):
        with pytest.raises(QueryError):
            coverage_after_k(1.2, 3)
        with pytest.raises(QueryError):
            coverage_after_k(0.5, 0)


class TestMonteCarlo:
    def test_rs_converges_to_q(self):
        rate = monte_carlo(worked_model(), "rs", trials=50_000, seed=11)
        assert rate == pytest.approx(0.1, abs=0.006)

    def test_guided_converges_to_p_gs(self):
        rate = monte_carlo(worked_model(), "guided", trials=50_000, seed=11)
        assert rate == pytest.approx(0.20, abs=0.008)

    def test_seeded_determinism(self):
        a = monte_carlo(worked_model(), "guided", trials=1_000, seed=3)
        b = monte_carlo(worked_model(), "guided", trials=1_000, seed=3)
        assert a == b

    def test_bad_strategy(self):
        with pytest.raises(QueryError):
            monte_carlo(worked_model(), "both", trials=10, seed=0)

    def test_bad_trials(self):
        with pytest.raises(QueryError):
            monte_carlo(worked_model(), "rs", trials=0, seed=0)


class TestRandomModel:
    def test_seeded_determinism(self):
        assert random_model(42, 4) == random_model(42, 4)

    def test_different_seeds_differ(self):
        assert random_model(1, 4) != random_model(2, 4)

    def test_assumption_enforced(self):
        for seed in range(50):
            m = random_model(seed, 3)
            assert m.relevant, f"seed {seed} produced an empty relevant set"
            q = m.base_correct
            for cid in m.relevant:
                assert m.amplification[cid] > 1.0
                assert m.amplification[cid] * q <= 1.0 + 1e-9

    def test_construction_always_valid(self):
        # __post_init__ would raise on any invariant breach
        for seed in range(100):
            random_model(seed, 1 + seed % 6)

    def test_bad_size(self):
        with pytest.raises(QueryError):
            random_model(0, 0)


class TestSweep:
    def test_row_count_and_seeds(self):
        rows = sweep_models(10, base_seed=100, num_concepts=3)
        assert len(rows) == 10
        assert [r.seed for r in rows] == list(range(100, 110))

    def test_sufficiency_never_violated(self):
        rows = sweep_models(300, base_seed=0)
        assert all(r.sufficiency_holds for r in rows)

    def test_satisfied_rows_have_positive_gap(self):
        rows = sweep_models(300, base_seed=7)
        hits = [r for r in rows if r.satisfied]
        assert hits, "expected at least one satisfied model in 300 draws"
        for r in hits:
            assert r.p_gs > r.p_rs

    def test_determinism(self):
        assert sweep_models(20, base_seed=5) == sweep_models(20, base_seed=5)

    def test_csv_format(self):
        rows = sweep_models(3, base_seed=1, num_concepts=2)
        csv = sweep_to_csv(rows)
        lines = csv.splitlines()
        assert lines[0] == SWEEP_CSV_HEADER
        assert len(lines) == 4
        first = lines[1].split(",")
        assert first[0] == "1"
        # repr round-trip: the printed floats parse back to the exact values
        assert float(first[1]) == rows[0].p_rs
        assert float(first[2]) == rows[0].p_gs
        assert first[4] in ("true", "false")
