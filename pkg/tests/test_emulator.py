from fractions import Fraction

import pytest

from pipeclf.emulator import (
    check_equivalence,
    run_batch,
    run_vector,
    runner_for,
)
from pipeclf.errors import DomainTooLarge, FeatureError, ProgramError
from pipeclf.mapper import QuantConfig, compile_ensemble, compile_kmeans, compile_tree
from pipeclf.model_ir import KMeansModel, evaluate_direct
from pipeclf.pipeline import GENERIC_12, place_stages, range_table_to_exact
from pipeclf.program import (
    ActionField,
    CodeLookup,
    Entry,
    KeyField,
    TableDef,
    make_program,
)
from pipeclf.rng import SplitMix64

from _synth import random_bagging, single_leaf_tree, specs, stump


def staged(program, profile=GENERIC_12):
    return place_stages(program, profile)


class TestRunVector:
    def test_compiled_stump(self):
        features = specs(4)
        model = stump(features, 0, 5, left_cls=0, right_cls=1)
        s = staged(compile_tree(model))
        assert run_vector(s, (3,)).class_id == 0
        assert run_vector(s, (6,)).class_id == 1

    def test_tie_goes_to_lowest_class(self):
        rng = SplitMix64(2)
        features = specs(3)
        # two trees voting for different classes on every input: always a tie
        t0 = single_leaf_tree(features, 1, n_classes=3)
        t1 = single_leaf_tree(features, 2, n_classes=3)
        from pipeclf.model_ir import EnsembleModel

        model = EnsembleModel(features=features, n_classes=3, trees=(t0, t1), mode="bagging")
        s = staged(compile_ensemble(model))
        pred = run_vector(s, (4,))
        assert pred.scores == (0, 1, 1)
        assert pred.class_id == 1  # lowest tied class

    def test_single_leaf_default_everywhere(self):
        s = staged(compile_tree(single_leaf_tree(specs(3, 3), cls=1)))
        for x0 in range(8):
            for x1 in range(8):
                assert run_vector(s, (x0, x1)).class_id == 1

    def test_width_validation(self):
        s = staged(compile_tree(stump(specs(4), 0, 5, 0, 1)))
        with pytest.raises(FeatureError):
            run_vector(s, (16,))
        with pytest.raises(FeatureError):
            run_vector(s, (1, 2))

    def test_bagging_confidence_is_quantized_vote_fraction(self):
        rng = SplitMix64(12)
        model = random_bagging(specs(3, 3), 2, n_trees=3, depth=3, rng=rng)
        s = staged(compile_ensemble(model))
        pred = run_vector(s, (0, 0))
        votes = max(pred.scores)
        expected = Fraction(round(Fraction(votes, 3) * (1 << 16)), 1 << 16)
        assert pred.confidence == expected


class TestRunBatch:
    def test_empty(self):
        s = staged(compile_tree(stump(specs(4), 0, 5, 0, 1)))
        assert run_batch(s, []) == []

    def test_identical_inputs_identical_predictions(self):
        s = staged(compile_tree(stump(specs(4), 0, 5, 0, 1)))
        preds = run_batch(s, [(3,)] * 5)
        assert all(p == preds[0] for p in preds)

    def test_matches_run_vector(self):
        rng = SplitMix64(8)
        model = random_bagging(specs(4, 4), 2, n_trees=5, depth=4, rng=rng)
        s = staged(compile_ensemble(model))
        xs = [(rng.next_below(16), rng.next_below(16)) for _ in range(50)]
        assert run_batch(s, xs) == [run_vector(s, x) for x in xs]

    def test_error_carries_input_index(self):
        s = staged(compile_tree(stump(specs(4), 0, 5, 0, 1)))
        with pytest.raises(FeatureError, match="input 1"):
            run_batch(s, [(1,), (99,)])

    def test_large_random_batch_matches_oracle(self):
        rng = SplitMix64(77)
        model = random_bagging(specs(4, 4, 4), 3, n_trees=6, depth=5, rng=rng)
        s = staged(compile_ensemble(model))
        xs = [tuple(rng.next_below(16) for _ in range(3)) for _ in range(10_000)]
        preds = run_batch(s, xs)
        for x, p in zip(xs, preds):
            assert p.class_id == evaluate_direct(model, x).class_id


class TestCheckEquivalence:
    def test_negative_control_detects_wrong_model(self):
        features = specs(4)
        right = stump(features, 0, 5, 0, 1)
        wrong = stump(features, 0, 9, 0, 1)
        report = check_equivalence(wrong, staged(compile_tree(right)))
        assert report.mismatch_count > 0
        assert report.mismatches  # inputs recorded

    def test_exhaustive_guard(self):
        features = specs(13, 13)  # 2^26 inputs
        model = KMeansModel(
            features=features,
            n_classes=2,
            centers=((Fraction(0), Fraction(0)), (Fraction(1), Fraction(1))),
        )
        s = staged(compile_kmeans(model, "per_class", QuantConfig(bins=4, action_width=60)))
        with pytest.raises(DomainTooLarge):
            check_equivalence(model, s, mode="exhaustive")

    def test_sample_mode_deterministic(self):
        rng = SplitMix64(3)
        model = random_bagging(specs(5, 5), 2, n_trees=3, depth=4, rng=rng)
        s = staged(compile_ensemble(model))
        r1 = check_equivalence(model, s, mode="sample", n=500, seed=9)
        r2 = check_equivalence(model, s, mode="sample", n=500, seed=9)
        assert r1 == r2
        assert r1.inputs_tested == 500
        assert r1.mismatch_count == 0

    def test_feature_spec_mismatch(self):
        model = stump(specs(4), 0, 5, 0, 1)
        other = stump(specs(5), 0, 5, 0, 1)
        with pytest.raises(FeatureError):
            check_equivalence(other, staged(compile_tree(model)))


def hand_program(tables, meta, features=None, combine=None):
    return make_program(
        feature_specs=features or specs(4),
        tables=tables,
        metadata_fields=meta,
        combine=combine or CodeLookup(class_field="class", n_classes=2),
        score_scale=1,
        frac_bits=16,
    )


class TestLoadTimeValidation:
    def test_read_of_unwritten_field_rejected(self):
        t = TableDef(
            name="t0",
            role="classification",
            match_kind="exact",
            key_fields=(KeyField("ghost", 4, "meta:ghost"),),
            action_fields=(ActionField("class", 1),),
            entries=(),
            default_action=(0,),
        )
        program = hand_program((t,), (ActionField("class", 1),))
        with pytest.raises(ProgramError):
            place_stages(program, GENERIC_12)

    def test_double_writer_rejected(self):
        mk = lambda name: TableDef(
            name=name,
            role="feature",
            match_kind="range",
            key_fields=(KeyField("f0", 4, "feature:f0"),),
            action_fields=(ActionField("code", 2),),
            entries=(Entry(key=((0, 15),), action=(0,)),),
            default_action=(0,),
        )
        classify = TableDef(
            name="classify",
            role="classification",
            match_kind="ternary",
            key_fields=(KeyField("code", 2, "meta:code"),),
            action_fields=(ActionField("class", 1),),
            entries=(),
            default_action=(0,),
        )
        program = hand_program(
            (mk("a"), mk("b"), classify),
            (ActionField("code", 2), ActionField("class", 1)),
        )
        with pytest.raises(ProgramError):
            place_stages(program, GENERIC_12)

    def test_overlapping_ternary_patterns_rejected(self):
        feat = TableDef(
            name="feat_f0",
            role="feature",
            match_kind="range",
            key_fields=(KeyField("f0", 4, "feature:f0"),),
            action_fields=(ActionField("code", 2),),
            entries=(
                Entry(key=((0, 7),), action=(0,)),
                Entry(key=((8, 15),), action=(1,)),
            ),
            default_action=(0,),
        )
        classify = TableDef(
            name="classify",
            role="classification",
            match_kind="ternary",
            key_fields=(KeyField("code", 2, "meta:code"),),
            action_fields=(ActionField("class", 1),),
            entries=(
                Entry(key=((0, 0),), action=(0,)),  # don't-care: overlaps everything
                Entry(key=((1, 3),), action=(1,)),
            ),
            default_action=(0,),
        )
        program = hand_program(
            (feat, classify), (ActionField("code", 2), ActionField("class", 1))
        )
        s = place_stages(program, GENERIC_12)
        with pytest.raises(ProgramError):
            runner_for(s)

    def test_malformed_range_partition_rejected(self):
        feat = TableDef(
            name="feat_f0",
            role="feature",
            match_kind="range",
            key_fields=(KeyField("f0", 4, "feature:f0"),),
            action_fields=(ActionField("class", 1),),
            entries=(
                Entry(key=((0, 7),), action=(0,)),
                Entry(key=((9, 15),), action=(1,)),  # gap at 8
            ),
            default_action=(0,),
        )
        program = hand_program((feat,), (ActionField("class", 1),))
        s = place_stages(program, GENERIC_12)
        with pytest.raises(ProgramError):
            runner_for(s)


class TestExactExpansionEquivalence:
    def test_range_and_exact_agree_everywhere(self):
        features = specs(4)
        model = stump(features, 0, 5, 0, 1)
        program = compile_tree(model)
        exact_tables = tuple(
            range_table_to_exact(t) if t.match_kind == "range" else t for t in program.tables
        )
        exact_program = make_program(
            feature_specs=program.feature_specs,
            tables=exact_tables,
            metadata_fields=program.metadata_fields,
            combine=program.combine,
            score_scale=program.score_scale,
            frac_bits=program.frac_bits,
        )
        s1 = staged(program)
        s2 = staged(exact_program)
        for v in range(16):
            assert run_vector(s1, (v,)) == run_vector(s2, (v,))
