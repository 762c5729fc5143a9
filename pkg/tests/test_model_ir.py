import json
import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pipeclf.errors import DomainError, FeatureError, SchemaError
from pipeclf.model_ir import (
    EnsembleModel,
    FeatureSpec,
    Hyperplane,
    KMeansModel,
    LeafNode,
    NBModel,
    Prediction,
    SplitNode,
    SVMModel,
    TreeModel,
    emit_model_file,
    evaluate_direct,
    nb_likelihood_product,
    nb_log_score,
    parse_model_file,
    validate_model,
)
from pipeclf.rng import SplitMix64

from _synth import figure_like_tree, leaf, random_bagging, single_leaf_tree, specs, stump


def doc(model_type, features, n_classes, params):
    return json.dumps(
        {
            "schema": 1,
            "model_type": model_type,
            "features": features,
            "n_classes": n_classes,
            "params": params,
        }
    )


FEATURES_2X4 = [
    {"name": "f0", "index": 0, "width_bits": 4},
    {"name": "f1", "index": 1, "width_bits": 4},
]


class TestParse:
    def test_minimal_single_leaf_tree(self):
        model = parse_model_file(
            doc("tree", FEATURES_2X4, 2, {"nodes": [{"kind": "leaf", "class_id": 0}]})
        )
        assert isinstance(model, TreeModel)
        assert model.n_branches() == 0

    def test_svm_three_classes_three_hyperplanes(self):
        hp = lambda a, b: {"coefficients": ["1", "-1/2"], "intercept": "0.25", "class_pair": [a, b]}
        model = parse_model_file(
            doc("svm", FEATURES_2X4, 3, {"hyperplanes": [hp(0, 1), hp(0, 2), hp(1, 2)]})
        )
        assert isinstance(model, SVMModel)
        assert len(model.hyperplanes) == 3  # m = k(k-1)/2
        assert model.hyperplanes[0].intercept == Fraction(1, 4)

    def test_nb_zero_variance_rejected(self):
        params = {
            "priors": ["1/2", "1/2"],
            "means": [["1", "1"], ["2", "2"]],
            "variances": [["0", "1"], ["1", "1"]],
        }
        with pytest.raises(DomainError):
            parse_model_file(doc("nb", FEATURES_2X4, 2, params))

    def test_missing_field_is_schema_error(self):
        with pytest.raises(SchemaError):
            parse_model_file(doc("tree", FEATURES_2X4, 2, {"nodes": [{"kind": "leaf"}]}))
        with pytest.raises(SchemaError):
            parse_model_file(json.dumps({"schema": 1, "model_type": "tree"}))

    def test_fixed_point_feature_kind_round_trips(self):
        features = [
            {"name": "rate", "index": 0, "width_bits": 8, "kind": {"fixed_point": "1/10"}},
        ]
        model = parse_model_file(
            doc("tree", features, 2, {"nodes": [{"kind": "leaf", "class_id": 0}]})
        )
        assert model.features[0].kind == "fixed_point"
        assert model.features[0].scale == Fraction(1, 10)
        assert parse_model_file(emit_model_file(model)) == model

    def test_feature_index_gap_is_feature_error(self):
        bad = [
            {"name": "f0", "index": 0, "width_bits": 4},
            {"name": "f1", "index": 2, "width_bits": 4},
        ]
        with pytest.raises(FeatureError):
            parse_model_file(doc("tree", bad, 2, {"nodes": [{"kind": "leaf", "class_id": 0}]}))

    @pytest.mark.parametrize("builder", ["tree", "forest", "xgboost", "isolation", "svm", "nb", "kmeans"])
    def test_round_trip_identity(self, builder):
        features = specs(4, 3)
        rng = SplitMix64(17)
        if builder == "tree":
            model = figure_like_tree(specs(4, 4))
        elif builder == "forest":
            model = random_bagging(features, 3, 4, 3, rng)
        elif builder == "xgboost":
            trees = random_bagging(features, 2, 3, 3, rng).trees
            model = EnsembleModel(
                features=features, n_classes=2, trees=trees, mode="boosting",
                bias=(Fraction(0), Fraction(-3, 7)), weight_scale=Fraction(1, 2),
            )
        elif builder == "isolation":
            trees = random_bagging(features, 2, 3, 4, rng).trees
            model = EnsembleModel(
                features=features, n_classes=2, trees=trees, mode="isolation",
                depth_threshold=6, expected_path_norm=Fraction(11, 4),
            )
        elif builder == "svm":
            model = SVMModel(
                features=features, n_classes=2,
                hyperplanes=(Hyperplane((Fraction(1, 3), Fraction(-2)), Fraction(5, 8), (0, 1)),),
            )
        elif builder == "nb":
            model = NBModel(
                features=features, n_classes=2,
                priors=(Fraction(1, 4), Fraction(3, 4)),
                means=((Fraction(1), Fraction(2)), (Fraction(5, 2), Fraction(3))),
                variances=((Fraction(1), Fraction(2)), (Fraction(1, 2), Fraction(3))),
            )
        else:
            model = KMeansModel(
                features=features, n_classes=2,
                centers=((Fraction(1), Fraction(2)), (Fraction(10), Fraction(5, 2))),
            )
        assert parse_model_file(emit_model_file(model)) == model


class TestValidate:
    def test_valid_forest_empty_report(self):
        model = random_bagging(specs(3, 3), 2, 3, 3, SplitMix64(5))
        assert validate_model(model).ok

    def test_tree_cycle_detected(self):
        features = specs(4)
        cyclic = TreeModel(
            features=features,
            n_classes=2,
            nodes=(
                SplitNode(feature=0, threshold=3, left=1, right=0),  # right edge loops to root
                LeafNode(class_id=0),
            ),
        )
        assert "TREE_NOT_ACYCLIC" in validate_model(cyclic).codes()

    def test_svm_pair_count(self):
        # k=3 needs k(k-1)/2 = 3 hyperplanes, not 2
        model = SVMModel(
            features=specs(4),
            n_classes=3,
            hyperplanes=(
                Hyperplane((Fraction(1),), Fraction(0), (0, 1)),
                Hyperplane((Fraction(1),), Fraction(0), (0, 2)),
            ),
        )
        assert "SVM_PAIR_COUNT" in validate_model(model).codes()


class TestEvaluateDirect:
    def test_kmeans_point_at_centroid(self):
        features = specs(4, 4)
        model = KMeansModel(
            features=features,
            n_classes=3,
            centers=((Fraction(0), Fraction(0)), (Fraction(5), Fraction(5)), (Fraction(9), Fraction(2))),
        )
        pred = evaluate_direct(model, (9, 2))
        assert pred.class_id == 2
        assert pred.scores[2] == 0  # negated squared distance
        assert pred.confidence == 1

    def test_nb_symmetric_tie_breaks_low(self):
        features = specs(3)
        model = NBModel(
            features=features,
            n_classes=2,
            priors=(Fraction(1, 2), Fraction(1, 2)),
            means=((Fraction(3),), (Fraction(3),)),
            variances=((Fraction(2),), (Fraction(2),)),
        )
        for v in range(8):
            assert evaluate_direct(model, (v,)).class_id == 0

    def test_forest_vote_fraction(self):
        # three single-leaf trees voting {0, 0, 1}: class 0, confidence 2/3
        features = specs(4)
        trees = tuple(single_leaf_tree(features, cls) for cls in (0, 0, 1))
        model = EnsembleModel(features=features, n_classes=2, trees=trees, mode="bagging")
        pred = evaluate_direct(model, (7,))
        assert pred.class_id == 0
        assert pred.confidence == Fraction(2, 3)
        assert pred.scores == (2, 1)

    def test_tree_reaches_exactly_one_leaf(self):
        model = figure_like_tree()
        for x0 in range(16):
            for x1 in range(16):
                pred = evaluate_direct(model, (x0, x1))
                assert pred.class_id == model.leaf_for((x0, x1)).class_id
                assert sum(pred.scores) == 1

    def test_bagging_votes_sum_to_tree_count(self):
        rng = SplitMix64(23)
        model = random_bagging(specs(3, 3), 3, 7, 4, rng)
        for _ in range(50):
            x = (rng.next_below(8), rng.next_below(8))
            pred = evaluate_direct(model, x)
            assert sum(pred.scores) == 7
            assert pred.confidence == max(pred.scores) / Fraction(7)

    def test_svm_votes_total_m(self):
        rng = SplitMix64(40)
        features = specs(4, 4)
        k = 4
        pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
        hps = tuple(
            Hyperplane(
                coefficients=(Fraction(rng.next_below(9) - 4), Fraction(rng.next_below(9) - 4)),
                intercept=Fraction(rng.next_below(17) - 8),
                class_pair=pair,
            )
            for pair in pairs
        )
        model = SVMModel(features=features, n_classes=k, hyperplanes=hps)
        for _ in range(100):
            x = (rng.next_below(16), rng.next_below(16))
            pred = evaluate_direct(model, x)
            assert sum(pred.scores) == len(pairs)

    def test_svm_zero_hyperplane_votes_lower_class(self):
        features = specs(4)
        model = SVMModel(
            features=features,
            n_classes=2,
            hyperplanes=(Hyperplane((Fraction(0),), Fraction(0), (0, 1)),),
        )
        for v in range(16):
            assert evaluate_direct(model, (v,)).class_id == 0

    def test_boosting_margin_and_logistic_confidence(self):
        features = specs(4)
        # stumps contributing weight to class 1; margin = sum + bias
        t1 = TreeModel(
            features=features, n_classes=2,
            nodes=(
                SplitNode(0, 7, 1, 2),
                LeafNode(class_id=1, weight=Fraction(-3, 2)),
                LeafNode(class_id=1, weight=Fraction(2)),
            ),
        )
        t2 = TreeModel(
            features=features, n_classes=2,
            nodes=(
                SplitNode(0, 3, 1, 2),
                LeafNode(class_id=1, weight=Fraction(1, 2)),
                LeafNode(class_id=1, weight=Fraction(1)),
            ),
        )
        model = EnsembleModel(
            features=features, n_classes=2, trees=(t1, t2), mode="boosting",
            bias=(Fraction(0), Fraction(-1, 4)),
        )
        pred = evaluate_direct(model, (0,))  # margins: (0, -3/2 + 1/2 - 1/4) = (0, -5/4)
        assert pred.class_id == 0
        assert pred.scores == (Fraction(0), Fraction(-5, 4))
        expected = 1.0 / (1.0 + math.exp(-5 / 4))
        assert abs(float(pred.confidence) - expected) < 1e-12
        pred = evaluate_direct(model, (12,))  # margins: (0, 2 + 1 - 1/4)
        assert pred.class_id == 1
        assert pred.scores[1] == Fraction(11, 4)

    def test_isolation_depth_thresholding(self):
        features = specs(4)
        shallow = TreeModel(
            features=features, n_classes=2,
            nodes=(
                SplitNode(0, 7, 1, 2),
                LeafNode(class_id=0, depth=1),
                LeafNode(class_id=0, depth=3),
            ),
        )
        model = EnsembleModel(
            features=features, n_classes=2, trees=(shallow, shallow), mode="isolation",
            depth_threshold=4, expected_path_norm=Fraction(2),
        )
        assert evaluate_direct(model, (0,)).class_id == 1  # depth 2 < 4: anomaly
        assert evaluate_direct(model, (15,)).class_id == 0  # depth 6 > 4: normal

    def test_isolation_tie_is_normal(self):
        features = specs(4)
        t = TreeModel(
            features=features, n_classes=2,
            nodes=(LeafNode(class_id=0, depth=4),),
        )
        model = EnsembleModel(
            features=features, n_classes=2, trees=(t,), mode="isolation", depth_threshold=4,
        )
        assert evaluate_direct(model, (3,)).class_id == 0

    def test_shape_mismatch_raises_feature_error(self):
        model = figure_like_tree()
        with pytest.raises(FeatureError):
            evaluate_direct(model, (1, 2, 3))
        with pytest.raises(FeatureError):
            evaluate_direct(model, (1, 99))

    def test_nb_log_matches_product_argmax(self):
        # argmax in log space == argmax of the direct product when nothing underflows
        features = specs(3, 3)
        model = NBModel(
            features=features,
            n_classes=3,
            priors=(Fraction(1, 2), Fraction(1, 4), Fraction(1, 4)),
            means=(
                (Fraction(1), Fraction(2)),
                (Fraction(4), Fraction(5)),
                (Fraction(6), Fraction(1)),
            ),
            variances=(
                (Fraction(2), Fraction(1)),
                (Fraction(1), Fraction(3)),
                (Fraction(2), Fraction(2)),
            ),
        )
        for x0 in range(8):
            for x1 in range(8):
                logs = [nb_log_score(model, y, (x0, x1)) for y in range(3)]
                prods = [nb_likelihood_product(model, y, (x0, x1)) for y in range(3)]
                assert max(range(3), key=lambda y: (logs[y], -y)) == max(
                    range(3), key=lambda y: (prods[y], -y)
                )
                assert evaluate_direct(model, (x0, x1)).class_id == max(
                    range(3), key=lambda y: (logs[y], -y)
                )


class TestPrediction:
    def test_argmax_invariant_enforced(self):
        with pytest.raises(DomainError):
            Prediction(class_id=1, scores=(Fraction(2), Fraction(1)), confidence=Fraction(1))

    def test_tie_break_must_pick_lowest(self):
        with pytest.raises(DomainError):
            Prediction(class_id=1, scores=(Fraction(1), Fraction(1)), confidence=Fraction(1))
        Prediction(class_id=0, scores=(Fraction(1), Fraction(1)), confidence=Fraction(1))

    @given(st.lists(st.fractions(), min_size=1, max_size=6))
    def test_confidence_bounds(self, scores):
        from pipeclf.model_ir import argmax_tiebreak

        best = argmax_tiebreak(scores)
        assert all(scores[best] >= s for s in scores)
        assert all(scores[i] < scores[best] for i in range(best))
