from fractions import Fraction

import pytest

from pipeclf.errors import LabelError
from pipeclf.hybrid import (
    HybridConfig,
    add_matrices,
    confusion_matrix,
    evaluate_hybrid,
    metrics_from_confusion,
    route,
    sweep_thresholds,
)
from pipeclf.mapper import compile_ensemble
from pipeclf.model_ir import Prediction
from pipeclf.pipeline import GENERIC_12, place_stages
from pipeclf.trainers import TrainParams, train_random_forest

from _synth import blob_dataset


def pred(cls, conf, n=2):
    scores = tuple(Fraction(1 if y == cls else 0) for y in range(n))
    return Prediction(class_id=cls, scores=scores, confidence=Fraction(conf))


class TestRoute:
    def test_zero_threshold_accepts_everything(self):
        cfg = HybridConfig(threshold=Fraction(0))
        assert route(pred(0, "1/2"), cfg).accepted
        assert route(pred(1, 0), cfg).accepted

    def test_threshold_one_forwards_non_certain(self):
        cfg = HybridConfig(threshold=Fraction(1))
        assert not route(pred(0, "99/100"), cfg).accepted
        assert route(pred(0, 1), cfg).accepted

    def test_anomaly_class_always_forwarded(self):
        # switch accepts only class 0 ("normal"); anomaly verdicts go to the backend
        cfg = HybridConfig(threshold=Fraction(1, 2), accept_classes=frozenset({0}))
        assert not route(pred(1, "95/100"), cfg).accepted
        assert route(pred(0, "95/100"), cfg).accepted

    def test_threshold_bounds(self):
        with pytest.raises(LabelError):
            HybridConfig(threshold=Fraction(3, 2))


class TestMetrics:
    def test_confusion_and_scores(self):
        pairs = [(0, 0), (0, 1), (1, 1), (1, 1)]
        cm = confusion_matrix(pairs, 2)
        assert cm == ((1, 1), (0, 2))
        m = metrics_from_confusion(cm)
        assert m.accuracy == Fraction(3, 4)
        assert m.precision[1] == Fraction(2, 3)
        assert m.recall[1] == Fraction(1)
        assert m.f1[1] == Fraction(4, 5)

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            confusion_matrix([(2, 0)], 2)

    def test_matrix_addition(self):
        a = ((1, 0), (0, 1))
        b = ((2, 1), (1, 0))
        assert add_matrices(a, b) == ((3, 1), (1, 1))


def small_and_large(n=800, seed=31):
    data = blob_dataset(n, seed=seed)
    small_model = train_random_forest(
        data, TrainParams(max_depth=2, n_trees=3, rng_seed=7)
    )
    large_model = train_random_forest(
        data, TrainParams(max_depth=6, n_trees=25, rng_seed=11)
    )
    small = place_stages(compile_ensemble(small_model), GENERIC_12)
    return small, large_model, data


class TestEvaluateHybrid:
    def test_theta_zero_equals_switch_only(self):
        small, large, data = small_and_large()
        report = evaluate_hybrid(small, large, data, HybridConfig(Fraction(0)))
        assert report.offload_fraction == 1
        assert report.hybrid == report.switch_only
        assert report.confusion_forwarded == ((0, 0), (0, 0))

    def test_confusion_additivity(self):
        small, large, data = small_and_large()
        report = evaluate_hybrid(small, large, data, HybridConfig(Fraction(7, 10)))
        assert add_matrices(report.confusion_switch, report.confusion_forwarded) == (
            report.confusion_combined
        )
        total = sum(sum(row) for row in report.confusion_combined)
        assert total == len(data.rows)

    def test_forwarded_predictions_are_large_model(self):
        from pipeclf.emulator import runner_for
        from pipeclf.model_ir import evaluate_direct

        small, large, data = small_and_large(n=300)
        cfg = HybridConfig(Fraction(1))
        runner = runner_for(small)
        report = evaluate_hybrid(small, large, data, cfg)
        # recompute by hand
        by_hand = [[0, 0], [0, 0]]
        for values, label in data.rows:
            p = runner.run(values)
            final = p.class_id if p.confidence >= 1 else evaluate_direct(large, values).class_id
            by_hand[label][final] += 1
        assert tuple(tuple(r) for r in by_hand) == report.confusion_combined

    def test_forward_everything_equals_large_model_metrics(self):
        from pipeclf.model_ir import evaluate_direct

        small, large, data = small_and_large(n=300)
        # an empty accept set forwards every input regardless of confidence
        report = evaluate_hybrid(small, large, data, HybridConfig(Fraction(0), frozenset()))
        assert report.offload_fraction == 0
        pairs = [(label, evaluate_direct(large, x).class_id) for x, label in data.rows]
        assert report.confusion_combined == confusion_matrix(pairs, 2)

    def test_offload_monotone_in_threshold(self):
        small, large, data = small_and_large()
        thresholds = [Fraction(0), Fraction(1, 2), Fraction(3, 5), Fraction(7, 10), Fraction(9, 10), Fraction(1)]
        reports, _ = sweep_thresholds(small, large, data, thresholds)
        offloads = [r.offload_fraction for r in reports]
        assert all(a >= b for a, b in zip(offloads, offloads[1:]))

    def test_empty_dataset_rejected(self):
        small, large, data = small_and_large(n=50)
        from pipeclf.trainers import Dataset

        empty = Dataset(rows=(), features=data.features, n_classes=2)
        with pytest.raises(LabelError):
            evaluate_hybrid(small, large, empty, HybridConfig(Fraction(0)))


class TestCalibration:
    def test_pipeline_vs_direct_confidence_log(self):
        from pipeclf.hybrid import confidence_calibration
        from pipeclf.trainers import Dataset

        data = blob_dataset(120, seed=41)
        model = train_random_forest(data, TrainParams(max_depth=2, n_trees=3, rng_seed=7))
        small = place_stages(compile_ensemble(model), GENERIC_12)
        rows = confidence_calibration(small, model, data)
        assert len(rows) == 120
        for row in rows:
            assert row["pipeline_class"] == row["direct_class"]  # bagging is exact
            # quantized confidence sits within half an ulp of the exact vote fraction
            assert abs(row["pipeline_confidence"] - row["direct_confidence"]) <= 2**-17


class TestSweep:
    def test_single_zero_threshold(self):
        small, large, data = small_and_large(n=200)
        reports, curve = sweep_thresholds(small, large, data, [Fraction(0)])
        assert len(reports) == 1
        assert reports[0].offload_fraction == 1
        assert curve[0]["offload"] == 1.0

    def test_duplicate_thresholds_identical_rows(self):
        small, large, data = small_and_large(n=200)
        reports, curve = sweep_thresholds(small, large, data, [Fraction(1, 2), Fraction(1, 2)])
        assert reports[0] == reports[1]
        assert curve[0] == curve[1]

    def test_unsorted_rejected(self):
        small, large, data = small_and_large(n=100)
        with pytest.raises(LabelError):
            sweep_thresholds(small, large, data, [Fraction(1), Fraction(0)])

    def test_curve_columns(self):
        small, large, data = small_and_large(n=200)
        _, curve = sweep_thresholds(small, large, data, [Fraction(0), Fraction(1, 2)])
        assert set(curve[0]) == {
            "theta",
            "offload",
            "error_switch",
            "error_hybrid",
            "error_large_on_forwarded",
        }
