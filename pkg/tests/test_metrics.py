"""Evaluation metrics, the confusion identity, and activation/filter exports."""
import os

import numpy as np
import pytest

from conedrive.data import (classification_arrays, discretize_steering,
                            regression_arrays)
from conedrive.errors import DataError, GraphError
from conedrive.graph import Model
from conedrive.metrics import (ConfusionMatrix, default_activation_layer,
                               eval_classification, eval_regression,
                               export_activations, export_filters, filter_to_pgm,
                               predict_proba)
from conedrive.synth import synth_track_dataset
from conedrive.zoo import make_discrete_model, make_realvalue_model


def rigged_classifier(bias_class=2, input_hw=16):
    """1CL-1FC miniature that always predicts one class."""
    model = Model(make_discrete_model("1CL-1FC", input_hw=input_hw), seed=0)
    head = model.layers["head"]
    head.weight.value = np.zeros_like(head.weight.value)
    head.bias.value = np.zeros_like(head.bias.value)
    head.bias.value[bias_class - 1] = 10.0
    return model


def rigged_regressor(constant=5.0, input_hw=16):
    model = Model(make_realvalue_model("3CL-2FC", input_hw=input_hw), seed=0)
    out = model.layers["out_linear"]
    out.weight.value = np.zeros_like(out.weight.value)
    out.bias.value = np.array([constant], dtype=out.bias.value.dtype)
    return model


def balanced_pairs(per_class=32, size=16, seed=0):
    pairs = synth_track_dataset(2000, image_size=size, seed=seed)
    by_class = {1: [], 2: [], 3: []}
    for p in pairs:
        cls = int(discretize_steering(p.record.steering))
        if len(by_class[cls]) < per_class:
            by_class[cls].append(p)
    picked = by_class[1] + by_class[2] + by_class[3]
    assert len(picked) == 3 * per_class
    return picked


class TestEvalClassification:
    def test_perfect_predictor_has_diagonal_confusion(self):
        model = rigged_classifier()
        pairs = synth_track_dataset(40, image_size=16, seed=1)
        inputs, _ = classification_arrays(pairs)
        # score the model against its own argmax: the metric must see 100%
        targets = model.forward(inputs, mode="eval").argmax(axis=1) + 1
        report = eval_classification(model, inputs, targets, batch_size=8)
        assert report.batch_accuracy == 1.0
        assert report.global_accuracy == 1.0
        off_diag = report.confusion.counts - np.diag(np.diag(report.confusion.counts))
        assert off_diag.sum() == 0

    def test_constant_straight_on_balanced_set(self):
        model = rigged_classifier(bias_class=2)
        pairs = balanced_pairs(per_class=32)
        inputs, targets = classification_arrays(pairs)
        report = eval_classification(model, inputs, targets, batch_size=32)
        assert report.batch_accuracy == pytest.approx(1.0 / 3.0, abs=1e-9)
        assert report.confusion.counts[:, 1].sum() == report.confusion.total

    def test_130_frames_batch_64(self):
        model = rigged_classifier()
        pairs = synth_track_dataset(130, image_size=16, seed=2)
        inputs, targets = classification_arrays(pairs)
        report = eval_classification(model, inputs, targets, batch_size=64)
        assert report.batches == 2
        assert report.frames_evaluated == 128
        assert report.frames_dropped == 2
        assert "frames_dropped: 2" in report.to_text()

    def test_empty_after_batching_rejected(self):
        model = rigged_classifier()
        pairs = synth_track_dataset(10, image_size=16, seed=3)
        inputs, targets = classification_arrays(pairs)
        with pytest.raises(DataError, match="no full batch"):
            eval_classification(model, inputs, targets, batch_size=64)

    def test_wrong_head_rejected(self):
        model = rigged_regressor()
        pairs = synth_track_dataset(10, image_size=16, seed=3)
        inputs, targets = classification_arrays(pairs)
        with pytest.raises(GraphError, match="softmax head"):
            eval_classification(model, inputs, targets, batch_size=2)

    def test_shuffle_invariance_with_full_batches(self):
        model = rigged_classifier()
        pairs = synth_track_dataset(64, image_size=16, seed=4)
        inputs, targets = classification_arrays(pairs)
        base = eval_classification(model, inputs, targets, batch_size=8)
        perm = np.random.default_rng(0).permutation(64)
        shuffled = eval_classification(
            model, {"image": inputs["image"][perm]}, targets[perm], batch_size=8)
        assert base.batch_accuracy == pytest.approx(shuffled.batch_accuracy)
        np.testing.assert_array_equal(base.confusion.counts,
                                      shuffled.confusion.counts)

    def test_predict_proba_rows_sum_to_one(self):
        model = rigged_classifier()
        pairs = synth_track_dataset(10, image_size=16, seed=5)
        inputs, _ = classification_arrays(pairs)
        proba = predict_proba(model, inputs)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)


class TestConfusionIdentity:
    @pytest.mark.parametrize("seed", range(10))
    def test_trace_over_sum_equals_mean_batch_accuracy(self, seed):
        rng = np.random.default_rng(seed)
        batches, bs = rng.integers(1, 8), int(rng.integers(1, 9)) * 8
        confusion = ConfusionMatrix()
        accs = []
        for _ in range(batches):
            true = rng.integers(1, 4, bs)
            pred = rng.integers(1, 4, bs)
            confusion.add(true, pred)
            accs.append(float(np.mean(true == pred)))
        assert confusion.accuracy == pytest.approx(float(np.mean(accs)), rel=1e-12)

    def test_total_equals_evaluated_frames(self):
        confusion = ConfusionMatrix()
        confusion.add(np.array([1, 2, 3]), np.array([1, 1, 3]))
        assert confusion.total == 3


class TestEvalRegression:
    def test_exact_predictor_scores_zero(self):
        model = rigged_regressor(constant=5.0)
        pairs = synth_track_dataset(16, image_size=16, seed=6)
        inputs, _ = regression_arrays(pairs)
        targets = np.full((16, 1), 5.0, dtype=np.float32)
        report = eval_regression(model, inputs, targets, batch_size=8)
        assert report.mean_l1 == pytest.approx(0.0, abs=1e-5)

    def test_one_degree_offset_scores_one(self):
        model = rigged_regressor(constant=5.0)
        pairs = synth_track_dataset(16, image_size=16, seed=6)
        inputs, _ = regression_arrays(pairs)
        targets = np.full((16, 1), 4.0, dtype=np.float32)
        report = eval_regression(model, inputs, targets, batch_size=8)
        assert report.mean_l1 == pytest.approx(1.0, abs=1e-5)

    def test_wrong_head_rejected(self):
        model = rigged_classifier()
        pairs = synth_track_dataset(10, image_size=16, seed=6)
        inputs, targets = regression_arrays(pairs)
        with pytest.raises(GraphError, match="clamped head"):
            eval_regression(model, inputs, targets, batch_size=2)

    def test_degenerate_lattice_agreement(self):
        # when predictions and targets both live on {-90, 0, +90}, binning
        # both recovers agreement exactly from the per-frame L1 distances
        rng = np.random.default_rng(7)
        lattice = np.array([-90.0, 0.0, 90.0])
        pred = lattice[rng.integers(0, 3, 50)]
        target = lattice[rng.integers(0, 3, 50)]
        agree_bins = np.mean(
            [discretize_steering(p) == discretize_steering(t)
             for p, t in zip(pred, target)])
        per_frame_l1 = np.abs(pred - target)
        assert agree_bins == pytest.approx(np.mean(per_frame_l1 == 0.0))


class TestExports:
    def test_two_batches_of_64_give_128_rows(self, tmp_path):
        model = Model(make_discrete_model("2CL-2FC", input_hw=16), seed=0)
        pairs = synth_track_dataset(130, image_size=16, seed=8)
        inputs, targets = classification_arrays(pairs)
        path = tmp_path / "acts.tsv"
        rows = export_activations(model, inputs, targets, path, batch_size=64)
        assert rows == 128
        lines = path.read_text().splitlines()
        assert len(lines) == 2 + 128

    def test_header_records_layer_and_width(self, tmp_path):
        model = Model(make_discrete_model("2CL-2FC", input_hw=16), seed=0)
        assert default_activation_layer(model) == "fc1_relu"
        pairs = synth_track_dataset(16, image_size=16, seed=8)
        inputs, targets = classification_arrays(pairs)
        path = tmp_path / "acts.tsv"
        export_activations(model, inputs, targets, path, batch_size=8)
        assert path.read_text().splitlines()[0] == "# layer=fc1_relu width=100"

    def test_rerun_identical_bytes(self, tmp_path):
        model = Model(make_discrete_model("1CL-2FC", input_hw=16), seed=0)
        pairs = synth_track_dataset(16, image_size=16, seed=9)
        inputs, targets = classification_arrays(pairs)
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        export_activations(model, inputs, targets, a, batch_size=8)
        export_activations(model, inputs, targets, b, batch_size=8)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_layer_lists_available(self, tmp_path):
        model = Model(make_discrete_model("1CL-2FC", input_hw=16), seed=0)
        pairs = synth_track_dataset(16, image_size=16, seed=9)
        inputs, targets = classification_arrays(pairs)
        with pytest.raises(GraphError, match="conv1"):
            export_activations(model, inputs, targets, tmp_path / "x.tsv",
                               layer="nope")

    def test_filter_slice_count_for_3cl(self, tmp_path):
        model = Model(make_discrete_model("3CL-2FC", input_hw=32), seed=0)
        paths = export_filters(model, tmp_path / "filters")
        conv3 = [p for p in paths if os.path.basename(p).startswith("conv3")]
        assert len(conv3) == 32 * 16
        assert len(paths) == 8 * 3 + 16 * 8 + 32 * 16

    def test_identity_like_filter_has_single_peak(self):
        f = np.zeros((3, 3))
        f[1, 1] = 1.0
        img = filter_to_pgm(f)
        assert img[1, 1] == 255
        assert (img == 255).sum() == 1

    def test_constant_filter_maps_to_mid_gray(self):
        np.testing.assert_array_equal(filter_to_pgm(np.full((5, 5), 0.3)), 128)
