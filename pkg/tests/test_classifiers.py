import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarseg.classifiers import (
    DecisionTree,
    LinearSvmModel,
    MlpModel,
    Prediction,
    TrainingSet,
    apply_confidence_threshold,
    deserialize_model,
    predict,
    predict_batch,
    serialize_model,
    train_mlp,
    train_svm,
    train_tree,
    undersample,
)
from lidarseg.classifiers.mlp import binary_targets
from lidarseg.errors import ArityError, EmptyDataError, ImbalanceError, ModelFormatError
from lidarseg.features import FeatureVector
from lidarseg.kitti_io import PointClass
from lidarseg.synthetic import cluster_feature_set, separable_feature_set

CAR, PED, CYC, IGN = (PointClass.CAR, PointClass.PEDESTRIAN, PointClass.CYCLIST,
                      PointClass.IGNORED)


def make_set(rng, counts: dict) -> TrainingSet:
    X = np.vstack([rng.normal(int(c) * 3, 1, (n, 5)) for c, n in counts.items()])
    y = np.concatenate([np.full(n, int(c)) for c, n in counts.items()])
    return TrainingSet(X, y)


def accuracy(model, data):
    cls, _ = predict_batch(model, data.X)
    return float(np.mean(cls == data.y))


def binary_set(rng, n_per_class=200):
    X, y = cluster_feature_set(rng, n_per_class)
    return TrainingSet(X, y)


# --------------------------------------------------------------------------
# TrainingSet and undersample


def test_training_set_rejects_ignored():
    with pytest.raises(ValueError):
        TrainingSet(np.zeros((1, 5)), [int(IGN)])
    data = TrainingSet.from_rows(np.zeros((3, 5)), [0, 3, 1])
    assert data.y.tolist() == [0, 1]


def test_undersample_counts(rng):
    out = undersample(make_set(rng, {CAR: 100, PED: 10}), seed=1)
    assert out.class_counts == {CAR: 10, PED: 10}


def test_undersample_minority_1016(rng):
    out = undersample(make_set(rng, {CAR: 16314, CYC: 1016}), seed=0)
    assert len(out) == 2032


def test_undersample_determinism(rng):
    data = make_set(rng, {CAR: 300, PED: 40, CYC: 70})
    a, b = undersample(data, 5), undersample(data, 5)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    c = undersample(data, 6)
    assert c.class_counts == a.class_counts
    assert not np.array_equal(a.X, c.X)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=2, max_size=3), st.integers(0, 2**63))
def test_undersample_balances(counts, seed):
    r = np.random.default_rng(0)
    data = make_set(r, {PointClass(k): n for k, n in enumerate(counts)})
    out = undersample(data, seed)
    assert set(out.class_counts.values()) == {min(counts)}


def test_undersample_single_class(rng):
    with pytest.raises(ImbalanceError):
        undersample(make_set(rng, {CAR: 5}), 0)


# --------------------------------------------------------------------------
# decision tree


def test_tree_separable_on_feature_zero(rng):
    X = rng.uniform(0, 1, (60, 5))
    X[:30, 0] = rng.uniform(0, 4.5, 30)
    X[30:, 0] = rng.uniform(5.5, 9, 30)
    y = np.repeat([int(CAR), int(PED)], 30)
    tree = train_tree(TrainingSet(X, y))
    assert tree.depth == 1
    assert tree.feature[0] == 0
    assert X[:30, 0].max() < tree.threshold[0] <= X[30:, 0].min()
    assert accuracy(tree, TrainingSet(X, y)) == 1.0


def test_tree_single_class_is_leaf(rng):
    tree = train_tree(make_set(rng, {PED: 20}))
    assert tree.n_nodes == 1 and tree.depth == 0
    pred = predict(tree, np.zeros(5))
    assert pred == Prediction(PED, 1.0)


def test_tree_accuracy_non_decreasing_in_depth(rng):
    data = make_set(rng, {CAR: 80, PED: 80, CYC: 80})
    data = TrainingSet(data.X + rng.normal(0, 2, data.X.shape), data.y)
    accs = [accuracy(train_tree(data, max_depth=d), data) for d in range(0, 9)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))


def test_tree_min_leaf(rng):
    data = make_set(rng, {CAR: 50, PED: 50})
    noisy = TrainingSet(data.X + rng.normal(0, 3, data.X.shape), data.y)
    tree = train_tree(noisy, min_leaf=7)
    assert tree.n_nodes > 1
    leaves = tree.leaf_index(noisy.X)
    sizes = np.bincount(leaves)
    assert sizes[sizes > 0].min() >= 7


def test_tree_split_tie_goes_to_lowest_feature():
    X = np.zeros((4, 5))
    X[:, 1] = X[:, 3] = [0, 0, 1, 1]
    tree = train_tree(TrainingSet(X, [0, 0, 1, 1]))
    assert tree.feature[0] == 1


def test_tree_leaf_probabilities(rng):
    data = make_set(rng, {CAR: 40, PED: 30, CYC: 30})
    tree = train_tree(data, max_depth=1)
    leaves = tree.feature == -1
    assert np.allclose(tree.proba[leaves].sum(axis=1), 1.0)


def test_tree_rejects_empty():
    with pytest.raises(EmptyDataError):
        train_tree(TrainingSet(np.zeros((0, 5)), []))


# --------------------------------------------------------------------------
# SVM


def test_svm_separable_blobs(rng):
    X = rng.uniform(-0.3, 0.3, (200, 5))
    X[:100, :2] += [-3, 2]
    X[100:, :2] += [3, -2]
    data = TrainingSet(X, np.repeat([int(CAR), int(PED)], 100))
    model = train_svm(data, epochs=100)
    assert accuracy(model, data) == 1.0


def test_svm_three_classes(rng):
    X, y = separable_feature_set(rng, 100)
    data = TrainingSet(X, y)
    assert accuracy(train_svm(data), data) >= 0.95


def test_svm_zero_epochs_gives_uniform_confidence(rng):
    data = make_set(rng, {CAR: 20, PED: 20})
    model = train_svm(data, epochs=0)
    assert not model.weights.any()
    _, conf = predict_batch(model, rng.normal(0, 5, (10, 5)))
    assert np.all(conf == 0.5)
    three = train_svm(make_set(rng, {CAR: 5, PED: 5, CYC: 5}), epochs=0)
    assert predict(three, np.ones(5)).confidence == pytest.approx(1 / 3)


def test_svm_standardization_invariance(rng):
    data = make_set(rng, {CAR: 50, PED: 50, CYC: 50})
    model = train_svm(data, epochs=20)
    Xq = rng.normal(3, 4, (100, 5))
    raw = np.argmax(model.scores(Xq), axis=1)
    pre = np.argmax(((Xq - model.mean) / model.std) @ model.weights.T + model.bias, axis=1)
    assert np.array_equal(raw, pre)


def test_svm_seed_determinism(rng):
    data = make_set(rng, {CAR: 30, PED: 30})
    a, b = train_svm(data, seed=4), train_svm(data, seed=4)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_svm_single_class(rng):
    with pytest.raises(ImbalanceError):
        train_svm(make_set(rng, {CYC: 10}))


# --------------------------------------------------------------------------
# MLP


@pytest.mark.parametrize("layers,counts", [(1, [1200, 201]), (2, [1200, 40200, 201]),
                                           (3, [1200, 40200, 40200, 201])])
def test_mlp_parameter_counts(layers, counts, rng):
    model = MlpModel.initialize(rng, hidden_layers=layers)
    assert model.param_counts() == counts


def numeric_gradient_check(model, Xs, y, picks, eps=1e-4):
    _, gw, gb = model.loss_and_grads(Xs, y)
    errors = []
    for layer, is_bias, idx in picks:
        arr = (model.biases if is_bias else model.weights)[layer]
        analytic = (gb if is_bias else gw)[layer][idx]
        old = arr[idx]
        arr[idx] = old + eps
        up, _, _ = model.loss_and_grads(Xs, y)
        arr[idx] = old - eps
        down, _, _ = model.loss_and_grads(Xs, y)
        arr[idx] = old
        numeric = (up - down) / (2 * eps)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-10))
    return errors


def pick_parameters(model, rng, n=20):
    picks = []
    for k in range(n):
        layer = k % len(model.weights)
        is_bias = k % 5 == 4
        shape = (model.biases if is_bias else model.weights)[layer].shape
        picks.append((layer, is_bias, tuple(int(rng.integers(0, s)) for s in shape)))
    return picks


def test_mlp_gradient_check(rng):
    data = binary_set(rng, 20)
    model = MlpModel.initialize(rng)
    model.biases = [rng.normal(0, 0.1, b.shape) for b in model.biases]
    Xs = (data.X - data.X.mean(0)) / data.X.std(0)
    y = binary_targets(data)
    assert max(numeric_gradient_check(model, Xs, y, pick_parameters(model, rng))) <= 1e-4


def test_mlp_loss_drops_over_first_epoch(rng):
    data = binary_set(rng, 150)
    y = binary_targets(data)
    before = train_mlp(data, epochs=0, seed=3)
    after = train_mlp(data, epochs=1, seed=3)
    loss0, _, _ = before.loss_and_grads(before.standardize(data.X), y)
    loss1, _, _ = after.loss_and_grads(after.standardize(data.X), y)
    assert loss1 < loss0


def test_mlp_forward_deterministic_without_dropout(rng):
    model = MlpModel.initialize(rng)
    X = rng.normal(0, 1, (50, 5))
    assert model.output(X).tobytes() == model.output(X).tobytes()


def test_mlp_learns_binary_set(rng):
    data = binary_set(rng, 200)
    history = []
    model = train_mlp(data, epochs=20, history=history)
    assert len(history) == 20 and history[-1] < history[0]
    assert accuracy(model, data) >= 0.9


def test_mlp_rejects_three_classes(rng):
    with pytest.raises(ArityError):
        train_mlp(make_set(rng, {CAR: 5, PED: 5, CYC: 5}), epochs=1)
    with pytest.raises(ArityError):
        train_mlp(make_set(rng, {CAR: 5, CYC: 5}), epochs=1)


def test_mlp_skew_warning(rng):
    assert train_mlp(make_set(rng, {CAR: 50, PED: 10}), epochs=1).warnings == 1
    assert train_mlp(make_set(rng, {CAR: 30, PED: 30}), epochs=1).warnings == 0


def test_mlp_half_output_is_pedestrian(rng):
    model = MlpModel.initialize(rng)
    model.weights[-1][:] = 0.0
    model.biases[-1][:] = 0.0
    assert predict(model, FeatureVector(1, 2, 3, 4, 5)) == Prediction(PED, 0.5)


# --------------------------------------------------------------------------
# predict and the confidence threshold


@pytest.mark.parametrize("conf,want", [(0.95, CAR), (0.89, IGN), (0.90, CAR)])
def test_confidence_threshold(conf, want):
    assert apply_confidence_threshold(Prediction(CAR, conf), 0.90) is want


def fitted_models(rng):
    X, y = separable_feature_set(rng, 40)
    three = TrainingSet(X, y)
    return [train_tree(three), train_svm(three, epochs=5), train_mlp(binary_set(rng, 30), epochs=2)]


def test_predict_confidence_in_unit_interval_and_threshold_zero(rng):
    for model in fitted_models(rng):
        cls, conf = predict_batch(model, rng.normal(0, 20, (200, 5)))
        assert np.all((conf >= 0) & (conf <= 1))
        for c, p in zip(cls, conf):
            assert apply_confidence_threshold(Prediction(PointClass(int(c)), float(p)), 0.0) \
                is not IGN


def test_predict_rejects_non_finite(rng):
    model = fitted_models(rng)[0]
    with pytest.raises(ValueError):
        predict(model, [np.nan, 0, 0, 0, 0])


# --------------------------------------------------------------------------
# serialization


@pytest.mark.parametrize("which", [0, 1, 2])
def test_serialization_round_trip(which, rng):
    model = fitted_models(rng)[which]
    again = deserialize_model(serialize_model(model))
    assert type(again) is type(model)
    Xq = rng.normal(0, 5, (100, 5))
    a, b = predict_batch(model, Xq), predict_batch(again, Xq)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert serialize_model(again) == serialize_model(model)


def test_serialization_keeps_feature_schema(rng):
    X, y = separable_feature_set(rng, 10)
    model = train_tree(TrainingSet(X, y), eigen_mode="axis_variances")
    assert deserialize_model(serialize_model(model)).eigen_mode == "axis_variances"


def test_truncated_model(rng):
    blob = serialize_model(fitted_models(rng)[1])
    for cut in (0, 3, 7, 8, len(blob) // 2, len(blob) - 1):
        with pytest.raises(ModelFormatError):
            deserialize_model(blob[:cut])


def test_wrong_kind_version_magic_and_trailing(rng):
    blob = serialize_model(fitted_models(rng)[0])
    with pytest.raises(ModelFormatError):
        deserialize_model(blob[:6] + bytes([9]) + blob[7:])
    with pytest.raises(ModelFormatError):
        deserialize_model(blob[:4] + (2).to_bytes(2, "little") + blob[6:])
    with pytest.raises(ModelFormatError):
        deserialize_model(b"XXXX" + blob[4:])
    with pytest.raises(ModelFormatError):
        deserialize_model(blob + b"\0")


def test_model_types_expose_kind(rng):
    kinds = [m.kind for m in fitted_models(rng)]
    assert kinds == ["tree", "svm", "mlp"]
    assert isinstance(fitted_models(rng)[0], DecisionTree)
    assert isinstance(fitted_models(rng)[1], LinearSvmModel)
