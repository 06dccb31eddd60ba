import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from breathtda.features import FeatureMatrix
from breathtda.learner import (
    BoostConfig,
    DegenerateModelError,
    EmptyTrainingSetError,
    LearnerError,
    encode_labels,
    feature_importance,
    filter_low_quality,
    fit,
    load_model,
    predict,
    softmax,
)

STAGES = np.array(["Wake", "REM", "NREM"])


def toy(n=200, seed=0, classes=("Wake", "REM"), levels=False):
    """Two classes split by the sign of column 0, with a margin of 1.

    With ``levels`` column 0 takes only the values +-1 and +-2, so every
    row subsample contains the values that the split thresholds land on.
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    mag = 0.5 + np.abs(X[:, 0])
    if levels:
        mag = np.where(mag > 1.2, 2.0, 1.0)
    X[:, 0] = np.where(np.arange(n) % 2 == 0, 1.0, -1.0) * mag
    y = np.where(np.arange(n) % 2 == 0, classes[0], classes[1])
    return X, y


def three_class(n=300, seed=1):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, n)
    X = rng.normal(size=(n, 5)) + np.eye(3, 5)[y] * 1.5
    return X, STAGES[y]


def brute_stump(X, y, cfg):
    """Best single split for class 0 from zero scores, by enumeration."""
    w = np.array([cfg.class_weights[s] for s in STAGES])[encode_labels(y)]
    p = 1.0 / 3.0
    g = w * (p - (encode_labels(y) == 0))
    h = w * 2 * p * (1 - p)
    lam = cfg.l2_reg
    score = lambda G, H: G * G / (H + lam)
    best = (0.0, None)
    for f in range(X.shape[1]):
        for t in np.unique(X[:, f])[1:]:
            left = X[:, f] < t
            gain = 0.5 * (score(g[left].sum(), h[left].sum()) + score(g[~left].sum(), h[~left].sum()) - score(g.sum(), h.sum()))
            if gain > best[0] + 1e-12 and h[left].sum() >= cfg.min_child_weight and h[~left].sum() >= cfg.min_child_weight:
                best = (gain, (f, t, -g[left].sum() / (h[left].sum() + lam), -g[~left].sum() / (h[~left].sum() + lam)))
    return best


class TestConfig:
    def test_defaults(self):
        c = BoostConfig()
        assert (c.learning_rate, c.max_depth, c.subsample, c.colsample_bytree) == (0.07, 5, 0.2, 0.5)
        assert c.class_weights == {"Wake": 4.0, "REM": 4.0, "NREM": 1.0}

    @pytest.mark.parametrize(
        "kw",
        [{"learning_rate": 0}, {"subsample": 1.5}, {"max_depth": 0}, {"l2_reg": -1},
         {"class_weights": {"Wake": 1.0}}, {"class_weights": {"Wake": 1.0, "REM": 0.0, "NREM": 1.0}}],
    )
    def test_invalid(self, kw):
        with pytest.raises(LearnerError):
            BoostConfig(**kw)


class TestFit:
    @pytest.mark.parametrize("seed", range(3))
    def test_separable_toy_reaches_full_accuracy(self, seed):
        X, y = toy(levels=True)
        model = fit(X, y, BoostConfig(n_rounds=20, seed=seed))
        labels, _ = predict(model, X)
        assert np.mean(labels == y) == 1.0

    def test_separable_continuous_full_batch(self):
        X, y = toy()
        labels, _ = predict(fit(X, y, BoostConfig(n_rounds=20, subsample=1.0)), X)
        assert np.mean(labels == y) == 1.0

    def test_stump_matches_enumeration(self):
        X, y = three_class(60)
        cfg = BoostConfig(n_rounds=1, max_depth=1, subsample=1.0, colsample_bytree=1.0, learning_rate=1.0)
        tree = fit(X, y, cfg).trees[0][0]
        gain, (f, t, vl, vr) = brute_stump(X, y, cfg)
        assert tree.feature[0] == f and tree.threshold[0] == t
        assert tree.value[tree.left[0]] == pytest.approx(vl)
        assert tree.value[tree.right[0]] == pytest.approx(vr)

    def test_deterministic_bit_exact(self):
        X, y = three_class()
        a = fit(X, y, BoostConfig(n_rounds=15, seed=3))
        b = fit(X, y, BoostConfig(n_rounds=15, seed=3))
        assert predict(a, X)[1].tobytes() == predict(b, X)[1].tobytes()
        assert a.loss_history == b.loss_history

    def test_seed_matters(self):
        X, y = three_class()
        a = fit(X, y, BoostConfig(n_rounds=5, seed=1))
        b = fit(X, y, BoostConfig(n_rounds=5, seed=2))
        assert predict(a, X)[1].tobytes() != predict(b, X)[1].tobytes()

    def test_monotone_transform_invariance(self):
        X, y = three_class()
        cfg = BoostConfig(n_rounds=20)
        Z = np.column_stack([np.exp(X[:, 0]), X[:, 1] ** 3, 5 * X[:, 2] - 1, np.arctan(X[:, 3]), X[:, 4]])
        la, _ = predict(fit(X, y, cfg), X)
        lb, _ = predict(fit(Z, y, cfg), Z)
        np.testing.assert_array_equal(la, lb)

    def test_training_loss_decreases_full_batch(self):
        X, y = three_class()
        m = fit(X, y, BoostConfig(n_rounds=30, subsample=1.0, colsample_bytree=1.0))
        assert np.all(np.diff(m.loss_history) <= 1e-12)

    def test_errors(self):
        X, y = toy()
        with pytest.raises(DegenerateModelError):
            fit(X, np.full(len(y), "Wake"))
        bad = X.copy()
        bad[0, 0] = np.nan
        with pytest.raises(LearnerError):
            fit(bad, y)
        with pytest.raises(LearnerError):
            fit(X, y[:-1])
        with pytest.raises(LearnerError):
            fit(X, np.where(y == "Wake", "N4", y))


@pytest.fixture(scope="module")
def model():
    X, y = three_class()
    return fit(X, y, BoostConfig(n_rounds=10), feature_names=[f"c{k}" for k in range(5)])


class TestPredict:
    def test_proba_rows_sum_to_one(self, model):
        X, _ = three_class(50, seed=9)
        labels, proba = predict(model, X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(labels, STAGES[np.argmax(proba, axis=1)])

    def test_schema_checks(self, model):
        with pytest.raises(LearnerError):
            predict(model, np.zeros((2, 4)))
        with pytest.raises(LearnerError):
            predict(model, np.zeros((2, 5)), feature_names=list("abcde"))
        labels, proba = predict(model, np.zeros((0, 5)))
        assert labels.size == 0 and proba.shape == (0, 3)

    def test_save_load_round_trip(self, model, tmp_path):
        from breathtda.learner import save_model

        save_model(model, tmp_path / "m.model")
        back = load_model(tmp_path / "m.model")
        X, _ = three_class(40, seed=4)
        assert predict(back, X)[1].tobytes() == predict(model, X)[1].tobytes()
        assert back.feature_names == model.feature_names
        assert back.config == model.config

    def test_load_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.model"
        p.write_text("not a model\n")
        with pytest.raises(LearnerError):
            load_model(p)

    def test_importance(self, model):
        imp = feature_importance(model)
        assert sum(imp.values()) == pytest.approx(1.0)
        # class signal sits in the first three columns
        assert min(imp["c0"], imp["c1"], imp["c2"]) > max(imp["c3"], imp["c4"])


class TestHelpers:
    @settings(max_examples=50)
    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(-100, 100))
    def test_softmax_shift_invariant(self, row, c):
        s = np.array([row])
        np.testing.assert_allclose(softmax(s), softmax(s + c), atol=1e-12)
        assert softmax(s).sum() == pytest.approx(1.0)

    def test_encode_labels(self):
        np.testing.assert_array_equal(encode_labels(["NREM", "Wake", "REM"]), [2, 0, 1])
        with pytest.raises(LearnerError):
            encode_labels([3])

    def test_filter_low_quality(self):
        fm = FeatureMatrix(("a",), np.zeros((4, 1)), ["s"] * 4, range(4), ["Wake"] * 4, [0.1, 0.25, 0.3, 0.2])
        kept = filter_low_quality(fm, 0.25)
        np.testing.assert_array_equal(kept.sqi, [0.25, 0.3])
        with pytest.raises(EmptyTrainingSetError):
            filter_low_quality(fm, 0.9)
