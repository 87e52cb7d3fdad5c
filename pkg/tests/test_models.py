import copy
import math

import numpy as np
import pytest

from fairaudit import models
from fairaudit.models import (
    ModelConfig,
    SharedModel,
    bce_loss,
    fit_scaler,
    gradient_check,
    load_checkpoint,
    personalize,
    save_checkpoint,
    train_shared,
)

from conftest import make_partition


def tiny_config(**overrides):
    base = dict(
        input_length=8,
        hidden_size=4,
        recurrent_layers=2,
        dropout_rate=0.0,
        epochs=2,
        seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_problem(seed, n=12, length=8):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, length))
    y = rng.integers(0, 2, size=n)
    if len(np.unique(y)) < 2:
        y[0] = 1 - y[0]
    return X, y


def separable_problem(seed=0, n=20, length=12):
    """Label = whether the window's mean activity is above the cohort cut."""
    rng = np.random.default_rng(seed)
    scale = np.where(rng.random(n) < 0.5, 50.0, 400.0)
    X = rng.poisson(lam=scale[:, None], size=(n, length)).astype(float)
    y = (X.mean(axis=1) > 200).astype(int)
    return X, y


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(input_length=0)
        with pytest.raises(ValueError):
            ModelConfig(cell="gru")
        with pytest.raises(ValueError):
            ModelConfig(dropout_rate=1.0)


class TestLoss:
    def test_perfect_prediction_zero(self):
        y = np.array([0.0, 1.0, 1.0])
        assert bce_loss(y, y) == pytest.approx(0.0, abs=1e-10)

    def test_constant_half_on_balanced_is_ln2(self):
        y = np.array([0.0, 1.0, 0.0, 1.0])
        assert bce_loss(np.full(4, 0.5), y) == pytest.approx(math.log(2))


class TestGradientCheck:
    @pytest.mark.parametrize("cell", ["lstm", "elman"])
    def test_analytic_matches_finite_differences(self, cell):
        for seed in range(3):
            X, y = random_problem(seed)
            m = train_shared(X, y, tiny_config(cell=cell, seed=seed, epochs=1))
            # eps large enough that float64 roundoff in the loss difference
            # stays well under the tolerance on near-zero gradient entries
            assert gradient_check(m, X, y, eps=1e-4) <= 1e-4

    def test_corrupted_gradient_detected(self, monkeypatch):
        X, y = random_problem(0)
        m = train_shared(X, y, tiny_config(epochs=1))
        original = models.loss_and_grads

        def corrupted(params, config, x_std, y_, dropout_masks=None):
            loss, grads = original(params, config, x_std, y_, dropout_masks)
            grads["layers"][0]["W"] = grads["layers"][0]["W"] * 1.1
            return loss, grads

        monkeypatch.setattr(models, "loss_and_grads", corrupted)
        assert gradient_check(m, X, y) > 1e-2

    def test_near_zero_model(self):
        X = np.zeros((4, 8))
        y = np.array([0, 1, 0, 1])
        m = train_shared(X, y, tiny_config(epochs=0))
        for layer in m.params["layers"]:
            for k in ("W", "U", "b"):
                layer[k][...] = 0.0
        m.params["out_w"][...] = 0.0
        m.params["out_b"] = 0.0
        # both sides are analytically zero; a wide step keeps the one-ulp
        # asymmetry of the loss evaluation far below the tolerance
        assert gradient_check(m, X, y, eps=0.05) <= 1e-6


class TestTrainShared:
    def test_deterministic(self):
        X, y = random_problem(1)
        a = train_shared(X, y, tiny_config(epochs=3, dropout_rate=0.2))
        b = train_shared(X, y, tiny_config(epochs=3, dropout_rate=0.2))
        assert np.array_equal(a.predict_proba(X), b.predict_proba(X))
        assert a.train_loss == b.train_loss

    def test_loss_never_exceeds_initial(self):
        for seed in range(5):
            X, y = random_problem(seed)
            m = train_shared(X, y, tiny_config(seed=seed, epochs=4))
            assert m.train_loss <= m.initial_loss

    def test_zero_epochs_keeps_initialization(self):
        X, y = random_problem(2)
        m = train_shared(X, y, tiny_config(epochs=0))
        assert m.train_loss == m.initial_loss

    def test_separable_toy_high_accuracy(self):
        X, y = separable_problem()
        cfg = ModelConfig(
            input_length=X.shape[1],
            hidden_size=8,
            recurrent_layers=1,
            dropout_rate=0.0,
            learning_rate=0.01,
            epochs=200,
            seed=0,
        )
        m = train_shared(X, y, cfg)
        acc = (m.predict_label(X) == y).mean()
        assert acc >= 0.95
        # sanity: the problem really is (log-)linearly separable
        from sklearn.linear_model import LogisticRegression

        lr = LogisticRegression(max_iter=1000).fit(X, y)
        assert lr.score(X, y) >= 0.95

    def test_single_class_warns(self):
        X, _ = random_problem(3)
        with pytest.warns(UserWarning, match="single-class"):
            train_shared(X, np.zeros(len(X)), tiny_config(epochs=1))

    def test_non_finite_loss_aborts_with_diagnostic(self):
        X, y = random_problem(0)
        X = X.copy()
        X[0, 0] = np.nan
        with pytest.raises(RuntimeError, match="not finite"):
            train_shared(X, y, tiny_config(epochs=2))

    def test_wrong_input_length_rejected(self):
        X, y = random_problem(0)
        with pytest.raises(ValueError):
            train_shared(X, y, tiny_config(input_length=9))

    def test_inference_deterministic(self):
        X, y = random_problem(4)
        m = train_shared(X, y, tiny_config(epochs=1, dropout_rate=0.3))
        assert np.array_equal(m.predict_proba(X), m.predict_proba(X))


class TestScaler:
    def test_constant_feature_guard(self):
        X = np.column_stack([np.ones(5), np.arange(5.0)])
        mean, std = fit_scaler(X)
        assert std[0] == 1.0 and std[1] > 0


class TestAwareUnaware:
    def test_proxy_free_attribute_only_signal(self):
        """With the protected attribute perfectly predictive and the window
        carrying no signal, only the aware model can beat the class prior."""
        rng = np.random.default_rng(0)
        n = 60
        y = rng.integers(0, 2, size=n)
        window = rng.normal(size=(n, 12))  # pure noise
        indicator = np.column_stack([y] + [np.zeros(n)] * 3)
        X_aware = np.column_stack([window, indicator])

        unaware_cfg = ModelConfig(
            input_length=12, hidden_size=6, recurrent_layers=1,
            dropout_rate=0.0, epochs=30, learning_rate=0.01, seed=0,
        )
        aware_cfg = ModelConfig(
            input_length=16, hidden_size=6, recurrent_layers=1,
            dropout_rate=0.0, epochs=60, learning_rate=0.02, seed=0,
        )
        aware = train_shared(X_aware, y, aware_cfg)
        assert (aware.predict_label(X_aware) == y).mean() >= 0.95

        unaware = train_shared(window, y, unaware_cfg)
        prior = max(y.mean(), 1 - y.mean())
        rng_eval = np.random.default_rng(1)
        fresh = rng_eval.normal(size=(200, 12))
        fresh_y = rng_eval.integers(0, 2, size=200)
        acc = (unaware.predict_label(fresh) == fresh_y).mean()
        assert acc <= prior + 0.15  # no better than guessing on fresh noise


class TestPersonalize:
    def _setup(self, seed=0, epochs=3):
        rng = np.random.default_rng(seed)
        n = 40
        users = np.array([f"a{i}" for i in range(n // 2)] + [f"b{i}" for i in range(n // 2)], dtype=object)
        X = rng.normal(size=(n, 8))
        y = rng.integers(0, 2, size=n)
        part = make_partition(
            {u for u in users if u.startswith("a")},
            {u for u in users if u.startswith("b")},
        )
        shared = train_shared(X, y, tiny_config(seed=seed, epochs=epochs))
        return shared, part, X, y, users

    def test_freeze_contract_byte_identical(self):
        shared, part, X, y, users = self._setup()
        before = copy.deepcopy(shared.params)
        pers = personalize(shared, part, X, y, users)
        for l, layer in enumerate(shared.params["layers"]):
            for k in ("W", "U", "b"):
                assert layer[k].tobytes() == before["layers"][l][k].tobytes()
        assert pers.shared.params is shared.params

    def test_zero_epochs_identity(self):
        shared, part, X, y, users = self._setup()
        pers = personalize(shared, part, X, y, users, epochs=0)
        assert np.array_equal(
            pers.predict_proba(X, users), shared.predict_proba(X)
        )

    def test_per_group_loss_monotone(self):
        from fairaudit.models import _sigmoid

        for seed in range(3):
            shared, part, X, y, users = self._setup(seed=seed)
            pers = personalize(shared, part, X, y, users)
            h = shared.hidden_features(X)
            for g, branch in pers.branches.items():
                mask = np.array([part.group_of(u) == g for u in users])
                shared_loss = bce_loss(
                    _sigmoid(h[mask] @ shared.params["out_w"] + shared.params["out_b"]),
                    y[mask].astype(float),
                )
                assert branch["train_loss"] <= shared_loss + 1e-12

    def test_empty_group_falls_back_flagged(self):
        shared, part, X, y, users = self._setup()
        half = len(users) // 2
        pers = personalize(shared, part, X[half:], y[half:], users[half:])
        assert pers.fallback_groups == (0,)
        # group-0 windows route through the shared output layer
        a_mask = np.array([u.startswith("a") for u in users])
        assert np.array_equal(
            pers.predict_proba(X[a_mask], users[a_mask]),
            shared.predict_proba(X[a_mask]),
        )

    def test_missing_membership_uses_shared_layer(self):
        shared, part, X, y, users = self._setup()
        pers = personalize(shared, part, X, y, users)
        stranger_ids = np.array(["zz1", "zz2"], dtype=object)
        assert np.array_equal(
            pers.predict_proba(X[:2], stranger_ids), shared.predict_proba(X[:2])
        )
        assert pers.missing_membership(stranger_ids) == ["zz1", "zz2"]

    def test_identically_distributed_groups_small_divergence(self):
        rng = np.random.default_rng(5)
        n = 60
        users = np.array([f"a{i}" for i in range(n // 2)] + [f"b{i}" for i in range(n // 2)], dtype=object)
        X = rng.normal(size=(n, 8))
        y = (X.mean(axis=1) > 0).astype(int)
        # both groups see the same distribution and the same rule
        part = make_partition(
            {u for u in users if u.startswith("a")},
            {u for u in users if u.startswith("b")},
        )
        shared = train_shared(X, y, tiny_config(epochs=30, hidden_size=6, recurrent_layers=1))
        pers = personalize(shared, part, X, y, users, epochs=5)
        diff = np.abs(pers.predict_proba(X, users) - shared.predict_proba(X))
        assert diff.mean() < 0.2


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        X, y = random_problem(7)
        m = train_shared(X, y, tiny_config(epochs=2))
        path = tmp_path / "model.json"
        save_checkpoint(m, path)
        m2 = load_checkpoint(path)
        p1, p2 = m.predict_proba(X), m2.predict_proba(X)
        assert np.array_equal(p1, p2)
        assert m2.config == m.config
        assert m2.train_loss == m.train_loss
        assert m2.initial_loss == m.initial_loss

    def test_unknown_format_rejected(self, tmp_path):
        X, y = random_problem(7)
        m = train_shared(X, y, tiny_config(epochs=0))
        path = tmp_path / "model.json"
        save_checkpoint(m, path)
        import json

        payload = json.loads(path.read_text())
        payload["format"] = 999
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError):
            load_checkpoint(path)
